//! Monte-Carlo estimates of the empirical Rademacher complexity
//! `E_ε sup_G (1/n) Σ ε_i |X_i − G(X_i)|` of a loss class on a fixed sample.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ReconstructionMap};
use crate::sampling::{derive_seed, rng_from_seed};
use crate::train::{fit_weighted, ModelSpec, TrainConfig};

/// A class whose supremum against a sign vector can be computed or
/// approximated.
pub trait LossClass: Sync {
    /// Sample size `n`.
    fn n(&self) -> usize;
    /// `sup_G (1/n) Σ ε_i ℓ_G(X_i)`, or the best value found.
    fn sup(&self, eps: &[f64], seed: u64) -> Result<f64>;
    /// Whether `sup` is exact (otherwise it is a lower estimate).
    fn exact(&self) -> bool;
}

/// Finitely many maps, given by their loss vectors on the sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteClass {
    losses: Vec<Vec<f64>>,
}

impl FiniteClass {
    /// `losses[g][i]` is the loss of map `g` at sample point `i`.
    pub fn new(losses: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = losses.first() else {
            return Err(Error::InvalidArgument("finite class must be nonempty".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(Error::InvalidArgument("sample must be nonempty".into()));
        }
        for row in &losses {
            crate::error::check_dim(n, row.len())?;
        }
        Ok(FiniteClass { losses })
    }

    /// Loss vectors of the given maps on `data`.
    pub fn from_maps(maps: &[ReconstructionMap], data: &Dataset) -> Result<Self> {
        let losses = maps
            .iter()
            .map(|g| data.points().iter().map(|x| g.loss(x)).collect::<Result<Vec<f64>>>())
            .collect::<Result<Vec<_>>>()?;
        Self::new(losses)
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    /// Largest absolute loss.
    pub fn max_loss(&self) -> f64 {
        self.losses.iter().flatten().fold(0.0, |m, l| m.max(l.abs()))
    }
}

impl LossClass for FiniteClass {
    fn n(&self) -> usize {
        self.losses[0].len()
    }

    fn sup(&self, eps: &[f64], _seed: u64) -> Result<f64> {
        crate::error::check_dim(self.n(), eps.len())?;
        let n = self.n() as f64;
        Ok(self
            .losses
            .iter()
            .map(|row| row.iter().zip(eps).map(|(l, e)| l * e).sum::<f64>() / n)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    fn exact(&self) -> bool {
        true
    }
}

/// A trainable class; the supremum is approximated by minimizing the
/// weighted risk with weights `−ε_i`.
#[derive(Debug, Clone)]
pub struct ParametricClass {
    pub data: Dataset,
    pub spec: ModelSpec,
    pub train: TrainConfig,
}

impl LossClass for ParametricClass {
    fn n(&self) -> usize {
        self.data.n()
    }

    fn sup(&self, eps: &[f64], seed: u64) -> Result<f64> {
        let weights: Vec<f64> = eps.iter().map(|e| -e).collect();
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let report = fit_weighted(&self.data, &weights, &self.spec, &cfg)?;
        Ok(-report.final_empirical_risk)
    }

    fn exact(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub draws: Vec<f64>,
    pub n: usize,
    /// True when the inner supremum was only approximated from below.
    pub lower_estimate: bool,
}

/// Averages the class supremum over `n_eps_draws` Rademacher sign vectors.
pub fn rademacher_estimate(class: &dyn LossClass, n_eps_draws: usize, seed: u64) -> Result<RademacherEstimate> {
    if n_eps_draws < 2 {
        return Err(Error::InvalidArgument("n_eps_draws must be at least 2".into()));
    }
    let n = class.n();
    let draws = (0..n_eps_draws as u64)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k);
            let mut rng = rng_from_seed(s);
            let eps: Vec<f64> = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            class.sup(&eps, derive_seed(s, 1))
        })
        .collect::<Result<Vec<f64>>>()?;
    let k = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / k;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(RademacherEstimate {
        estimate: mean,
        std_err: (var / k).sqrt(),
        draws,
        n,
        lower_estimate: !class.exact(),
    })
}

/// Massart's finite-class bound `B·√(2 log N / n)` for losses in `[−B, B]`.
pub fn massart_bound(b: f64, class_size: usize, n: usize) -> Result<f64> {
    if class_size == 0 || n == 0 {
        return Err(Error::InvalidArgument("class size and n must be positive".into()));
    }
    Ok(b * (2.0 * (class_size as f64).ln() / n as f64).sqrt())
}
