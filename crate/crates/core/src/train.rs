//! Empirical risk minimization over `(𝐚, 𝐟, ξ)` with projected first-order
//! methods and seeded restarts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderSpec, ProductEncoder};
use crate::error::{Error, Result};
use crate::fields::FieldFamily;
use crate::flows::FlowConfig;
use crate::interval::TimeInterval;
use crate::model::{AnchoredXi, Dataset, ReconstructionMap};
use crate::sampling::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Gd,
    Momentum,
    #[default]
    #[serde(alias = "adam", alias = "adaptive_moment")]
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iters")]
    pub max_iters: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop once the gradient norm falls below this value.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_anchors")]
    pub anchor_count: usize,
    /// Frobenius radius for every encoder weight block.
    #[serde(default = "default_projection")]
    pub weight_projection_radius: f64,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_iters() -> usize {
    2000
}
fn default_restarts() -> usize {
    5
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_anchors() -> usize {
    64
}
fn default_projection() -> f64 {
    10.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::default(),
            learning_rate: default_lr(),
            max_iters: default_iters(),
            restarts: default_restarts(),
            seed: 0,
            tolerance: default_tolerance(),
            anchor_count: default_anchors(),
            weight_projection_radius: default_projection(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if self.anchor_count == 0 {
            return Err(Error::InvalidArgument("anchor_count must be positive".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidArgument("tolerance must be >= 0".into()));
        }
        if !(self.weight_projection_radius > 0.0) {
            return Err(Error::InvalidArgument("weight_projection_radius must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture of the hypothesis class being searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub m: usize,
    pub interval: TimeInterval,
    pub family: FieldFamily,
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub flow: FlowConfig,
}

impl ModelSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidArgument("m must be >= 1".into()));
        }
        self.family.validate()?;
        self.encoder.validate()?;
        self.flow.validate()?;
        if self.family.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: self.family.dim,
                got: dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iter: usize,
    pub risk: f64,
    pub grad_norm: f64,
}

/// What happened in one restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub seed: u64,
    /// Best objective reached, if any iterate could be evaluated.
    pub best_risk: Option<f64>,
    pub iterations: usize,
    /// Error that aborted the restart.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub best_model: ReconstructionMap,
    pub final_empirical_risk: f64,
    /// Per-iteration objective of the winning restart.
    pub history: Vec<HistoryEntry>,
    pub restart_risks: Vec<Option<f64>>,
    pub restarts: Vec<RestartOutcome>,
    pub best_restart: usize,
    pub seed_used: u64,
}

impl FitReport {
    /// Running minimum of the winning restart's objective.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|h| {
                best = best.min(h.risk);
                best
            })
            .collect()
    }
}

struct RestartResult {
    outcome: RestartOutcome,
    best: Option<(f64, ReconstructionMap)>,
    history: Vec<HistoryEntry>,
}

/// Parameters being optimized: the model plus the softmax logits behind `ξ`.
struct State {
    model: ReconstructionMap,
    xi: AnchoredXi,
}

impl State {
    fn theta(&self) -> Vec<f64> {
        let mut t = self.model.param_vector();
        let d = self.model.dim();
        t.truncate(t.len() - d);
        t.extend_from_slice(self.xi.logits());
        t
    }

    fn set_theta(&mut self, theta: &[f64], family: &FieldFamily, radius: f64) -> Result<()> {
        let k = theta.len() - self.xi.logits().len();
        self.xi.set_logits(&theta[k..]);
        let mut full = theta[..k].to_vec();
        full.extend(self.xi.xi());
        let mut model = self.model.with_param_vector(&full)?;
        for f in model.fields_mut() {
            family.project(f);
        }
        for p in model.encoder_mut().parts_mut() {
            p.project_weights(radius);
        }
        self.model = model;
        Ok(())
    }
}

struct Stepper {
    kind: Optimizer,
    lr: f64,
    v: Vec<f64>,
    s: Vec<f64>,
    t: i32,
}

const MOMENTUM: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Stepper {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Stepper {
            kind,
            lr,
            v: vec![0.0; n],
            s: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        match self.kind {
            Optimizer::Gd => theta.iter_mut().zip(g).for_each(|(x, gi)| *x -= self.lr * gi),
            Optimizer::Momentum => {
                for ((x, v), gi) in theta.iter_mut().zip(&mut self.v).zip(g) {
                    *v = MOMENTUM * *v - self.lr * gi;
                    *x += *v;
                }
            }
            Optimizer::AdaptiveMoment => {
                self.t += 1;
                let c1 = 1.0 - MOMENTUM.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (((x, v), s), gi) in theta.iter_mut().zip(&mut self.v).zip(&mut self.s).zip(g) {
                    *v = MOMENTUM * *v + (1.0 - MOMENTUM) * gi;
                    *s = BETA2 * *s + (1.0 - BETA2) * gi * gi;
                    *x -= self.lr * (*v / c1) / ((*s / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

fn initial_state(
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<State> {
    let mut rng = rng_from_seed(seed);
    let d = data.dim();
    let parts = (0..spec.m)
        .map(|_| spec.encoder.sample_init(d, spec.interval, &mut rng))
        .collect();
    let encoder = ProductEncoder::new(parts)?;
    let fields = (0..spec.m).map(|_| spec.family.sample_init(&mut rng)).collect();
    let xi = AnchoredXi::sample(data, cfg.anchor_count, &mut rng)?;
    let model = ReconstructionMap::new(encoder, fields, xi.xi(), spec.flow)?;
    Ok(State { model, xi })
}

fn run_restart(
    points: &[Vec<f64>],
    weights: &[f64],
    data: &Dataset,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> RestartResult {
    let mut history = Vec::new();
    let mut best: Option<(f64, ReconstructionMap)> = None;
    let mut iterations = 0;
    let consider = |risk: f64, model: &ReconstructionMap, best: &mut Option<(f64, ReconstructionMap)>| {
        if best.as_ref().is_none_or(|(b, _)| risk < *b) {
            *best = Some((risk, model.clone()));
        }
    };
    let error = (|| -> Result<()> {
        let mut state = initial_state(data, spec, cfg, seed)?;
        let mut theta = state.theta();
        let mut stepper = Stepper::new(cfg.optimizer, cfg.learning_rate, theta.len());
        let xi_len = state.model.dim();
        for iter in 0..cfg.max_iters {
            let (risk, grad) = state.model.weighted_risk_and_gradient(points, weights)?;
            let mut g = grad.flatten();
            g.truncate(g.len() - xi_len);
            g.extend(state.xi.pullback(&grad.xi));
            let grad_norm = crate::linalg::norm(&g);
            if !risk.is_finite() || !grad_norm.is_finite() {
                return Err(Error::NonFinite { time: f64::NAN });
            }
            history.push(HistoryEntry { iter, risk, grad_norm });
            consider(risk, &state.model, &mut best);
            iterations = iter + 1;
            if grad_norm <= cfg.tolerance {
                return Ok(());
            }
            stepper.step(&mut theta, &g);
            state.set_theta(&theta, &spec.family, cfg.weight_projection_radius)?;
            // Projection may have moved the iterate; keep the optimizer in sync.
            theta = state.theta();
        }
        let (risk, _) = state.model.weighted_risk_and_gradient(points, weights)?;
        consider(risk, &state.model, &mut best);
        Ok(())
    })()
    .err();
    RestartResult {
        outcome: RestartOutcome {
            seed,
            best_risk: best.as_ref().map(|(r, _)| *r),
            iterations,
            error: error.map(|e| e.to_string()),
        },
        best,
        history,
    }
}

/// Minimizes `(1/n) Σ w_i |x_i − G(x_i)|` over the class described by
/// `spec`. With unit weights this is plain ERM.
pub fn fit_weighted(
    data: &Dataset,
    weights: &[f64],
    spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<FitReport> {
    cfg.validate()?;
    spec.validate(data.dim())?;
    crate::error::check_dim(data.n(), weights.len())?;
    let seeds: Vec<u64> = (0..cfg.restarts as u64).map(|k| derive_seed(cfg.seed, k)).collect();
    let results: Vec<RestartResult> = seeds
        .par_iter()
        .map(|&s| run_restart(data.points(), weights, data, spec, cfg, s))
        .collect();
    let mut best_idx: Option<usize> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some((risk, _)) = &r.best {
            if best_idx.is_none_or(|b| *risk < results[b].best.as_ref().unwrap().0) {
                best_idx = Some(i);
            }
        }
    }
    let Some(bi) = best_idx else {
        return Err(Error::AllRestartsFailed);
    };
    let restart_risks = results.iter().map(|r| r.outcome.best_risk).collect();
    let restarts = results.iter().map(|r| r.outcome.clone()).collect();
    let mut results = results;
    let winner = results.swap_remove(bi);
    let (risk, model) = winner.best.expect("winner has a model");
    Ok(FitReport {
        best_model: model,
        final_empirical_risk: risk,
        history: winner.history,
        restart_risks,
        restarts,
        best_restart: bi,
        seed_used: cfg.seed,
    })
}

/// Empirical risk minimization.
pub fn fit(data: &Dataset, spec: &ModelSpec, cfg: &TrainConfig) -> Result<FitReport> {
    fit_weighted(data, &vec![1.0; data.n()], spec, cfg)
}

/// Held-out risk; identical to the empirical risk on `data`.
pub fn evaluate(model: &ReconstructionMap, data: &Dataset) -> Result<f64> {
    model.empirical_risk(data)
}
