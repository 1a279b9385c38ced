//! Comparison functions `β(r, t)` bounding how far two trajectories of the
//! same field can drift apart, and the derived quantities `β̄ʲ` and `B̄`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interval::TimeInterval;
use crate::quadrature::adaptive_simpson;

/// The functional form of `β`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComparisonKind {
    /// `min{r e^{L|t|}, r + 2 L0 |t|}`; with `l0` absent, just `r e^{L|t|}`.
    WorstCase {
        l: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        l0: Option<f64>,
    },
    /// `r e^{−λt}` for uniformly exponentially stable fields, `t ≥ 0` only.
    ExpStable { lambda: f64 },
    /// Piecewise-bilinear table.
    Custom(TabulatedBeta),
    /// Pointwise maximum of several comparison functions.
    PointwiseMax { members: Vec<ComparisonKind> },
}

/// `β` sampled on a grid: `values[i * t.len() + j] = β(r[i], t[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabulatedBeta {
    pub r: Vec<f64>,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

/// A comparison function together with the duration interval it is used on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComparisonRepr", into = "ComparisonRepr")]
pub struct ComparisonFn {
    kind: ComparisonKind,
    interval: TimeInterval,
}

#[derive(Serialize, Deserialize)]
struct ComparisonRepr {
    #[serde(flatten)]
    kind: ComparisonKind,
    interval: TimeInterval,
}

impl TryFrom<ComparisonRepr> for ComparisonFn {
    type Error = Error;
    fn try_from(r: ComparisonRepr) -> Result<Self> {
        ComparisonFn::new(r.kind, r.interval)
    }
}

impl From<ComparisonFn> for ComparisonRepr {
    fn from(c: ComparisonFn) -> Self {
        ComparisonRepr {
            kind: c.kind,
            interval: c.interval,
        }
    }
}

const AXIOM_TOL: f64 = 1e-12;

impl ComparisonFn {
    pub fn new(kind: ComparisonKind, interval: TimeInterval) -> Result<Self> {
        validate_kind(&kind, &interval)?;
        Ok(ComparisonFn { kind, interval })
    }

    pub fn worst_case(l: f64, l0: f64, interval: TimeInterval) -> Result<Self> {
        Self::new(ComparisonKind::WorstCase { l, l0: Some(l0) }, interval)
    }

    /// `β(r, t) = r e^{L|t|}`.
    pub fn exponential(l: f64, interval: TimeInterval) -> Result<Self> {
        Self::new(ComparisonKind::WorstCase { l, l0: None }, interval)
    }

    pub fn exp_stable(lambda: f64, interval: TimeInterval) -> Result<Self> {
        Self::new(ComparisonKind::ExpStable { lambda }, interval)
    }

    pub fn kind(&self) -> &ComparisonKind {
        &self.kind
    }

    pub fn interval(&self) -> TimeInterval {
        self.interval
    }

    pub fn is_exp_stable(&self) -> bool {
        matches!(self.kind, ComparisonKind::ExpStable { .. })
    }

    /// `β(r, t)`.
    pub fn beta(&self, r: f64, t: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("β needs r >= 0, got {r}")));
        }
        eval_kind(&self.kind, r, t)
    }

    /// `β̄¹(r) = max_{t ∈ [T0, T1]} β(r, t)`.
    pub fn bar_beta(&self, r: f64) -> f64 {
        bar_beta_kind(&self.kind, &self.interval, r)
    }

    /// `β̄ʲ(r)`, the `j`-fold iterate of `β̄¹`, with `β̄⁰(r) = r`.
    pub fn bar_beta_j(&self, r: f64, j: usize) -> f64 {
        if let Some(c) = self.linear_factor() {
            return r * c.powi(j as i32);
        }
        (0..j).fold(r, |acc, _| self.bar_beta(acc))
    }

    /// If `β̄¹(r) = c·r` for all `r`, returns `c`.
    pub fn linear_factor(&self) -> Option<f64> {
        linear_factor_kind(&self.kind, &self.interval)
    }

    /// Right derivative `∂₊β/∂r` at `r = 0`.
    pub fn right_slope_at_zero(&self, t: f64) -> f64 {
        slope_kind(&self.kind, t)
    }

    /// `B̄ = max_{t ∈ [T0,T1]} |∫₀ᵗ ∂₊β/∂r(0, t−s) ds|`.
    pub fn bar_b(&self) -> f64 {
        let t_bar = self.interval.t_bar();
        match &self.kind {
            ComparisonKind::WorstCase { l, .. } => {
                if *l == 0.0 {
                    t_bar
                } else {
                    (l * t_bar).exp_m1() / l
                }
            }
            // Supremum over all horizons; the same value covers any [0, T].
            ComparisonKind::ExpStable { lambda } => 1.0 / lambda,
            _ => {
                // ∂₊β/∂r ≥ 0 by monotonicity, so the running integral is
                // monotone in |t| and the max sits at an endpoint.
                let integral = |end: f64| -> f64 {
                    if end == 0.0 {
                        return 0.0;
                    }
                    let (a, b) = if end > 0.0 { (0.0, end) } else { (end, 0.0) };
                    self.integrate_slope(a, b)
                };
                integral(self.interval.t0()).abs().max(integral(self.interval.t1()).abs())
            }
        }
    }

    fn integrate_slope(&self, a: f64, b: f64) -> f64 {
        // Split at table nodes so piecewise-linear pieces integrate exactly.
        let mut nodes = vec![a, b];
        collect_nodes(&self.kind, &mut nodes);
        nodes.retain(|&x| x >= a && x <= b);
        nodes.sort_by(|x, y| x.partial_cmp(y).unwrap());
        nodes.dedup();
        nodes
            .windows(2)
            .map(|w| adaptive_simpson(|u| self.right_slope_at_zero(u), w[0], w[1], 1e-13, 40))
            .sum()
    }
}

fn collect_nodes(kind: &ComparisonKind, out: &mut Vec<f64>) {
    match kind {
        ComparisonKind::Custom(tab) => out.extend_from_slice(&tab.t),
        ComparisonKind::PointwiseMax { members } => members.iter().for_each(|m| collect_nodes(m, out)),
        _ => {}
    }
}

fn validate_kind(kind: &ComparisonKind, interval: &TimeInterval) -> Result<()> {
    match kind {
        ComparisonKind::WorstCase { l, l0 } => {
            if !(*l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("L must be finite and >= 0, got {l}")));
            }
            if let Some(l0) = l0 {
                if !(*l0 >= 0.0 && l0.is_finite()) {
                    return Err(Error::InvalidArgument(format!("L0 must be finite and >= 0, got {l0}")));
                }
            }
        }
        ComparisonKind::ExpStable { lambda } => {
            if !(*lambda > 0.0 && lambda.is_finite()) {
                return Err(Error::InvalidArgument(format!("λ must be positive, got {lambda}")));
            }
            if interval.t0() < 0.0 {
                return Err(Error::InvalidArgument(
                    "exponentially stable comparison needs nonnegative times (T0 = 0)".into(),
                ));
            }
        }
        ComparisonKind::Custom(tab) => tab.validate(interval)?,
        ComparisonKind::PointwiseMax { members } => {
            if members.is_empty() {
                return Err(Error::InvalidArgument("pointwise max of zero comparison functions".into()));
            }
            for m in members {
                validate_kind(m, interval)?;
            }
        }
    }
    Ok(())
}

fn eval_kind(kind: &ComparisonKind, r: f64, t: f64) -> Result<f64> {
    Ok(match kind {
        ComparisonKind::WorstCase { l, l0 } => {
            let growth = r * (l * t.abs()).exp();
            match l0 {
                Some(l0) => growth.min(r + 2.0 * l0 * t.abs()),
                None => growth,
            }
        }
        ComparisonKind::ExpStable { lambda } => {
            if t < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "exponentially stable comparison is only defined for t >= 0, got {t}"
                )));
            }
            r * (-lambda * t).exp()
        }
        ComparisonKind::Custom(tab) => tab.eval(r, t),
        ComparisonKind::PointwiseMax { members } => {
            let mut best = f64::NEG_INFINITY;
            for m in members {
                best = best.max(eval_kind(m, r, t)?);
            }
            best
        }
    })
}

fn bar_beta_kind(kind: &ComparisonKind, interval: &TimeInterval, r: f64) -> f64 {
    match kind {
        ComparisonKind::WorstCase { .. } => {
            eval_kind(kind, r, interval.t_bar()).expect("worst case is total")
        }
        ComparisonKind::ExpStable { .. } => {
            // Decreasing in t: the max over [0, T1] is at t = 0.
            r
        }
        ComparisonKind::Custom(tab) => {
            let mut best = tab.eval(r, interval.t0()).max(tab.eval(r, interval.t1()));
            for &t in tab.t.iter().filter(|&&t| interval.contains(t)) {
                best = best.max(tab.eval(r, t));
            }
            best
        }
        ComparisonKind::PointwiseMax { members } => members
            .iter()
            .map(|m| bar_beta_kind(m, interval, r))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

fn linear_factor_kind(kind: &ComparisonKind, interval: &TimeInterval) -> Option<f64> {
    match kind {
        ComparisonKind::WorstCase { l, l0 } => {
            let t_bar = interval.t_bar();
            match l0 {
                None => Some((l * t_bar).exp()),
                // The linear branch never binds when it is the identity.
                Some(_) if t_bar == 0.0 || *l == 0.0 => Some(1.0),
                Some(_) => None,
            }
        }
        ComparisonKind::ExpStable { .. } => Some(1.0),
        ComparisonKind::Custom(_) => None,
        ComparisonKind::PointwiseMax { members } => {
            let mut c = f64::NEG_INFINITY;
            for m in members {
                c = c.max(linear_factor_kind(m, interval)?);
            }
            Some(c)
        }
    }
}

fn slope_kind(kind: &ComparisonKind, t: f64) -> f64 {
    match kind {
        ComparisonKind::WorstCase { l, .. } => (l * t.abs()).exp(),
        ComparisonKind::ExpStable { lambda } => (-lambda * t).exp(),
        ComparisonKind::Custom(tab) => tab.first_slope(t),
        ComparisonKind::PointwiseMax { members } => members
            .iter()
            .map(|m| slope_kind(m, t))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

impl TabulatedBeta {
    fn validate(&self, interval: &TimeInterval) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("tabulated β: {msg}")));
        let (nr, nt) = (self.r.len(), self.t.len());
        if nr < 2 || nt < 2 {
            return bad("need at least two r and two t nodes");
        }
        if self.values.len() != nr * nt {
            return bad("values must have r.len() * t.len() entries");
        }
        if self.r[0] != 0.0 {
            return bad("r grid must start at 0");
        }
        if !self.r.windows(2).all(|w| w[0] < w[1]) || !self.t.windows(2).all(|w| w[0] < w[1]) {
            return bad("grids must be strictly increasing");
        }
        if self.t[0] > interval.t0() || self.t[nt - 1] < interval.t1() {
            return bad("t grid must cover the duration interval");
        }
        let Some(j0) = self.t.iter().position(|&t| t == 0.0) else {
            return bad("t grid must contain 0");
        };
        for i in 0..nr {
            if (self.values[i * nt + j0] - self.r[i]).abs() > AXIOM_TOL * self.r[i].max(1.0) {
                return bad("β(r, 0) must equal r");
            }
        }
        for j in 0..nt {
            if self.values[j] != 0.0 {
                return bad("β(0, t) must be 0");
            }
            for i in 1..nr {
                if self.values[i * nt + j] < self.values[(i - 1) * nt + j] {
                    return bad("β must be nondecreasing in r");
                }
            }
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("values must be finite and nonnegative");
        }
        Ok(())
    }

    /// Locates `t` in the grid (clamped) and returns `(cell, weight)`.
    fn t_cell(&self, t: f64) -> (usize, f64) {
        let nt = self.t.len();
        let t = t.clamp(self.t[0], self.t[nt - 1]);
        let j = match self.t.partition_point(|&x| x <= t) {
            0 => 0,
            p => (p - 1).min(nt - 2),
        };
        (j, (t - self.t[j]) / (self.t[j + 1] - self.t[j]))
    }

    fn column(&self, i: usize, j: usize, w: f64) -> f64 {
        let nt = self.t.len();
        (1.0 - w) * self.values[i * nt + j] + w * self.values[i * nt + j + 1]
    }

    fn eval(&self, r: f64, t: f64) -> f64 {
        let (j, w) = self.t_cell(t);
        let nr = self.r.len();
        // Extrapolate past the last r node with the last cell's slope.
        let i = match self.r.partition_point(|&x| x <= r) {
            0 => 0,
            p => (p - 1).min(nr - 2),
        };
        let lo = self.column(i, j, w);
        let hi = self.column(i + 1, j, w);
        let s = (r - self.r[i]) / (self.r[i + 1] - self.r[i]);
        lo + s * (hi - lo)
    }

    fn first_slope(&self, t: f64) -> f64 {
        let (j, w) = self.t_cell(t);
        (self.column(1, j, w) - self.column(0, j, w)) / self.r[1]
    }
}
