//! Generalization bounds for classes of reconstruction maps: covering
//! numbers, the `ρ` solvers, the Dudley entropy integral with an optimized
//! split `(γ1, γ2, γ3)`, and the excess-risk certificate.
//!
//! Absolute constants hidden behind `≲` are set to 1; every value here is
//! "up to an absolute constant".

pub mod rademacher;
pub mod verify;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::fields::{ComparisonFn, ComparisonKind, FieldKind};
use crate::interval::TimeInterval;
use crate::quadrature::adaptive_simpson;
use crate::train::ModelSpec;

/// How `log 𝒩(·, δ)` is modelled from a dimension `k` and a scale `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoveringModel {
    /// `k·log(1 + C/δ)`, the volumetric bound for a ball of diameter `C`.
    #[default]
    Standard,
    /// `k·log⁺(C/δ)`, i.e. `𝒩 ≤ (C/δ)ᵏ` once `δ ≤ C`.
    PowerLaw,
}

impl CoveringModel {
    pub fn log_cover(&self, k: usize, c: f64, delta: f64) -> f64 {
        if k == 0 || c == 0.0 || delta == f64::INFINITY {
            return 0.0;
        }
        if delta <= 0.0 {
            return f64::INFINITY;
        }
        let k = k as f64;
        match self {
            CoveringModel::Standard => k * (c / delta).ln_1p(),
            CoveringModel::PowerLaw => k * (c / delta).ln().max(0.0),
        }
    }
}

/// A finitely parametrized family: `params` parameters ranging over a set of
/// the given diameter, with `‖g(·;θ) − g(·;θ′)‖_{C⁰} ≤ L_param |θ − θ′|`.
/// Alternatively the covering scale `C` may be given directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyDescriptor {
    pub params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covering_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_diameter: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_lipschitz: Option<f64>,
}

impl FamilyDescriptor {
    pub fn with_constant(params: usize, c: f64) -> Self {
        FamilyDescriptor {
            params,
            covering_constant: Some(c),
            param_diameter: None,
            param_lipschitz: None,
        }
    }

    pub fn lipschitz(params: usize, param_diameter: f64, param_lipschitz: f64) -> Self {
        FamilyDescriptor {
            params,
            covering_constant: None,
            param_diameter: Some(param_diameter),
            param_lipschitz: Some(param_lipschitz),
        }
    }

    /// Covering scale `C = 2·diam(Θ)·L_param` unless given explicitly.
    pub fn constant(&self) -> Result<f64> {
        let c = match (self.covering_constant, self.param_diameter, self.param_lipschitz) {
            (Some(c), _, _) => c,
            (None, Some(diam), Some(lip)) => 2.0 * diam * lip,
            _ => {
                return Err(Error::InvalidArgument(
                    "family needs `covering_constant` or both `param_diameter` and `param_lipschitz`".into(),
                ))
            }
        };
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("covering constant must be finite and >= 0, got {c}")));
        }
        Ok(c)
    }
}

/// The support `K`, a ball of radius `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportDescriptor {
    pub radius: f64,
    /// Defaults to `2R`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covering_constant: Option<f64>,
}

impl SupportDescriptor {
    pub fn constant(&self) -> f64 {
        self.covering_constant.unwrap_or(2.0 * self.radius)
    }
}

/// Everything the bound needs to know about a class `𝒢`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub m: usize,
    pub d: usize,
    pub interval: TimeInterval,
    pub comparison: ComparisonKind,
    pub l0: f64,
    pub l: f64,
    pub encoder_family: FamilyDescriptor,
    pub field_family: FamilyDescriptor,
    pub k: SupportDescriptor,
    /// Radius of the ball `K̃` containing every trajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_tilde_radius: Option<f64>,
    /// Diameter `D` of `K̃`; defaults to twice `k_tilde_radius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter: Option<f64>,
    #[serde(default)]
    pub covering_model: CoveringModel,
}

/// Parameter count, parameter-set diameter and parameter-Lipschitz constant
/// for encoders whose weight and bias blocks lie in Frobenius balls of radius
/// `block_radius`, evaluated on `K = B(0, k_radius)`.
pub fn encoder_descriptor(
    spec: &EncoderSpec,
    d: usize,
    interval: TimeInterval,
    k_radius: f64,
    block_radius: f64,
) -> FamilyDescriptor {
    let widths: Vec<usize> = match spec {
        EncoderSpec::AffineSquashed => vec![],
        EncoderSpec::MlpSquashed { widths } => widths.clone(),
    };
    let mut fan_in = d;
    let mut params = 0;
    // Norm bound on the input of each layer.
    let mut input_norms = vec![k_radius];
    for &w in widths.iter().chain(std::iter::once(&1)) {
        params += w * fan_in + w;
        input_norms.push((w as f64).sqrt());
        fan_in = w;
    }
    input_norms.pop();
    let layers = input_norms.len();
    // A perturbation of layer l moves its output by at most √(|h_l|² + 1)·|Δθ_l|;
    // later layers amplify by at most their spectral norms ≤ block_radius.
    let sum_sq: f64 = input_norms
        .iter()
        .enumerate()
        .map(|(l, h)| block_radius.powi(2 * (layers - 1 - l) as i32) * (h * h + 1.0))
        .sum();
    let lipschitz = interval.length() / 4.0 * sum_sq.sqrt();
    let diameter = 2.0 * block_radius * ((2 * layers) as f64).sqrt();
    FamilyDescriptor::lipschitz(params, diameter, lipschitz)
}

impl ClassSpec {
    /// Instantiates the constants for a trainable class, following the
    /// affine and recurrent worked examples (and the translation-only case
    /// for constant fields). `block_radius` bounds every encoder weight and
    /// bias block.
    pub fn for_model(spec: &ModelSpec, k_radius: f64, block_radius: f64) -> Result<ClassSpec> {
        let fam = &spec.family;
        fam.validate()?;
        let d = fam.dim;
        let m = spec.m;
        let t_bar = spec.interval.t_bar();
        let mt = m as f64 * t_bar;
        let q = fam.param_count();
        let unit_matrix_diam = 2.0 * ((d + 1) as f64).sqrt();
        let k_tilde = match fam.kind {
            FieldKind::Constant => k_radius + mt * fam.max_norm,
            FieldKind::Affine => (k_radius + 1.0) * mt.exp(),
            FieldKind::Recurrent => k_radius + mt,
        };
        // Inside the bump plateau the trajectories never see the cutoff.
        let c = match &fam.bump {
            Some(b) if b.inner_radius < k_tilde => fam.constants(),
            _ => fam.plateau_constants(if fam.kind == FieldKind::Affine { k_tilde } else { 0.0 })?,
        };
        let field_family = match fam.kind {
            FieldKind::Constant => FamilyDescriptor::lipschitz(q, 2.0 * fam.max_norm, 1.0),
            _ => FamilyDescriptor::lipschitz(q, unit_matrix_diam, (k_tilde * k_tilde + 1.0).sqrt()),
        };
        let (l0, l) = (c.l0, c.l);
        let comparison = ComparisonKind::WorstCase { l, l0: Some(l0) };
        let cs = ClassSpec {
            m,
            d,
            interval: spec.interval,
            comparison,
            l0,
            l,
            encoder_family: encoder_descriptor(&spec.encoder, d, spec.interval, k_radius, block_radius),
            field_family,
            k: SupportDescriptor {
                radius: k_radius,
                covering_constant: None,
            },
            k_tilde_radius: Some(k_tilde),
            diameter: None,
            covering_model: CoveringModel::Standard,
        };
        cs.validate()?;
        Ok(cs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("m and d must be positive".into()));
        }
        for (name, v) in [("l0", self.l0), ("l", self.l), ("k.radius", self.k.radius)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("`{name}` must be finite and >= 0, got {v}")));
            }
        }
        self.encoder_family.constant()?;
        self.field_family.constant()?;
        let d = self.diameter()?;
        if let Some(r) = self.k_tilde_radius {
            if r < self.k.radius {
                return Err(Error::InvalidArgument("K̃ must contain K (k_tilde_radius >= k.radius)".into()));
            }
        }
        if !(d >= 0.0 && d.is_finite()) {
            return Err(Error::InvalidArgument(format!("diameter must be finite and >= 0, got {d}")));
        }
        self.comparison_fn()?;
        Ok(())
    }

    pub fn t_bar(&self) -> f64 {
        self.interval.t_bar()
    }

    /// `D`, the diameter of `K̃`.
    pub fn diameter(&self) -> Result<f64> {
        match (self.diameter, self.k_tilde_radius) {
            (Some(d), _) => Ok(d),
            (None, Some(r)) => Ok(2.0 * r),
            (None, None) => Err(Error::InvalidArgument("need `diameter` or `k_tilde_radius`".into())),
        }
    }

    /// The comparison function to use, with a note when an exponentially
    /// stable declaration had to be replaced because `T0 < 0`.
    pub fn comparison_fn(&self) -> Result<(ComparisonFn, Option<String>)> {
        if matches!(self.comparison, ComparisonKind::ExpStable { .. }) && self.interval.t0() < 0.0 {
            let cf = ComparisonFn::worst_case(self.l, self.l0, self.interval)?;
            return Ok((
                cf,
                Some("exp_stable needs T0 >= 0; used worst_case with the declared L and L0".into()),
            ));
        }
        Ok((ComparisonFn::new(self.comparison.clone(), self.interval)?, None))
    }
}

/// `log 𝒩(K, |·|, δ) ≤ d·log(1 + 2R/δ)` for a ball of radius `R` in `Rᵈ`.
pub fn covering_log_k(radius: f64, d: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("δ must be positive, got {delta}")));
    }
    Ok(CoveringModel::Standard.log_cover(d, 2.0 * radius, delta))
}

/// `log 𝒩(𝓕, ‖·‖_{C⁰}, δ) ≤ q·log(1 + 2·diam(Θ)·L_param/δ)`.
pub fn covering_log_family(family: &FamilyDescriptor, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("δ must be positive, got {delta}")));
    }
    Ok(CoveringModel::Standard.log_cover(family.params, family.constant()?, delta))
}

/// Which of the three `ρ` functions to solve for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RhoKind {
    /// `δ ≥ Σ_{j<m} β̄ʲ(L0·B̄·ρ)`: encoder (time) perturbations.
    Encoder,
    /// `δ ≥ Σ_{j<m} β̄ʲ(B̄·ρ)`: field perturbations.
    Field,
    /// `δ ≥ β̄ᵐ(ρ)`: initial-condition perturbations.
    InitialPoint,
}

/// Relative bisection tolerance for the `ρ` solvers.
pub const RHO_TOL: f64 = 1e-12;

/// Left-hand side of the `ρ` inequality as a function of the unknown.
pub fn rho_lhs(cf: &ComparisonFn, m: usize, l0: f64, bar_b: f64, which: RhoKind, x: f64) -> f64 {
    match which {
        RhoKind::Encoder => (0..m).map(|j| cf.bar_beta_j(l0 * bar_b * x, j)).sum(),
        RhoKind::Field => (0..m).map(|j| cf.bar_beta_j(bar_b * x, j)).sum(),
        RhoKind::InitialPoint => cf.bar_beta_j(x, m),
    }
}

/// Largest `ρ ≥ 0` satisfying the chosen inequality. Closed form when `β̄` is
/// linear, monotone bisection otherwise. Returns `∞` when the left-hand side
/// vanishes identically.
pub fn solve_rho(cf: &ComparisonFn, m: usize, l0: f64, bar_b: f64, delta: f64, which: RhoKind) -> f64 {
    solve_rho_tol(cf, m, l0, bar_b, delta, which, RHO_TOL)
}

fn solve_rho_tol(cf: &ComparisonFn, m: usize, l0: f64, bar_b: f64, delta: f64, which: RhoKind, tol: f64) -> f64 {
    let scale = match which {
        RhoKind::Encoder => l0 * bar_b,
        RhoKind::Field => bar_b,
        RhoKind::InitialPoint => 1.0,
    };
    if scale == 0.0 || m == 0 && which != RhoKind::InitialPoint {
        return f64::INFINITY;
    }
    if delta <= 0.0 {
        return 0.0;
    }
    if let Some(c) = cf.linear_factor() {
        let denom = match which {
            RhoKind::InitialPoint => c.powi(m as i32),
            _ => scale * (0..m).map(|j| c.powi(j as i32)).sum::<f64>(),
        };
        return delta / denom;
    }
    // β̄(r) ≥ β(r, 0) = r since 0 ∈ [T0, T1], so the left-hand side is at
    // least (number of terms)·scale·ρ.
    let terms = if which == RhoKind::InitialPoint { 1.0 } else { m as f64 };
    let mut hi = delta / (terms * scale);
    let f = |x: f64| rho_lhs(cf, m, l0, bar_b, which, x);
    if f(hi) <= delta {
        return hi;
    }
    let mut lo = 0.0;
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DudleyOptions {
    /// Grid step `1/resolution` for the simplex search over `γ`.
    pub gamma_resolution: usize,
    /// Relative lower cutoff `ε`: the integral runs over `[εD, D]`.
    pub epsilon: f64,
    /// Absolute quadrature tolerance, relative to `D`.
    pub quad_tol: f64,
}

impl Default for DudleyOptions {
    fn default() -> Self {
        DudleyOptions {
            gamma_resolution: 50,
            epsilon: 1e-6,
            quad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoSample {
    pub delta: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    /// `(m^{3/2}/λ·(C_A L0 √p + C_F √q) + C_K √d)/√n`.
    pub display_value: f64,
    /// The equal-split entropy integral with the square root split across
    /// the three terms, divided by `3Γ(3/2)`.
    pub reproduced_value: f64,
    /// `|reproduced − display| / display`.
    pub closed_form_match: f64,
    /// Optimized bound divided by the display value.
    pub optimized_to_display: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Certificate {
    pub n: usize,
    pub delta_conf: f64,
    pub rademacher_value: f64,
    pub deviation_term: f64,
    pub certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub bar_b: f64,
    pub l0: f64,
    pub l: f64,
    pub diameter: f64,
    pub comparison: ComparisonFn,
    pub rho_samples: Vec<RhoSample>,
    /// `∫ √(log 𝒩) dδ` at the optimal split, before the `1/√n` factor.
    pub dudley_integral: f64,
    /// `dudley_integral / √n`, up to an absolute constant.
    pub dudley_value: f64,
    pub gamma_split: [f64; 3],
    pub equal_split_value: f64,
    pub constant: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example_closed_form: Option<ClosedFormCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theorem2: Option<Theorem2Certificate>,
    pub notes: Vec<String>,
    pub tolerances: BoundTolerances,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTolerances {
    pub rho_bisection_rel: f64,
    pub quadrature_abs: f64,
    pub integral_cutoff_rel: f64,
    pub gamma_grid_step: f64,
}

/// Precomputed pieces of the entropy integrand.
struct Integrand<'a> {
    cf: &'a ComparisonFn,
    m: usize,
    l0: f64,
    bar_b: f64,
    model: CoveringModel,
    p: usize,
    c_a: f64,
    q: usize,
    c_f: f64,
    d: usize,
    c_k: f64,
    tol: f64,
}

impl Integrand<'_> {
    fn terms(&self, delta: f64, gamma: [f64; 3]) -> [f64; 3] {
        let mf = self.m as f64;
        let r1 = solve_rho_tol(self.cf, self.m, self.l0, self.bar_b, gamma[0] * delta, RhoKind::Encoder, self.tol);
        let r2 = solve_rho_tol(self.cf, self.m, self.l0, self.bar_b, gamma[1] * delta, RhoKind::Field, self.tol);
        let r3 = solve_rho_tol(self.cf, self.m, self.l0, self.bar_b, gamma[2] * delta, RhoKind::InitialPoint, self.tol);
        [
            mf * self.model.log_cover(self.p, self.c_a, r1),
            mf * self.model.log_cover(self.q, self.c_f, r2),
            self.model.log_cover(self.d, self.c_k, r3),
        ]
    }

    fn joint(&self, delta: f64, gamma: [f64; 3]) -> f64 {
        self.terms(delta, gamma).iter().sum::<f64>().sqrt()
    }

    fn split(&self, delta: f64, gamma: [f64; 3]) -> f64 {
        self.terms(delta, gamma).iter().map(|t| t.sqrt()).sum()
    }

    /// `∫_{εD}^{D} h(δ) dδ + εD·h(εD)` via `δ = D e^{−u}`.
    fn integrate<F: Fn(f64) -> f64>(&self, h: F, diameter: f64, opts: &DudleyOptions) -> f64 {
        if diameter == 0.0 {
            return 0.0;
        }
        let u_max = (1.0 / opts.epsilon).ln();
        let body = adaptive_simpson(
            |u| {
                let delta = diameter * (-u).exp();
                h(delta) * delta
            },
            0.0,
            u_max,
            opts.quad_tol * diameter,
            50,
        );
        let head_delta = opts.epsilon * diameter;
        body + head_delta * h(head_delta)
    }
}

/// Simplex grid `γ_i = k_i / res`, `k_i ≥ 1`, plus the equal split.
fn gamma_grid(res: usize) -> Vec<[f64; 3]> {
    let mut grid = vec![[1.0 / 3.0; 3]];
    let r = res as f64;
    for a in 1..res {
        for b in 1..res - a {
            let c = res - a - b;
            if c >= 1 {
                grid.push([a as f64 / r, b as f64 / r, c as f64 / r]);
            }
        }
    }
    grid
}

/// Entropy-integral bound on `ℛ_n(𝒢)`, minimized over a simplex grid of
/// splits `(γ1, γ2, γ3)`.
pub fn dudley_bound(spec: &ClassSpec, n: usize, opts: &DudleyOptions) -> Result<BoundReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if opts.gamma_resolution < 3 {
        return Err(Error::InvalidArgument("gamma_resolution must be >= 3".into()));
    }
    if !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::InvalidArgument("epsilon must lie in (0, 1)".into()));
    }
    spec.validate()?;
    let (cf, note) = spec.comparison_fn()?;
    let bar_b = cf.bar_b();
    let diameter = spec.diameter()?;
    let integrand = Integrand {
        cf: &cf,
        m: spec.m,
        l0: spec.l0,
        bar_b,
        model: spec.covering_model,
        p: spec.encoder_family.params,
        c_a: spec.encoder_family.constant()?,
        q: spec.field_family.params,
        c_f: spec.field_family.constant()?,
        d: spec.d,
        c_k: spec.k.constant(),
        tol: RHO_TOL,
    };
    // Coarse pass over the grid, then a tight evaluation of the winner.
    let coarse = Integrand { tol: 1e-9, ..integrand };
    let coarse_opts = DudleyOptions {
        quad_tol: opts.quad_tol.max(1e-7),
        ..*opts
    };
    let grid = gamma_grid(opts.gamma_resolution);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&g| coarse.integrate(|x| coarse.joint(x, g), diameter, &coarse_opts))
        .collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let gamma = grid[best];
    let equal = [1.0 / 3.0; 3];
    let integral = integrand.integrate(|x| integrand.joint(x, gamma), diameter, opts);
    let equal_integral = integrand.integrate(|x| integrand.joint(x, equal), diameter, opts);
    let (integral, gamma) = if equal_integral < integral {
        (equal_integral, equal)
    } else {
        (integral, gamma)
    };
    let sqrt_n = (n as f64).sqrt();

    let rho_samples = [0.25, 0.5, 1.0]
        .iter()
        .map(|f| {
            let delta = f * diameter;
            RhoSample {
                delta,
                rho1: solve_rho(&cf, spec.m, spec.l0, bar_b, delta, RhoKind::Encoder),
                rho2: solve_rho(&cf, spec.m, spec.l0, bar_b, delta, RhoKind::Field),
                rho3: solve_rho(&cf, spec.m, spec.l0, bar_b, delta, RhoKind::InitialPoint),
            }
        })
        .collect();

    let example_closed_form = match cf.kind() {
        ComparisonKind::ExpStable { lambda } => {
            let power = Integrand {
                model: CoveringModel::PowerLaw,
                ..integrand
            };
            let split = power.integrate(|x| power.split(x, equal), diameter, opts);
            let gamma_3_2 = PI.sqrt() / 2.0;
            let reproduced = split / (3.0 * gamma_3_2) / sqrt_n;
            let mf = spec.m as f64;
            let display = (mf.powf(1.5) / lambda
                * (integrand.c_a * spec.l0 * (integrand.p as f64).sqrt()
                    + integrand.c_f * (integrand.q as f64).sqrt())
                + integrand.c_k * (spec.d as f64).sqrt())
                / sqrt_n;
            Some(ClosedFormCheck {
                display_value: display,
                reproduced_value: reproduced,
                closed_form_match: if display > 0.0 {
                    (reproduced - display).abs() / display
                } else {
                    reproduced.abs()
                },
                optimized_to_display: if display > 0.0 { integral / sqrt_n / display } else { 0.0 },
            })
        }
        _ => None,
    };

    Ok(BoundReport {
        n,
        m: spec.m,
        d: spec.d,
        bar_b,
        l0: spec.l0,
        l: spec.l,
        diameter,
        comparison: cf.clone(),
        rho_samples,
        dudley_integral: integral,
        dudley_value: integral / sqrt_n,
        gamma_split: gamma,
        equal_split_value: equal_integral / sqrt_n,
        constant: "up to absolute constant".into(),
        example_closed_form,
        theorem2: None,
        notes: note.into_iter().collect(),
        tolerances: BoundTolerances {
            rho_bisection_rel: RHO_TOL,
            quadrature_abs: opts.quad_tol * diameter,
            integral_cutoff_rel: opts.epsilon,
            gamma_grid_step: 1.0 / opts.gamma_resolution as f64,
        },
    })
}

/// `B·√(2 log(1/δ)/n)`.
pub fn deviation_term(b: f64, n: usize, delta_conf: f64) -> Result<f64> {
    if !(delta_conf > 0.0 && delta_conf < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence parameter must lie in (0, 1), got {delta_conf}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    Ok(b * (2.0 * (1.0 / delta_conf).ln() / n as f64).sqrt())
}

/// `4·ℛ + D·√(2 log(1/δ)/n)`, the excess-risk certificate with `B = D`.
pub fn theorem2_certificate(spec: &ClassSpec, n: usize, delta_conf: f64, rademacher_value: f64) -> Result<f64> {
    Ok(theorem2_details(spec.diameter()?, n, delta_conf, rademacher_value)?.certificate)
}

pub fn theorem2_details(diameter: f64, n: usize, delta_conf: f64, rademacher_value: f64) -> Result<Theorem2Certificate> {
    let dev = deviation_term(diameter, n, delta_conf)?;
    Ok(Theorem2Certificate {
        n,
        delta_conf,
        rademacher_value,
        deviation_term: dev,
        certificate: 4.0 * rademacher_value + dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    #[test]
    fn covering_plug_ins() {
        assert!((covering_log_k(1.0, 1, 1.0).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!((covering_log_k(1.0, 3, 0.5).unwrap() - 3.0 * 5f64.ln()).abs() < 1e-14);
        assert!(covering_log_k(1.0, 3, 1e12).unwrap() < 1e-10);
        assert!(covering_log_k(1.0, 3, 0.0).is_err());
        let zero = FamilyDescriptor::lipschitz(6, 2.0, 0.0);
        assert_eq!(covering_log_family(&zero, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn rho_closed_forms() {
        let cf = ComparisonFn::exp_stable(2.0, iv(0.0, 1.0)).unwrap();
        let bar_b = cf.bar_b();
        assert_eq!(bar_b, 0.5);
        let r1 = solve_rho(&cf, 3, 1.5, bar_b, 0.6, RhoKind::Encoder);
        assert!((r1 - 2.0 * 0.6 / (3.0 * 1.5)).abs() < 1e-15);
        let r2 = solve_rho(&cf, 3, 1.5, bar_b, 0.6, RhoKind::Field);
        assert!((r2 - 2.0 * 0.6 / 3.0).abs() < 1e-15);
        assert_eq!(solve_rho(&cf, 3, 1.5, bar_b, 0.6, RhoKind::InitialPoint), 0.6);
        let e = ComparisonFn::exponential(1.0, iv(-1.0, 1.0)).unwrap();
        let r = solve_rho(&e, 2, 1.0, 1.0, 1.0 + 1f64.exp(), RhoKind::Field);
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_satisfies_inequality() {
        let cf = ComparisonFn::worst_case(1.0, 1.0, iv(-1.0, 1.0)).unwrap();
        let bar_b = cf.bar_b();
        for which in [RhoKind::Encoder, RhoKind::Field, RhoKind::InitialPoint] {
            let mut prev = 0.0;
            for k in 1..30 {
                let delta = 0.1 * k as f64;
                let r = solve_rho(&cf, 3, 1.0, bar_b, delta, which);
                let lhs = rho_lhs(&cf, 3, 1.0, bar_b, which, r);
                assert!(lhs <= delta * (1.0 + 1e-10));
                assert!(lhs >= delta * (1.0 - 1e-10), "{which:?} {delta} {lhs}");
                assert!(r >= prev);
                prev = r;
            }
        }
    }
}
