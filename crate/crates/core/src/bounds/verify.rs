//! Sampled checks of the flow perturbation inequalities and of the net
//! construction behind the covering bound.
//!
//! Each check draws random instances, evaluates both sides and counts
//! violations beyond a tolerance. Sup norms `‖f − f′‖_{C⁰(K̃)}` are estimated
//! by sampling, so they under-estimate the true norm; a flagged trial is
//! re-evaluated once with ten times as many sample points before it counts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{Encoder, EncoderKind, ProductEncoder};
use crate::error::{Error, Result};
use crate::fields::{
    BumpSpec, ComparisonFn, FieldFamily, FieldKind, FieldParams, Nonlinearity, VectorField,
};
use crate::flows::{trajectory, FlowConfig};
use crate::interval::TimeInterval;
use crate::linalg::{dist, norm, sub, top_singular};
use crate::model::ReconstructionMap;
use crate::sampling::{derive_seed, rng_from_seed, uniform_in_ball};

/// Knobs shared by the lemma checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyOptions {
    pub trials: usize,
    pub tol: f64,
    pub interval: TimeInterval,
    /// Radius `R` of the support `K`.
    pub k_radius: f64,
    /// Largest number of layers the trajectory ball `K̃` must accommodate.
    pub m: usize,
    pub max_dim: usize,
    pub c0_samples: usize,
    pub step: f64,
    pub densify_factor: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            trials: 1000,
            tol: 1e-6,
            interval: TimeInterval::new(-1.0, 1.0).expect("valid interval"),
            k_radius: 1.0,
            m: 3,
            max_dim: 3,
            c0_samples: 10_000,
            step: 1e-3,
            densify_factor: 10,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.max_dim == 0 || self.c0_samples == 0 || self.densify_factor == 0 {
            return Err(Error::InvalidArgument(
                "m, max_dim, c0_samples and densify_factor must be positive".into(),
            ));
        }
        if !(self.tol >= 0.0 && self.k_radius >= 0.0 && self.k_radius.is_finite()) {
            return Err(Error::InvalidArgument("tol and k_radius must be >= 0".into()));
        }
        if !(self.step > 0.0) {
            return Err(Error::InvalidArgument("step must be positive".into()));
        }
        Ok(())
    }

    fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            safety_radius: Some(f64::INFINITY),
            ..FlowConfig::with_step(self.step)
        }
    }
}

/// A field family restricted to a trajectory ball `K̃`, with a comparison
/// function valid on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaClass {
    pub family: FieldFamily,
    pub cf: ComparisonFn,
    pub k_radius: f64,
    pub k_tilde: f64,
}

impl LemmaClass {
    /// Affine or recurrent fields in dimension `d`, with a bump whose plateau
    /// contains every trajectory of up to `opts.m` layers started in `K`.
    /// On the plateau `|f| ≤ L0` and `f` is 1-Lipschitz.
    pub fn new(kind: FieldKind, d: usize, opts: &VerifyOptions) -> Result<Self> {
        let mt = opts.m as f64 * opts.interval.t_bar();
        let r = opts.k_radius;
        let (k_tilde, l0) = match kind {
            FieldKind::Affine => {
                let k = (r + 1.0) * mt.exp();
                (k, k + 1.0)
            }
            FieldKind::Recurrent => (r + mt, 1.0),
            FieldKind::Constant => {
                return Err(Error::InvalidArgument("lemma checks use affine or recurrent fields".into()))
            }
        };
        let inner = 1.05 * k_tilde;
        let bump = Some(BumpSpec {
            inner_radius: inner,
            outer_radius: 2.0 * inner,
            profile: 2,
        });
        let family = match kind {
            FieldKind::Affine => FieldFamily::affine(d, bump),
            _ => FieldFamily::recurrent(d, Nonlinearity::TanhComponentwise, bump),
        };
        let cf = ComparisonFn::worst_case(1.0, l0, opts.interval)?;
        Ok(LemmaClass {
            family,
            cf,
            k_radius: r,
            k_tilde,
        })
    }

    /// Uses a different comparison function, e.g. the pure exponential one.
    pub fn with_comparison(mut self, cf: ComparisonFn) -> Self {
        self.cf = cf;
        self
    }

    fn name(&self) -> String {
        let kind = match self.family.kind {
            FieldKind::Constant => "constant",
            FieldKind::Affine => "affine",
            FieldKind::Recurrent => "recurrent",
        };
        format!("{kind}/d={}", self.family.dim)
    }

    /// Either an independent member or a small perturbation of `f`.
    fn partner<R: Rng + ?Sized>(&self, f: &VectorField, rng: &mut R, near: bool) -> Result<VectorField> {
        if !near {
            return Ok(self.family.sample_member(rng));
        }
        let scale = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let theta: Vec<f64> = f
            .param_vector()
            .iter()
            .map(|p| p + scale * rng.gen_range(-1.0..1.0))
            .collect();
        self.family.member(&theta)
    }

    fn point_in_k<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        uniform_in_ball(rng, self.family.dim, self.k_radius)
    }
}

/// Sampled `max |f(x) − g(x)|` over `count` uniform points of `K̃`, the
/// given extra points, and the two extreme points along the top singular
/// direction of `A − A′`.
fn c0_distance<R: Rng + ?Sized>(
    f: &VectorField,
    g: &VectorField,
    k_tilde: f64,
    extra: &[Vec<f64>],
    count: usize,
    rng: &mut R,
) -> Result<f64> {
    let d = f.dim();
    let mut pts: Vec<Vec<f64>> = (0..count).map(|_| uniform_in_ball(rng, d, k_tilde)).collect();
    if let (
        FieldParams::Affine { a, .. } | FieldParams::Recurrent { a, .. },
        FieldParams::Affine { a: b, .. } | FieldParams::Recurrent { a: b, .. },
    ) = (f.params(), g.params())
    {
        let (s, v) = top_singular(&sub(a, b), d, d);
        if s > 0.0 {
            pts.push(v.iter().map(|x| x * k_tilde).collect());
            pts.push(v.iter().map(|x| -x * k_tilde).collect());
        }
    }
    let mut best: f64 = 0.0;
    for x in pts.iter().chain(extra) {
        best = best.max(dist(&f.eval(x)?, &g.eval(x)?));
    }
    Ok(best)
}

/// Runs `layers` with the given durations, returning the end point and all
/// intermediate RK4 states.
fn run_layers(fs: &[VectorField], ts: &[f64], xi: &[f64], cfg: &FlowConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut x = xi.to_vec();
    let mut all = Vec::new();
    for (f, &t) in fs.iter().zip(ts) {
        let traj = trajectory(f, &x, t, cfg)?;
        x = traj.last().expect("trajectory is nonempty").clone();
        all.extend(traj);
    }
    Ok((x, all))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub lhs: f64,
    pub rhs: f64,
    pub densified: bool,
}

/// Aggregate of one check over one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub class: String,
    pub trials: usize,
    pub violations: usize,
    /// Smallest `rhs − lhs` over all trials.
    pub min_slack: f64,
    /// Largest `rhs − lhs` over all trials.
    pub max_slack: f64,
    /// Largest `lhs / rhs` among trials with `rhs > 0`.
    pub max_ratio: f64,
    pub densified: usize,
    pub tol: f64,
}

impl LemmaReport {
    fn from_outcomes(lemma: &str, class: String, tol: f64, outcomes: &[TrialOutcome]) -> Self {
        let mut r = LemmaReport {
            lemma: lemma.into(),
            class,
            trials: outcomes.len(),
            violations: 0,
            min_slack: f64::INFINITY,
            max_slack: f64::NEG_INFINITY,
            max_ratio: 0.0,
            densified: 0,
            tol,
        };
        for o in outcomes {
            let slack = o.rhs - o.lhs;
            if slack < -tol {
                r.violations += 1;
            }
            r.min_slack = r.min_slack.min(slack);
            r.max_slack = r.max_slack.max(slack);
            if o.rhs > 0.0 {
                r.max_ratio = r.max_ratio.max(o.lhs / o.rhs);
            }
            r.densified += o.densified as usize;
        }
        r
    }

    /// Combines reports of the same check over several classes.
    pub fn merge(lemma: &str, class: String, parts: &[LemmaReport]) -> Self {
        LemmaReport {
            lemma: lemma.into(),
            class,
            trials: parts.iter().map(|p| p.trials).sum(),
            violations: parts.iter().map(|p| p.violations).sum(),
            min_slack: parts.iter().map(|p| p.min_slack).fold(f64::INFINITY, f64::min),
            max_slack: parts.iter().map(|p| p.max_slack).fold(f64::NEG_INFINITY, f64::max),
            max_ratio: parts.iter().map(|p| p.max_ratio).fold(0.0, f64::max),
            densified: parts.iter().map(|p| p.densified).sum(),
            tol: parts.first().map_or(0.0, |p| p.tol),
        }
    }
}

fn run_trials<F>(trials: usize, seed: u64, trial: F) -> Result<Vec<TrialOutcome>>
where
    F: Fn(u64) -> Result<TrialOutcome> + Sync,
{
    (0..trials as u64)
        .into_par_iter()
        .map(|k| trial(derive_seed(seed, k)))
        .collect()
}

/// Evaluates `rhs(c0 sample count)`; if the inequality looks violated,
/// retries with a denser sample.
fn with_densify<F>(lhs: f64, opts: &VerifyOptions, rhs: F) -> Result<TrialOutcome>
where
    F: Fn(usize) -> Result<f64>,
{
    let first = rhs(opts.c0_samples)?;
    if lhs <= first + opts.tol {
        return Ok(TrialOutcome {
            lhs,
            rhs: first,
            densified: false,
        });
    }
    let dense = rhs(opts.c0_samples * opts.densify_factor)?;
    Ok(TrialOutcome {
        lhs,
        rhs: dense.max(first),
        densified: true,
    })
}

/// `|e^{tf}ξ − e^{tf′}ξ| ≤ B̄·‖f − f′‖_{C⁰(K̃)}` for random pairs `f, f′`,
/// `ξ ∈ K` and `t ∈ [T0, T1]`.
pub fn verify_lemma_one_layer(class: &LemmaClass, opts: &VerifyOptions, seed: u64) -> Result<LemmaReport> {
    opts.validate()?;
    let cfg = opts.flow_config();
    let bar_b = class.cf.bar_b();
    let iv = opts.interval;
    let outcomes = run_trials(opts.trials, seed, |s| {
        let mut rng = rng_from_seed(s);
        let f = class.family.sample_member(&mut rng);
        let near = rng.gen_bool(0.5);
        let g = class.partner(&f, &mut rng, near)?;
        let xi = class.point_in_k(&mut rng);
        let t = rng.gen_range(iv.t0()..=iv.t1());
        let (a, pa) = run_layers(std::slice::from_ref(&f), &[t], &xi, &cfg)?;
        let (b, pb) = run_layers(std::slice::from_ref(&g), &[t], &xi, &cfg)?;
        let extra: Vec<Vec<f64>> = pa.into_iter().chain(pb).collect();
        let lhs = dist(&a, &b);
        with_densify(lhs, opts, |count| {
            let mut rng = rng_from_seed(derive_seed(s, count as u64));
            Ok(bar_b * c0_distance(&f, &g, class.k_tilde, &extra, count, &mut rng)?)
        })
    })?;
    Ok(LemmaReport::from_outcomes("one_layer", class.name(), opts.tol, &outcomes))
}

/// `|e^{𝐭𝐟}ξ − e^{𝐭𝐟}ξ′| ≤ β̄ᵏ(|ξ − ξ′|)` for random `k`-tuples of fields
/// and durations and `ξ, ξ′ ∈ K`.
pub fn verify_lemma_initial_condition(
    class: &LemmaClass,
    k: usize,
    opts: &VerifyOptions,
    seed: u64,
) -> Result<LemmaReport> {
    opts.validate()?;
    if k == 0 || k > opts.m {
        return Err(Error::InvalidArgument(format!("k must lie in 1..={}", opts.m)));
    }
    let cfg = opts.flow_config();
    let iv = opts.interval;
    let outcomes = run_trials(opts.trials, seed, |s| {
        let mut rng = rng_from_seed(s);
        let fs: Vec<VectorField> = (0..k).map(|_| class.family.sample_member(&mut rng)).collect();
        let ts: Vec<f64> = (0..k).map(|_| rng.gen_range(iv.t0()..=iv.t1())).collect();
        let xi = class.point_in_k(&mut rng);
        let xi2 = if rng.gen_bool(0.5) {
            class.point_in_k(&mut rng)
        } else {
            let scale = 10f64.powf(rng.gen_range(-6.0..-1.0));
            let mut p: Vec<f64> = xi.iter().map(|x| x + scale * rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&p);
            if n > class.k_radius {
                p.iter_mut().for_each(|x| *x *= class.k_radius / n);
            }
            p
        };
        let (a, _) = run_layers(&fs, &ts, &xi, &cfg)?;
        let (b, _) = run_layers(&fs, &ts, &xi2, &cfg)?;
        Ok(TrialOutcome {
            lhs: dist(&a, &b),
            rhs: class.cf.bar_beta_j(dist(&xi, &xi2), k),
            densified: false,
        })
    })?;
    Ok(LemmaReport::from_outcomes("initial_condition", class.name(), opts.tol, &outcomes))
}

/// `|e^{𝐭𝐟}ξ − e^{𝐭𝐟′}ξ| ≤ Σ_j β̄^{m−j}(B̄·‖f_j − f′_j‖_{C⁰(K̃)})` for random
/// `m`-tuples, where layer `j` (1-based, in order of application) is
/// followed by `m − j` further layers.
pub fn verify_lemma_field_perturbation(
    class: &LemmaClass,
    m: usize,
    opts: &VerifyOptions,
    seed: u64,
) -> Result<LemmaReport> {
    opts.validate()?;
    if m == 0 || m > opts.m {
        return Err(Error::InvalidArgument(format!("m must lie in 1..={}", opts.m)));
    }
    let cfg = opts.flow_config();
    let bar_b = class.cf.bar_b();
    let iv = opts.interval;
    let outcomes = run_trials(opts.trials, seed, |s| {
        let mut rng = rng_from_seed(s);
        let near = rng.gen_bool(0.5);
        let fs: Vec<VectorField> = (0..m).map(|_| class.family.sample_member(&mut rng)).collect();
        let gs = fs
            .iter()
            .map(|f| class.partner(f, &mut rng, near))
            .collect::<Result<Vec<_>>>()?;
        let ts: Vec<f64> = (0..m).map(|_| rng.gen_range(iv.t0()..=iv.t1())).collect();
        let xi = class.point_in_k(&mut rng);
        let (a, pa) = run_layers(&fs, &ts, &xi, &cfg)?;
        let (b, pb) = run_layers(&gs, &ts, &xi, &cfg)?;
        let extra: Vec<Vec<f64>> = pa.into_iter().chain(pb).collect();
        with_densify(dist(&a, &b), opts, |count| {
            let mut rng = rng_from_seed(derive_seed(s, count as u64));
            let mut total = 0.0;
            for (j, (f, g)) in fs.iter().zip(&gs).enumerate() {
                let c0 = c0_distance(f, g, class.k_tilde, &extra, count, &mut rng)?;
                total += class.cf.bar_beta_j(bar_b * c0, m - 1 - j);
            }
            Ok(total)
        })
    })?;
    Ok(LemmaReport::from_outcomes("field_perturbation", class.name(), opts.tol, &outcomes))
}

/// The constant-field toy class: `m` layers of constant fields `v ∈ [−c, c]ᵈ`,
/// affine encoders `a(x) = T0 + (T1 − T0)·logistic(w·x + b)` with
/// `w ∈ [−W, W]ᵈ`, `b ∈ [−B, B]`, and base points `ξ` in the ball `K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub d: usize,
    pub m: usize,
    pub interval: TimeInterval,
    pub field_box: f64,
    pub weight_box: f64,
    pub bias_box: f64,
    pub k_radius: f64,
    /// Largest admissible number of net elements.
    pub budget: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec {
            d: 2,
            m: 2,
            interval: TimeInterval::new(-1.0, 1.0).expect("valid interval"),
            field_box: 1.0,
            weight_box: 1.0,
            bias_box: 1.0,
            k_radius: 1.0,
            budget: 1e30,
        }
    }
}

/// One axis of a grid net: `cells` equal cells on `[−half, half]`, net
/// points at the cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub half: f64,
    pub cells: usize,
}

impl GridAxis {
    /// Coarsest grid whose cells have side at most `spacing`.
    fn new(half: f64, spacing: f64) -> Result<Self> {
        if half == 0.0 {
            return Ok(GridAxis { half, cells: 1 });
        }
        if !(spacing > 0.0) {
            return Err(Error::InvalidArgument(
                "a zero net radius needs a degenerate (zero-width) parameter box".into(),
            ));
        }
        let cells = (2.0 * half / spacing).ceil().max(1.0);
        if cells > 1e15 {
            return Err(Error::NetBudget {
                size: cells,
                budget: 1e15,
            });
        }
        Ok(GridAxis {
            half,
            cells: cells as usize,
        })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        -self.half + (i as f64 + 0.5) * self.spacing()
    }

    /// Index of the cell containing `x`, clamped to the box.
    pub fn cell(&self, x: f64) -> usize {
        if self.half == 0.0 {
            return 0;
        }
        let i = ((x + self.half) / self.spacing()).floor();
        i.clamp(0.0, (self.cells - 1) as f64) as usize
    }

    pub fn round(&self, x: f64) -> f64 {
        self.center(self.cell(x))
    }
}

/// Explicit product grid nets for the toy class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNet {
    pub spec: ToySpec,
    pub weight_axis: GridAxis,
    pub bias_axis: GridAxis,
    pub field_axis: GridAxis,
    pub k_axis: GridAxis,
    /// Radii actually achieved by each net.
    pub certified: [f64; 3],
}

impl ToyNet {
    /// Grids fine enough that the encoder, field and base-point nets are
    /// `δ1`, `δ2` and `δ3` nets.
    pub fn new(spec: ToySpec, deltas: [f64; 3]) -> Result<Self> {
        if spec.d == 0 || spec.m == 0 {
            return Err(Error::InvalidArgument("toy class needs d >= 1 and m >= 1".into()));
        }
        if deltas.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::InvalidArgument("net radii must be >= 0".into()));
        }
        let sd = (spec.d as f64).sqrt();
        let len = spec.interval.length();
        // |a(x) − a′(x)| ≤ (T1 − T0)/4 · (|Δw|·R + |Δb|) with |Δw| ≤ h√d/2, |Δb| ≤ h/2.
        let h_enc = 8.0 * deltas[0] / (len * (spec.k_radius * sd + 1.0));
        let (weight_axis, bias_axis) = if len == 0.0 {
            (GridAxis::new(0.0, 0.0)?, GridAxis::new(0.0, 0.0)?)
        } else {
            (GridAxis::new(spec.weight_box, h_enc)?, GridAxis::new(spec.bias_box, h_enc)?)
        };
        let field_axis = GridAxis::new(spec.field_box, 2.0 * deltas[1] / sd)?;
        let k_axis = GridAxis::new(spec.k_radius, 2.0 * deltas[2] / sd)?;
        let certified = [
            len / 4.0 * (spec.k_radius * weight_axis.spacing() * sd / 2.0 + bias_axis.spacing() / 2.0),
            field_axis.spacing() * sd / 2.0,
            k_axis.spacing() * sd / 2.0,
        ];
        let net = ToyNet {
            spec,
            weight_axis,
            bias_axis,
            field_axis,
            k_axis,
            certified,
        };
        let size = net.size();
        if size > spec.budget {
            return Err(Error::NetBudget {
                size,
                budget: spec.budget,
            });
        }
        Ok(net)
    }

    /// Number of net elements (as a float, since it overflows quickly).
    pub fn size(&self) -> f64 {
        let (d, m) = (self.spec.d as i32, self.spec.m as i32);
        (self.weight_axis.cells as f64).powi(d * m)
            * (self.bias_axis.cells as f64).powi(m)
            * (self.field_axis.cells as f64).powi(d * m)
            * (self.k_axis.cells as f64).powi(d)
    }

    /// `Σ_{j<m} β̄ʲ(L0·B̄·δ1) + Σ_{j<m} β̄ʲ(B̄·δ2) + β̄ᵐ(δ3)` with `β̄ = id`,
    /// `L0 = c√d` and `B̄ = T̄`.
    pub fn radius(&self, deltas: [f64; 3]) -> f64 {
        let m = self.spec.m as f64;
        let l0 = self.spec.field_box * (self.spec.d as f64).sqrt();
        let bar_b = self.spec.interval.t_bar();
        m * l0 * bar_b * deltas[0] + m * bar_b * deltas[1] + deltas[2]
    }

    /// The net element assigned to `g` (cellwise rounding of every parameter).
    pub fn round(&self, g: &ToyMember) -> ToyMember {
        let r = |axis: &GridAxis, v: &[f64]| v.iter().map(|x| axis.round(*x)).collect::<Vec<f64>>();
        ToyMember {
            weights: g.weights.iter().map(|w| r(&self.weight_axis, w)).collect(),
            biases: g.biases.iter().map(|b| self.bias_axis.round(*b)).collect(),
            fields: g.fields.iter().map(|v| r(&self.field_axis, v)).collect(),
            xi: r(&self.k_axis, &g.xi),
        }
    }

    /// All net elements, in lexicographic index order. Only for small nets.
    pub fn elements(&self, limit: usize) -> Result<Vec<ToyMember>> {
        let size = self.size();
        if size > limit as f64 {
            return Err(Error::NetBudget {
                size,
                budget: limit as f64,
            });
        }
        let (d, m) = (self.spec.d, self.spec.m);
        let mut axes: Vec<GridAxis> = Vec::new();
        for _ in 0..m {
            axes.extend(std::iter::repeat_n(self.weight_axis, d));
            axes.push(self.bias_axis);
            axes.extend(std::iter::repeat_n(self.field_axis, d));
        }
        axes.extend(std::iter::repeat_n(self.k_axis, d));
        let mut out = Vec::with_capacity(size as usize);
        for mut idx in 0..size as usize {
            let mut coords = Vec::with_capacity(axes.len());
            for a in axes.iter().rev() {
                coords.push(a.center(idx % a.cells));
                idx /= a.cells;
            }
            coords.reverse();
            let mut it = coords.into_iter();
            let mut g = ToyMember {
                weights: vec![],
                biases: vec![],
                fields: vec![],
                xi: vec![],
            };
            for _ in 0..m {
                g.weights.push(it.by_ref().take(d).collect());
                g.biases.push(it.next().expect("bias coordinate"));
                g.fields.push(it.by_ref().take(d).collect());
            }
            g.xi = it.collect();
            out.push(g);
        }
        Ok(out)
    }
}

/// Parameters of one member of the toy class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyMember {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub fields: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
}

impl ToyMember {
    pub fn sample<R: Rng + ?Sized>(spec: &ToySpec, rng: &mut R) -> Self {
        let bx = |rng: &mut R, h: f64| if h == 0.0 { 0.0 } else { rng.gen_range(-h..=h) };
        let (d, m) = (spec.d, spec.m);
        ToyMember {
            weights: (0..m).map(|_| (0..d).map(|_| bx(rng, spec.weight_box)).collect()).collect(),
            biases: (0..m).map(|_| bx(rng, spec.bias_box)).collect(),
            fields: (0..m).map(|_| (0..d).map(|_| bx(rng, spec.field_box)).collect()).collect(),
            xi: uniform_in_ball(rng, d, spec.k_radius),
        }
    }

    pub fn to_map(&self, interval: TimeInterval) -> Result<ReconstructionMap> {
        let parts = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| Encoder::new(EncoderKind::AffineSquashed { w: w.clone(), b: *b }, interval))
            .collect::<Result<Vec<_>>>()?;
        let fields = self
            .fields
            .iter()
            .map(|v| VectorField::constant(v.clone(), None))
            .collect::<Result<Vec<_>>>()?;
        ReconstructionMap::new(ProductEncoder::new(parts)?, fields, self.xi.clone(), FlowConfig::with_step(1.0))
    }
}

/// Sampled `‖G − G′‖_{C⁰(K)}`.
pub fn sampled_c0(g: &ReconstructionMap, h: &ReconstructionMap, points: &[Vec<f64>]) -> Result<f64> {
    let mut best: f64 = 0.0;
    for x in points {
        best = best.max(dist(&g.reconstruct(x)?, &h.reconstruct(x)?));
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub trials: usize,
    pub violations: usize,
    pub deltas: [f64; 3],
    pub certified_deltas: [f64; 3],
    pub radius: f64,
    pub max_distance: f64,
    pub max_ratio: f64,
    pub net_size: f64,
    pub k_samples: usize,
    pub tol: f64,
}

/// Samples members of the toy class, rounds each to its grid-net element and
/// checks that the two maps are within the combined radius on `K`.
pub fn verify_proposition_net(
    spec: &ToySpec,
    deltas: [f64; 3],
    trials: usize,
    k_samples: usize,
    tol: f64,
    seed: u64,
) -> Result<PropositionReport> {
    let net = ToyNet::new(*spec, deltas)?;
    let radius = net.radius(deltas);
    let mut rng = rng_from_seed(derive_seed(seed, u64::MAX));
    let mut points: Vec<Vec<f64>> = (0..k_samples).map(|_| uniform_in_ball(&mut rng, spec.d, spec.k_radius)).collect();
    points.push(vec![0.0; spec.d]);
    let distances = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, k));
            let g = ToyMember::sample(spec, &mut rng);
            let h = net.round(&g);
            let mut pts = points.clone();
            // The encoder error peaks on the boundary of K along ±w.
            for w in g.weights.iter().chain(&h.weights) {
                let n = norm(w);
                if n > 0.0 {
                    pts.push(w.iter().map(|x| x * spec.k_radius / n).collect());
                    pts.push(w.iter().map(|x| -x * spec.k_radius / n).collect());
                }
            }
            sampled_c0(&g.to_map(spec.interval)?, &h.to_map(spec.interval)?, &pts)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut report = PropositionReport {
        trials,
        violations: 0,
        deltas,
        certified_deltas: net.certified,
        radius,
        max_distance: 0.0,
        max_ratio: 0.0,
        net_size: net.size(),
        k_samples: points.len(),
        tol,
    };
    for dd in distances {
        if dd > radius + tol {
            report.violations += 1;
        }
        report.max_distance = report.max_distance.max(dd);
        if radius > 0.0 {
            report.max_ratio = report.max_ratio.max(dd / radius);
        }
    }
    Ok(report)
}

/// Every lemma check over affine and recurrent classes, plus the toy net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub lemmas: Vec<LemmaReport>,
    pub proposition: PropositionReport,
    pub violations: usize,
    pub options: VerifyOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropositionOptions {
    pub toy: ToySpec,
    pub deltas: [f64; 3],
    pub trials: usize,
    pub k_samples: usize,
}

impl Default for PropositionOptions {
    fn default() -> Self {
        PropositionOptions {
            toy: ToySpec::default(),
            deltas: [0.05, 0.05, 0.05],
            trials: 200,
            k_samples: 1000,
        }
    }
}

/// Splits `opts.trials` across dimensions `1..=max_dim` and merges the
/// per-dimension reports.
fn across_dims<F>(kind: FieldKind, opts: &VerifyOptions, seed: u64, lemma: &str, run: F) -> Result<LemmaReport>
where
    F: Fn(&LemmaClass, &VerifyOptions, u64) -> Result<LemmaReport>,
{
    let mut parts = Vec::new();
    for d in 1..=opts.max_dim {
        let share = opts.trials / opts.max_dim + usize::from(d <= opts.trials % opts.max_dim);
        let class = LemmaClass::new(kind, d, opts)?;
        let sub = VerifyOptions { trials: share, ..*opts };
        parts.push(run(&class, &sub, derive_seed(seed, d as u64))?);
    }
    let name = match kind {
        FieldKind::Affine => "affine",
        FieldKind::Recurrent => "recurrent",
        FieldKind::Constant => "constant",
    };
    Ok(LemmaReport::merge(lemma, format!("{name}/d=1..{}", opts.max_dim), &parts))
}

pub fn verify_all(opts: &VerifyOptions, prop: &PropositionOptions, seed: u64) -> Result<VerificationReport> {
    opts.validate()?;
    let m = opts.m;
    let mut lemmas = Vec::new();
    for (i, kind) in [FieldKind::Affine, FieldKind::Recurrent].into_iter().enumerate() {
        let s = derive_seed(seed, 10 * i as u64);
        lemmas.push(across_dims(kind, opts, derive_seed(s, 1), "one_layer", |c, o, s| {
            verify_lemma_one_layer(c, o, s)
        })?);
        lemmas.push(across_dims(kind, opts, derive_seed(s, 2), "initial_condition", |c, o, s| {
            verify_lemma_initial_condition(c, m, o, s)
        })?);
        lemmas.push(across_dims(kind, opts, derive_seed(s, 3), "field_perturbation", |c, o, s| {
            verify_lemma_field_perturbation(c, m, o, s)
        })?);
    }
    let proposition = verify_proposition_net(
        &prop.toy,
        prop.deltas,
        prop.trials,
        prop.k_samples,
        opts.tol,
        derive_seed(seed, 99),
    )?;
    let violations = lemmas.iter().map(|l| l.violations).sum::<usize>() + proposition.violations;
    Ok(VerificationReport {
        lemmas,
        proposition,
        violations,
        options: *opts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> VerifyOptions {
        VerifyOptions {
            trials: 30,
            c0_samples: 500,
            step: 1e-2,
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn lemma_checks_pass_on_small_budgets() {
        let opts = small();
        for kind in [FieldKind::Affine, FieldKind::Recurrent] {
            let c = LemmaClass::new(kind, 2, &opts).unwrap();
            for r in [
                verify_lemma_one_layer(&c, &opts, 1).unwrap(),
                verify_lemma_initial_condition(&c, 3, &opts, 2).unwrap(),
                verify_lemma_field_perturbation(&c, 3, &opts, 3).unwrap(),
            ] {
                assert_eq!(r.violations, 0, "{r:?}");
                assert_eq!(r.trials, 30);
            }
        }
    }

    #[test]
    fn grid_axis_rounding() {
        let a = GridAxis::new(1.0, 0.5).unwrap();
        assert_eq!(a.cells, 4);
        assert_eq!(a.round(0.1), 0.25);
        assert_eq!(a.round(-1.0), -0.75);
        assert_eq!(a.round(1.0), 0.75);
        assert!(GridAxis::new(1.0, 0.0).is_err());
        assert_eq!(GridAxis::new(0.0, 0.0).unwrap().cells, 1);
    }

    #[test]
    fn degenerate_toy_class_has_singleton_net() {
        let spec = ToySpec {
            weight_box: 0.0,
            bias_box: 0.0,
            field_box: 0.0,
            k_radius: 0.0,
            ..ToySpec::default()
        };
        let r = verify_proposition_net(&spec, [0.0; 3], 5, 10, 1e-6, 0).unwrap();
        assert_eq!(r.net_size, 1.0);
        assert_eq!(r.max_distance, 0.0);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn budget_is_enforced() {
        let spec = ToySpec {
            budget: 1e3,
            ..ToySpec::default()
        };
        assert!(matches!(ToyNet::new(spec, [0.01; 3]), Err(Error::NetBudget { .. })));
    }
}
