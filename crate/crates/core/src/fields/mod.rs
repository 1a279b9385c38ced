//! Parametric vector-field families with their regularity constants.

mod bump;
mod comparison;

pub use bump::{smoothstep, smoothstep_derivative, smoothstep_max_derivative, BumpSpec};
pub use comparison::{ComparisonFn, ComparisonKind, TabulatedBeta};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, norm, spectral_norm};
use crate::sampling::uniform_in_ball;

/// Fixed bounded Lipschitz nonlinearity `σ: Rᵈ → Rᵈ`, scaled by `1/√d` so
/// that `|σ(z)| ≤ 1` and `σ` is 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    TanhComponentwise,
    /// `2·logistic(z) − 1 = tanh(z/2)`, componentwise.
    ScaledSigmoid,
}

impl Nonlinearity {
    /// Writes `σ(z)` into `out` and the diagonal of `Dσ(z)` into `deriv`.
    fn apply(&self, z: &[f64], out: &mut [f64], deriv: Option<&mut [f64]>) {
        let scale = 1.0 / (z.len() as f64).sqrt();
        let (inner, outer) = match self {
            Nonlinearity::TanhComponentwise => (1.0, 1.0),
            Nonlinearity::ScaledSigmoid => (0.5, 1.0),
        };
        for (o, zi) in out.iter_mut().zip(z) {
            *o = outer * scale * (inner * zi).tanh();
        }
        if let Some(deriv) = deriv {
            for (dv, zi) in deriv.iter_mut().zip(z) {
                let th = (inner * zi).tanh();
                *dv = outer * scale * inner * (1.0 - th * th);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Constant,
    Affine,
    Recurrent,
}

/// What to do when a matrix or offset exceeds the unit bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintPolicy {
    #[default]
    Rescale,
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldParams {
    Constant { v: Vec<f64> },
    Affine { a: Vec<f64>, u: Vec<f64> },
    Recurrent { a: Vec<f64>, u: Vec<f64>, sigma: Nonlinearity },
}

/// A vector field `f(x) = ρ(x)·g(x)` where `g` is constant, affine
/// (`Ax + u`) or recurrent (`σ(Ax + u)`) and `ρ` is an optional bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldRepr", into = "FieldRepr")]
pub struct VectorField {
    dim: usize,
    params: FieldParams,
    bump: Option<BumpSpec>,
}

/// Tolerance on `‖A‖ ≤ 1` and `|u| ≤ 1` when a policy rejects.
const UNIT_BOUND_TOL: f64 = 1e-9;

fn enforce_unit_bounds(
    a: &mut [f64],
    u: &mut [f64],
    dim: usize,
    policy: ConstraintPolicy,
) -> Result<()> {
    let an = spectral_norm(a, dim, dim);
    let un = norm(u);
    match policy {
        ConstraintPolicy::Reject => {
            if an > 1.0 + UNIT_BOUND_TOL {
                return Err(Error::Constraint(format!("spectral norm ‖A‖ = {an} exceeds 1")));
            }
            if un > 1.0 + UNIT_BOUND_TOL {
                return Err(Error::Constraint(format!("|u| = {un} exceeds 1")));
            }
        }
        ConstraintPolicy::Rescale => {
            if an > 1.0 {
                a.iter_mut().for_each(|x| *x /= an);
            }
            if un > 1.0 {
                u.iter_mut().for_each(|x| *x /= un);
            }
        }
    }
    Ok(())
}

impl VectorField {
    pub fn constant(v: Vec<f64>, bump: Option<BumpSpec>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidArgument("field dimension must be positive".into()));
        }
        let f = VectorField {
            dim: v.len(),
            params: FieldParams::Constant { v },
            bump,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn affine(
        mut a: Vec<f64>,
        mut u: Vec<f64>,
        bump: Option<BumpSpec>,
        policy: ConstraintPolicy,
    ) -> Result<Self> {
        let dim = u.len();
        check_dim(dim * dim, a.len())?;
        enforce_unit_bounds(&mut a, &mut u, dim, policy)?;
        let f = VectorField {
            dim,
            params: FieldParams::Affine { a, u },
            bump,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn recurrent(
        mut a: Vec<f64>,
        mut u: Vec<f64>,
        sigma: Nonlinearity,
        bump: Option<BumpSpec>,
        policy: ConstraintPolicy,
    ) -> Result<Self> {
        let dim = u.len();
        check_dim(dim * dim, a.len())?;
        enforce_unit_bounds(&mut a, &mut u, dim, policy)?;
        let f = VectorField {
            dim,
            params: FieldParams::Recurrent { a, u, sigma },
            bump,
        };
        f.validate()?;
        Ok(f)
    }

    /// Affine field without the unit-norm constraint. Used for test oracles
    /// and rotation fields that are exactly on the boundary.
    #[cfg(test)]
    pub(crate) fn affine_unchecked(a: Vec<f64>, u: Vec<f64>, bump: Option<BumpSpec>) -> Self {
        VectorField {
            dim: u.len(),
            params: FieldParams::Affine { a, u },
            bump,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("field dimension must be positive".into()));
        }
        if let Some(b) = &self.bump {
            b.validate()?;
        }
        if self.params_slice_iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("field parameters must be finite".into()));
        }
        Ok(())
    }

    fn params_slice_iter(&self) -> impl Iterator<Item = &f64> {
        let (first, second): (&[f64], &[f64]) = match &self.params {
            FieldParams::Constant { v } => (v, &[]),
            FieldParams::Affine { a, u } | FieldParams::Recurrent { a, u, .. } => (a, u),
        };
        first.iter().chain(second)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FieldKind {
        match self.params {
            FieldParams::Constant { .. } => FieldKind::Constant,
            FieldParams::Affine { .. } => FieldKind::Affine,
            FieldParams::Recurrent { .. } => FieldKind::Recurrent,
        }
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn bump(&self) -> Option<&BumpSpec> {
        self.bump.as_ref()
    }

    /// Number of trainable parameters (`d` or `d² + d`).
    pub fn param_count(&self) -> usize {
        match self.params {
            FieldParams::Constant { .. } => self.dim,
            _ => self.dim * self.dim + self.dim,
        }
    }

    /// Flat parameter vector: `v`, or `A` (row-major) followed by `u`.
    pub fn param_vector(&self) -> Vec<f64> {
        self.params_slice_iter().copied().collect()
    }

    /// Overwrites the parameters without enforcing constraints; callers
    /// project afterwards.
    pub(crate) fn set_param_vector(&mut self, theta: &[f64]) {
        let d = self.dim;
        match &mut self.params {
            FieldParams::Constant { v } => v.copy_from_slice(theta),
            FieldParams::Affine { a, u } | FieldParams::Recurrent { a, u, .. } => {
                a.copy_from_slice(&theta[..d * d]);
                u.copy_from_slice(&theta[d * d..]);
            }
        }
    }

    /// `f(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// `f(x)` without bump clipping.
    pub fn eval_raw(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut out = vec![0.0; self.dim];
        self.raw_into(x, &mut out);
        Ok(out)
    }

    fn raw_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.params {
            FieldParams::Constant { v } => out.copy_from_slice(v),
            FieldParams::Affine { a, u } => {
                linalg::matvec_into(a, d, d, x, out);
                out.iter_mut().zip(u).for_each(|(o, ui)| *o += ui);
            }
            FieldParams::Recurrent { a, u, sigma } => {
                let mut z = vec![0.0; d];
                linalg::matvec_into(a, d, d, x, &mut z);
                z.iter_mut().zip(u).for_each(|(zi, ui)| *zi += ui);
                sigma.apply(&z, out, None);
            }
        }
    }

    pub(crate) fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let rho = self.bump.as_ref().map_or(1.0, |b| b.value(x));
        if rho == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.raw_into(x, out);
        if rho != 1.0 {
            out.iter_mut().for_each(|o| *o *= rho);
        }
    }

    /// Value, state Jacobian (`d × d`) and parameter Jacobian (`d × q`),
    /// all row-major. `jp` may be empty when parameter derivatives are not
    /// needed.
    pub(crate) fn eval_with_jacobians(
        &self,
        x: &[f64],
        f: &mut [f64],
        jx: &mut [f64],
        jp: &mut [f64],
        scratch: &mut FieldScratch,
    ) {
        let d = self.dim;
        let want_params = !jp.is_empty();
        let rho = match &self.bump {
            Some(b) => b.value_grad(x, &mut scratch.bump_grad),
            None => {
                scratch.bump_grad.iter_mut().for_each(|g| *g = 0.0);
                1.0
            }
        };
        jx.iter_mut().for_each(|v| *v = 0.0);
        if want_params {
            jp.iter_mut().for_each(|v| *v = 0.0);
        }
        // g and its raw Jacobians; bump applied afterwards.
        match &self.params {
            FieldParams::Constant { v } => {
                f.copy_from_slice(v);
                if want_params {
                    for i in 0..d {
                        jp[i * d + i] = rho;
                    }
                }
            }
            FieldParams::Affine { a, u } => {
                linalg::matvec_into(a, d, d, x, f);
                f.iter_mut().zip(u).for_each(|(o, ui)| *o += ui);
                for (j, aij) in jx.iter_mut().zip(a) {
                    *j = rho * aij;
                }
                if want_params {
                    let q = d * d + d;
                    for i in 0..d {
                        let row = &mut jp[i * q..(i + 1) * q];
                        for j in 0..d {
                            row[i * d + j] = rho * x[j];
                        }
                        row[d * d + i] = rho;
                    }
                }
            }
            FieldParams::Recurrent { a, u, sigma } => {
                let z = &mut scratch.z;
                linalg::matvec_into(a, d, d, x, z);
                z.iter_mut().zip(u).for_each(|(zi, ui)| *zi += ui);
                sigma.apply(z, f, Some(&mut scratch.deriv));
                for i in 0..d {
                    let s = rho * scratch.deriv[i];
                    for j in 0..d {
                        jx[i * d + j] = s * a[i * d + j];
                    }
                }
                if want_params {
                    let q = d * d + d;
                    for i in 0..d {
                        let s = rho * scratch.deriv[i];
                        let row = &mut jp[i * q..(i + 1) * q];
                        for j in 0..d {
                            row[i * d + j] = s * x[j];
                        }
                        row[d * d + i] = s;
                    }
                }
            }
        }
        // Product rule: ∂(ρg)/∂x = ρ ∂g/∂x + g ∇ρᵀ.
        if self.bump.is_some() {
            for i in 0..d {
                for j in 0..d {
                    jx[i * d + j] += f[i] * scratch.bump_grad[j];
                }
            }
            f.iter_mut().for_each(|o| *o *= rho);
        }
    }

    pub(crate) fn scratch(&self) -> FieldScratch {
        FieldScratch::new(self.dim)
    }
}

/// Work buffers for Jacobian evaluation.
#[derive(Debug, Clone)]
pub(crate) struct FieldScratch {
    bump_grad: Vec<f64>,
    z: Vec<f64>,
    deriv: Vec<f64>,
}

impl FieldScratch {
    fn new(d: usize) -> Self {
        FieldScratch {
            bump_grad: vec![0.0; d],
            z: vec![0.0; d],
            deriv: vec![0.0; d],
        }
    }
}

/// JSON layout: `{"kind", "dim", "A", "u", "v", "sigma", "bump"}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldRepr {
    kind: FieldKind,
    dim: usize,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    u: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<Nonlinearity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bump: Option<BumpSpec>,
}

impl TryFrom<FieldRepr> for VectorField {
    type Error = Error;
    fn try_from(r: FieldRepr) -> Result<Self> {
        let missing = |name: &str| Error::InvalidArgument(format!("{:?} field needs `{name}`", r.kind));
        let field = match r.kind {
            FieldKind::Constant => VectorField::constant(r.v.clone().ok_or_else(|| missing("v"))?, r.bump)?,
            FieldKind::Affine => VectorField::affine(
                r.a.clone().ok_or_else(|| missing("A"))?,
                r.u.clone().ok_or_else(|| missing("u"))?,
                r.bump,
                ConstraintPolicy::Reject,
            )?,
            FieldKind::Recurrent => VectorField::recurrent(
                r.a.clone().ok_or_else(|| missing("A"))?,
                r.u.clone().ok_or_else(|| missing("u"))?,
                r.sigma.ok_or_else(|| missing("sigma"))?,
                r.bump,
                ConstraintPolicy::Reject,
            )?,
        };
        check_dim(r.dim, field.dim)?;
        Ok(field)
    }
}

impl From<VectorField> for FieldRepr {
    fn from(f: VectorField) -> Self {
        let mut r = FieldRepr {
            kind: f.kind(),
            dim: f.dim,
            a: None,
            u: None,
            v: None,
            sigma: None,
            bump: f.bump,
        };
        match f.params {
            FieldParams::Constant { v } => r.v = Some(v),
            FieldParams::Affine { a, u } => {
                r.a = Some(a);
                r.u = Some(u);
            }
            FieldParams::Recurrent { a, u, sigma } => {
                r.a = Some(a);
                r.u = Some(u);
                r.sigma = Some(sigma);
            }
        }
        r
    }
}

/// A family `𝓕` of fields sharing a kind, dimension, bump and norm bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldFamily {
    pub kind: FieldKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<BumpSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Nonlinearity>,
    /// Bound on `|v|` for constant fields.
    #[serde(default = "one")]
    pub max_norm: f64,
    #[serde(default)]
    pub policy: ConstraintPolicy,
}

fn one() -> f64 {
    1.0
}

/// Uniform bound `L0` on `|f|` and Lipschitz constant `L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConstants {
    pub l0: f64,
    pub l: f64,
}

impl FieldFamily {
    pub fn constant(dim: usize, max_norm: f64) -> Self {
        FieldFamily {
            kind: FieldKind::Constant,
            dim,
            bump: None,
            sigma: None,
            max_norm,
            policy: ConstraintPolicy::Rescale,
        }
    }

    pub fn affine(dim: usize, bump: Option<BumpSpec>) -> Self {
        FieldFamily {
            kind: FieldKind::Affine,
            dim,
            bump,
            sigma: None,
            max_norm: 1.0,
            policy: ConstraintPolicy::Rescale,
        }
    }

    pub fn recurrent(dim: usize, sigma: Nonlinearity, bump: Option<BumpSpec>) -> Self {
        FieldFamily {
            kind: FieldKind::Recurrent,
            dim,
            bump,
            sigma: Some(sigma),
            max_norm: 1.0,
            policy: ConstraintPolicy::Rescale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("family dimension must be positive".into()));
        }
        if let Some(b) = &self.bump {
            b.validate()?;
        }
        if !(self.max_norm >= 0.0 && self.max_norm.is_finite()) {
            return Err(Error::InvalidArgument("max_norm must be finite and >= 0".into()));
        }
        if self.kind == FieldKind::Recurrent && self.sigma.is_none() {
            return Err(Error::InvalidArgument("recurrent family needs `sigma`".into()));
        }
        Ok(())
    }

    /// `q`: parameters per member.
    pub fn param_count(&self) -> usize {
        match self.kind {
            FieldKind::Constant => self.dim,
            _ => self.dim * self.dim + self.dim,
        }
    }

    /// Global `(L0, L)` valid on all of `Rᵈ`, including the bump's effect.
    pub fn constants(&self) -> FieldConstants {
        let bump_slope = self.bump.as_ref().map_or(0.0, |b| b.max_gradient());
        match self.kind {
            FieldKind::Constant => FieldConstants {
                l0: self.max_norm,
                l: self.max_norm * bump_slope,
            },
            FieldKind::Affine => match &self.bump {
                Some(b) => {
                    let l0 = b.outer_radius + 1.0;
                    FieldConstants {
                        l0,
                        l: 1.0 + l0 * bump_slope,
                    }
                }
                None => FieldConstants {
                    l0: f64::INFINITY,
                    l: 1.0,
                },
            },
            FieldKind::Recurrent => FieldConstants {
                l0: 1.0,
                l: 1.0 + bump_slope,
            },
        }
    }

    /// `(L0, L)` restricted to the ball of the given radius, which must lie
    /// inside the bump plateau (where the bump is identically 1).
    pub fn plateau_constants(&self, radius: f64) -> Result<FieldConstants> {
        if let Some(b) = &self.bump {
            if radius > b.inner_radius {
                return Err(Error::InvalidArgument(format!(
                    "radius {radius} exceeds bump plateau {}",
                    b.inner_radius
                )));
            }
        }
        Ok(match self.kind {
            FieldKind::Constant => FieldConstants {
                l0: self.max_norm,
                l: 0.0,
            },
            FieldKind::Affine => FieldConstants {
                l0: radius + 1.0,
                l: 1.0,
            },
            FieldKind::Recurrent => FieldConstants { l0: 1.0, l: 1.0 },
        })
    }

    /// Projects a member back into the family: spectral clip of `A`, unit
    /// ball for `u`, `max_norm` ball for `v`.
    pub fn project(&self, f: &mut VectorField) {
        let d = f.dim;
        match &mut f.params {
            FieldParams::Constant { v } => {
                let n = norm(v);
                if n > self.max_norm && n > 0.0 {
                    let s = self.max_norm / n;
                    v.iter_mut().for_each(|x| *x *= s);
                }
            }
            FieldParams::Affine { a, u } | FieldParams::Recurrent { a, u, .. } => {
                enforce_unit_bounds(a, u, d, ConstraintPolicy::Rescale).expect("rescale never fails");
            }
        }
    }

    /// Builds a member from a flat parameter vector.
    pub fn member(&self, theta: &[f64]) -> Result<VectorField> {
        check_dim(self.param_count(), theta.len())?;
        let d = self.dim;
        match self.kind {
            FieldKind::Constant => {
                let mut f = VectorField::constant(theta.to_vec(), self.bump)?;
                if self.policy == ConstraintPolicy::Reject && norm(theta) > self.max_norm + UNIT_BOUND_TOL {
                    return Err(Error::Constraint(format!("|v| exceeds {}", self.max_norm)));
                }
                self.project(&mut f);
                Ok(f)
            }
            FieldKind::Affine => VectorField::affine(
                theta[..d * d].to_vec(),
                theta[d * d..].to_vec(),
                self.bump,
                self.policy,
            ),
            FieldKind::Recurrent => VectorField::recurrent(
                theta[..d * d].to_vec(),
                theta[d * d..].to_vec(),
                self.sigma.unwrap_or(Nonlinearity::TanhComponentwise),
                self.bump,
                self.policy,
            ),
        }
    }

    /// Initial member: `A` entries uniform in `±1/√d` then spectrally
    /// clipped, `u` (or `v`) uniform in its ball.
    pub fn sample_init<R: Rng + ?Sized>(&self, rng: &mut R) -> VectorField {
        let d = self.dim;
        let theta = match self.kind {
            FieldKind::Constant => uniform_in_ball(rng, d, self.max_norm),
            _ => {
                let s = 1.0 / (d as f64).sqrt();
                let mut theta: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-s..=s)).collect();
                theta.extend(uniform_in_ball(rng, d, 1.0));
                theta
            }
        };
        self.member_rescaled(&theta)
    }

    /// Member spread over the whole family: `‖A‖` uniform in `[0, 1]`.
    pub fn sample_member<R: Rng + ?Sized>(&self, rng: &mut R) -> VectorField {
        let d = self.dim;
        let theta = match self.kind {
            FieldKind::Constant => uniform_in_ball(rng, d, self.max_norm),
            _ => {
                let mut a: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let target = rng.gen_range(0.0..=1.0);
                let an = spectral_norm(&a, d, d);
                if an > 0.0 {
                    a.iter_mut().for_each(|x| *x *= target / an);
                }
                a.extend(uniform_in_ball(rng, d, 1.0));
                a
            }
        };
        self.member_rescaled(&theta)
    }

    fn member_rescaled(&self, theta: &[f64]) -> VectorField {
        let mut fam = self.clone();
        fam.policy = ConstraintPolicy::Rescale;
        fam.member(theta).expect("sampled parameters are finite")
    }
}

/// Uniform `(L0, L)` for every member of the family.
pub fn field_constants(family: &FieldFamily) -> FieldConstants {
    family.constants()
}

/// Outcome of the exponential-stability diagnostic for an affine matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityDiagnostic {
    /// Largest eigenvalue of `(A + Aᵀ)/2`, an upper bound on `max Re λ(A)`.
    pub symmetric_max_eig: f64,
    pub declared_lambda: f64,
    pub certified: bool,
}

/// Checks whether `max Re λ(A) ≤ −λ` is certified by the symmetric part.
pub fn exp_stability_diagnostic(a: &[f64], dim: usize, lambda: f64) -> Result<StabilityDiagnostic> {
    check_dim(dim * dim, a.len())?;
    let m = linalg::sym_part_max_eig(a, dim);
    Ok(StabilityDiagnostic {
        symmetric_max_eig: m,
        declared_lambda: lambda,
        certified: m <= -lambda,
    })
}
