//! Flow maps `e^{tf}ξ` and their compositions, integrated with fixed-step
//! classical RK4.
//!
//! Negative durations are integrated with a signed step. Sensitivities are
//! obtained by integrating the variational equation on the same grid, which
//! makes them the exact derivatives of the discrete RK4 map.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::fields::VectorField;
use crate::linalg::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorMethod {
    #[default]
    #[serde(alias = "rk4-classical")]
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "default_step")]
    pub step_size_max: f64,
    #[serde(default)]
    pub method: IntegratorMethod,
    #[serde(default = "default_min_steps")]
    pub min_steps: usize,
    /// Bound on `|x|` enforced between layers of a composition. Defaults to
    /// ten times the largest bump outer radius among the composed fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_radius: Option<f64>,
}

fn default_step() -> f64 {
    1e-2
}

fn default_min_steps() -> usize {
    1
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            step_size_max: default_step(),
            method: IntegratorMethod::Rk4,
            min_steps: default_min_steps(),
            safety_radius: None,
        }
    }
}

impl FlowConfig {
    pub fn with_step(step_size_max: f64) -> Self {
        FlowConfig {
            step_size_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size_max > 0.0 && self.step_size_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step_size_max must be positive, got {}",
                self.step_size_max
            )));
        }
        if self.min_steps == 0 {
            return Err(Error::InvalidArgument("min_steps must be >= 1".into()));
        }
        if let Some(r) = self.safety_radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("safety_radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Number of RK4 steps used for a duration `t`.
    pub fn steps_for(&self, t: f64) -> usize {
        ((t.abs() / self.step_size_max).ceil() as usize).max(self.min_steps)
    }

    /// Safety radius for a tuple of fields.
    pub fn safety_radius_for(&self, fields: &[VectorField]) -> f64 {
        if let Some(r) = self.safety_radius {
            return r;
        }
        fields
            .iter()
            .filter_map(|f| f.bump().map(|b| 10.0 * b.outer_radius))
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
            .unwrap_or(f64::INFINITY)
    }
}

/// Dense row-major Jacobian block.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// Which quantity to differentiate the flow with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    InitialPoint,
    FieldParams,
    Time,
}

fn check_finite(x: &[f64], time: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { time })
    }
}

/// `e^{tf}ξ`.
pub fn flow(f: &VectorField, xi: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    check_dim(f.dim(), xi.len())?;
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("flow duration must be finite, got {t}")));
    }
    let mut x = xi.to_vec();
    if t == 0.0 {
        return Ok(x);
    }
    let d = f.dim();
    let n = cfg.steps_for(t);
    let h = t / n as f64;
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut tmp = vec![0.0; d];
    for step in 0..n {
        f.eval_into(&x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        f.eval_into(&tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        f.eval_into(&tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        f.eval_into(&tmp, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(&x, h * (step + 1) as f64)?;
    }
    Ok(x)
}

/// All RK4 states of the trajectory `s ↦ e^{sf}ξ` for `s` between 0 and `t`,
/// including both endpoints.
pub fn trajectory(f: &VectorField, xi: &[f64], t: f64, cfg: &FlowConfig) -> Result<Vec<Vec<f64>>> {
    check_dim(f.dim(), xi.len())?;
    let mut out = vec![xi.to_vec()];
    if t == 0.0 {
        return Ok(out);
    }
    let n = cfg.steps_for(t);
    let h = t / n as f64;
    let one_step = FlowConfig {
        step_size_max: h.abs() * (1.0 + 1e-12),
        min_steps: 1,
        ..*cfg
    };
    let mut x = xi.to_vec();
    for _ in 0..n {
        x = flow(f, &x, h, &one_step)?;
        out.push(x.clone());
    }
    Ok(out)
}

/// `e^{t_m f_m} ∘ ⋯ ∘ e^{t_1 f_1} ξ`.
pub fn compose_flows(fs: &[VectorField], ts: &[f64], xi: &[f64], cfg: &FlowConfig) -> Result<Vec<f64>> {
    if fs.is_empty() {
        return Err(Error::InvalidArgument("compose_flows needs at least one field".into()));
    }
    check_dim(fs.len(), ts.len())?;
    let radius = cfg.safety_radius_for(fs);
    let mut x = xi.to_vec();
    for (f, &t) in fs.iter().zip(ts) {
        x = flow(f, &x, t, cfg)?;
        let n = norm(&x);
        if n > radius {
            return Err(Error::Escape { norm: n, radius });
        }
    }
    Ok(x)
}

/// End state of a flow with its derivatives.
#[derive(Debug, Clone)]
pub struct FlowSensitivity {
    pub state: Vec<f64>,
    /// `∂x(t)/∂ξ`, `d × d`.
    pub d_initial: Jacobian,
    /// `∂x(t)/∂θ`, `d × q`; empty when not requested.
    pub d_params: Jacobian,
    /// `∂x(t)/∂t = f(x(t))`.
    pub d_time: Vec<f64>,
}

/// Integrates the state together with its variational equation.
pub fn flow_variational(
    f: &VectorField,
    xi: &[f64],
    t: f64,
    cfg: &FlowConfig,
    with_params: bool,
) -> Result<FlowSensitivity> {
    check_dim(f.dim(), xi.len())?;
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("flow duration must be finite, got {t}")));
    }
    let d = f.dim();
    let q = if with_params { f.param_count() } else { 0 };
    let cols = d + q;
    let len = d + d * cols;
    let mut y = vec![0.0; len];
    y[..d].copy_from_slice(xi);
    for i in 0..d {
        y[d + i * cols + i] = 1.0;
    }
    let mut bufs = RhsBuffers::new(f, q);
    if t != 0.0 {
        let n = cfg.steps_for(t);
        let h = t / n as f64;
        let mut k1 = vec![0.0; len];
        let mut k2 = vec![0.0; len];
        let mut k3 = vec![0.0; len];
        let mut k4 = vec![0.0; len];
        let mut tmp = vec![0.0; len];
        for step in 0..n {
            bufs.rhs(f, &y, &mut k1);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            bufs.rhs(f, &tmp, &mut k2);
            for i in 0..len {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            bufs.rhs(f, &tmp, &mut k3);
            for i in 0..len {
                tmp[i] = y[i] + h * k3[i];
            }
            bufs.rhs(f, &tmp, &mut k4);
            for i in 0..len {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            check_finite(&y, h * (step + 1) as f64)?;
        }
    }
    let state = y[..d].to_vec();
    let mut d_initial = Vec::with_capacity(d * d);
    let mut d_params = Vec::with_capacity(d * q);
    for i in 0..d {
        let row = &y[d + i * cols..d + (i + 1) * cols];
        d_initial.extend_from_slice(&row[..d]);
        d_params.extend_from_slice(&row[d..]);
    }
    let mut d_time = vec![0.0; d];
    f.eval_into(&state, &mut d_time);
    Ok(FlowSensitivity {
        state,
        d_initial: Jacobian {
            rows: d,
            cols: d,
            data: d_initial,
        },
        d_params: Jacobian {
            rows: d,
            cols: q,
            data: d_params,
        },
        d_time,
    })
}

/// `e^{tf}ξ` together with one Jacobian block.
pub fn flow_with_sensitivity(
    f: &VectorField,
    xi: &[f64],
    t: f64,
    cfg: &FlowConfig,
    wrt: Wrt,
) -> Result<(Vec<f64>, Jacobian)> {
    let sens = flow_variational(f, xi, t, cfg, wrt == Wrt::FieldParams)?;
    let jac = match wrt {
        Wrt::InitialPoint => sens.d_initial,
        Wrt::FieldParams => sens.d_params,
        Wrt::Time => Jacobian {
            rows: f.dim(),
            cols: 1,
            data: sens.d_time,
        },
    };
    Ok((sens.state, jac))
}

struct RhsBuffers {
    d: usize,
    q: usize,
    f: Vec<f64>,
    jx: Vec<f64>,
    jp: Vec<f64>,
    scratch: crate::fields::FieldScratch,
}

impl RhsBuffers {
    fn new(field: &VectorField, q: usize) -> Self {
        let d = field.dim();
        RhsBuffers {
            d,
            q,
            f: vec![0.0; d],
            jx: vec![0.0; d * d],
            jp: vec![0.0; d * q],
            scratch: field.scratch(),
        }
    }

    /// `ẋ = f(x)`, `Ṡ = J_x S + [0 | J_θ]`.
    fn rhs(&mut self, field: &VectorField, y: &[f64], dy: &mut [f64]) {
        let (d, q) = (self.d, self.q);
        let cols = d + q;
        field.eval_with_jacobians(&y[..d], &mut self.f, &mut self.jx, &mut self.jp, &mut self.scratch);
        dy[..d].copy_from_slice(&self.f);
        let s = &y[d..];
        let ds = &mut dy[d..];
        for i in 0..d {
            let out = &mut ds[i * cols..(i + 1) * cols];
            out.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..d {
                let a = self.jx[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for (o, sk) in out.iter_mut().zip(&s[k * cols..(k + 1) * cols]) {
                    *o += a * sk;
                }
            }
            for c in 0..q {
                out[d + c] += self.jp[i * q + c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BumpSpec, ConstraintPolicy};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn decay() -> VectorField {
        let bump = BumpSpec::new(10.0, 20.0, 2).unwrap();
        VectorField::affine(vec![-1.0], vec![0.0], Some(bump), ConstraintPolicy::Reject).unwrap()
    }

    fn rotation() -> VectorField {
        VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.0, 0.0], None, ConstraintPolicy::Reject).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let xi = [0.3, -0.7];
        assert_eq!(flow(&rotation(), &xi, 0.0, &FlowConfig::default()).unwrap(), xi.to_vec());
        let (x, j) = flow_with_sensitivity(&rotation(), &xi, 0.0, &FlowConfig::default(), Wrt::InitialPoint).unwrap();
        assert_eq!(x, xi.to_vec());
        assert_eq!(j.data, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_field_is_exact() {
        let v = VectorField::constant(vec![1.0, -2.0], None).unwrap();
        let x = flow(&v, &[0.5, 0.5], 0.75, &FlowConfig::with_step(0.1)).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-15 && (x[1] + 1.0).abs() < 1e-15);
        let (_, jt) = flow_with_sensitivity(&v, &[0.5, 0.5], 0.75, &FlowConfig::default(), Wrt::Time).unwrap();
        assert_eq!(jt.data, vec![1.0, -2.0]);
    }

    #[test]
    fn linear_decay() {
        let cfg = FlowConfig::with_step(1e-3);
        let x = flow(&decay(), &[1.0], 1.0, &cfg).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-8);
        let (_, j) = flow_with_sensitivity(&decay(), &[1.0], 1.0, &cfg, Wrt::InitialPoint).unwrap();
        assert!((j.data[0] - (-1.0f64).exp()).abs() < 1e-6);
    }

    #[test]
    fn backward_flow_inverts_forward() {
        let cfg = FlowConfig::with_step(1e-3);
        let x = flow(&decay(), &[1.0], 1.0, &cfg).unwrap();
        let back = flow(&decay(), &x, -1.0, &cfg).unwrap();
        assert!((back[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rotation_quarter_turn() {
        let x = flow(&rotation(), &[1.0, 0.0], FRAC_PI_2, &FlowConfig::with_step(1e-3)).unwrap();
        assert!(x[0].abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn composition_of_constants() {
        let v1 = VectorField::constant(vec![1.0, 0.0], None).unwrap();
        let v2 = VectorField::constant(vec![0.0, 2.0], None).unwrap();
        let x = compose_flows(&[v1.clone(), v2.clone()], &[0.5, -0.25], &[1.0, 1.0], &FlowConfig::default()).unwrap();
        assert!((x[0] - 1.5).abs() < 1e-14 && (x[1] - 0.5).abs() < 1e-14);
        let same = compose_flows(&[v1, v2], &[0.0, 0.0], &[1.0, 1.0], &FlowConfig::default()).unwrap();
        assert_eq!(same, vec![1.0, 1.0]);
    }

    #[test]
    fn composition_enforces_safety_radius() {
        let v = VectorField::constant(vec![1.0], None).unwrap();
        let cfg = FlowConfig {
            safety_radius: Some(2.0),
            ..FlowConfig::default()
        };
        assert!(compose_flows(std::slice::from_ref(&v), &[1.0], &[0.0], &cfg).is_ok());
        assert!(matches!(compose_flows(&[v], &[3.0], &[0.0], &cfg), Err(Error::Escape { .. })));
    }

    #[test]
    fn blow_up_is_reported() {
        let f = VectorField::affine_unchecked(vec![1e6], vec![0.0], None);
        let err = flow(&f, &[1.0], 100.0, &FlowConfig::with_step(1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn half_turn_rotation() {
        let x = compose_flows(&[rotation()], &[PI], &[1.0, 0.0], &FlowConfig::with_step(1e-3)).unwrap();
        assert!((x[0] + 1.0).abs() < 1e-6 && x[1].abs() < 1e-6);
    }

    #[test]
    fn trajectory_endpoints() {
        let cfg = FlowConfig::with_step(0.1);
        let tr = trajectory(&rotation(), &[1.0, 0.0], -0.55, &cfg).unwrap();
        assert_eq!(tr.len(), 7);
        let end = flow(&rotation(), &[1.0, 0.0], -0.55, &cfg).unwrap();
        assert!(crate::linalg::dist(tr.last().unwrap(), &end) < 1e-14);
    }
}
