use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Radial cutoff: 1 on `|x| ≤ inner_radius`, 0 on `|x| ≥ outer_radius`, with a
/// polynomial smoothstep of continuity order `profile` in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub inner_radius: f64,
    pub outer_radius: f64,
    #[serde(default = "default_profile")]
    pub profile: u32,
}

fn default_profile() -> u32 {
    2
}

impl BumpSpec {
    pub fn new(inner_radius: f64, outer_radius: f64, profile: u32) -> Result<Self> {
        let b = BumpSpec {
            inner_radius,
            outer_radius,
            profile,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inner_radius > 0.0 && self.inner_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bump inner_radius must be positive, got {}",
                self.inner_radius
            )));
        }
        if !(self.outer_radius > self.inner_radius && self.outer_radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "bump outer_radius {} must exceed inner_radius {}",
                self.outer_radius, self.inner_radius
            )));
        }
        if self.profile < 2 {
            return Err(Error::InvalidArgument(format!(
                "bump profile order must be >= 2, got {}",
                self.profile
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.outer_radius - self.inner_radius
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        if r <= self.inner_radius {
            1.0
        } else if r >= self.outer_radius {
            0.0
        } else {
            1.0 - smoothstep(self.profile, (r - self.inner_radius) / self.width())
        }
    }

    /// Value and gradient. The gradient is written into `grad`.
    pub fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = norm(x);
        if r <= self.inner_radius || r >= self.outer_radius {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return if r <= self.inner_radius { 1.0 } else { 0.0 };
        }
        let s = (r - self.inner_radius) / self.width();
        let slope = -smoothstep_derivative(self.profile, s) / self.width() / r;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = slope * xi;
        }
        1.0 - smoothstep(self.profile, s)
    }

    /// Supremum of `|∇ρ|`.
    pub fn max_gradient(&self) -> f64 {
        smoothstep_max_derivative(self.profile) / self.width()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Generalized smoothstep `S_N` of degree `2N+1`, which is `C^N` at 0 and 1.
pub fn smoothstep(order: u32, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let n = order;
    let mut sum = 0.0;
    for k in 0..=n {
        sum += binomial(n + k, k) * binomial(2 * n + 1, n - k) * (-x).powi(k as i32);
    }
    sum * x.powi(n as i32 + 1)
}

/// `S_N'(x) = (2N+1)!/(N!)² · xᴺ (1−x)ᴺ`.
pub fn smoothstep_derivative(order: u32, x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    derivative_scale(order) * (x * (1.0 - x)).powi(order as i32)
}

/// Peak of `S_N'`, attained at `x = 1/2`.
pub fn smoothstep_max_derivative(order: u32) -> f64 {
    derivative_scale(order) / 4f64.powi(order as i32)
}

fn derivative_scale(order: u32) -> f64 {
    f64::from(2 * order + 1) * binomial(2 * order, order)
}
