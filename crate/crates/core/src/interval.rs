use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flow-duration interval `[T0, T1]`, always containing 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct TimeInterval {
    t0: f64,
    t1: f64,
}

impl TimeInterval {
    pub fn new(t0: f64, t1: f64) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t0 > 0.0 || t1 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "interval [{t0}, {t1}] must be finite and contain 0"
            )));
        }
        Ok(TimeInterval { t0, t1 })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn length(&self) -> f64 {
        self.t1 - self.t0
    }

    /// `max{|T0|, |T1|}`.
    pub fn t_bar(&self) -> f64 {
        self.t0.abs().max(self.t1.abs())
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }
}

impl TryFrom<[f64; 2]> for TimeInterval {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        TimeInterval::new(v[0], v[1])
    }
}

impl From<TimeInterval> for [f64; 2] {
    fn from(i: TimeInterval) -> Self {
        [i.t0, i.t1]
    }
}
