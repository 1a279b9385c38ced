//! Synthetic point clouds on simple shapes, with truncated Gaussian noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::model::{Dataset, Sampler};
use crate::sampling::{derive_seed, rng_from_seed, standard_normal_vec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// `{(s, 0, …) : s ∈ [0, 1]}`.
    Segment,
    /// Unit circle in the first two coordinates.
    Circle,
    /// Two turns of radius 1, height in `[−1/2, 1/2]`.
    Helix,
    /// Unit sphere points with polar angle at most `π/3`.
    SphereCap,
    /// Swiss roll scaled into the unit ball's neighbourhood, heights in `[−1/2, 1/2]`.
    SwissRoll,
}

impl Shape {
    pub fn min_dim(&self) -> usize {
        match self {
            Shape::Segment => 1,
            Shape::Circle => 2,
            Shape::Helix | Shape::SphereCap | Shape::SwissRoll => 3,
        }
    }

    /// Upper bound on `|x|` for noiseless points.
    pub fn radius(&self) -> f64 {
        match self {
            Shape::Segment | Shape::Circle | Shape::SphereCap => 1.0,
            Shape::Helix | Shape::SwissRoll => 1.25f64.sqrt(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Segment => "segment",
            Shape::Circle => "circle",
            Shape::Helix => "helix",
            Shape::SphereCap => "sphere_cap",
            Shape::SwissRoll => "swiss_roll",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    #[default]
    Uniform,
    Linspace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub shape: Shape,
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Apply a seeded random orthogonal map after sampling.
    #[serde(default)]
    pub embedding: bool,
    #[serde(default)]
    pub sampling: Parameterization,
}

const NOISE_CLIP: f64 = 3.0;
const EMBEDDING_STREAM: u64 = 0x656d_6265_6464;

fn golden_fraction(k: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    (k as f64 * g).fract()
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.d < self.shape.min_dim() {
            return Err(Error::InvalidArgument(format!(
                "shape `{}` needs d >= {}, got {}",
                self.shape.name(),
                self.shape.min_dim(),
                self.d
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Bound on `|x|` for every generated point.
    pub fn radius_bound(&self) -> f64 {
        self.shape.radius() + NOISE_CLIP * self.noise_sigma
    }

    fn embed(&self, p: [f64; 3]) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        let k = self.shape.min_dim();
        x[..k].copy_from_slice(&p[..k]);
        x
    }

    /// Point at normalized shape parameters `(u, v) ∈ [0, 1]²`.
    fn point_at(&self, u: f64, v: f64) -> Vec<f64> {
        let p = match self.shape {
            Shape::Segment => [u, 0.0, 0.0],
            Shape::Circle => {
                let th = 2.0 * PI * u;
                [th.cos(), th.sin(), 0.0]
            }
            Shape::Helix => {
                let th = 4.0 * PI * u;
                [th.cos(), th.sin(), u - 0.5]
            }
            Shape::SphereCap => {
                // cos(polar) uniform in [1/2, 1] gives the uniform area measure.
                let z: f64 = 1.0 - 0.5 * u;
                let s = (1.0 - z * z).max(0.0).sqrt();
                let az = 2.0 * PI * v;
                [s * az.cos(), s * az.sin(), z]
            }
            Shape::SwissRoll => {
                let th = 1.5 * PI + 3.0 * PI * u;
                let scale = 4.5 * PI;
                [th * th.cos() / scale, v - 0.5, th * th.sin() / scale]
            }
        };
        self.embed(p)
    }

    fn linspace_params(&self, k: usize) -> (f64, f64) {
        let n = self.n;
        match self.shape {
            // The circle is periodic, so the last angle stops short of 2π.
            Shape::Circle => (k as f64 / n as f64, 0.0),
            Shape::SphereCap => ((k as f64 + 0.5) / n as f64, golden_fraction(k)),
            _ => {
                let u = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
                (u, golden_fraction(k))
            }
        }
    }

    fn add_noise<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) {
        if self.noise_sigma == 0.0 {
            return;
        }
        let mut e = standard_normal_vec(rng, self.d);
        e.iter_mut().for_each(|v| *v *= self.noise_sigma);
        let n = norm(&e);
        let cap = NOISE_CLIP * self.noise_sigma;
        if n > cap {
            e.iter_mut().for_each(|v| *v *= cap / n);
        }
        x.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
    }

    fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u = rng.gen::<f64>();
        let v = rng.gen::<f64>();
        self.point_at(u, v)
    }

    /// Orthogonal `d × d` matrix from Gram–Schmidt on Gaussian columns.
    fn embedding_matrix(&self) -> Option<Vec<Vec<f64>>> {
        if !self.embedding {
            return None;
        }
        let mut rng = rng_from_seed(derive_seed(self.seed, EMBEDDING_STREAM));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.d);
        while basis.len() < self.d {
            let mut v = standard_normal_vec(&mut rng, self.d);
            // Two passes keep the basis orthonormal to rounding error.
            for _ in 0..2 {
                for b in &basis {
                    let c = dot(&v, b);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let n = norm(&v);
            if n > 1e-8 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        Some(basis)
    }

    fn apply_embedding(q: &Option<Vec<Vec<f64>>>, x: Vec<f64>) -> Vec<f64> {
        match q {
            None => x,
            Some(q) => {
                let mut out = vec![0.0; x.len()];
                for (xi, col) in x.iter().zip(q) {
                    out.iter_mut().zip(col).for_each(|(o, c)| *o += xi * c);
                }
                out
            }
        }
    }
}

/// Deterministic dataset for a spec.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let q = spec.embedding_matrix();
    let points = (0..spec.n)
        .map(|k| {
            let mut x = match spec.sampling {
                Parameterization::Uniform => spec.uniform_point(&mut rng),
                Parameterization::Linspace => {
                    let (u, v) = spec.linspace_params(k);
                    spec.point_at(u, v)
                }
            };
            spec.add_noise(&mut x, &mut rng);
            GeneratorSpec::apply_embedding(&q, x)
        })
        .collect();
    Dataset::new(spec.shape.name(), points)
}

impl Sampler for GeneratorSpec {
    fn dim(&self) -> usize {
        self.d
    }

    /// Fresh i.i.d. draw from the uniform-on-shape measure plus noise.
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let mut x = self.uniform_point(rng);
        self.add_noise(&mut x, rng);
        GeneratorSpec::apply_embedding(&self.embedding_matrix(), x)
    }
}

/// Seeded shuffle, then the first `round(fraction·n)` rows go to the
/// training part.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.n();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidArgument(format!(
            "fraction {train_fraction} of {n} points leaves an empty part"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let train = data.subset(format!("{}-train", data.name()), &idx[..n_train])?;
    let test = data.subset(format!("{}-test", data.name()), &idx[n_train..])?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(shape: Shape, d: usize, n: usize) -> GeneratorSpec {
        GeneratorSpec {
            shape,
            d,
            n,
            noise_sigma: 0.0,
            seed: 5,
            embedding: false,
            sampling: Parameterization::Linspace,
        }
    }

    #[test]
    fn segment_endpoints() {
        let s = generate(&spec(Shape::Segment, 2, 2)).unwrap();
        assert_eq!(s.points(), &[vec![0.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn circle_quarter_angles() {
        let s = generate(&spec(Shape::Circle, 2, 4)).unwrap();
        let expected = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        for (p, e) in s.points().iter().zip(expected) {
            assert!((p[0] - e[0]).abs() < 1e-15 && (p[1] - e[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_checks() {
        assert!(generate(&spec(Shape::Circle, 1, 4)).is_err());
        assert!(generate(&spec(Shape::SwissRoll, 2, 4)).is_err());
        assert!(generate(&spec(Shape::Segment, 1, 0)).is_err());
    }

    #[test]
    fn radius_bound_holds_with_noise_and_embedding() {
        for shape in [Shape::Segment, Shape::Circle, Shape::Helix, Shape::SphereCap, Shape::SwissRoll] {
            for sampling in [Parameterization::Uniform, Parameterization::Linspace] {
                let sp = GeneratorSpec {
                    noise_sigma: 0.2,
                    embedding: true,
                    sampling,
                    ..spec(shape, 5, 300)
                };
                let s = generate(&sp).unwrap();
                assert!(s.support_radius() <= sp.radius_bound() + 1e-12, "{shape:?}");
            }
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let s = generate(&GeneratorSpec {
            sampling: Parameterization::Uniform,
            ..spec(Shape::Circle, 2, 10)
        })
        .unwrap();
        let (a, b) = split(&s, 0.8, 1).unwrap();
        assert_eq!((a.n(), b.n()), (8, 2));
        let mut all: Vec<Vec<f64>> = a.points().iter().chain(b.points()).cloned().collect();
        let mut orig = s.points().to_vec();
        all.sort_by(|x, y| x.partial_cmp(y).unwrap());
        orig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(all, orig);
        assert_eq!(split(&s, 0.8, 1).unwrap(), (a, b));
        assert!(split(&s, 0.0, 1).is_err());
        assert!(split(&s, 0.99, 1).is_err());
    }
}
