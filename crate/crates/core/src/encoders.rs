//! Encoders `a: Rᵈ → [T0, T1]` and their products `𝐚 = a_1 × ⋯ × a_m`.
//!
//! Every encoder ends with a logistic squash, `a(x) = T0 + (T1 − T0)·s(z(x))`,
//! so outputs stay in the interval while remaining smooth in both the input
//! and the parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::interval::TimeInterval;
use crate::linalg::{self, norm, spectral_norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderKind {
    /// `z = w·x + b`.
    AffineSquashed { w: Vec<f64>, b: f64 },
    /// Fully connected tanh network with a scalar output layer. `weights[l]`
    /// is row-major `out × in`.
    MlpSquashed {
        widths: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        #[serde(default)]
        activation: Activation,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EncoderRepr", into = "EncoderRepr")]
pub struct Encoder {
    kind: EncoderKind,
    interval: TimeInterval,
}

#[derive(Serialize, Deserialize)]
struct EncoderRepr {
    #[serde(flatten)]
    kind: EncoderKind,
    interval: TimeInterval,
}

impl TryFrom<EncoderRepr> for Encoder {
    type Error = Error;
    fn try_from(r: EncoderRepr) -> Result<Self> {
        Encoder::new(r.kind, r.interval)
    }
}

impl From<Encoder> for EncoderRepr {
    fn from(e: Encoder) -> Self {
        EncoderRepr {
            kind: e.kind,
            interval: e.interval,
        }
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Encoder {
    pub fn new(kind: EncoderKind, interval: TimeInterval) -> Result<Self> {
        match &kind {
            EncoderKind::AffineSquashed { w, b } => {
                if w.is_empty() {
                    return Err(Error::InvalidArgument("encoder input dimension must be positive".into()));
                }
                if !b.is_finite() && !b.is_infinite() {
                    return Err(Error::InvalidArgument("encoder bias is NaN".into()));
                }
            }
            EncoderKind::MlpSquashed {
                widths,
                weights,
                biases,
                ..
            } => {
                if weights.len() != widths.len() + 1 || biases.len() != widths.len() + 1 {
                    return Err(Error::InvalidArgument(format!(
                        "MLP with {} hidden layers needs {} weight and bias blocks",
                        widths.len(),
                        widths.len() + 1
                    )));
                }
                if widths.contains(&0) {
                    return Err(Error::InvalidArgument("hidden widths must be positive".into()));
                }
                let first_out = widths.first().copied().unwrap_or(1);
                if weights[0].is_empty() || weights[0].len() % first_out != 0 {
                    return Err(Error::InvalidArgument("first weight block has an invalid size".into()));
                }
                let mut fan_in = weights[0].len() / first_out;
                for (l, (wl, bl)) in weights.iter().zip(biases).enumerate() {
                    let out = widths.get(l).copied().unwrap_or(1);
                    if wl.len() != out * fan_in || bl.len() != out {
                        return Err(Error::InvalidArgument(format!("layer {l} has inconsistent shapes")));
                    }
                    fan_in = out;
                }
            }
        }
        Ok(Encoder { kind, interval })
    }

    pub fn affine(w: Vec<f64>, b: f64, interval: TimeInterval) -> Result<Self> {
        Self::new(EncoderKind::AffineSquashed { w, b }, interval)
    }

    pub fn kind(&self) -> &EncoderKind {
        &self.kind
    }

    pub fn interval(&self) -> TimeInterval {
        self.interval
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            EncoderKind::AffineSquashed { w, .. } => w.len(),
            EncoderKind::MlpSquashed { widths, weights, .. } => {
                weights[0].len() / widths.first().copied().unwrap_or(1)
            }
        }
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match &self.kind {
            EncoderKind::AffineSquashed { w, .. } => vec![(1, w.len())],
            EncoderKind::MlpSquashed { widths, .. } => {
                let mut shapes = Vec::with_capacity(widths.len() + 1);
                let mut fan_in = self.input_dim();
                for &w in widths.iter().chain(std::iter::once(&1)) {
                    shapes.push((w, fan_in));
                    fan_in = w;
                }
                shapes
            }
        }
    }

    /// Pre-squash output `z(x)`.
    pub fn raw(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim(), x.len())?;
        Ok(self.forward(x, None))
    }

    fn forward(&self, x: &[f64], mut acts: Option<&mut Vec<Vec<f64>>>) -> f64 {
        match &self.kind {
            EncoderKind::AffineSquashed { w, b } => linalg::dot(w, x) + b,
            EncoderKind::MlpSquashed { weights, biases, .. } => {
                let shapes = self.layer_shapes();
                let mut h = x.to_vec();
                let last = shapes.len() - 1;
                for (l, &(out, fan_in)) in shapes.iter().enumerate() {
                    let mut z = linalg::matvec(&weights[l], out, fan_in, &h);
                    z.iter_mut().zip(&biases[l]).for_each(|(zi, bi)| *zi += bi);
                    if l < last {
                        z.iter_mut().for_each(|zi| *zi = zi.tanh());
                    }
                    if let Some(a) = acts.as_deref_mut() {
                        a.push(h);
                    }
                    h = z;
                }
                h[0]
            }
        }
    }

    fn squash(&self, z: f64) -> f64 {
        let (t0, t1) = (self.interval.t0(), self.interval.t1());
        (t0 + self.interval.length() * logistic(z)).clamp(t0, t1)
    }

    /// `a(x) ∈ [T0, T1]`.
    pub fn encode(&self, x: &[f64]) -> Result<f64> {
        Ok(self.squash(self.raw(x)?))
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Per layer: weights (row-major) then biases.
    pub fn param_vector(&self) -> Vec<f64> {
        match &self.kind {
            EncoderKind::AffineSquashed { w, b } => w.iter().copied().chain(std::iter::once(*b)).collect(),
            EncoderKind::MlpSquashed { weights, biases, .. } => weights
                .iter()
                .zip(biases)
                .flat_map(|(w, b)| w.iter().chain(b).copied())
                .collect(),
        }
    }

    pub(crate) fn set_param_vector(&mut self, theta: &[f64]) {
        match &mut self.kind {
            EncoderKind::AffineSquashed { w, b } => {
                let n = w.len();
                w.copy_from_slice(&theta[..n]);
                *b = theta[n];
            }
            EncoderKind::MlpSquashed { weights, biases, .. } => {
                let mut off = 0;
                for (w, b) in weights.iter_mut().zip(biases.iter_mut()) {
                    let (nw, nb) = (w.len(), b.len());
                    w.copy_from_slice(&theta[off..off + nw]);
                    b.copy_from_slice(&theta[off + nw..off + nw + nb]);
                    off += nw + nb;
                }
            }
        }
    }

    /// `a(x)` and `∂a/∂θ` in the layout of [`Encoder::param_vector`].
    pub fn value_and_param_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.input_dim(), x.len())?;
        let mut acts = Vec::new();
        let z = self.forward(x, Some(&mut acts));
        let s = logistic(z);
        let value = self.squash(z);
        let dz = self.interval.length() * s * (1.0 - s);
        let grad = match &self.kind {
            EncoderKind::AffineSquashed { .. } => x.iter().map(|xi| dz * xi).chain(std::iter::once(dz)).collect(),
            EncoderKind::MlpSquashed { weights, .. } => {
                let shapes = self.layer_shapes();
                let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); shapes.len()];
                // delta = ∂a/∂(pre-activation of the current layer)
                let mut delta = vec![dz];
                for l in (0..shapes.len()).rev() {
                    let (out, fan_in) = shapes[l];
                    let input = &acts[l];
                    let mut block = Vec::with_capacity(out * fan_in + out);
                    for i in 0..out {
                        block.extend(input.iter().map(|h| delta[i] * h));
                    }
                    block.extend_from_slice(&delta);
                    blocks[l] = block;
                    if l > 0 {
                        // input = tanh(previous pre-activation)
                        let back = linalg::vecmat(&delta, &weights[l], out, fan_in);
                        delta = back.iter().zip(input).map(|(g, h)| g * (1.0 - h * h)).collect();
                    }
                }
                blocks.concat()
            }
        };
        Ok((value, grad))
    }

    /// Upper bound on the Lipschitz constant in `x`:
    /// `(T1 − T0)/4 · Π_l ‖W_l‖₂`.
    pub fn lipschitz_constant(&self) -> f64 {
        let slope = self.interval.length() / 4.0;
        match &self.kind {
            EncoderKind::AffineSquashed { w, .. } => slope * norm(w),
            EncoderKind::MlpSquashed { weights, .. } => {
                let shapes = self.layer_shapes();
                slope
                    * weights
                        .iter()
                        .zip(&shapes)
                        .map(|(w, &(o, i))| spectral_norm(w, o, i))
                        .product::<f64>()
            }
        }
    }

    /// Projects every weight block and every bias block onto the Frobenius
    /// ball of the given radius.
    pub fn project_weights(&mut self, radius: f64) {
        let clip = |w: &mut [f64]| {
            let n = norm(w);
            if n > radius && n > 0.0 {
                let s = radius / n;
                w.iter_mut().for_each(|x| *x *= s);
            }
        };
        match &mut self.kind {
            EncoderKind::AffineSquashed { w, b } => {
                clip(w);
                *b = b.clamp(-radius, radius);
            }
            EncoderKind::MlpSquashed { weights, biases, .. } => {
                weights.iter_mut().chain(biases.iter_mut()).for_each(|w| clip(w))
            }
        }
    }
}

/// Architecture of freshly initialized encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncoderSpec {
    AffineSquashed,
    MlpSquashed {
        #[serde(default = "default_hidden")]
        widths: Vec<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![16]
}

impl Default for EncoderSpec {
    fn default() -> Self {
        EncoderSpec::MlpSquashed {
            widths: default_hidden(),
        }
    }
}

const INIT_SCALE: f64 = 0.1;

impl EncoderSpec {
    /// All parameters drawn uniformly from `±0.1`.
    pub fn sample_init<R: Rng + ?Sized>(&self, dim: usize, interval: TimeInterval, rng: &mut R) -> Encoder {
        let mut u = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE)).collect() };
        let kind = match self {
            EncoderSpec::AffineSquashed => {
                let w = u(dim);
                let b = u(1)[0];
                EncoderKind::AffineSquashed { w, b }
            }
            EncoderSpec::MlpSquashed { widths } => {
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                let mut fan_in = dim;
                for &w in widths.iter().chain(std::iter::once(&1)) {
                    weights.push(u(w * fan_in));
                    biases.push(u(w));
                    fan_in = w;
                }
                EncoderKind::MlpSquashed {
                    widths: widths.clone(),
                    weights,
                    biases,
                    activation: Activation::Tanh,
                }
            }
        };
        Encoder::new(kind, interval).expect("initialized shapes are consistent")
    }

    pub fn validate(&self) -> Result<()> {
        if let EncoderSpec::MlpSquashed { widths } = self {
            if widths.contains(&0) {
                return Err(Error::InvalidArgument("hidden widths must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `𝐚 = a_1 × ⋯ × a_m` with a shared interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Encoder>", into = "Vec<Encoder>")]
pub struct ProductEncoder {
    parts: Vec<Encoder>,
}

impl TryFrom<Vec<Encoder>> for ProductEncoder {
    type Error = Error;
    fn try_from(parts: Vec<Encoder>) -> Result<Self> {
        ProductEncoder::new(parts)
    }
}

impl From<ProductEncoder> for Vec<Encoder> {
    fn from(p: ProductEncoder) -> Self {
        p.parts
    }
}

impl ProductEncoder {
    pub fn new(parts: Vec<Encoder>) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Err(Error::InvalidArgument("product encoder needs at least one part".into()));
        };
        let (iv, d) = (first.interval, first.input_dim());
        for p in &parts {
            if p.interval != iv {
                return Err(Error::InvalidArgument("encoder parts must share one interval".into()));
            }
            check_dim(d, p.input_dim())?;
        }
        Ok(ProductEncoder { parts })
    }

    pub fn parts(&self) -> &[Encoder] {
        &self.parts
    }

    pub(crate) fn parts_mut(&mut self) -> &mut [Encoder] {
        &mut self.parts
    }

    pub fn m(&self) -> usize {
        self.parts.len()
    }

    pub fn input_dim(&self) -> usize {
        self.parts[0].input_dim()
    }

    pub fn interval(&self) -> TimeInterval {
        self.parts[0].interval
    }
}

pub fn encode(a: &Encoder, x: &[f64]) -> Result<f64> {
    a.encode(x)
}

/// `𝐚(x) = (a_1(x), …, a_m(x))`.
pub fn encode_product(a: &ProductEncoder, x: &[f64]) -> Result<Vec<f64>> {
    a.parts.iter().map(|p| p.encode(x)).collect()
}

/// `max_{x ∈ sample} |a(x) − a'(x)|`, a lower bound on the `C⁰` distance.
pub fn encoder_c0_distance(a: &Encoder, b: &Encoder, sample: &[Vec<f64>]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::InvalidArgument("C0 distance needs a non-empty sample".into()));
    }
    let mut best: f64 = 0.0;
    for x in sample {
        best = best.max((a.encode(x)? - b.encode(x)?).abs());
    }
    Ok(best)
}
