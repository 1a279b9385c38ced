//! Reconstruction maps `G = g_{𝐟,ξ} ∘ 𝐚`, datasets, and risks.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{encode_product, ProductEncoder};
use crate::error::{check_dim, Error, Result};
use crate::fields::VectorField;
use crate::flows::{compose_flows, flow_variational, FlowConfig};
use crate::interval::TimeInterval;
use crate::linalg::{self, dot, norm};
use crate::sampling::rng_from_seed;

/// A finite point cloud `S = {x_1, …, x_n} ⊂ Rᵈ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    dim: usize,
    points: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidArgument("dataset must contain at least one point".into()));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidArgument("points must have positive dimension".into()));
        }
        for (i, p) in points.iter().enumerate() {
            check_dim(dim, p.len())?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("row {i} contains a non-finite value")));
            }
        }
        Ok(Dataset {
            name: name.into(),
            dim,
            points,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// `R = max_i |x_i|`.
    pub fn support_radius(&self) -> f64 {
        self.points.iter().map(|p| norm(p)).fold(0.0, f64::max)
    }

    /// `max_{i,j} |x_i − x_j|`.
    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                best = best.max(linalg::dist(p, q));
            }
        }
        best
    }

    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Result<Dataset> {
        let points = indices
            .iter()
            .map(|&i| {
                self.points
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("row index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(name, points)
    }

    /// Header `x0,…,x{d−1}`; values use the shortest representation that
    /// parses back to the same double.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record((0..self.dim).map(|i| format!("x{i}")))?;
        for p in &self.points {
            wr.write_record(p.iter().map(|v| v.to_string()))?;
        }
        wr.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(name: impl Into<String>, r: R) -> Result<Self> {
        let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = rd.headers()?.clone();
        for (i, h) in headers.iter().enumerate() {
            if h.trim() != format!("x{i}") {
                return Err(Error::InvalidArgument(format!("unexpected CSV column `{h}` at position {i}")));
            }
        }
        let mut points = Vec::new();
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let p = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("row {row}: `{s}` is not a number")))
                })
                .collect::<Result<Vec<f64>>>()?;
            points.push(p);
        }
        Dataset::new(name, points)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
        Dataset::read_csv(name, std::io::BufReader::new(file))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }
}

/// `ξ = Σ_k softmax(λ)_k · anchor_k`, which keeps `ξ` in the convex hull of
/// the anchors for every value of the logits `λ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredXi {
    anchors: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl AnchoredXi {
    pub fn new(anchors: Vec<Vec<f64>>, logits: Vec<f64>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::InvalidArgument("need at least one anchor".into()));
        }
        check_dim(anchors.len(), logits.len())?;
        let d = anchors[0].len();
        for a in &anchors {
            check_dim(d, a.len())?;
        }
        Ok(AnchoredXi { anchors, logits })
    }

    /// `min(n, count)` distinct data points with zero logits (the barycenter).
    pub fn sample<R: Rng + ?Sized>(data: &Dataset, count: usize, rng: &mut R) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("anchor count must be positive".into()));
        }
        let k = count.min(data.n());
        let mut idx = sample_indices(rng, data.n(), k).into_vec();
        idx.sort_unstable();
        let anchors = idx.iter().map(|&i| data.points()[i].clone()).collect();
        AnchoredXi::new(anchors, vec![0.0; k])
    }

    pub fn anchors(&self) -> &[Vec<f64>] {
        &self.anchors
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn set_logits(&mut self, logits: &[f64]) {
        self.logits.copy_from_slice(logits);
    }

    pub fn weights(&self) -> Vec<f64> {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = self.logits.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect()
    }

    pub fn xi(&self) -> Vec<f64> {
        let w = self.weights();
        let mut xi = vec![0.0; self.anchors[0].len()];
        for (wk, a) in w.iter().zip(&self.anchors) {
            xi.iter_mut().zip(a).for_each(|(x, ai)| *x += wk * ai);
        }
        xi
    }

    /// Chain rule from `∂ℓ/∂ξ` to `∂ℓ/∂λ`, using `∂ξ/∂λ_k = s_k (anchor_k − ξ)`.
    pub fn pullback(&self, grad_xi: &[f64]) -> Vec<f64> {
        let w = self.weights();
        let xi = self.xi();
        let g_xi = dot(grad_xi, &xi);
        w.iter()
            .zip(&self.anchors)
            .map(|(wk, a)| wk * (dot(grad_xi, a) - g_xi))
            .collect()
    }
}

/// The triple `(𝐚, 𝐟, ξ)` realizing `G(x) = e^{a_m(x) f_m} ∘ ⋯ ∘ e^{a_1(x) f_1} ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct ReconstructionMap {
    encoder: ProductEncoder,
    fields: Vec<VectorField>,
    xi: Vec<f64>,
    flow: FlowConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRepr {
    m: usize,
    xi: Vec<f64>,
    encoder: ProductEncoder,
    fields: Vec<VectorField>,
    flow: FlowConfig,
    interval: TimeInterval,
}

impl TryFrom<ModelRepr> for ReconstructionMap {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.m != r.encoder.m() {
            return Err(Error::InvalidArgument(format!(
                "`m` = {} but the encoder has {} parts",
                r.m,
                r.encoder.m()
            )));
        }
        if r.interval != r.encoder.interval() {
            return Err(Error::InvalidArgument("model interval differs from the encoder interval".into()));
        }
        ReconstructionMap::new(r.encoder, r.fields, r.xi, r.flow)
    }
}

impl From<ReconstructionMap> for ModelRepr {
    fn from(g: ReconstructionMap) -> Self {
        ModelRepr {
            m: g.m(),
            interval: g.interval(),
            xi: g.xi,
            encoder: g.encoder,
            fields: g.fields,
            flow: g.flow,
        }
    }
}

/// Gradient of a (weighted) risk, split by parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub encoder: Vec<Vec<f64>>,
    pub fields: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
}

impl ModelGradient {
    fn zeros(g: &ReconstructionMap) -> Self {
        ModelGradient {
            encoder: g.encoder.parts().iter().map(|p| vec![0.0; p.param_count()]).collect(),
            fields: g.fields.iter().map(|f| vec![0.0; f.param_count()]).collect(),
            xi: vec![0.0; g.dim()],
        }
    }

    fn add_scaled(&mut self, other: &ModelGradient, s: f64) {
        let pairs = self
            .encoder
            .iter_mut()
            .chain(self.fields.iter_mut())
            .chain(std::iter::once(&mut self.xi))
            .zip(other.encoder.iter().chain(&other.fields).chain(std::iter::once(&other.xi)));
        for (a, b) in pairs {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        }
    }

    /// Same layout as [`ReconstructionMap::param_vector`].
    pub fn flatten(&self) -> Vec<f64> {
        self.encoder
            .iter()
            .chain(&self.fields)
            .chain(std::iter::once(&self.xi))
            .flatten()
            .copied()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.flatten())
    }
}

impl ReconstructionMap {
    pub fn new(encoder: ProductEncoder, fields: Vec<VectorField>, xi: Vec<f64>, flow: FlowConfig) -> Result<Self> {
        if fields.len() != encoder.m() {
            return Err(Error::InvalidArgument(format!(
                "{} fields for {} encoder parts",
                fields.len(),
                encoder.m()
            )));
        }
        let d = encoder.input_dim();
        check_dim(d, xi.len())?;
        for f in &fields {
            check_dim(d, f.dim())?;
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ξ must be finite".into()));
        }
        flow.validate()?;
        Ok(ReconstructionMap {
            encoder,
            fields,
            xi,
            flow,
        })
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn interval(&self) -> TimeInterval {
        self.encoder.interval()
    }

    pub fn encoder(&self) -> &ProductEncoder {
        &self.encoder
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn flow_config(&self) -> &FlowConfig {
        &self.flow
    }

    pub(crate) fn encoder_mut(&mut self) -> &mut ProductEncoder {
        &mut self.encoder
    }

    pub(crate) fn fields_mut(&mut self) -> &mut [VectorField] {
        &mut self.fields
    }

    /// Decoder `𝐭 ↦ e^{𝐭𝐟}ξ`.
    pub fn decode(&self, ts: &[f64]) -> Result<Vec<f64>> {
        compose_flows(&self.fields, ts, &self.xi, &self.flow)
    }

    /// `G(x)`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        self.decode(&encode_product(&self.encoder, x)?)
    }

    /// `|x − G(x)|`.
    pub fn loss(&self, x: &[f64]) -> Result<f64> {
        Ok(linalg::dist(x, &self.reconstruct(x)?))
    }

    /// `(1/n) Σ |x_i − G(x_i)|`, evaluated in parallel and summed in index order.
    pub fn empirical_risk(&self, data: &Dataset) -> Result<f64> {
        check_dim(self.dim(), data.dim())?;
        let losses: Vec<Result<f64>> = data.points().par_iter().map(|x| self.loss(x)).collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / data.n() as f64)
    }

    /// All trainable parameters: encoder parts, then fields, then `ξ`.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut theta: Vec<f64> = self.encoder.parts().iter().flat_map(|p| p.param_vector()).collect();
        for f in &self.fields {
            theta.extend(f.param_vector());
        }
        theta.extend_from_slice(&self.xi);
        theta
    }

    pub fn param_count(&self) -> usize {
        self.encoder.parts().iter().map(|p| p.param_count()).sum::<usize>()
            + self.fields.iter().map(|f| f.param_count()).sum::<usize>()
            + self.dim()
    }

    /// Copy with the given parameters written in verbatim. Family constraints
    /// (such as `‖A‖ ≤ 1`) are not re-applied.
    pub fn with_param_vector(&self, theta: &[f64]) -> Result<Self> {
        check_dim(self.param_count(), theta.len())?;
        let mut g = self.clone();
        let mut off = 0;
        for p in g.encoder.parts_mut() {
            let k = p.param_count();
            p.set_param_vector(&theta[off..off + k]);
            off += k;
        }
        for f in &mut g.fields {
            let k = f.param_count();
            f.set_param_vector(&theta[off..off + k]);
            off += k;
        }
        g.xi.copy_from_slice(&theta[off..]);
        Ok(g)
    }

    /// Loss at one point and its gradient with respect to every parameter.
    /// At zero error the zero subgradient is used.
    pub fn loss_and_gradient(&self, x: &[f64]) -> Result<(f64, ModelGradient)> {
        check_dim(self.dim(), x.len())?;
        let m = self.m();
        let mut ts = Vec::with_capacity(m);
        let mut t_grads = Vec::with_capacity(m);
        for p in self.encoder.parts() {
            let (t, g) = p.value_and_param_grad(x)?;
            ts.push(t);
            t_grads.push(g);
        }
        let radius = self.flow.safety_radius_for(&self.fields);
        let mut state = self.xi.clone();
        let mut sens = Vec::with_capacity(m);
        for (f, &t) in self.fields.iter().zip(&ts) {
            let s = flow_variational(f, &state, t, &self.flow, true)?;
            let n = norm(&s.state);
            if n > radius {
                return Err(Error::Escape { norm: n, radius });
            }
            state = s.state.clone();
            sens.push(s);
        }
        let err = linalg::sub(&state, x);
        let loss = norm(&err);
        let mut grad = ModelGradient::zeros(self);
        if loss == 0.0 {
            return Ok((loss, grad));
        }
        let d = self.dim();
        let mut g: Vec<f64> = err.iter().map(|e| e / loss).collect();
        for j in (0..m).rev() {
            let s = &sens[j];
            grad.fields[j] = linalg::vecmat(&g, &s.d_params.data, d, s.d_params.cols);
            let dt = dot(&g, &s.d_time);
            grad.encoder[j] = t_grads[j].iter().map(|v| dt * v).collect();
            g = linalg::vecmat(&g, &s.d_initial.data, d, d);
        }
        grad.xi = g;
        Ok((loss, grad))
    }

    /// `(1/n) Σ w_i |x_i − G(x_i)|` and its gradient. Per-point work runs in
    /// parallel; the reduction is sequential in index order.
    pub fn weighted_risk_and_gradient(&self, points: &[Vec<f64>], weights: &[f64]) -> Result<(f64, ModelGradient)> {
        check_dim(points.len(), weights.len())?;
        if points.is_empty() {
            return Err(Error::InvalidArgument("risk of an empty point set".into()));
        }
        let per_point: Vec<Result<(f64, ModelGradient)>> =
            points.par_iter().map(|x| self.loss_and_gradient(x)).collect();
        let n = points.len() as f64;
        let mut risk = 0.0;
        let mut grad = ModelGradient::zeros(self);
        for (r, &w) in per_point.into_iter().zip(weights) {
            let (l, g) = r?;
            risk += w * l;
            grad.add_scaled(&g, w / n);
        }
        Ok((risk / n, grad))
    }

    /// Empirical risk and its gradient.
    pub fn risk_gradient(&self, data: &Dataset) -> Result<(f64, ModelGradient)> {
        self.weighted_risk_and_gradient(data.points(), &vec![1.0; data.n()])
    }

    /// Monte-Carlo estimate of `E_μ|X − G(X)|` with its standard error.
    pub fn expected_risk_mc(&self, sampler: &dyn Sampler, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
        expected_risk_mc(self, sampler, n_mc, seed)
    }
}

/// A distribution `μ` that can be sampled.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Dirac mass at a point.
#[derive(Debug, Clone)]
pub struct PointMass(pub Vec<f64>);

impl Sampler for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn sample(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.0.clone()
    }
}

/// Uniform distribution over a finite set of points.
#[derive(Debug, Clone)]
pub struct UniformOver(pub Vec<Vec<f64>>);

impl Sampler for UniformOver {
    fn dim(&self) -> usize {
        self.0[0].len()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let i = rng.gen_range(0..self.0.len());
        self.0[i].clone()
    }
}

/// Sample mean and standard error of `|X − G(X)|` over `n_mc` draws.
pub fn expected_risk_mc(g: &ReconstructionMap, sampler: &dyn Sampler, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("n_mc must be at least 2".into()));
    }
    check_dim(g.dim(), sampler.dim())?;
    let mut rng = rng_from_seed(seed);
    let draws: Vec<Vec<f64>> = (0..n_mc).map(|_| sampler.sample(&mut rng)).collect();
    let losses: Vec<Result<f64>> = draws.par_iter().map(|x| g.loss(x)).collect();
    let losses = losses.into_iter().collect::<Result<Vec<f64>>>()?;
    let n = n_mc as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::Encoder;

    fn zero_model(xi: Vec<f64>) -> ReconstructionMap {
        let d = xi.len();
        let iv = TimeInterval::new(-1.0, 1.0).unwrap();
        let enc = ProductEncoder::new(vec![Encoder::affine(vec![0.0; d], 0.0, iv).unwrap()]).unwrap();
        let f = VectorField::constant(vec![0.5; d], None).unwrap();
        ReconstructionMap::new(enc, vec![f], xi, FlowConfig::default()).unwrap()
    }

    #[test]
    fn zero_encoders_reconstruct_xi() {
        let g = zero_model(vec![1.0, 2.0]);
        assert_eq!(g.reconstruct(&[5.0, -3.0]).unwrap(), vec![1.0, 2.0]);
        let s = Dataset::new("s", vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(g.empirical_risk(&s).unwrap(), 0.0);
        let s = Dataset::new("s", vec![vec![2.0, 2.0]]).unwrap();
        assert_eq!(g.empirical_risk(&s).unwrap(), 1.0);
        let s = Dataset::new("s", vec![vec![1.0, 2.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(g.empirical_risk(&s).unwrap(), 1.0);
    }

    #[test]
    fn expected_risk_point_masses() {
        let g = zero_model(vec![0.0, 0.0]);
        assert_eq!(g.expected_risk_mc(&PointMass(vec![0.0, 0.0]), 10, 1).unwrap(), (0.0, 0.0));
        assert_eq!(g.expected_risk_mc(&PointMass(vec![1.0, 0.0]), 10, 1).unwrap(), (1.0, 0.0));
        let (mean, se) = g
            .expected_risk_mc(&UniformOver(vec![vec![0.0, 0.0], vec![2.0, 0.0]]), 4000, 3)
            .unwrap();
        assert!((mean - 1.0).abs() <= 3.0 * se);
        assert!(g.expected_risk_mc(&PointMass(vec![0.0, 0.0]), 1, 1).is_err());
    }

    #[test]
    fn anchored_xi_gradient() {
        let mut a = AnchoredXi::new(
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]],
            vec![0.3, -0.2, 0.5],
        )
        .unwrap();
        let target = [0.4, 0.7];
        let obj = |a: &AnchoredXi| dot(&a.xi(), &target);
        let g = a.pullback(&target);
        let base = a.logits().to_vec();
        for k in 0..3 {
            let h = 1e-6;
            let mut p = base.clone();
            p[k] += h;
            a.set_logits(&p);
            let up = obj(&a);
            p[k] -= 2.0 * h;
            a.set_logits(&p);
            let down = obj(&a);
            a.set_logits(&base);
            assert!(((up - down) / (2.0 * h) - g[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let pts = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 12345.678901234567]];
        let s = Dataset::new("t", pts.clone()).unwrap();
        let text = s.to_csv_string().unwrap();
        assert!(text.starts_with("x0,x1\n"));
        let back = Dataset::read_csv("t", text.as_bytes()).unwrap();
        assert_eq!(back.points(), &pts[..]);
    }

    #[test]
    fn model_json_layout() {
        let g = zero_model(vec![1.0, 2.0]);
        let v = serde_json::to_value(&g).unwrap();
        for key in ["m", "xi", "encoder", "fields", "flow", "interval"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: ReconstructionMap = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
    }
}
