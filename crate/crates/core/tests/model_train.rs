use std::f64::consts::PI;

use proptest::prelude::*;

use immersion::data::{generate, split, GeneratorSpec, Parameterization, Shape};
use immersion::encoders::{Encoder, EncoderSpec, ProductEncoder};
use immersion::fields::{ConstraintPolicy, FieldFamily, VectorField};
use immersion::flows::FlowConfig;
use immersion::interval::TimeInterval;
use immersion::linalg::{dist, norm};
use immersion::model::{Dataset, PointMass, ReconstructionMap, UniformOver};
use immersion::train::{evaluate, fit, ModelSpec, TrainConfig};

fn iv(a: f64, b: f64) -> TimeInterval {
    TimeInterval::new(a, b).unwrap()
}

fn zero_encoders(d: usize, m: usize, i: TimeInterval) -> ProductEncoder {
    // With w = 0 and b = 0 the output sits at the interval midpoint, which
    // is 0 for symmetric intervals.
    ProductEncoder::new((0..m).map(|_| Encoder::affine(vec![0.0; d], 0.0, i).unwrap()).collect()).unwrap()
}

fn zero_time_model(xi: Vec<f64>, m: usize) -> ReconstructionMap {
    let d = xi.len();
    let fields = (0..m).map(|_| VectorField::constant(vec![0.3; d], None).unwrap()).collect();
    ReconstructionMap::new(zero_encoders(d, m, iv(-1.0, 1.0)), fields, xi, FlowConfig::default()).unwrap()
}

#[test]
fn zero_encoders_return_base_point() {
    let g = zero_time_model(vec![1.0, -2.0, 0.5], 3);
    for x in [[0.0, 0.0, 0.0], [4.0, 1.0, -9.0]] {
        assert_eq!(g.reconstruct(&x).unwrap(), vec![1.0, -2.0, 0.5]);
    }
}

#[test]
fn constant_field_closed_form() {
    let i = iv(0.0, 2.0);
    let e = Encoder::affine(vec![0.7, -0.4], 0.1, i).unwrap();
    let v = vec![0.6, -0.8];
    let xi = vec![0.2, 0.3];
    let g = ReconstructionMap::new(
        ProductEncoder::new(vec![e.clone()]).unwrap(),
        vec![VectorField::constant(v.clone(), None).unwrap()],
        xi.clone(),
        FlowConfig::default(),
    )
    .unwrap();
    let x = [0.9, 0.1];
    let t = e.encode(&x).unwrap();
    let want: Vec<f64> = xi.iter().zip(&v).map(|(a, b)| a + t * b).collect();
    assert!(dist(&g.reconstruct(&x).unwrap(), &want) <= 1e-14);
}

#[test]
fn rotation_by_pi() {
    // Encoder pinned at T1 = π by saturation.
    let e = Encoder::affine(vec![0.0, 0.0], 800.0, iv(0.0, PI)).unwrap();
    let rot = VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.0, 0.0], None, ConstraintPolicy::Reject).unwrap();
    let g = ReconstructionMap::new(ProductEncoder::new(vec![e]).unwrap(), vec![rot], vec![1.0, 0.0], FlowConfig::with_step(1e-3))
        .unwrap();
    assert!(dist(&g.reconstruct(&[0.3, 0.3]).unwrap(), &[-1.0, 0.0]) <= 1e-6);
}

#[test]
fn empirical_risk_examples() {
    let xi = vec![1.0, 2.0];
    let g = zero_time_model(xi.clone(), 1);
    let s = Dataset::new("s", vec![xi.clone()]).unwrap();
    assert_eq!(g.empirical_risk(&s).unwrap(), 0.0);
    let s = Dataset::new("s", vec![vec![2.0, 2.0]]).unwrap();
    assert_eq!(g.empirical_risk(&s).unwrap(), 1.0);
    let s = Dataset::new("s", vec![xi.clone(), vec![3.0, 2.0]]).unwrap();
    assert_eq!(g.empirical_risk(&s).unwrap(), 1.0);
    assert_eq!(evaluate(&g, &s).unwrap(), g.empirical_risk(&s).unwrap());
}

#[test]
fn gradient_vanishes_at_exact_fit() {
    // a(x) = −1 + 2·logistic(w x₁ + b) hits −1/2 at x₁ = 0 and 1/2 at x₁ = 1.
    let b = (1.0f64 / 3.0).ln();
    let w = 2.0 * 3f64.ln();
    let e = Encoder::affine(vec![w, 0.0], b, iv(-1.0, 1.0)).unwrap();
    let g = ReconstructionMap::new(
        ProductEncoder::new(vec![e]).unwrap(),
        vec![VectorField::constant(vec![1.0, 0.0], None).unwrap()],
        vec![0.5, 0.0],
        FlowConfig::with_step(1.0),
    )
    .unwrap();
    let s = Dataset::new("two", vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let (risk, grad) = g.risk_gradient(&s).unwrap();
    assert!(risk <= 1e-12, "{risk}");
    assert!(norm(&grad.flatten()) <= 1e-6);
}

#[test]
fn symmetric_data_has_no_base_point_gradient() {
    let g = zero_time_model(vec![0.0, 0.0], 2);
    let s = Dataset::new("sym", vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0], vec![0.0, -2.0]]).unwrap();
    let (_, grad) = g.risk_gradient(&s).unwrap();
    assert!(norm(&grad.xi) <= 1e-15);
}

#[test]
fn monte_carlo_risk_examples() {
    let xi = vec![0.5, -0.5];
    let g = zero_time_model(xi.clone(), 1);
    assert_eq!(g.expected_risk_mc(&PointMass(xi.clone()), 10, 1).unwrap(), (0.0, 0.0));
    let (m, s) = g.expected_risk_mc(&PointMass(vec![1.5, -0.5]), 10, 1).unwrap();
    assert_eq!((m, s), (1.0, 0.0));
    let two = UniformOver(vec![xi.clone(), vec![2.5, -0.5]]);
    let (m, s) = g.expected_risk_mc(&two, 20_000, 2).unwrap();
    assert!((m - 1.0).abs() <= 3.0 * s, "{m} ± {s}");
}

fn segment(n: usize, seed: u64) -> Dataset {
    generate(&GeneratorSpec {
        shape: Shape::Segment,
        d: 2,
        n,
        noise_sigma: 0.0,
        seed,
        embedding: false,
        sampling: Parameterization::Uniform,
    })
    .unwrap()
}

fn segment_spec() -> ModelSpec {
    ModelSpec {
        m: 1,
        interval: iv(-1.0, 1.0),
        family: FieldFamily::constant(2, 1.0),
        encoder: EncoderSpec::AffineSquashed,
        flow: FlowConfig::with_step(1.0),
    }
}

#[test]
fn single_point_fit() {
    let data = Dataset::new("p", vec![vec![0.3, -0.2]]).unwrap();
    let spec = ModelSpec {
        interval: iv(0.0, 1.0),
        ..segment_spec()
    };
    let rep = fit(&data, &spec, &TrainConfig::default()).unwrap();
    assert!(rep.final_empirical_risk <= 1e-4, "{}", rep.final_empirical_risk);
}

#[test]
fn segment_fit_generalizes() {
    let rep = fit(&segment(50, 1), &segment_spec(), &TrainConfig::default()).unwrap();
    assert!(rep.final_empirical_risk <= 1e-2, "{}", rep.final_empirical_risk);
    let fresh = segment(200, 99);
    let test = evaluate(&rep.best_model, &fresh).unwrap();
    assert!(test <= 2e-2, "{test}");
    assert_eq!(
        evaluate(&rep.best_model, &segment(50, 1)).unwrap(),
        rep.best_model.empirical_risk(&segment(50, 1)).unwrap()
    );
}

#[test]
fn fit_is_deterministic() {
    let cfg = TrainConfig {
        max_iters: 100,
        restarts: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let a = fit(&segment(20, 2), &segment_spec(), &cfg).unwrap();
    let b = fit(&segment(20, 2), &segment_spec(), &cfg).unwrap();
    assert_eq!(a.best_model, b.best_model);
    assert_eq!(a.restart_risks, b.restart_risks);
}

#[test]
fn model_json_round_trip() {
    let rep = fit(
        &segment(20, 3),
        &segment_spec(),
        &TrainConfig {
            max_iters: 50,
            restarts: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let text = serde_json::to_string(&rep.best_model).unwrap();
    let back: ReconstructionMap = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rep.best_model);
    assert!(serde_json::from_str::<ReconstructionMap>(&text.replacen("\"xi\"", "\"zeta\"", 1)).is_err());
}

#[test]
fn generator_examples() {
    let spec = |shape, n| GeneratorSpec {
        shape,
        d: 2,
        n,
        noise_sigma: 0.0,
        seed: 0,
        embedding: false,
        sampling: Parameterization::Linspace,
    };
    let s = generate(&spec(Shape::Segment, 2)).unwrap();
    assert_eq!(s.points(), &[vec![0.0, 0.0], vec![1.0, 0.0]]);
    let c = generate(&spec(Shape::Circle, 4)).unwrap();
    for (p, k) in c.points().iter().zip(0..) {
        let th = k as f64 * PI / 2.0;
        assert!(dist(p, &[th.cos(), th.sin()]) <= 1e-15);
    }
    let noisy = GeneratorSpec {
        noise_sigma: 0.05,
        embedding: true,
        sampling: Parameterization::Uniform,
        d: 5,
        ..spec(Shape::SwissRoll, 30)
    };
    let a = generate(&noisy).unwrap().to_csv_string().unwrap();
    let b = generate(&noisy).unwrap().to_csv_string().unwrap();
    assert_eq!(a, b);
}

#[test]
fn split_examples() {
    let data = segment(10, 5);
    let (tr, te) = split(&data, 0.8, 3).unwrap();
    assert_eq!((tr.n(), te.n()), (8, 2));
    let mut union: Vec<Vec<f64>> = tr.points().iter().chain(te.points()).cloned().collect();
    let mut orig = data.points().to_vec();
    let key = |v: &Vec<f64>| (v[0].to_bits(), v[1].to_bits());
    union.sort_by_key(key);
    orig.sort_by_key(key);
    assert_eq!(union, orig);
    let (tr2, _) = split(&data, 0.8, 3).unwrap();
    assert_eq!(tr, tr2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip(seed in 0u64..500, n in 1usize..20) {
        let data = generate(&GeneratorSpec {
            shape: Shape::Helix,
            d: 3,
            n,
            noise_sigma: 0.1,
            seed,
            embedding: true,
            sampling: Parameterization::Uniform,
        }).unwrap();
        let text = data.to_csv_string().unwrap();
        let back = Dataset::read_csv("helix", text.as_bytes()).unwrap();
        prop_assert_eq!(back.points(), data.points());
    }

    #[test]
    fn risk_is_nonnegative_and_bounded(seed in 0u64..500) {
        let data = segment(8, seed);
        let g = zero_time_model(vec![0.0, 0.0], 1);
        let r = g.empirical_risk(&data).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!(r <= 1.0 + 1e-12);
    }
}
