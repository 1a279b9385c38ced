use std::f64::consts::{E, PI};

use proptest::prelude::*;

use immersion::encoders::{encode, encode_product, encoder_c0_distance, Encoder, ProductEncoder};
use immersion::fields::{
    BumpSpec, ComparisonFn, ConstraintPolicy, FieldFamily, Nonlinearity, VectorField,
};
use immersion::flows::{compose_flows, flow, flow_with_sensitivity, FlowConfig, Wrt};
use immersion::interval::TimeInterval;
use immersion::linalg::{dist, norm};
use immersion::sampling::{rng_from_seed, uniform_in_ball};

fn iv(a: f64, b: f64) -> TimeInterval {
    TimeInterval::new(a, b).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn decay() -> VectorField {
    let bump = BumpSpec::new(10.0, 20.0, 2).unwrap();
    VectorField::affine(vec![-1.0], vec![0.0], Some(bump), ConstraintPolicy::Reject).unwrap()
}

fn rotation() -> VectorField {
    VectorField::affine(vec![0.0, -1.0, 1.0, 0.0], vec![0.0, 0.0], None, ConstraintPolicy::Reject).unwrap()
}

#[test]
fn field_evaluation_examples() {
    let c = VectorField::constant(vec![1.0, 0.0], None).unwrap();
    assert_eq!(c.eval(&[5.0, 5.0]).unwrap(), vec![1.0, 0.0]);
    let z = VectorField::affine(vec![0.0; 4], vec![0.0; 2], None, ConstraintPolicy::Reject).unwrap();
    assert_eq!(z.eval(&[3.0, -7.0]).unwrap(), vec![0.0, 0.0]);
    let bump = BumpSpec::new(10.0, 20.0, 2).unwrap();
    let id = VectorField::affine(vec![1.0], vec![0.0], Some(bump), ConstraintPolicy::Reject).unwrap();
    assert_eq!(id.eval(&[2.0]).unwrap(), vec![2.0]);
}

#[test]
fn construction_constraints() {
    assert!(VectorField::affine(vec![2.0], vec![0.0], None, ConstraintPolicy::Reject).is_err());
    let f = VectorField::affine(vec![2.0], vec![3.0], None, ConstraintPolicy::Rescale).unwrap();
    let y = f.eval(&[1.0]).unwrap();
    assert!(y[0] <= 2.0 + 1e-12);
}

#[test]
fn bump_cuts_off_outside() {
    let bump = BumpSpec::new(1.0, 2.0, 2).unwrap();
    let f = VectorField::constant(vec![0.6, 0.8], Some(bump)).unwrap();
    for x in [[2.0, 0.0], [0.0, -2.5], [3.0, 3.0]] {
        assert_eq!(f.eval(&x).unwrap(), vec![0.0, 0.0]);
    }
    assert_eq!(f.eval(&[0.5, 0.5]).unwrap(), vec![0.6, 0.8]);
}

#[test]
fn family_constants() {
    let r = FieldFamily::recurrent(3, Nonlinearity::TanhComponentwise, None).constants();
    assert_eq!((r.l0, r.l), (1.0, 1.0));
    let c = FieldFamily::constant(2, 0.7).constants();
    assert_eq!((c.l0, c.l), (0.7, 0.0));
    let bump = BumpSpec::new(5.0, 7.0, 2).unwrap();
    let a = FieldFamily::affine(2, Some(bump)).constants();
    assert_eq!(a.l0, 8.0);
    assert!(a.l <= 1.0 + 8.0 * bump.max_gradient() + 1e-12);
}

#[test]
fn declared_constants_hold_on_samples() {
    let bump = BumpSpec::new(1.0, 2.5, 2).unwrap();
    let mut rng = rng_from_seed(3);
    for fam in [
        FieldFamily::affine(2, Some(bump)),
        FieldFamily::recurrent(2, Nonlinearity::ScaledSigmoid, Some(bump)),
        FieldFamily::constant(2, 1.0),
    ] {
        let k = fam.constants();
        for _ in 0..200 {
            let f = fam.sample_member(&mut rng);
            let x = uniform_in_ball(&mut rng, 2, 4.0);
            let y = uniform_in_ball(&mut rng, 2, 4.0);
            let fx = f.eval(&x).unwrap();
            assert!(norm(&fx) <= k.l0 + 1e-12);
            assert!(dist(&fx, &f.eval(&y).unwrap()) <= k.l * dist(&x, &y) + 1e-12);
        }
    }
}

#[test]
fn comparison_values() {
    let w = ComparisonFn::worst_case(1.0, 1.0, iv(-1.0, 1.0)).unwrap();
    assert_eq!(w.beta(0.37, 0.0).unwrap(), 0.37);
    assert!(close(w.beta(1.0, 1.0).unwrap(), E, 1e-15));
    let s = ComparisonFn::exp_stable(2.0, iv(0.0, 1.0)).unwrap();
    assert!(close(s.beta(1.0, 1.0).unwrap(), (-2.0f64).exp(), 1e-15));
    assert_eq!(w.bar_beta_j(0.7, 0), 0.7);
    for j in 0..5 {
        assert_eq!(s.bar_beta_j(0.3, j), 0.3);
    }
    let e = ComparisonFn::exponential(1.0, iv(-0.5, 1.5)).unwrap();
    assert!(close(e.bar_beta_j(1.0, 2), 3.0f64.exp(), 1e-12));
}

#[test]
fn bar_b_values() {
    assert_eq!(ComparisonFn::exp_stable(4.0, iv(0.0, 2.0)).unwrap().bar_b(), 0.25);
    let lin = ComparisonFn::worst_case(0.0, 1.0, iv(-2.0, 1.0)).unwrap();
    assert_eq!(lin.bar_b(), 2.0);
    let e = ComparisonFn::exponential(0.5, iv(0.0, 2.0)).unwrap();
    assert!(close(e.bar_b(), (1f64.exp() - 1.0) / 0.5, 1e-12));
}

#[test]
fn flow_examples() {
    let cfg = FlowConfig::with_step(1e-3);
    let f = rotation();
    assert_eq!(flow(&f, &[0.3, 0.4], 0.0, &cfg).unwrap(), vec![0.3, 0.4]);
    let c = VectorField::constant(vec![0.5, -0.25], None).unwrap();
    let x = flow(&c, &[1.0, 2.0], 1.5, &FlowConfig::with_step(0.7)).unwrap();
    assert!(close(x[0], 1.75, 1e-15) && close(x[1], 1.625, 1e-15));
    let y = flow(&decay(), &[1.0], 1.0, &cfg).unwrap();
    assert!(close(y[0], (-1.0f64).exp(), 1e-8));
}

#[test]
fn composition_examples() {
    let cfg = FlowConfig::default();
    let v1 = VectorField::constant(vec![1.0, 0.0], None).unwrap();
    let v2 = VectorField::constant(vec![0.0, 0.5], None).unwrap();
    let fs = [v1, v2];
    assert_eq!(compose_flows(&fs, &[0.0, 0.0], &[0.2, 0.1], &cfg).unwrap(), vec![0.2, 0.1]);
    let x = compose_flows(&fs, &[0.3, -0.8], &[0.2, 0.1], &cfg).unwrap();
    assert!(close(x[0], 0.5, 1e-15) && close(x[1], -0.3, 1e-15));
    let r = compose_flows(&[rotation()], &[PI / 2.0], &[1.0, 0.0], &FlowConfig::with_step(1e-3)).unwrap();
    assert!(dist(&r, &[0.0, 1.0]) <= 1e-6);
}

#[test]
fn sensitivity_examples() {
    let cfg = FlowConfig::with_step(1e-3);
    let c = VectorField::constant(vec![0.5, -0.25], None).unwrap();
    let (_, j) = flow_with_sensitivity(&c, &[1.0, 2.0], 0.7, &cfg, Wrt::Time).unwrap();
    assert_eq!(j.data, vec![0.5, -0.25]);
    let (_, j) = flow_with_sensitivity(&decay(), &[1.0], 1.0, &cfg, Wrt::InitialPoint).unwrap();
    assert!(close(j.get(0, 0), (-1.0f64).exp(), 1e-6));
    let (_, j) = flow_with_sensitivity(&rotation(), &[0.2, 0.3], 0.0, &cfg, Wrt::InitialPoint).unwrap();
    assert_eq!(j.data, vec![1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn encoder_examples() {
    let mid = Encoder::affine(vec![0.0, 0.0], 0.0, iv(-1.0, 1.0)).unwrap();
    for x in [[0.0, 0.0], [10.0, -3.0]] {
        assert_eq!(encode(&mid, &x).unwrap(), 0.0);
    }
    let sat = Encoder::affine(vec![0.0], 800.0, iv(-1.0, 2.0)).unwrap();
    assert_eq!(encode(&sat, &[0.3]).unwrap(), 2.0);
    let half = Encoder::affine(vec![1.0], 0.0, iv(0.0, 1.0)).unwrap();
    assert_eq!(encode(&half, &[0.0]).unwrap(), 0.5);
}

#[test]
fn product_encoder_examples() {
    let i = iv(0.0, 2.0);
    let zero = || Encoder::affine(vec![0.0, 0.0], 0.0, i).unwrap();
    let p = ProductEncoder::new(vec![zero(), zero(), zero()]).unwrap();
    assert_eq!(encode_product(&p, &[0.4, -0.1]).unwrap(), vec![1.0; 3]);
    let a = Encoder::affine(vec![1.0, -2.0], 0.3, i).unwrap();
    let b = Encoder::affine(vec![-0.5, 0.1], -1.0, i).unwrap();
    let x = [0.7, 0.2];
    let single = ProductEncoder::new(vec![a.clone()]).unwrap();
    assert_eq!(encode_product(&single, &x).unwrap(), vec![encode(&a, &x).unwrap()]);
    let both = ProductEncoder::new(vec![a.clone(), b.clone()]).unwrap();
    assert_eq!(
        encode_product(&both, &x).unwrap(),
        vec![encode(&a, &x).unwrap(), encode(&b, &x).unwrap()]
    );
}

#[test]
fn encoder_distance_examples() {
    let i = iv(-1.0, 1.0);
    let a = Encoder::affine(vec![1.0, 0.5], 0.2, i).unwrap();
    let b = Encoder::affine(vec![-0.3, 0.9], -0.1, i).unwrap();
    let pts = vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![0.5, 0.5]];
    assert_eq!(encoder_c0_distance(&a, &a, &pts).unwrap(), 0.0);
    let want = pts
        .iter()
        .map(|x| (encode(&a, x).unwrap() - encode(&b, x).unwrap()).abs())
        .fold(0.0, f64::max);
    assert_eq!(encoder_c0_distance(&a, &b, &pts).unwrap(), want);
    let c1 = Encoder::affine(vec![0.0, 0.0], 1.0, i).unwrap();
    let c2 = Encoder::affine(vec![0.0, 0.0], -2.0, i).unwrap();
    let gap = (encode(&c1, &[0.0, 0.0]).unwrap() - encode(&c2, &[0.0, 0.0]).unwrap()).abs();
    assert!(close(encoder_c0_distance(&c1, &c2, &pts).unwrap(), gap, 1e-15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn encoder_output_in_interval(w0 in -50.0..50.0f64, w1 in -50.0..50.0f64, b in -50.0..50.0f64,
                                  x0 in -5.0..5.0f64, x1 in -5.0..5.0f64) {
        let e = Encoder::affine(vec![w0, w1], b, iv(-0.5, 2.0)).unwrap();
        let t = encode(&e, &[x0, x1]).unwrap();
        prop_assert!((-0.5..=2.0).contains(&t));
    }

    #[test]
    fn flow_is_invertible(seed in 0u64..1000, t in -1.0..1.0f64) {
        let mut rng = rng_from_seed(seed);
        let fam = FieldFamily::recurrent(2, Nonlinearity::TanhComponentwise, None);
        let f = fam.sample_member(&mut rng);
        let cfg = FlowConfig::with_step(1e-3);
        let xi = uniform_in_ball(&mut rng, 2, 1.0);
        let back = flow(&f, &flow(&f, &xi, t, &cfg).unwrap(), -t, &cfg).unwrap();
        prop_assert!(dist(&back, &xi) <= 1e-9);
    }

    #[test]
    fn bar_beta_is_monotone(r in 0.0..10.0f64, s in 0.0..10.0f64, j in 0usize..4) {
        let w = ComparisonFn::worst_case(0.8, 1.3, iv(-1.0, 0.5)).unwrap();
        let (lo, hi) = if r <= s { (r, s) } else { (s, r) };
        prop_assert!(w.bar_beta_j(lo, j) <= w.bar_beta_j(hi, j));
        prop_assert!(w.bar_beta_j(lo, j) >= lo);
    }
}
