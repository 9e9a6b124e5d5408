use super::*;
use crate::devices::{ConstVoltageParams, DeviceParams, PortRole};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn linear_jac(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> JacobianSet {
    JacobianSet { a, b, cm: c, dm: d }
}

fn stable_linear() -> DeviceModel {
    DeviceModel::linear(-eye(2), eye(2), eye(2), DMatrix::zeros(2, 2)).unwrap()
}

fn node() -> DeviceModel {
    DeviceModel::with_default_role(DeviceParams::IntermediateNode).unwrap()
}

fn const_z(zp: f64, zq: f64) -> DeviceModel {
    DeviceModel::with_default_role(DeviceParams::Zip(ZipParams::constant_impedance(zp, zq))).unwrap()
}

fn static_cert(x: DMatrix<f64>) -> DissipativityCertificate {
    DissipativityCertificate {
        device: "test".into(),
        p: None,
        x: SupplyRateMatrix::new(x).unwrap(),
        epsilon: 0.0,
        sample_margins: vec![],
    }
}

fn input_points(center: [f64; 2], half: f64) -> Vec<SamplePoint> {
    SampleBox::new(
        vec![center[0] - half, center[1] - half],
        vec![center[0] + half, center[1] + half],
    )
    .unwrap()
    .grid(4)
}

#[test]
fn dynamic_lhs_direct_substitution() {
    let j = linear_jac(-eye(2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2));
    let lhs = lmi_lhs_dynamic(&j, &eye(2), &DMatrix::zeros(4, 4), 0.0);
    let mut expected = DMatrix::zeros(4, 4);
    expected[(0, 0)] = -2.0;
    expected[(1, 1)] = -2.0;
    assert_eq!(lhs, expected);
}

#[test]
fn dynamic_lhs_is_linear_in_certificate() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut r = |n, m| DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
    let j = linear_jac(r(3, 3), r(3, 2), r(2, 3), r(2, 2));
    let p = { let m = r(3, 3); &m * m.transpose() + eye(3) };
    let x = { let m = r(4, 4); &m + m.transpose() };
    let base = lmi_lhs_dynamic(&j, &p, &x, 0.3);
    let scaled = lmi_lhs_dynamic(&j, &(&p * 2.5), &(&x * 2.5), 0.75);
    assert!((scaled - base * 2.5).amax() < 1e-12);
}

#[test]
fn static_lhs_examples() {
    let mut x = DMatrix::zeros(4, 4);
    x[(0, 0)] = 1.0;
    x[(1, 1)] = 1.0;
    assert_eq!(lmi_lhs_static(&DMatrix::zeros(2, 2), &x), eye(2));

    let (zp, zq) = (1.0, 0.5);
    let dm = DMatrix::from_row_slice(2, 2, &[zp, zq, -zq, zp]);
    let q = eye(2) * (-zp + 0.1);
    let s = eye(2) * 0.5;
    let xz = SupplyRateMatrix::from_blocks(&q, &s, &DMatrix::zeros(2, 2)).unwrap();
    let lhs = lmi_lhs_static(&dm, xz.matrix());
    assert!(lambda_min(&lhs) >= -1e-12);
    // Q + (Dm + Dm^T)/2 = 0.1 I
    assert!((lhs - eye(2) * 0.1).amax() < 1e-12);

    assert_eq!(lmi_lhs_static(&dm, &DMatrix::zeros(4, 4)), DMatrix::zeros(2, 2));
}

#[test]
fn static_path_matches_dynamic_path_with_no_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let dm = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-2.0..2.0));
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let x = &m + m.transpose();
        let j = linear_jac(DMatrix::zeros(0, 0), DMatrix::zeros(0, 2), DMatrix::zeros(2, 0), dm.clone());
        let dynamic = lambda_max(&lmi_lhs_dynamic(&j, &DMatrix::zeros(0, 0), &x, 0.0));
        let stat = lambda_max(&-lmi_lhs_static(&dm, &x));
        assert!((dynamic - stat).abs() < 1e-12);
    }
}

#[test]
fn stable_linear_device_is_certified() {
    let dev = stable_linear();
    let pts = vec![SamplePoint::new(vec![0.0, 0.0], [0.0, 0.0])];
    let out = verify_dynamic("lin", &dev, pts, 1e-4, &ObjectiveHint::MinNorm, &VerifyOptions::default()).unwrap();
    let cert = out.certificate().expect("feasible");
    // independent eigenvalue check of the returned pair
    let j = dev.eval_jacobians(&[0.3, 0.1], &[1.0, -2.0]).unwrap();
    let lhs = lmi_lhs_dynamic(&j, cert.p.as_ref().unwrap().matrix(), cert.x.matrix(), 1e-4);
    assert!(lambda_max(&lhs) <= 1e-8);
    assert!(cert.p.as_ref().unwrap().min_eigenvalue() > 0.0);
}

#[test]
fn anti_stable_device_without_output_is_infeasible() {
    let dev = DeviceModel::linear(eye(2), eye(2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
    let pts = vec![SamplePoint::new(vec![0.0, 0.0], [0.0, 0.0])];
    let out = verify_dynamic("anti", &dev, pts, 0.01, &ObjectiveHint::Feasibility, &VerifyOptions::default()).unwrap();
    assert!(matches!(out, VerifyOutcome::Infeasible { .. }));
}

#[test]
fn intermediate_node_gets_identity_q() {
    let out = verify_static("n", &node(), input_points([1.0, 0.0], 0.3), &ObjectiveHint::MinNorm, &VerifyOptions::default()).unwrap();
    let cert = out.certificate().unwrap();
    let mut expected = DMatrix::zeros(4, 4);
    expected[(0, 0)] = 1.0;
    expected[(1, 1)] = 1.0;
    assert!((cert.x.matrix() - expected).amax() < 1e-5);
    assert!(cert.max_margin() <= 1e-8);
}

#[test]
fn constant_impedance_is_certified() {
    let dev = const_z(0.9, 0.3);
    let out = verify_static("z", &dev, input_points([1.0, 0.1], 0.2), &ObjectiveHint::MinNorm, &VerifyOptions::default()).unwrap();
    let cert = out.certificate().unwrap();
    assert!(cert.reverify(&dev).unwrap() <= 1e-8);
    // a member of the closed-form family also passes
    let x = SupplyRateMatrix::from_blocks(&(eye(2) * -0.9), &(eye(2) * 0.5), &DMatrix::zeros(2, 2)).unwrap();
    assert!(analytic_family_check(AnalyticFamily::for_device(&dev).unwrap(), &x, 1e-12));
    let c = static_cert(x.into_matrix());
    assert!(check_pointwise(&dev, &c, &SamplePoint::new(vec![], [0.8, 0.4])).unwrap() <= 1e-12);
}

#[test]
fn steep_static_map_agrees_with_brute_force() {
    // constant power load sampled down to low voltage: the feedthrough grows like 1/|V|^2
    let dev = DeviceModel::with_default_role(DeviceParams::Zip(ZipParams { p0: 1.0, ..ZipParams::default() })).unwrap();
    let pts: Vec<SamplePoint> = [0.02, 0.05, 0.2, 0.6, 1.0, 1.4]
        .iter()
        .flat_map(|m: &f64| (0..6).map(move |k| {
            let a = k as f64;
            SamplePoint::new(vec![], [m * a.cos(), m * a.sin()])
        }))
        .collect();
    let solver_says = verify_static("p", &dev, pts.clone(), &ObjectiveHint::MinNorm, &VerifyOptions::default())
        .unwrap()
        .certificate()
        .is_some();
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let mut brute = false;
    'outer: for q in grid {
        for s in grid {
            for r in grid {
                let x = SupplyRateMatrix::from_blocks(&(eye(2) * q), &(eye(2) * s), &(eye(2) * r)).unwrap();
                let c = static_cert(x.into_matrix());
                if pts.iter().all(|p| check_pointwise(&dev, &c, p).unwrap() < 0.0) {
                    brute = true;
                    break 'outer;
                }
            }
        }
    }
    assert_eq!(solver_says, brute);
}

#[test]
fn analytic_family_examples() {
    let mk = |q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>| SupplyRateMatrix::from_blocks(&q, &s, &r).unwrap();
    let z = DMatrix::zeros(2, 2);
    let good = mk(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]), z.clone(), z.clone());
    assert!(analytic_family_check(AnalyticFamily::PositiveQ, &good, 0.0));
    let bad = mk(DMatrix::from_diagonal(&nalgebra::dvector![1.0, -0.1]), z.clone(), z.clone());
    assert!(!analytic_family_check(AnalyticFamily::PositiveQ, &bad, 0.0));
    let cz = mk(eye(2) * -0.4, eye(2) * 0.5, z.clone());
    assert!(analytic_family_check(AnalyticFamily::ConstantImpedance { zp: 0.5, zq: 0.0 }, &cz, 0.0));
    let cz_bad = mk(eye(2) * -0.6, eye(2) * 0.5, z);
    assert!(!analytic_family_check(AnalyticFamily::ConstantImpedance { zp: 0.5, zq: 0.0 }, &cz_bad, 0.0));
}

#[test]
fn node_margin_is_minus_q() {
    let mut x = DMatrix::zeros(4, 4);
    x[(0, 0)] = 1.0;
    x[(1, 1)] = 1.0;
    let m = check_pointwise(&node(), &static_cert(x), &SamplePoint::new(vec![], [1.0, 0.2])).unwrap();
    assert!((m + 1.0).abs() < 1e-14);
}

fn linear_cert() -> (DeviceModel, DissipativityCertificate) {
    let dev = stable_linear();
    let pts = vec![SamplePoint::new(vec![0.0, 0.0], [0.0, 0.0])];
    let out = verify_dynamic("lin", &dev, pts, 1e-4, &ObjectiveHint::MinNorm, &VerifyOptions::default()).unwrap();
    (dev, out.certificate().unwrap().clone())
}

#[test]
fn linear_region_is_fully_certified() {
    let (dev, cert) = linear_cert();
    let bbox = SampleBox::new(vec![-5.0, -5.0, -3.0, -3.0], vec![5.0, 5.0, 3.0, 3.0]).unwrap();
    let nominal = SamplePoint::new(vec![0.0, 0.0], [0.0, 0.0]);
    let region = characterize_region(&dev, &cert, &bbox, 3, &nominal, 1e-8).unwrap();
    assert!(region.nominal_certified);
    assert_eq!(region.certified_fraction(), 1.0);
    assert_eq!(membership(&region, &SamplePoint::new(vec![4.0, -1.0], [2.9, 0.0])), Membership::Certified);
    assert_eq!(membership(&region, &SamplePoint::new(vec![6.0, 0.0], [0.0, 0.0])), Membership::OutsideBox);
}

#[test]
fn dissipation_inequality_holds_for_random_rates() {
    // S' = 2 f^T P (A f + B u'), supply = [u'; y']^T X [u'; y'] with y' = Cm f + Dm u'
    let (dev, cert) = linear_cert();
    let j = dev.eval_jacobians(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
    let p = cert.p.as_ref().unwrap().matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let f = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let du = nalgebra::DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let s_dot = 2.0 * (f.transpose() * p * (&j.a * &f + &j.b * &du))[0];
        let dy = &j.cm * &f + &j.dm * &du;
        let w = nalgebra::DVector::from_iterator(4, du.iter().chain(dy.iter()).copied());
        let supply = (w.transpose() * cert.x.matrix() * &w)[0];
        assert!(s_dot <= supply - cert.epsilon * f.norm_squared() + 1e-12);
    }
}

#[test]
fn region_shrinks_as_epsilon_grows() {
    let dev = DeviceModel::with_default_role(DeviceParams::Sg3(crate::devices::Sg3Params {
        m: 0.1254,
        d: 1.0,
        t_d0: 8.96,
        xd: 0.146,
        xd_prime: 0.0608,
        xq: 0.0969,
        pm: 0.72,
        ef: 1.08,
    }))
    .unwrap();
    let nominal = SamplePoint::new(vec![0.3, 0.0, 1.05], [1.0, 0.05]);
    let bbox = SampleBox::around(&dev, &nominal.x, &nominal.u, &BoxSpec::default());
    let out = verify_dynamic("sg", &dev, bbox.grid(3), 1e-4, &ObjectiveHint::MinNorm, &VerifyOptions::default()).unwrap();
    let cert = out.certificate().expect("SG certified on its box");
    assert!(cert.reverify(&dev).unwrap() <= 1e-8);
    let wide = SampleBox::around(&dev, &nominal.x, &nominal.u, &BoxSpec { angle: 1.5, input_rel: 0.6, ..BoxSpec::default() });
    let mut prev: Option<Vec<bool>> = None;
    for eps in [1e-4, 1e-2, 1.0, 10.0] {
        let mut c = cert.clone();
        c.epsilon = eps;
        let r = characterize_region(&dev, &c, &wide, 3, &nominal, 1e-8).unwrap();
        if let Some(p) = &prev {
            assert!(r.certified_cells.iter().zip(p).all(|(now, before)| !*now || *before));
        }
        prev = Some(r.certified_cells);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_q_family_passes_everywhere(
        a in proptest::collection::vec(-2.0f64..2.0, 4),
        rest in proptest::collection::vec(-3.0f64..3.0, 6),
        vd in 0.5f64..1.5, vq in -0.5f64..0.5,
    ) {
        let l = DMatrix::from_row_slice(2, 2, &a);
        let q = &l * l.transpose();
        let s = DMatrix::from_row_slice(2, 2, &rest[..4]);
        let r = DMatrix::from_row_slice(2, 2, &[rest[4], rest[5], rest[5], rest[4]]);
        let x = SupplyRateMatrix::from_blocks(&q, &s, &r).unwrap();
        prop_assert!(analytic_family_check(AnalyticFamily::PositiveQ, &x, 1e-12));
        let cv = DeviceModel::new(DeviceParams::ConstVoltage(ConstVoltageParams { vd: 1.0, vq: 0.0 }), PortRole::CurrentInVoltageOut).unwrap();
        for dev in [node(), cv] {
            let m = check_pointwise(&dev, &static_cert(x.matrix().clone()), &SamplePoint::new(vec![], [vd, vq])).unwrap();
            prop_assert!(m <= 1e-12);
        }
    }

    #[test]
    fn scaling_preserves_pass(p in 0.01f64..100.0, x0 in -1.0f64..1.0, u0 in -1.0f64..1.0) {
        let (dev, cert) = linear_cert();
        let pt = SamplePoint::new(vec![x0, -x0], [u0, 0.5]);
        let m = check_pointwise(&dev, &cert, &pt).unwrap();
        let ms = check_pointwise(&dev, &cert.scaled(p), &pt).unwrap();
        prop_assert!((ms - p * m).abs() <= 1e-9 * (1.0 + p * m.abs()));
        prop_assert!(ms <= 0.0);
    }
}
