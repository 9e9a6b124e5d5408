use super::*;
use crate::devices::{DeviceModel, DeviceParams, LinearParams, PortRole};
use crate::dissipativity::{check_pointwise, SamplePoint};
use crate::interconnect::{build_admittance, build_interconnection, verify_coupling_centralized, CouplingOptions, LineData, LocalConstraint};
use crate::linalg::{block_diag, lambda_min};
use crate::sdp::{self, AffineExpr, LmiProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CI: PortRole = PortRole::CurrentInVoltageOut;
const VI: PortRole = PortRole::VoltageInCurrentOut;

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn linear(a: f64, n: usize, c: f64, d: f64, role: PortRole) -> DeviceModel {
    DeviceModel::new(
        DeviceParams::Linear(LinearParams {
            a: eye(n) * a,
            b: DMatrix::from_fn(n, 2, |i, j| if i == j { 1.0 } else { 0.0 }),
            c: DMatrix::from_fn(2, n, |i, j| if i == j { c } else { 0.0 }),
            d: eye(2) * d,
        }),
        role,
    )
    .unwrap()
}

fn set_of(model: &DeviceModel, eps: f64) -> LocalLmiSet {
    let pt = SamplePoint::new(vec![0.0; model.state_dim()], [1.0, 0.0]);
    LocalLmiSet::build("dev", model, vec![pt], if model.is_static() { 0.0 } else { eps }).unwrap()
}

fn msg(z: &DMatrix<f64>, y: &DMatrix<f64>, rho: f64, t_bar: f64) -> CoordinatorMessage {
    CoordinatorMessage {
        bus: 0,
        z: to_sym4(z),
        y: to_sym4(y),
        rho,
        t_bar,
    }
}

#[test]
fn rho_update_examples() {
    assert_eq!(rho_update(1.5, 10.0, 0.5, 10.0, 2.0, 2.0), 3.0);
    assert_eq!(rho_update(1.5, 1.0, 1.0, 10.0, 2.0, 2.0), 1.5);
    assert_eq!(rho_update(1.5, 0.1, 10.0, 10.0, 2.0, 2.0), 0.75);
}

#[test]
fn y_update_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = vec![DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0))];
    let y0 = vec![DMatrix::zeros(4, 4)];
    assert_eq!(y_update(&y0, &x, &x, 3.0), y0);
    let z = vec![&x[0] - eye(4)];
    assert_eq!(y_update(&y0, &x, &z, 2.0)[0], eye(4) * 2.0);
    let z2 = vec![&x[0] * 0.5];
    let once = y_update(&y_update(&y0, &x, &z, 2.0), &x, &z2, 0.5);
    let direct = &y0[0] + (&x[0] - &z[0]) * 2.0 + (&x[0] - &z2[0]) * 0.5;
    assert!((&once[0] - direct).amax() < 1e-14);
}

#[test]
fn residual_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let b: Vec<DMatrix<f64>> = (0..3).map(|_| DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0))).collect();
    assert_eq!(residuals(&a, &a, &b, 1.0).0, 0.0);
    assert_eq!(residuals(&b, &a, &a, 1.0).1, 0.0);
    let s1 = residuals(&a, &a, &b, 1.0).1;
    let s2 = residuals(&a, &a, &b, 2.0).1;
    assert!((s2 - 2.0 * s1).abs() < 1e-14);
    let full = hcat(&a) - hcat(&b);
    assert!((residuals(&a, &b, &b, 1.0).0 - full.norm()).abs() < 1e-12);
}

fn hcat(m: &[DMatrix<f64>]) -> DMatrix<f64> {
    crate::linalg::hstack(&m.iter().collect::<Vec<_>>())
}

#[test]
fn x_update_approaches_target_as_rho_grows() {
    let dev = linear(-1.0, 2, 1.0, 0.0, VI);
    let set = set_of(&dev, 1e-3);
    // passive-type supply rate strictly inside the local set
    let z = DMatrix::from_row_slice(4, 4, &[
        0.0, 0.0, 1.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        1.0, 0.0, -1.0, 0.0, //
        0.0, 1.0, 0.0, -1.0,
    ]);
    let mut last = f64::INFINITY;
    let mut first = None;
    for rho in [1.0, 10.0, 100.0, 1e4] {
        let mut agent = BusAgent::new(0, set.clone(), VerifyOptions::default());
        let out = agent.x_update(&msg(&z, &DMatrix::zeros(4, 4), rho, 1e-2)).unwrap();
        let d = (from_sym4(&out.x) - &z).norm();
        assert!(d <= last * (1.0 + 1e-4), "rho {rho}: {d} > {last}");
        assert!(out.t > 0.0);
        first.get_or_insert(d);
        last = d;
    }
    assert!(last < 1e-3 && last < 0.5 * first.unwrap(), "{first:?} -> {last}");
}

#[test]
fn x_update_reaches_cap_when_slack() {
    let node = linear(0.0, 0, 0.0, 0.0, VI);
    let dynamic = linear(-1.0, 2, 1.0, 0.0, VI);
    for dev in [node, dynamic] {
        let mut agent = BusAgent::new(0, set_of(&dev, 1e-3), VerifyOptions::default());
        let out = agent.x_update(&msg(&DMatrix::zeros(4, 4), &DMatrix::zeros(4, 4), 1.0, 1e-2)).unwrap();
        assert!((out.t - 1e-2).abs() < 1e-6, "t = {}", out.t);
        assert!(set_of(&dev, 1e-3).max_margin(out.p.as_ref().map(|r| crate::linalg::from_rows(r).unwrap()).as_ref(), &from_sym4(&out.x)) <= -1e-2 + 1e-6);
    }
}

#[test]
fn x_update_node_keeps_unit_q() {
    let node = linear(0.0, 0, 0.0, 0.0, VI);
    let z = block_diag(&[eye(2), DMatrix::zeros(2, 2)]);
    let mut agent = BusAgent::new(0, set_of(&node, 0.0), VerifyOptions::default());
    let out = agent.x_update(&msg(&z, &DMatrix::zeros(4, 4), 1.0, 1e-2)).unwrap();
    assert!((from_sym4(&out.x) - &z).amax() < 1e-5);
    assert!((out.t - 1e-2).abs() < 1e-6);
}

fn isolated(n: usize) -> Interconnection {
    build_interconnection(&DMatrix::zeros(2 * n, 2 * n), &vec![VI; n]).unwrap()
}

#[test]
fn p_check_examples() {
    let ic = isolated(1);
    let x = block_diag(&[DMatrix::zeros(2, 2), -eye(2)]);
    let r = p_check(&ic, &[x], 1e-4, None, &PCheckOptions::default()).unwrap();
    assert_eq!(r.p, vec![1.0]);
    assert!((r.t_z + 1.0).abs() < 1e-12 && r.passed);

    let y = build_admittance(&[LineData::new(0, 1, 0.1, 0.3, 0.0), LineData::new(1, 2, 0.0, 0.2, 0.0)], 3).unwrap();
    let ic = build_interconnection(&y, &[CI, VI, CI]).unwrap();
    let r = p_check(&ic, &vec![DMatrix::zeros(4, 4); 3], 1e-4, None, &PCheckOptions::default()).unwrap();
    assert!(r.t_z.abs() < 1e-12 && !r.passed);
    assert!((r.p.iter().sum::<f64>() - 3.0).abs() < 1e-9 && r.p.iter().all(|p| *p > 0.0));
}

fn random_rates(rng: &mut ChaCha8Rng, n: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|_| {
            let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let mut x = &m + m.transpose();
            for k in 2..4 {
                x[(k, k)] -= 3.0;
            }
            x
        })
        .collect()
}

#[test]
fn p_check_bundle_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let lines: Vec<LineData> = (0..4).map(|i| LineData::new(i, i + 1, 0.05, 0.3, 0.0)).collect();
    let y = build_admittance(&lines, 5).unwrap();
    let ic = build_interconnection(&y, &[CI, VI, VI, CI, VI]).unwrap();
    for _ in 0..3 {
        let xs = random_rates(&mut rng, 5);
        let dense = p_check(&ic, &xs, 1e-4, None, &PCheckOptions::default()).unwrap();
        let opts = PCheckOptions {
            bundle_iters: 400,
            ..Default::default()
        };
        let bundle = pcheck::bundle_for_tests(&ic, &xs, &opts);
        // the bundle value can only be worse than the optimum
        assert!(bundle.t_z >= dense.t_z - 1e-6);
        assert!(bundle.t_z - dense.t_z < 1e-3 * (1.0 + dense.t_z.abs()), "{} vs {}", bundle.t_z, dense.t_z);
        let uniform = lambda_max(&assemble_lc(&ic, &xs).unwrap());
        assert!(dense.t_z <= uniform + 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn capped_simplex_projection(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
        let n = v.len() as f64;
        let p = pcheck::capped_simplex_for_tests(&v, 1e-6, n);
        prop_assert!((p.iter().sum::<f64>() - n).abs() < 1e-9);
        prop_assert!(p.iter().all(|x| *x >= 1e-6 - 1e-15));
        // optimality: moving mass between two coordinates never gets closer
        let d0: f64 = p.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
        for i in 0..p.len() {
            for j in 0..p.len() {
                if i != j && p[j] > 1e-6 + 1e-3 {
                    let mut q = p.clone();
                    q[i] += 1e-3;
                    q[j] -= 1e-3;
                    let d: f64 = q.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum();
                    prop_assert!(d >= d0 - 1e-9);
                }
            }
        }
    }
}

/// Exact projection with the conic backend.
fn project_dense(ic: &Interconnection, v: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let mut prob = LmiProblem::new();
    let zs: Vec<_> = (0..ic.n()).map(|i| prob.add_matrix(format!("Z{i}"), 4)).collect();
    let mut lc = AffineExpr::zeros(2 * ic.n());
    for (i, z) in zs.iter().enumerate() {
        lc.add_sandwich(*z, ic.bus_map(i), 1.0);
        prob.add_frobenius_cost(*z, &v[i], 0.5);
    }
    prob.require_nsd("coupling", lc);
    let sol = sdp::solve(&prob, &Default::default());
    zs.iter().map(|z| sol.matrix(*z)).collect()
}

fn objective(z: &[DMatrix<f64>], v: &[DMatrix<f64>]) -> f64 {
    z.iter().zip(v).map(|(a, b)| 0.5 * (a - b).norm_squared()).sum()
}

#[test]
fn z_update_fixed_point_for_feasible_input() {
    let y = build_admittance(&[LineData::new(0, 1, 0.1, 0.4, 0.0)], 2).unwrap();
    let ic = build_interconnection(&y, &[CI, VI]).unwrap();
    let xs = vec![block_diag(&[eye(2), -eye(2)]) * 0.01, block_diag(&[DMatrix::zeros(2, 2), -eye(2)])];
    assert!(lambda_max(&assemble_lc(&ic, &xs).unwrap()) <= 0.0);
    let z = z_update(&ic, &xs, &vec![DMatrix::zeros(4, 4); 2], 1.0);
    for (a, b) in z.iter().zip(&xs) {
        assert!((a - b).amax() < 1e-6);
    }
}

#[test]
fn z_update_single_bus_clips_r_block() {
    let ic = isolated(1);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let x = random_rates(&mut rng, 1).remove(0) + block_diag(&[DMatrix::zeros(2, 2), eye(2) * 3.5]);
        let yv = DMatrix::from_fn(4, 4, |i, j| 0.1 * (i + j) as f64);
        let rho = 2.0;
        let z = z_update(&ic, &[x.clone()], &[yv.clone()], rho).remove(0);
        let v = &x + &yv / rho;
        let mut oracle = crate::linalg::symmetrize(&v);
        let r = oracle.view((2, 2), (2, 2)).into_owned();
        let e = r.symmetric_eigen();
        let clipped = &e.eigenvectors * DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.min(0.0))) * e.eigenvectors.transpose();
        oracle.view_mut((2, 2), (2, 2)).copy_from(&clipped);
        assert!((z - oracle).amax() < 1e-6);
    }
}

#[test]
fn z_update_matches_conic_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lines = vec![LineData::new(0, 1, 0.05, 0.3, 0.02), LineData::new(1, 2, 0.02, 0.2, 0.0), LineData::new(0, 2, 0.0, 0.5, 0.0)];
    let y = build_admittance(&lines, 3).unwrap();
    let ic = build_interconnection(&y, &[CI, VI, VI]).unwrap();
    let mut proj = CouplingProjector::new(&ic, ProjectorOptions::default());
    let mut prev: Option<Vec<DMatrix<f64>>> = None;
    for _ in 0..4 {
        let v = random_rates(&mut rng, 3);
        let (z, stats) = proj.project(&v);
        assert!(stats.lambda_max_lc <= 1e-12);
        let exact = project_dense(&ic, &v);
        let (fz, fe) = (objective(&z, &v), objective(&exact, &v));
        assert!(fz <= fe + 1e-5 * (1.0 + fe), "{fz} vs {fe}");
        if let Some(p) = &prev {
            // the previous output is feasible, so it cannot beat the projection
            assert!(fz <= objective(p, &v) + 1e-8);
        }
        prev = Some(z);
    }
}

fn three_bus(g2: f64, dynamic: bool) -> (Interconnection, Vec<LocalLmiSet>) {
    let bus2 = if dynamic { linear(-1.0, 2, 0.3, g2, VI) } else { linear(0.0, 0, 0.0, g2, VI) };
    let models = [linear(0.0, 0, 0.0, 1.0, CI), linear(0.0, 0, 0.0, 0.5, VI), bus2];
    let lines = [LineData::new(0, 1, 1.0, 0.0, 0.0), LineData::new(1, 2, 1.0, 0.0, 0.0)];
    let y = build_admittance(&lines, 3).unwrap();
    let roles: Vec<PortRole> = models.iter().map(|m| m.port_role()).collect();
    let ic = build_interconnection(&y, &roles).unwrap();
    (ic, models.iter().map(|m| set_of(m, 1e-3)).collect())
}

fn centralized(ic: &Interconnection, sets: &[LocalLmiSet]) -> bool {
    let locals: Vec<LocalConstraint> = sets.iter().cloned().map(LocalConstraint::Sampled).collect();
    verify_coupling_centralized(ic, &locals, &CouplingOptions::default()).unwrap().feasible
}

fn check_report(rep: &VerificationReport, ic: &Interconnection, sets: &[LocalLmiSet], cfg: &AdmmConfig) {
    for r in &rep.trace {
        assert!(r.rho > 0.0);
        let k = r.k as i32;
        assert!(r.rho <= cfg.rho_init * cfg.tau_incr.powi(k) + 1e-12);
        assert!(r.rho >= cfg.rho_init / cfg.tau_decr.powi(k) - 1e-12);
        if r.pcheck_tz.is_some() {
            assert!(r.min_t > cfg.epsilon);
        }
    }
    match rep.outcome {
        AdmmOutcome::PcheckPass => {
            let w = rep.weights.as_ref().unwrap();
            assert!((w.iter().sum::<f64>() - w.len() as f64).abs() < 1e-9);
            assert!(rep.lambda_max_lc <= -cfg.epsilon + 1e-8);
            let certs = rep.certificates(sets).unwrap();
            for (cert, set) in certs.iter().zip(sets) {
                for pt in &set.points {
                    let model = set_model(set);
                    assert!(check_pointwise(&model, cert, pt).unwrap() <= 0.0);
                }
            }
        }
        AdmmOutcome::ResidualConverged => {
            assert!(rep.r_norm < cfg.eps_pri && rep.s_norm < cfg.eps_dual);
        }
        AdmmOutcome::MaxIter => {}
    }
    let _ = ic;
}

/// The test sets hold a single Jacobian, which is enough to rebuild a linear model.
fn set_model(set: &LocalLmiSet) -> DeviceModel {
    let j = &set.jacobians[0];
    DeviceModel::new(
        DeviceParams::Linear(LinearParams {
            a: j.a.clone(),
            b: j.b.clone(),
            c: j.cm.clone(),
            d: j.dm.clone(),
        }),
        VI,
    )
    .unwrap()
}

#[test]
fn three_bus_agrees_with_centralized() {
    let cfg = AdmmConfig {
        max_iter: 300,
        ..Default::default()
    };
    for (g2, dynamic) in [(0.5, false), (0.4, true), (-0.5, false)] {
        let (ic, sets) = three_bus(g2, dynamic);
        let central = centralized(&ic, &sets);
        let rep = run(&cfg, &ic, sets.clone()).unwrap();
        check_report(&rep, &ic, &sets, &cfg);
        assert_eq!(rep.coupling_verified, central, "g2 = {g2}: admm {:?}, centralized {central}", rep.outcome);
    }
}

#[test]
fn resonant_pair_never_verifies() {
    let models = [linear(0.0, 0, 0.0, 1.0, CI), linear(0.0, 0, 0.0, -0.5, VI)];
    let y = build_admittance(&[LineData::new(0, 1, 1.0, 0.0, 0.0)], 2).unwrap();
    let ic = build_interconnection(&y, &[CI, VI]).unwrap();
    let sets: Vec<LocalLmiSet> = models.iter().map(|m| set_of(m, 0.0)).collect();
    assert!(!centralized(&ic, &sets));
    let cfg = AdmmConfig {
        max_iter: 60,
        ..Default::default()
    };
    let rep = run(&cfg, &ic, sets.clone()).unwrap();
    assert!(!rep.coupling_verified);
    let min_t = rep.ts.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(rep.outcome == AdmmOutcome::MaxIter || min_t < cfg.epsilon, "{:?} with min t {min_t}", rep.outcome);
    check_report(&rep, &ic, &sets, &cfg);
    let mut csv = Vec::new();
    rep.write_trace_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("k,min_t,r_norm,s_norm,rho,event\n"));
    assert_eq!(text.lines().count(), rep.iterations + 1);
    assert!(text.trim_end().ends_with(rep.outcome.name()));
}

#[test]
fn iterates_stay_symmetric() {
    let (ic, sets) = three_bus(0.4, true);
    let cfg = AdmmConfig {
        max_iter: 5,
        pcheck: false,
        ..Default::default()
    };
    let n = ic.n();
    let mut state = AdmmState::new(n, &cfg);
    let mut agents: Vec<BusAgent> = sets.into_iter().enumerate().map(|(i, s)| BusAgent::new(i, s, cfg.local.clone())).collect();
    let mut proj = CouplingProjector::new(&ic, cfg.projector.clone());
    for _ in 0..5 {
        for a in agents.iter_mut() {
            let m = CoordinatorMessage {
                bus: a.bus,
                z: to_sym4(&state.zs[a.bus]),
                y: to_sym4(&state.ys[a.bus]),
                rho: state.rho,
                t_bar: cfg.t_bar,
            };
            let r = a.x_update(&m).unwrap();
            state.xs[r.bus] = from_sym4(&r.x);
        }
        let v: Vec<DMatrix<f64>> = state.xs.iter().zip(&state.ys).map(|(x, y)| x + y / state.rho).collect();
        let (z, _) = proj.project(&v);
        state.ys = y_update(&state.ys, &state.xs, &z, state.rho);
        state.zs = z;
        assert!(state.max_asymmetry() <= 1e-9);
    }
    assert!(lambda_min(&(-assemble_lc(&ic, &state.zs).unwrap())) >= -1e-12);
}

#[test]
fn config_validation() {
    assert!(AdmmConfig::default().validate().is_ok());
    let bad = AdmmConfig { mu: 1.0, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = AdmmConfig { rho_init: 0.0, ..Default::default() };
    assert!(bad.validate().is_err());
}
