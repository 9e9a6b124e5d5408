use nalgebra::{Complex, DMatrix};
use proptest::prelude::*;

use super::*;
use crate::devices::{build_device, DeviceKind, DeviceModel, DeviceParams, ParamMap};
use crate::devices::{ConstVoltageParams, ZipParams};
use crate::interconnect::LineData;

fn bus(id: usize, model: DeviceModel) -> CaseBus {
    CaseBus { id, model }
}

fn zload(zp: f64, zq: f64) -> DeviceModel {
    DeviceModel::new(DeviceParams::Zip(ZipParams::constant_impedance(zp, zq)), PortRole::VoltageInCurrentOut).unwrap()
}

fn source(vd: f64, vq: f64) -> DeviceModel {
    DeviceModel::new(DeviceParams::ConstVoltage(ConstVoltageParams { vd, vq }), PortRole::CurrentInVoltageOut).unwrap()
}

fn sg() -> DeviceModel {
    let p: ParamMap = [
        ("m", 0.1),
        ("d", 1.0),
        ("t_d0", 8.0),
        ("xd", 0.15),
        ("xd_prime", 0.06),
        ("xq", 0.1),
        ("pm", 0.5),
        ("ef", 1.2),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    build_device(DeviceKind::SG3, &p).unwrap()
}

/// Generator feeding a loaded node tied to a stiff source.
fn smib() -> NetworkCase {
    NetworkCase::new(
        "smib",
        vec![bus(1, sg()), bus(2, zload(0.4, 0.1)), bus(3, source(1.0, 0.0))],
        vec![LineData::new(1, 2, 0.0, 0.2, 0.0), LineData::new(2, 3, 0.01, 0.2, 0.0)],
    )
    .unwrap()
}

fn smib_equilibrium() -> Equilibrium {
    let case = smib();
    let mut w = flat_start(&case);
    w[0] = 0.3;
    solve_equilibrium(&case, &w).unwrap().equilibrium().expect("converges")
}

#[test]
fn two_bus_divider_matches_complex_oracle() {
    let (zp, zq, r, x) = (0.8, 0.3, 0.05, 0.4);
    let case = NetworkCase::new(
        "divider",
        vec![bus(0, source(1.0, 0.1)), bus(1, zload(zp, zq))],
        vec![LineData::new(0, 1, r, x, 0.0)],
    )
    .unwrap();
    let eq = solve_equilibrium(&case, &flat_start(&case)).unwrap().equilibrium().unwrap();
    // load admittance conj(S)/|V|^2
    let zl = Complex::new(1.0, 0.0) / Complex::new(zp, -zq);
    let v1 = Complex::new(1.0, 0.1) * zl / (zl + Complex::new(r, x));
    assert!((eq.voltages[1][0] - v1.re).abs() < 1e-9);
    assert!((eq.voltages[1][1] - v1.im).abs() < 1e-9);
    assert!(eq.network_residual <= 1e-8);
}

#[test]
fn solve_reports_no_convergence_instead_of_failing() {
    // a load too heavy for the line has no operating point
    let case = NetworkCase::new(
        "collapse",
        vec![bus(0, source(1.0, 0.0)), bus(1, zload(0.0, 0.0))],
        vec![LineData::new(0, 1, 0.0, 0.5, 0.0)],
    )
    .unwrap();
    let mut w = flat_start(&case);
    w[2] = f64::NAN;
    match solve_equilibrium(&case, &w).unwrap() {
        SolveOutcome::NoConvergence { .. } => {}
        SolveOutcome::Converged(_) => panic!("NaN guess cannot converge"),
    }
    assert!(solve_equilibrium(&case, &[1.0]).is_err());
}

#[test]
fn equilibrium_is_a_fixed_point() {
    let case = smib();
    let eq = smib_equilibrium();
    assert!(eq.dynamic_residual <= 1e-8 && eq.network_residual <= 1e-8);
    let again = solve_equilibrium(&case, &eq.unknowns()).unwrap().equilibrium().unwrap();
    assert!(again.iterations <= 2);
    assert!(state_distance(&case, &eq, &again) < 1e-10);
}

fn linear_pair() -> NetworkCase {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.5, -2.0]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let c = DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.0, 0.2]);
    let d = DMatrix::identity(2, 2);
    let m = DeviceModel::linear(a, b, c, d).unwrap();
    NetworkCase::new("linear", vec![bus(0, m.clone()), bus(1, m)], vec![LineData::new(0, 1, 0.1, 0.3, 0.0)]).unwrap()
}

#[test]
fn linear_network_has_one_equilibrium() {
    let eqs = multistart_equilibria(&linear_pair(), 40, 3).unwrap();
    assert_eq!(eqs.len(), 1);
    assert!(eqs[0].states().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn multistart_is_deterministic_and_distinct() {
    let case = smib();
    let a = multistart_equilibria(&case, 40, 11).unwrap();
    let b = multistart_equilibria(&case, 40, 11).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty());
    for i in 0..a.len() {
        for j in 0..i {
            assert!(state_distance(&case, &a[i], &a[j]) > DEDUP_THRESHOLD);
        }
    }
    assert!(a.iter().all(|e| e.buses[0].x[0].abs() <= std::f64::consts::PI));
}

#[test]
fn lone_linear_device_linearizes_to_its_state_matrix() {
    let a = DMatrix::from_row_slice(2, 2, &[-1.0, 3.0, 0.0, -2.0]);
    let m = DeviceModel::linear(a.clone(), DMatrix::from_element(2, 2, 0.7), DMatrix::zeros(2, 2), DMatrix::identity(2, 2)).unwrap();
    let case = NetworkCase::new("lone", vec![bus(0, m)], vec![]).unwrap();
    let eq = solve_equilibrium(&case, &flat_start(&case)).unwrap().equilibrium().unwrap();
    let red = linearize(&case, &eq).unwrap();
    assert!((red - a).amax() < 1e-12);
}

#[test]
fn reduced_matrix_matches_finite_differences() {
    let case = smib();
    let eq = smib_equilibrium();
    let sys = NetworkSystem::new(&case).unwrap();
    let red = linearize(&case, &eq).unwrap();
    let nx = sys.num_states();
    // reduced vector field: settle V for given x, then evaluate f
    let field = |x: &[f64]| -> Vec<f64> {
        let mut w = x.to_vec();
        w.extend(eq.voltages.iter().flat_map(|v| v.iter().copied()));
        let w = settle_voltages(&sys, &w);
        sys.residual(&w).unwrap().rows(0, nx).iter().copied().collect()
    };
    let x0 = eq.states();
    let h = 1e-6;
    for j in 0..nx {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (field(&xp), field(&xm));
        for i in 0..nx {
            let fd = (fp[i] - fm[i]) / (2.0 * h);
            assert!((fd - red[(i, j)]).abs() < 1e-5, "entry ({i},{j}): fd {fd} vs {}", red[(i, j)]);
        }
    }
}

#[test]
fn singular_algebraic_block_is_structural() {
    // two voltage-in nodes with nothing attached: the port rows are all zero
    let n = DeviceModel::new(DeviceParams::IntermediateNode, PortRole::VoltageInCurrentOut).unwrap();
    let case = NetworkCase::new("float", vec![bus(0, n.clone()), bus(1, n)], vec![]).unwrap();
    let sys = NetworkSystem::new(&case).unwrap();
    let w = vec![1.0, 0.0, 1.0, 0.0];
    match linearize_system(&sys, &w) {
        Err(Error::Structural(msg)) => assert!(msg.contains("condition")),
        other => panic!("expected structural error, got {other:?}"),
    }
}

#[test]
fn max_real_eig_examples() {
    assert_eq!(max_real_eig(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, -2.0]))), -1.0);
    let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    assert!(max_real_eig(&rot).abs() < 1e-12);
    let s = spectral_summary(&DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.0, -3.0, 1e-9])));
    assert_eq!(s.near_zero, 2);
    assert_eq!(s.max_real, -3.0);
    assert_eq!(s.eigenvalues.len(), 3);
}

#[test]
fn smib_spectrum_is_stable_at_operating_point() {
    let case = smib();
    let eq = smib_equilibrium();
    let s = spectral_summary(&linearize(&case, &eq).unwrap());
    assert_eq!(s.eigenvalues.len(), case.total_states());
    assert!(s.max_real < 0.0);
}

#[test]
fn simulation_rests_at_equilibrium() {
    let case = smib();
    let eq = smib_equilibrium();
    let opts = SimulationOptions {
        t_end: 10.0,
        record_every: 1000,
        ..Default::default()
    };
    let tr = simulate(&case, &eq.unknowns(), &[], &opts).unwrap();
    assert!(tr.failed_at.is_none());
    let x0 = eq.states();
    for x in &tr.x {
        for (a, b) in x.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn perturbed_simulation_returns_to_equilibrium_and_exports_csv() {
    let case = smib();
    let eq = smib_equilibrium();
    let opts = SimulationOptions {
        t_end: 20.0,
        dt: 2e-3,
        record_every: 50,
        ..Default::default()
    };
    let ev = [Event::StatePerturbation { t: 1.0, bus: 1, state: 1, delta: 0.05 }];
    let tr = simulate(&case, &eq.unknowns(), &ev, &opts).unwrap();
    assert!(tr.failed_at.is_none());
    let last = tr.last_states().unwrap();
    let moved = tr.x.iter().map(|x| (x[1] - eq.buses[0].x[1]).abs()).fold(0.0, f64::max);
    assert!(moved > 1e-3);
    assert!(last.iter().zip(eq.states()).all(|(a, b)| (a - b).abs() < 1e-3));
    let mut buf = Vec::new();
    tr.write_csv(&case, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,V_1,V_2,V_3,1_omega");
    assert_eq!(text.lines().count(), tr.t.len() + 1);
}

#[test]
fn load_step_event_changes_scaling() {
    let case = smib();
    let eq = smib_equilibrium();
    let opts = SimulationOptions {
        t_end: 0.1,
        record_every: 10,
        ..Default::default()
    };
    let tr = simulate(&case, &eq.unknowns(), &[Event::LoadScale { t: 0.05, s: 1.1 }], &opts).unwrap();
    assert_eq!(tr.scaling.first(), Some(&1.0));
    assert_eq!(tr.scaling.last(), Some(&1.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn jacobian_is_periodic_in_rotor_angle(d in -3.0f64..3.0, k in -2i32..=2) {
        let case = smib();
        let sys = NetworkSystem::new(&case).unwrap();
        let mut w = smib_equilibrium().unknowns();
        w[0] = d;
        let j0 = sys.jacobian(&w).unwrap();
        w[0] = d + k as f64 * std::f64::consts::TAU;
        let j1 = sys.jacobian(&w).unwrap();
        prop_assert!((j0 - j1).amax() < 1e-9);
    }

    #[test]
    fn angle_alignment_lands_within_half_turn_of_centre(v in -20.0f64..20.0, c in -3.0f64..3.0) {
        let bbox = SampleBox::new(vec![c - 0.5, -1.0, -1.0], vec![c + 0.5, 1.0, 1.0]).unwrap();
        let out = align_angles(&[StateClass::Angle], &[v, 0.3, 0.2], &bbox);
        prop_assert!((out[0] - c).abs() <= std::f64::consts::PI + 1e-12);
        let turns = (out[0] - v) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
        prop_assert_eq!(&out[1..], &[0.3, 0.2]);
    }
}

#[test]
fn dissipation_samples_skip_event_windows() {
    use crate::dissipativity::{DissipativityCertificate, StorageMatrix, SupplyRateMatrix};
    let case = smib();
    let eq = smib_equilibrium();
    let opts = SimulationOptions {
        t_end: 0.2,
        dt: 1e-2,
        ..Default::default()
    };
    let ev = [Event::StatePerturbation { t: 0.1, bus: 1, state: 1, delta: 0.05 }];
    let tr = simulate(&case, &eq.unknowns(), &ev, &opts).unwrap();
    assert_eq!(tr.event_times.len(), 1);
    let k = case.index_of(1).unwrap();
    let n = case.buses[k].model.state_dim();
    let cert = DissipativityCertificate {
        device: "sg".into(),
        p: Some(StorageMatrix::new(DMatrix::identity(n, n)).unwrap()),
        x: SupplyRateMatrix::zeros(),
        epsilon: 0.0,
        sample_margins: vec![],
    };
    let samples = dissipation_samples(&case, &tr, 1, &cert).unwrap();
    let e = tr.event_times[0];
    assert_eq!(samples.len(), tr.t.len() - 4);
    for s in &samples {
        assert!(!(tr.t[s.step - 1] <= e + 1e-12 && e < tr.t[s.step + 1]));
        assert_eq!(tr.t[s.step], s.t);
    }
}
