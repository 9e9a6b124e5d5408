use super::*;
use crate::devices::{DeviceModel, PortRole};
use crate::dissipativity::{LocalLmiSet, SamplePoint};
use crate::linalg::{block_diag, lambda_max, vstack};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CI: PortRole = PortRole::CurrentInVoltageOut;
const VI: PortRole = PortRole::VoltageInCurrentOut;

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

fn ring(n: usize, rng: &mut ChaCha8Rng) -> Vec<LineData> {
    let mut lines: Vec<LineData> = (0..n)
        .map(|i| LineData::new(i, (i + 1) % n, rng.gen_range(0.0..0.05), rng.gen_range(0.05..0.5), rng.gen_range(0.0..0.2)))
        .collect();
    lines.push(LineData::new(0, n / 2, 0.01, 0.3, 0.0));
    lines
}

#[test]
fn two_bus_admittance() {
    let y = build_admittance(&[LineData::new(0, 1, 0.0, 0.5, 0.0)], 2).unwrap();
    let off = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
    assert_eq!(y.view((0, 2), (2, 2)).into_owned(), off);
    assert_eq!(y.view((2, 0), (2, 2)).into_owned(), off);
    assert_eq!(y.view((0, 0), (2, 2)).into_owned(), -&off);
    assert_eq!(y.view((2, 2), (2, 2)).into_owned(), -off);
}

#[test]
fn admittance_edge_cases() {
    assert_eq!(build_admittance(&[], 3).unwrap(), DMatrix::zeros(6, 6));
    let l = LineData::new(0, 1, 0.02, 0.2, 0.1);
    let once = build_admittance(&[l.clone()], 2).unwrap();
    let twice = build_admittance(&[l.clone(), l], 2).unwrap();
    assert!((twice - once * 2.0).amax() < 1e-12);
    assert!(build_admittance(&[LineData::new(0, 5, 0.0, 0.1, 0.0)], 2).is_err());
}

#[test]
fn all_voltage_out_gives_admittance() {
    // u = -I = -Y V = -Y y, so C = Y under the injected-current convention
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = build_admittance(&ring(5, &mut rng), 5).unwrap();
    let ic = build_interconnection(&y, &[CI; 5]).unwrap();
    assert!((ic.c() - &y).amax() < 1e-12);
    let v = DVector::from_fn(10, |_, _| rng.gen_range(-1.0..1.0));
    let i = &y * &v;
    let u: Vec<[f64; 2]> = (0..5).map(|k| [-i[2 * k], -i[2 * k + 1]]).collect();
    let yy: Vec<[f64; 2]> = (0..5).map(|k| [v[2 * k], v[2 * k + 1]]).collect();
    assert!(ic.consistency_residual(&u, &yy) < 1e-12);
}

#[test]
fn isolated_node_has_no_coupling() {
    let ic = build_interconnection(&DMatrix::zeros(2, 2), &[VI]).unwrap();
    assert_eq!(ic.c(), &DMatrix::zeros(2, 2));
    assert_eq!(ic.p_pi(), eye(4));
}

#[test]
fn mixed_roles_reproduce_kirchhoff() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..20 {
        let n = 6;
        let y = build_admittance(&ring(n, &mut rng), n).unwrap();
        let roles: Vec<PortRole> = (0..n).map(|i| if (i + trial) % 3 == 0 { CI } else { VI }).collect();
        let ic = build_interconnection(&y, &roles).unwrap();
        let v = DVector::from_fn(2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let i = &y * &v;
        let (mut u, mut yy) = (vec![], vec![]);
        for k in 0..n {
            let vk = [v[2 * k], v[2 * k + 1]];
            let ik = [i[2 * k], i[2 * k + 1]];
            match roles[k] {
                CI => {
                    u.push([-ik[0], -ik[1]]);
                    yy.push(vk);
                }
                VI => {
                    u.push(vk);
                    yy.push([-ik[0], -ik[1]]);
                }
            }
        }
        assert!(ic.consistency_residual(&u, &yy) < 1e-9);
    }
}

#[test]
fn floating_voltage_network_is_structural_error() {
    let y = build_admittance(&[LineData::new(0, 1, 0.0, 0.2, 0.0)], 2).unwrap();
    assert!(matches!(build_interconnection(&y, &[VI, VI]), Err(Error::Structural(_))));
}

fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &m + m.transpose()
}

#[test]
fn lc_examples() {
    let ic = build_interconnection(&DMatrix::zeros(2, 2), &[VI]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_sym(&mut rng, 4);
    let lc = assemble_lc(&ic, &[x.clone()]).unwrap();
    assert!((lc - x.view((2, 2), (2, 2))).amax() < 1e-15);

    let y = build_admittance(&ring(4, &mut rng), 4).unwrap();
    let ic = build_interconnection(&y, &[CI, VI, VI, CI]).unwrap();
    assert_eq!(assemble_lc(&ic, &vec![DMatrix::zeros(4, 4); 4]).unwrap(), DMatrix::zeros(8, 8));
    assert!(assemble_lc(&ic, &vec![DMatrix::zeros(4, 4); 3]).is_err());
}

#[test]
fn lc_matches_permuted_block_formula_and_chaining() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 5;
    let y = build_admittance(&ring(n, &mut rng), n).unwrap();
    let ic = build_interconnection(&y, &[CI, VI, CI, VI, VI]).unwrap();
    let xs: Vec<DMatrix<f64>> = (0..n).map(|_| random_sym(&mut rng, 4)).collect();
    let lc = assemble_lc(&ic, &xs).unwrap();
    assert!(crate::linalg::asymmetry(&lc) < 1e-12);
    let stacked = vstack(&[&-ic.c(), &eye(2 * n)]);
    let full = stacked.transpose() * ic.p_pi().transpose() * block_diag(&xs) * ic.p_pi() * &stacked;
    assert!((&lc - full).amax() < 1e-10);
    for _ in 0..20 {
        let dy = DVector::from_fn(2 * n, |_, _| rng.gen_range(-1.0..1.0));
        let du = -(ic.c() * &dy);
        let lhs = (dy.transpose() * &lc * &dy)[0];
        let rhs: f64 = (0..n)
            .map(|i| {
                let w = DVector::from_vec(vec![du[2 * i], du[2 * i + 1], dy[2 * i], dy[2 * i + 1]]);
                (w.transpose() * &xs[i] * &w)[0]
            })
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
    let scaled: Vec<DMatrix<f64>> = xs.iter().map(|x| x * 3.0).collect();
    let l1 = lambda_max(&lc);
    let l3 = lambda_max(&assemble_lc(&ic, &scaled).unwrap());
    assert!((l3 - 3.0 * l1).abs() < 1e-9);
}

fn single_bus_verdict(a: f64) -> bool {
    let dev = DeviceModel::linear(eye(2) * a, eye(2), eye(2), DMatrix::zeros(2, 2)).unwrap();
    let set = LocalLmiSet::build("lin", &dev, vec![SamplePoint::new(vec![0.0, 0.0], [0.0, 0.0])], 1e-4).unwrap();
    let ic = build_interconnection(&DMatrix::zeros(2, 2), &[VI]).unwrap();
    verify_coupling_centralized(&ic, &[LocalConstraint::Sampled(set)], &CouplingOptions::default())
        .unwrap()
        .feasible
}

/// Grid search over `P = pI`, `X = [[qI, sI], [sI, rI]]` with `r < 0`.
fn single_bus_brute(a: f64) -> bool {
    let dev = DeviceModel::linear(eye(2) * a, eye(2), eye(2), DMatrix::zeros(2, 2)).unwrap();
    let j = dev.eval_jacobians(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
    let vals = [-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0];
    for p in [0.1, 0.5, 1.0, 2.0] {
        for q in vals {
            for s in vals {
                for r in vals.iter().filter(|r| **r < 0.0) {
                    let x = crate::dissipativity::SupplyRateMatrix::from_blocks(&(eye(2) * q), &(eye(2) * s), &(eye(2) * *r)).unwrap();
                    let lhs = crate::dissipativity::lmi_lhs_dynamic(&j, &(eye(2) * p), x.matrix(), 1e-4);
                    if lambda_max(&lhs) < 0.0 {
                        return true;
                    }
                }
            }
        }
    }
    false
}

#[test]
fn single_bus_verdict_matches_brute_force() {
    for a in [-1.0, 1.0] {
        assert_eq!(single_bus_verdict(a), single_bus_brute(a), "a = {a}");
    }
    assert!(single_bus_verdict(-1.0));
}

/// Bus 0: current-in resistor `V = -r I`; bus 1: voltage-in conductance `I = -g V`.
fn two_bus_verdict(g: f64) -> bool {
    let r0 = DeviceModel::new(
        crate::devices::DeviceParams::Linear(crate::devices::LinearParams {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, 2),
            c: DMatrix::zeros(2, 0),
            d: eye(2),
        }),
        CI,
    )
    .unwrap();
    let g1 = DeviceModel::linear(DMatrix::zeros(0, 0), DMatrix::zeros(0, 2), DMatrix::zeros(2, 0), eye(2) * g).unwrap();
    let pt = vec![SamplePoint::new(vec![], [1.0, 0.0])];
    let locals = vec![
        LocalConstraint::Sampled(LocalLmiSet::build("r", &r0, pt.clone(), 0.0).unwrap()),
        LocalConstraint::Sampled(LocalLmiSet::build("g", &g1, pt, 0.0).unwrap()),
    ];
    let y = build_admittance(&[LineData::new(0, 1, 1.0, 0.0, 0.0)], 2).unwrap();
    let ic = build_interconnection(&y, &[CI, VI]).unwrap();
    verify_coupling_centralized(&ic, &locals, &CouplingOptions::default()).unwrap().feasible
}

#[test]
fn passive_pair_is_feasible_and_resonant_pair_is_not() {
    // with r = 1 and a unit line the loop has a nonzero solution when g = -0.5
    assert!(two_bus_verdict(0.5));
    assert!(!two_bus_verdict(-0.5));
}

#[test]
fn off_nominal_tap_matches_complex_branch_model() {
    use nalgebra::Complex;
    let (r, x, b, t) = (0.02, 0.25, 0.1, 0.95);
    let y = build_admittance(&[LineData::new(0, 1, r, x, b).with_tap(t)], 2).unwrap();
    let ys = Complex::new(1.0, 0.0) / Complex::new(r, x);
    let sh = Complex::new(0.0, b / 2.0);
    let expect = [
        [(ys + sh) / (t * t), -ys / t],
        [-ys / t, ys + sh],
    ];
    for i in 0..2 {
        for j in 0..2 {
            let c = expect[i][j];
            let blk = y.view((2 * i, 2 * j), (2, 2));
            assert!((blk[(0, 0)] - c.re).abs() < 1e-12 && (blk[(1, 1)] - c.re).abs() < 1e-12);
            assert!((blk[(1, 0)] - c.im).abs() < 1e-12 && (blk[(0, 1)] + c.im).abs() < 1e-12);
        }
    }
    assert!(build_admittance(&[LineData::new(0, 1, r, x, b).with_tap(0.0)], 2).is_err());
}
