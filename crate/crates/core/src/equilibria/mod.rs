//! Equilibria of a network case, their small-signal spectrum, certified-region
//! assessment, load-scaling scans and time-domain simulation.

mod case;
mod certify;
mod scan;
mod simulate;
mod system;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::devices::{PortRole, StateClass};
use crate::dissipativity::{membership, DissipativeRegion, Membership, SampleBox, SamplePoint};
use crate::error::{Error, Result};
use crate::linalg::wrap_angle;

pub use case::{nominal_state, CaseBus, NetworkCase};
pub use certify::{anchor_samples, certify_case, certify_case_admm, device_boxes, local_constraints, CaseCertificate, CertifySpec, CouplingSolution};
pub use scan::{scan_loading, DeviceInterval, ScanOptions, ScanPoint, ScanResult};
pub use simulate::{dissipation_samples, simulate, DissipationSample, Event, SimulationOptions, Trajectory};
pub use system::{newton, BalanceTarget, NetworkSystem, NewtonReport};

pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_TOL: f64 = 1e-8;
/// Eigenvalues with modulus at or below this are reported as near-zero modes.
pub const NEAR_ZERO: f64 = 1e-6;

/// Operating point of one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusPoint {
    pub id: usize,
    pub x: Vec<f64>,
    pub u: [f64; 2],
    pub y: [f64; 2],
}

impl BusPoint {
    pub fn sample(&self) -> SamplePoint {
        SamplePoint::new(self.x.clone(), self.u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub id: usize,
    pub buses: Vec<BusPoint>,
    /// Bus voltages in the common DQ frame.
    pub voltages: Vec<[f64; 2]>,
    /// `max_i ||f_i(x_i, u_i)||_inf`, recomputed from the device models.
    pub dynamic_residual: f64,
    /// `||u + C y||_inf`, recomputed through the interconnection.
    pub network_residual: f64,
    pub iterations: usize,
    /// `(P^m, E_f)` of the balance generator when it was adjusted.
    #[serde(default)]
    pub balance: Option<[f64; 2]>,
}

impl Equilibrium {
    /// Stacked dynamic states in bus order.
    pub fn states(&self) -> Vec<f64> {
        self.buses.iter().flat_map(|b| b.x.iter().copied()).collect()
    }

    /// Newton unknowns `(x, V)`.
    pub fn unknowns(&self) -> Vec<f64> {
        let mut w = self.states();
        w.extend(self.voltages.iter().flat_map(|v| v.iter().copied()));
        w
    }
}

#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Converged(Equilibrium),
    NoConvergence { iterations: usize, residual: f64 },
}

impl SolveOutcome {
    pub fn equilibrium(self) -> Option<Equilibrium> {
        match self {
            SolveOutcome::Converged(e) => Some(e),
            SolveOutcome::NoConvergence { .. } => None,
        }
    }
}

/// States from the device nominal values and a flat `1 + j0` voltage profile.
pub fn flat_start(case: &NetworkCase) -> Vec<f64> {
    let mut w: Vec<f64> = case.buses.iter().flat_map(|b| nominal_state(&b.model)).collect();
    for _ in 0..case.n() {
        w.extend([1.0, 0.0]);
    }
    w
}

/// Flat voltages with the given stacked states.
pub fn guess_from_states(case: &NetworkCase, states: &[f64]) -> Result<Vec<f64>> {
    if states.len() != case.total_states() {
        return Err(Error::Dimension(format!(
            "{} states given, case has {}",
            states.len(),
            case.total_states()
        )));
    }
    let mut w = states.to_vec();
    for _ in 0..case.n() {
        w.extend([1.0, 0.0]);
    }
    Ok(w)
}

/// Packs a converged Newton point and re-checks both residuals from scratch.
pub(crate) fn package(case: &NetworkCase, sys: &NetworkSystem, w: &[f64], iterations: usize) -> Result<Equilibrium> {
    let nx = sys.num_states();
    let n = case.n();
    let v = &w[nx..nx + 2 * n];
    let mut models = sys.models().to_vec();
    let balance = sys.balance.map(|_| [w[nx + 2 * n], w[nx + 2 * n + 1]]);
    if balance.is_some() {
        let mut s = sys.clone();
        s.set_balance_params(w[nx + 2 * n], w[nx + 2 * n + 1]);
        models = s.models().to_vec();
    }
    let u = sys.inputs(v);
    let mut buses = Vec::with_capacity(n);
    let mut dyn_res: f64 = 0.0;
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        let x = w[sys.state_range(k)].to_vec();
        let f = models[k].eval_dynamics(&x, &u[k])?;
        dyn_res = f.iter().fold(dyn_res, |a, b| a.max(b.abs()));
        let y = models[k].eval_output(&x, &u[k])?;
        ys.push(y);
        buses.push(BusPoint {
            id: case.buses[k].id,
            x,
            u: u[k],
            y,
        });
    }
    let mut probe = case.clone();
    for (k, m) in models.iter().enumerate() {
        probe.set_model(k, m.clone());
    }
    let network_residual = match probe.interconnection() {
        Ok(ic) => ic.consistency_residual(&u, &ys),
        // no hybrid form (e.g. a floating voltage-in cluster): fall back to KCL
        Err(_) => {
            let cur = sys.currents(v);
            (0..n)
                .map(|k| {
                    let (vk, ik) = models[k].port_quantities(&u[k], &ys[k]);
                    (vk.d - v[2 * k]).abs().max((vk.q - v[2 * k + 1]).abs()).max((ik.d - cur[k][0]).abs()).max((ik.q - cur[k][1]).abs())
                })
                .fold(0.0, f64::max)
        }
    };
    Ok(Equilibrium {
        id: 0,
        buses,
        voltages: (0..n).map(|k| [v[2 * k], v[2 * k + 1]]).collect(),
        dynamic_residual: dyn_res,
        network_residual,
        iterations,
        balance,
    })
}

fn solve_system(case: &NetworkCase, sys: &NetworkSystem, guess: &[f64]) -> Result<SolveOutcome> {
    if guess.len() != sys.dim() {
        return Err(Error::Dimension(format!("guess has {} entries, expected {}", guess.len(), sys.dim())));
    }
    let rep = newton(sys, guess, NEWTON_MAX_ITER, NEWTON_TOL);
    if !rep.converged {
        return Ok(SolveOutcome::NoConvergence {
            iterations: rep.iterations,
            residual: rep.residual,
        });
    }
    let mut eq = package(case, sys, &rep.w, rep.iterations)?;
    wrap_periodic(case, &mut eq);
    if eq.dynamic_residual > NEWTON_TOL || eq.network_residual > NEWTON_TOL {
        return Ok(SolveOutcome::NoConvergence {
            iterations: rep.iterations,
            residual: eq.dynamic_residual.max(eq.network_residual),
        });
    }
    Ok(SolveOutcome::Converged(eq))
}

/// Damped Newton from `guess = (x, V)`. Failure to converge is an outcome, not an error.
pub fn solve_equilibrium(case: &NetworkCase, guess: &[f64]) -> Result<SolveOutcome> {
    let sys = NetworkSystem::new(case)?;
    solve_system(case, &sys, guess)
}

/// States whose value only matters modulo `2 pi`: generator rotor and PLL angles.
pub fn periodic_states(case: &NetworkCase) -> Vec<bool> {
    use crate::devices::DeviceKind;
    case.buses
        .iter()
        .flat_map(|b| {
            let k = b.model.kind();
            b.model
                .state_classes()
                .into_iter()
                .map(move |c| c == StateClass::Angle && matches!(k, DeviceKind::SG3 | DeviceKind::PLL))
        })
        .collect()
}

fn wrap_periodic(case: &NetworkCase, eq: &mut Equilibrium) {
    for b in eq.buses.iter_mut() {
        let i = case.index_of(b.id).expect("ids come from the case");
        let m = &case.buses[i].model;
        for (j, c) in m.state_classes().iter().enumerate() {
            if *c == StateClass::Angle && matches!(m.kind(), crate::devices::DeviceKind::SG3 | crate::devices::DeviceKind::PLL) {
                b.x[j] = wrap_angle(b.x[j]);
            }
        }
    }
}

/// Distance between two equilibria in the stacked states, wrapping periodic angles.
pub fn state_distance(case: &NetworkCase, a: &Equilibrium, b: &Equilibrium) -> f64 {
    let per = periodic_states(case);
    a.states()
        .iter()
        .zip(b.states())
        .zip(per)
        .map(|((x, y), p)| if p { wrap_angle(x - y).abs() } else { (x - y).abs() })
        .fold(0.0, f64::max)
}

pub const DEDUP_THRESHOLD: f64 = 1e-3;

/// Random start: angles uniform on `(-pi, pi]`, voltage magnitudes on
/// `[0.5, 1.5]`, other states within 50% of nominal.
fn random_start(case: &NetworkCase, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut w = Vec::with_capacity(case.total_states() + 2 * case.n());
    for b in &case.buses {
        let nom = nominal_state(&b.model);
        for (v, c) in nom.iter().zip(b.model.state_classes()) {
            w.push(match c {
                StateClass::Angle => std::f64::consts::PI - rng.gen::<f64>() * std::f64::consts::TAU,
                StateClass::Magnitude => rng.gen_range(0.5..=1.5),
                _ => v * (1.0 + rng.gen_range(-0.5..=0.5)),
            });
        }
    }
    for _ in 0..case.n() {
        let mag = rng.gen_range(0.5..=1.5);
        let ang = std::f64::consts::PI - rng.gen::<f64>() * std::f64::consts::TAU;
        w.extend([mag * ang.cos(), mag * ang.sin()]);
    }
    w
}

/// Newton on the voltages alone with the states held fixed.
fn settle_voltages(sys: &NetworkSystem, w: &[f64]) -> Vec<f64> {
    let nx = sys.num_states();
    let nv = 2 * sys.num_buses();
    let x = w[..nx].to_vec();
    let res = |v: &[f64]| {
        let mut full = x.clone();
        full.extend_from_slice(v);
        sys.residual(&full).map(|r| r.rows(nx, nv).into_owned())
    };
    let jac = |v: &[f64]| {
        let mut full = x.clone();
        full.extend_from_slice(v);
        sys.jacobian(&full).map(|j| j.view((nx, nx), (nv, nv)).into_owned())
    };
    let rep = system::newton_with(&w[nx..nx + nv], 30, NEWTON_TOL, res, jac);
    let mut out = x;
    out.extend(rep.w);
    out
}

/// Solves from `n_starts` random guesses and keeps distinct results in
/// discovery order. Deterministic for a given seed.
pub fn multistart_equilibria(case: &NetworkCase, n_starts: usize, seed: u64) -> Result<Vec<Equilibrium>> {
    let sys = NetworkSystem::new(case)?;
    let found: Vec<Option<Equilibrium>> = (0..n_starts)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64));
            let start = settle_voltages(&sys, &random_start(case, &mut rng));
            solve_system(case, &sys, &start).ok().and_then(SolveOutcome::equilibrium)
        })
        .collect();
    let mut out: Vec<Equilibrium> = Vec::new();
    for eq in found.into_iter().flatten() {
        if out.iter().all(|e| state_distance(case, e, &eq) > DEDUP_THRESHOLD) {
            out.push(eq);
        }
    }
    for (k, e) in out.iter_mut().enumerate() {
        e.id = k + 1;
    }
    Ok(out)
}

/// Reduced state matrix `f_x - f_V g_V^{-1} g_x` at an equilibrium.
pub fn linearize(case: &NetworkCase, eq: &Equilibrium) -> Result<DMatrix<f64>> {
    let sys = NetworkSystem::new(case)?;
    let mut sys = sys;
    if let Some([pm, ef]) = eq.balance {
        if let Some(b) = case.balance_bus.and_then(|b| case.index_of(b)) {
            sys.balance = Some(BalanceTarget { bus: b, v_mag: 0.0, v_angle: 0.0 });
            sys.set_balance_params(pm, ef);
            sys.balance = None;
        }
    }
    linearize_system(&sys, &eq.unknowns())
}

pub(crate) fn linearize_system(sys: &NetworkSystem, w: &[f64]) -> Result<DMatrix<f64>> {
    let nx = sys.num_states();
    let nv = 2 * sys.num_buses();
    let j = sys.jacobian(&w[..nx + nv])?;
    let fx = j.view((0, 0), (nx, nx)).into_owned();
    let fv = j.view((0, nx), (nx, nv)).into_owned();
    let gx = j.view((nx, 0), (nv, nx)).into_owned();
    let gv = j.view((nx, nx), (nv, nv)).into_owned();
    let sv = gv.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(Error::Structural(format!(
            "algebraic Jacobian is singular (sigma_min {smin:.3e}, sigma_max {smax:.3e}, condition {:.3e})",
            smax / smin
        )));
    }
    let sol = gv
        .lu()
        .solve(&gx)
        .ok_or_else(|| Error::Structural("algebraic Jacobian is singular".into()))?;
    Ok(fx - fv * sol)
}

pub fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    m.clone().complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// `(re, im)` pairs.
    pub eigenvalues: Vec<[f64; 2]>,
    pub max_real: f64,
    pub near_zero: usize,
}

pub fn spectral_summary(m: &DMatrix<f64>) -> SpectralSummary {
    let ev: Vec<Complex<f64>> = if m.is_empty() {
        Vec::new()
    } else {
        m.clone().complex_eigenvalues().iter().copied().collect()
    };
    // near-zero modes are kept out of the maximum so they are never silently classified
    let near_zero = ev.iter().filter(|c| c.norm() <= NEAR_ZERO).count();
    let max_real = ev
        .iter()
        .filter(|c| c.norm() > NEAR_ZERO)
        .map(|c| c.re)
        .fold(f64::NEG_INFINITY, f64::max);
    SpectralSummary {
        eigenvalues: ev.iter().map(|c| [c.re, c.im]).collect(),
        max_real,
        near_zero,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CertifiedStable,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::CertifiedStable => "certified_stable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusMembership {
    pub id: usize,
    /// `None` when the bus has no region.
    pub membership: Option<Membership>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Assessment {
    pub verdict: Verdict,
    pub buses: Vec<BusMembership>,
}

/// Shifts angle coordinates by multiples of `2 pi` towards the box centre.
/// The device Jacobians are `2 pi`-periodic in every angle state, so the
/// certificate margin is unchanged by the shift.
pub fn align_angles(classes: &[StateClass], coords: &[f64], bbox: &SampleBox) -> Vec<f64> {
    let center = bbox.center();
    coords
        .iter()
        .enumerate()
        .map(|(a, v)| {
            if a < classes.len() && classes[a] == StateClass::Angle {
                center[a] + wrap_angle(v - center[a])
            } else {
                *v
            }
        })
        .collect()
}

/// `certified_stable` iff every dynamic bus lies in a certified cell of its
/// region; otherwise `inconclusive`. Never reports instability.
pub fn assess_equilibrium(case: &NetworkCase, eq: &Equilibrium, regions: &[Option<DissipativeRegion>]) -> Result<Assessment> {
    if regions.len() != case.n() || eq.buses.len() != case.n() {
        return Err(Error::Dimension(format!(
            "{} regions and {} bus points for {} buses",
            regions.len(),
            eq.buses.len(),
            case.n()
        )));
    }
    let mut all = true;
    let mut buses = Vec::with_capacity(case.n());
    for (k, (bp, reg)) in eq.buses.iter().zip(regions).enumerate() {
        let model = &case.buses[k].model;
        if model.is_static() {
            buses.push(BusMembership { id: bp.id, membership: None });
            continue;
        }
        let m = reg.as_ref().map(|r| {
            let c = align_angles(&model.state_classes(), &bp.sample().coords(), &r.bbox);
            membership(r, &SamplePoint::from_coords(&c))
        });
        all &= m == Some(Membership::Certified);
        buses.push(BusMembership { id: bp.id, membership: m });
    }
    Ok(Assessment {
        verdict: if all { Verdict::CertifiedStable } else { Verdict::Inconclusive },
        buses,
    })
}

/// Per-bus port roles, used by exports.
pub fn roles(case: &NetworkCase) -> Vec<PortRole> {
    case.buses.iter().map(|b| b.model.port_role()).collect()
}

#[cfg(test)]
mod tests;
