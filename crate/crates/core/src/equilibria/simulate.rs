//! Implicit trapezoidal integration of the network DAE with a Newton solve per step.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::case::NetworkCase;
use super::system::{newton_with, NetworkSystem};
use super::NEWTON_TOL;
use crate::devices::StateClass;
use crate::dissipativity::{DissipativityCertificate, SupplyRateMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    /// Sets the load scaling factor.
    LoadScale { t: f64, s: f64 },
    /// Adds `delta` to one state of the device on bus `bus` (an id).
    StatePerturbation { t: f64, bus: usize, state: usize, delta: f64 },
}

impl Event {
    pub fn time(&self) -> f64 {
        match self {
            Event::LoadScale { t, .. } | Event::StatePerturbation { t, .. } => *t,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub dt: f64,
    pub t_end: f64,
    /// Keep every `record_every`-th step (the last step is always kept).
    pub record_every: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            record_every: 1,
            newton_tol: NEWTON_TOL,
            newton_max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub bus_ids: Vec<usize>,
    pub t: Vec<f64>,
    /// Stacked states per recorded step.
    pub x: Vec<Vec<f64>>,
    /// Bus voltages `(v_d, v_q)` stacked per recorded step.
    pub v: Vec<Vec<f64>>,
    /// Load scaling in force per recorded step.
    pub scaling: Vec<f64>,
    /// Time of the step whose inner Newton failed.
    pub failed_at: Option<f64>,
    pub failure: Option<String>,
    /// Times at which events were applied; states may jump right after each.
    #[serde(default)]
    pub event_times: Vec<f64>,
}

impl Trajectory {
    pub fn last_states(&self) -> Option<&[f64]> {
        self.x.last().map(|v| v.as_slice())
    }

    /// Columns `t`, `V_<id>` per bus, then every frequency state as `<id>_<name>`.
    pub fn write_csv(&self, case: &NetworkCase, mut out: impl Write) -> std::io::Result<()> {
        let (offsets, _) = case.state_offsets();
        let mut freq = Vec::new();
        for (k, b) in case.buses.iter().enumerate() {
            for (j, (c, name)) in b.model.state_classes().iter().zip(b.model.state_names()).enumerate() {
                if *c == StateClass::Frequency {
                    freq.push((offsets[k] + j, format!("{}_{}", b.id, name)));
                }
            }
        }
        let mut header = vec!["t".to_string()];
        header.extend(self.bus_ids.iter().map(|id| format!("V_{id}")));
        header.extend(freq.iter().map(|(_, n)| n.clone()));
        writeln!(out, "{}", header.join(","))?;
        for s in 0..self.t.len() {
            let mut row = vec![format!("{}", self.t[s])];
            row.extend((0..self.bus_ids.len()).map(|k| format!("{:e}", self.v[s][2 * k].hypot(self.v[s][2 * k + 1]))));
            row.extend(freq.iter().map(|(i, _)| format!("{:e}", self.x[s][*i])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

struct Stepper {
    sys: NetworkSystem,
    nx: usize,
    nv: usize,
}

impl Stepper {
    fn new(case: &NetworkCase) -> Result<Self> {
        let sys = NetworkSystem::new(case)?;
        let nx = sys.num_states();
        let nv = 2 * sys.num_buses();
        Ok(Self { sys, nx, nv })
    }

    fn f(&self, w: &[f64]) -> Result<DVector<f64>> {
        self.sys.residual(w)
    }

    /// Residual of one trapezoidal step from `(w0, f0)`.
    fn step_residual(&self, w: &[f64], w0: &[f64], f0: &DVector<f64>, dt: f64) -> Result<DVector<f64>> {
        let r = self.f(w)?;
        let mut out = r.clone();
        for i in 0..self.nx {
            out[i] = w[i] - w0[i] - 0.5 * dt * (f0[i] + r[i]);
        }
        Ok(out)
    }

    fn step_jacobian(&self, w: &[f64], dt: f64) -> Result<DMatrix<f64>> {
        let mut j = self.sys.jacobian(w)?;
        for i in 0..self.nx {
            for c in 0..self.nx + self.nv {
                j[(i, c)] *= -0.5 * dt;
            }
            j[(i, i)] += 1.0;
        }
        Ok(j)
    }

    /// Algebraic variables for fixed states.
    fn settle(&self, w: &[f64], tol: f64) -> Option<Vec<f64>> {
        let x = w[..self.nx].to_vec();
        let full = |v: &[f64]| {
            let mut f = x.clone();
            f.extend_from_slice(v);
            f
        };
        let rep = newton_with(
            &w[self.nx..],
            50,
            tol,
            |v| self.sys.residual(&full(v)).map(|r| r.rows(self.nx, self.nv).into_owned()),
            |v| self.sys.jacobian(&full(v)).map(|j| j.view((self.nx, self.nx), (self.nv, self.nv)).into_owned()),
        );
        rep.converged.then(|| full(&rep.w))
    }
}

/// Integrates from `w_init = (x, V)` over `[0, t_end]`. A failed step ends the
/// run; the trajectory up to that point is returned with the failure time.
pub fn simulate(case: &NetworkCase, w_init: &[f64], events: &[Event], opts: &SimulationOptions) -> Result<Trajectory> {
    if !(opts.dt > 0.0 && opts.t_end >= 0.0) {
        return Err(Error::validation("dt", "needs dt > 0 and t_end >= 0"));
    }
    let mut case = case.clone();
    let mut st = Stepper::new(&case)?;
    if w_init.len() != st.nx + st.nv {
        return Err(Error::Dimension(format!("initial point has {} entries, expected {}", w_init.len(), st.nx + st.nv)));
    }
    let mut events: Vec<Event> = events.to_vec();
    events.sort_by(|a, b| a.time().total_cmp(&b.time()));
    let mut next_event = 0;
    let mut traj = Trajectory {
        bus_ids: case.ids(),
        t: Vec::new(),
        x: Vec::new(),
        v: Vec::new(),
        scaling: Vec::new(),
        failed_at: None,
        failure: None,
        event_times: Vec::new(),
    };
    let record = |traj: &mut Trajectory, t: f64, w: &[f64], s: f64, nx: usize| {
        traj.t.push(t);
        traj.x.push(w[..nx].to_vec());
        traj.v.push(w[nx..].to_vec());
        traj.scaling.push(s);
    };

    let mut w = match st.settle(w_init, opts.newton_tol) {
        Some(w) => w,
        None => {
            traj.failed_at = Some(0.0);
            traj.failure = Some("initial algebraic solve failed".into());
            return Ok(traj);
        }
    };
    record(&mut traj, 0.0, &w, case.scaling, st.nx);
    let steps = (opts.t_end / opts.dt).round() as usize;
    let mut lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>> = None;
    for k in 1..=steps {
        let t0 = (k - 1) as f64 * opts.dt;
        let t = k as f64 * opts.dt;
        // events fire at the start of the first step that begins at or after their time
        let mut changed = false;
        while next_event < events.len() && events[next_event].time() <= t0 + 1e-12 {
            match &events[next_event] {
                Event::LoadScale { s, .. } => {
                    case.scaling = *s;
                    st = Stepper::new(&case)?;
                }
                Event::StatePerturbation { bus, state, delta, .. } => {
                    let b = case.index_of(*bus).ok_or_else(|| Error::validation("events", format!("unknown bus id {bus}")))?;
                    let r = st.sys.state_range(b);
                    if *state >= r.len() {
                        return Err(Error::validation("events", format!("bus {bus} has no state {state}")));
                    }
                    w[r.start + state] += delta;
                }
            }
            next_event += 1;
            changed = true;
            traj.event_times.push(t0);
        }
        if changed {
            lu = None;
            match st.settle(&w, opts.newton_tol) {
                Some(ws) => w = ws,
                None => {
                    traj.failed_at = Some(t0);
                    traj.failure = Some(format!("algebraic re-solve failed after event at t = {t0}"));
                    return Ok(traj);
                }
            }
        }
        let f0 = st.f(&w)?;
        let mut wn = w.clone();
        let mut converged = false;
        // chord iterations with a stored factorization, refreshed once on slow convergence
        for attempt in 0..2 {
            if lu.is_none() || attempt == 1 {
                lu = Some(st.step_jacobian(&wn, opts.dt)?.lu());
            }
            let fac = lu.as_ref().expect("just set");
            let mut prev = f64::INFINITY;
            for _ in 0..opts.newton_max_iter {
                let r = st.step_residual(&wn, &w, &f0, opts.dt)?;
                let rn = r.amax();
                if rn <= opts.newton_tol {
                    converged = true;
                    break;
                }
                if !rn.is_finite() || (attempt == 0 && rn > 0.5 * prev && rn > 1e3 * opts.newton_tol) {
                    break;
                }
                prev = rn;
                match fac.solve(&(-r)) {
                    Some(d) => {
                        for (a, b) in wn.iter_mut().zip(d.iter()) {
                            *a += b;
                        }
                    }
                    None => break,
                }
            }
            if converged {
                break;
            }
            wn = w.clone();
        }
        if !converged {
            traj.failed_at = Some(t);
            traj.failure = Some(format!("inner Newton diverged at t = {t}"));
            return Ok(traj);
        }
        w = wn;
        if k % opts.record_every.max(1) == 0 || k == steps {
            record(&mut traj, t, &w, case.scaling, st.nx);
        }
    }
    Ok(traj)
}

/// One dissipation-inequality sample along a trajectory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DissipationSample {
    /// Index of the recorded step.
    pub step: usize,
    pub t: f64,
    /// `d/dt (f^T P f)` by central differences of the recorded trajectory.
    pub storage_rate: f64,
    /// `[u'; y']^T X [u'; y'] - eps ||f||^2` with `y' = C f + D u'`.
    pub bound: f64,
}

/// Evaluates the per-device dissipation inequality at interior recorded steps.
/// Steps whose difference window spans an event are skipped. `u'` comes from
/// central differences; `f` and the Jacobians from the device model.
pub fn dissipation_samples(
    case: &NetworkCase,
    traj: &Trajectory,
    bus: usize,
    cert: &DissipativityCertificate,
) -> Result<Vec<DissipationSample>> {
    let k = case.index_of(bus).ok_or_else(|| Error::validation("bus", format!("unknown bus id {bus}")))?;
    let st = Stepper::new(case)?;
    let r = st.sys.state_range(k);
    let model = &st.sys.models()[k];
    let p = cert
        .p
        .as_ref()
        .ok_or_else(|| Error::validation("certificate", "dynamic certificate needs a storage matrix"))?
        .matrix()
        .clone();
    let x: &SupplyRateMatrix = &cert.x;
    let at = |s: usize| -> Result<(DVector<f64>, [f64; 2])> {
        let u = st.sys.inputs(&traj.v[s])[k];
        let f = model.eval_dynamics(&traj.x[s][r.clone()], &u)?;
        Ok((DVector::from_column_slice(&f), u))
    };
    let mut out = Vec::new();
    for s in 1..traj.t.len().saturating_sub(1) {
        if traj.event_times.iter().any(|e| *e >= traj.t[s - 1] - 1e-12 && *e < traj.t[s + 1]) {
            continue;
        }
        let h = traj.t[s + 1] - traj.t[s - 1];
        let (fm, um) = at(s - 1)?;
        let (f0, u0) = at(s)?;
        let (fp, up) = at(s + 1)?;
        let storage = |f: &DVector<f64>| (f.transpose() * &p * f)[(0, 0)];
        let storage_rate = (storage(&fp) - storage(&fm)) / h;
        let du = DVector::from_vec(vec![(up[0] - um[0]) / h, (up[1] - um[1]) / h]);
        let j = model.eval_jacobians(&traj.x[s][r.clone()], &u0)?;
        let dy = &j.cm * &f0 + &j.dm * &du;
        let z = DVector::from_vec(vec![du[0], du[1], dy[0], dy[1]]);
        let supply = (z.transpose() * x.matrix() * &z)[(0, 0)];
        out.push(DissipationSample {
            step: s,
            t: traj.t[s],
            storage_rate,
            bound: supply - cert.epsilon * f0.norm_squared(),
        });
    }
    Ok(out)
}
