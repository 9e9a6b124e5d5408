//! Distributed verification of the coupling inequality.
//!
//! Agents (one per bus) solve relaxed local problems for `X_i`; a coordinator
//! projects onto the coupling constraint, updates duals and the penalty, and
//! tries to rescale the current local iterates so that they already satisfy
//! the coupling inequality (the p-check).

mod agent;
mod pcheck;
mod zupdate;

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dissipativity::{DissipativityCertificate, LocalLmiSet, StorageMatrix, SupplyRateMatrix, VerifyOptions};
use crate::error::{Error, Result};
use crate::interconnect::{assemble_lc, Interconnection};
use crate::linalg::{asymmetry, lambda_max};

pub use agent::{from_sym4, to_sym4, AgentMessage, BusAgent, CoordinatorMessage, Sym4};
pub use pcheck::{p_check, PCheckOptions, PCheckResult};
pub use zupdate::{CouplingProjector, ProjectionStats, ProjectorOptions};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    /// Guard on `t_i` before the p-check and pass margin of the p-check.
    pub epsilon: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub mu: f64,
    pub tau_incr: f64,
    pub tau_decr: f64,
    pub t_bar: f64,
    pub max_iter: usize,
    pub rho_init: f64,
    /// Initial value of every `X_i`, `Z_i` and `Y_i` (a multiple of the identity).
    pub init_scale: f64,
    /// Disabling the p-check leaves residual-based termination only.
    pub pcheck: bool,
    pub history_len: usize,
    pub local: VerifyOptions,
    pub projector: ProjectorOptions,
    pub pcheck_opts: PCheckOptions,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            eps_pri: 0.0042,
            eps_dual: 0.0042,
            mu: 10.0,
            tau_incr: 2.0,
            tau_decr: 2.0,
            t_bar: 1e-2,
            max_iter: 1000,
            rho_init: 1.0,
            init_scale: 0.0,
            pcheck: true,
            history_len: 64,
            local: VerifyOptions::default(),
            projector: ProjectorOptions::default(),
            pcheck_opts: PCheckOptions::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("epsilon", self.epsilon),
            ("eps_pri", self.eps_pri),
            ("eps_dual", self.eps_dual),
            ("t_bar", self.t_bar),
            ("rho_init", self.rho_init),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be positive and finite"));
            }
        }
        for (name, v) in [("mu", self.mu), ("tau_incr", self.tau_incr), ("tau_decr", self.tau_decr)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be > 1"));
            }
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter", "must be at least 1"));
        }
        if !self.init_scale.is_finite() {
            return Err(Error::validation("init_scale", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEvent {
    None,
    PcheckFail,
    PcheckPass,
    ResidualConverged,
    MaxIter,
}

impl TraceEvent {
    pub fn name(self) -> &'static str {
        match self {
            TraceEvent::None => "none",
            TraceEvent::PcheckFail => "pcheck_fail",
            TraceEvent::PcheckPass => "pcheck_pass",
            TraceEvent::ResidualConverged => "residual_converged",
            TraceEvent::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub min_t: f64,
    /// Not computed on the iteration that ends with a passed p-check (`NaN`).
    pub r_norm: f64,
    pub s_norm: f64,
    pub rho: f64,
    pub pcheck_tz: Option<f64>,
    pub event: TraceEvent,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub k: usize,
    pub xs: Vec<DMatrix<f64>>,
    pub zs: Vec<DMatrix<f64>>,
    pub ys: Vec<DMatrix<f64>>,
    pub ps: Vec<Option<DMatrix<f64>>>,
    pub ts: Vec<f64>,
    pub rho: f64,
    pub r_norm: f64,
    pub s_norm: f64,
    /// Most recent trace records, oldest first.
    pub history: VecDeque<TraceRecord>,
    history_len: usize,
}

impl AdmmState {
    pub fn new(n: usize, cfg: &AdmmConfig) -> Self {
        let init = DMatrix::identity(4, 4) * cfg.init_scale;
        Self {
            k: 0,
            xs: vec![init.clone(); n],
            zs: vec![init.clone(); n],
            ys: vec![init; n],
            ps: vec![None; n],
            ts: vec![f64::NEG_INFINITY; n],
            rho: cfg.rho_init,
            r_norm: f64::INFINITY,
            s_norm: f64::INFINITY,
            history: VecDeque::new(),
            history_len: cfg.history_len.max(1),
        }
    }

    pub fn min_t(&self) -> f64 {
        self.ts.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn record(&mut self, r: TraceRecord) {
        if self.history.len() == self.history_len {
            self.history.pop_front();
        }
        self.history.push_back(r);
    }

    /// Largest asymmetry over all iterates.
    pub fn max_asymmetry(&self) -> f64 {
        self.xs
            .iter()
            .chain(&self.zs)
            .chain(&self.ys)
            .map(asymmetry)
            .fold(0.0, f64::max)
    }
}

/// `Y_i + rho (X_i - Z_i)`.
pub fn y_update(ys: &[DMatrix<f64>], xs: &[DMatrix<f64>], zs: &[DMatrix<f64>], rho: f64) -> Vec<DMatrix<f64>> {
    ys.iter()
        .zip(xs)
        .zip(zs)
        .map(|((y, x), z)| y + (x - z) * rho)
        .collect()
}

fn stacked_norm(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>().sqrt()
}

/// Primal and dual residual norms.
pub fn residuals(xs: &[DMatrix<f64>], z_new: &[DMatrix<f64>], z_old: &[DMatrix<f64>], rho: f64) -> (f64, f64) {
    (stacked_norm(xs, z_new), rho * stacked_norm(z_new, z_old))
}

pub fn rho_update(rho: f64, r_norm: f64, s_norm: f64, mu: f64, tau_incr: f64, tau_decr: f64) -> f64 {
    if r_norm > mu * s_norm {
        rho * tau_incr
    } else if s_norm > mu * r_norm {
        rho / tau_decr
    } else {
        rho
    }
}

/// One-shot coordinator step; `run` keeps a warm-started projector instead.
pub fn z_update(ic: &Interconnection, xs: &[DMatrix<f64>], ys: &[DMatrix<f64>], rho: f64) -> Vec<DMatrix<f64>> {
    let mut proj = CouplingProjector::new(ic, ProjectorOptions::default());
    let v: Vec<DMatrix<f64>> = xs.iter().zip(ys).map(|(x, y)| x + y / rho).collect();
    proj.project(&v).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmmOutcome {
    PcheckPass,
    ResidualConverged,
    MaxIter,
}

impl AdmmOutcome {
    pub fn name(self) -> &'static str {
        match self {
            AdmmOutcome::PcheckPass => "pcheck_pass",
            AdmmOutcome::ResidualConverged => "residual_converged",
            AdmmOutcome::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub outcome: AdmmOutcome,
    /// True on a passed p-check, or on residual convergence with every `t_i > 0`.
    pub coupling_verified: bool,
    pub iterations: usize,
    pub elapsed_secs: f64,
    /// Final local supply rates; weighted by `p_i` on a passed p-check.
    pub xs: Vec<Sym4>,
    pub ps: Vec<Option<Vec<Vec<f64>>>>,
    pub weights: Option<Vec<f64>>,
    pub ts: Vec<f64>,
    pub r_norm: f64,
    pub s_norm: f64,
    pub rho: f64,
    /// Worst local margin per bus recomputed for the reported `(P_i, X_i)` over every sample.
    pub local_margins: Vec<f64>,
    /// `lambda_max(l^c)` of the reported `X_i`.
    pub lambda_max_lc: f64,
    /// `lambda_max(l^c)` of the last coordinator iterate.
    pub lambda_max_lc_z: f64,
    pub trace: Vec<TraceRecord>,
}

impl VerificationReport {
    pub fn x_matrices(&self) -> Vec<DMatrix<f64>> {
        self.xs.iter().map(from_sym4).collect()
    }

    /// Certificates for the reported iterates (storage and `epsilon` scaled with the weights).
    pub fn certificates(&self, sets: &[LocalLmiSet]) -> Result<Vec<DissipativityCertificate>> {
        sets.iter()
            .enumerate()
            .map(|(i, s)| {
                let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
                let p = match &self.ps[i] {
                    Some(rows) => Some(StorageMatrix::new(
                        crate::linalg::from_rows(rows).ok_or_else(|| Error::Dimension("storage rows".into()))?,
                    )?),
                    None => None,
                };
                let x = SupplyRateMatrix::new(from_sym4(&self.xs[i]))?;
                let mut scaled = s.clone();
                scaled.epsilon = s.epsilon * w;
                Ok(DissipativityCertificate {
                    device: s.device.clone(),
                    sample_margins: scaled.point_margins(p.as_ref().map(|p| p.matrix()), x.matrix()),
                    p,
                    x,
                    epsilon: scaled.epsilon,
                })
            })
            .collect()
    }

    pub fn write_trace_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "k,min_t,r_norm,s_norm,rho,event")?;
        for r in &self.trace {
            writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{}",
                r.k,
                r.min_t,
                r.r_norm,
                r.s_norm,
                r.rho,
                r.event.name()
            )?;
        }
        Ok(())
    }
}

/// Runs the distributed scheme until a passed p-check, residual convergence
/// or the iteration limit.
pub fn run(cfg: &AdmmConfig, ic: &Interconnection, sets: Vec<LocalLmiSet>) -> Result<VerificationReport> {
    cfg.validate()?;
    let n = ic.n();
    if sets.len() != n {
        return Err(Error::Dimension(format!("{} local sets for {n} buses", sets.len())));
    }
    let start = Instant::now();
    let mut agents: Vec<BusAgent> = sets
        .into_iter()
        .enumerate()
        .map(|(i, s)| BusAgent::new(i, s, cfg.local.clone()))
        .collect();
    let mut projector = CouplingProjector::new(ic, cfg.projector.clone());
    let mut state = AdmmState::new(n, cfg);
    let mut trace = Vec::new();
    let mut warm_p: Option<Vec<f64>> = None;
    let mut last_lc_z = f64::NAN;

    for k in 1..=cfg.max_iter {
        state.k = k;
        let msgs: Vec<CoordinatorMessage> = (0..n)
            .map(|i| CoordinatorMessage {
                bus: i,
                z: to_sym4(&state.zs[i]),
                y: to_sym4(&state.ys[i]),
                rho: state.rho,
                t_bar: cfg.t_bar,
            })
            .collect();
        let replies: Vec<Result<AgentMessage>> = agents
            .par_iter_mut()
            .zip(msgs.par_iter())
            .map(|(a, m)| a.x_update(m))
            .collect();
        for r in replies {
            let r = r?;
            state.xs[r.bus] = from_sym4(&r.x);
            state.ps[r.bus] = r.p.as_ref().and_then(|rows| crate::linalg::from_rows(rows));
            state.ts[r.bus] = r.t;
        }
        let min_t = state.min_t();

        let mut pcheck_tz = None;
        if cfg.pcheck && state.ts.iter().all(|t| *t > cfg.epsilon) {
            let pc = p_check(ic, &state.xs, cfg.epsilon, warm_p.as_deref(), &cfg.pcheck_opts)?;
            pcheck_tz = Some(pc.t_z);
            if pc.passed {
                let rec = TraceRecord {
                    k,
                    min_t,
                    r_norm: f64::NAN,
                    s_norm: f64::NAN,
                    rho: state.rho,
                    pcheck_tz,
                    event: TraceEvent::PcheckPass,
                };
                state.record(rec.clone());
                trace.push(rec);
                let xs: Vec<DMatrix<f64>> = state.xs.iter().zip(&pc.p).map(|(x, w)| x * *w).collect();
                let ps: Vec<Option<DMatrix<f64>>> =
                    state.ps.iter().zip(&pc.p).map(|(p, w)| p.as_ref().map(|p| p * *w)).collect();
                let local_margins = agents
                    .iter()
                    .enumerate()
                    .map(|(i, a)| pc.p[i] * a.set.max_margin(state.ps[i].as_ref(), &state.xs[i]))
                    .collect();
                return Ok(VerificationReport {
                    outcome: AdmmOutcome::PcheckPass,
                    coupling_verified: true,
                    iterations: k,
                    elapsed_secs: start.elapsed().as_secs_f64(),
                    lambda_max_lc: lambda_max(&assemble_lc(ic, &xs)?),
                    lambda_max_lc_z: last_lc_z,
                    xs: xs.iter().map(to_sym4).collect(),
                    ps: ps.iter().map(|p| p.as_ref().map(crate::linalg::to_rows)).collect(),
                    weights: Some(pc.p),
                    ts: state.ts.clone(),
                    r_norm: state.r_norm,
                    s_norm: state.s_norm,
                    rho: state.rho,
                    local_margins,
                    trace,
                });
            }
            warm_p = Some(pc.p);
        }

        let v: Vec<DMatrix<f64>> = state.xs.iter().zip(&state.ys).map(|(x, y)| x + y / state.rho).collect();
        let (z_new, stats) = projector.project(&v);
        last_lc_z = stats.lambda_max_lc;
        state.ys = y_update(&state.ys, &state.xs, &z_new, state.rho);
        let (r, s) = residuals(&state.xs, &z_new, &state.zs, state.rho);
        state.zs = z_new;
        state.r_norm = r;
        state.s_norm = s;
        let converged = r < cfg.eps_pri && s < cfg.eps_dual;
        let event = if converged {
            TraceEvent::ResidualConverged
        } else if k == cfg.max_iter {
            TraceEvent::MaxIter
        } else if pcheck_tz.is_some() {
            TraceEvent::PcheckFail
        } else {
            TraceEvent::None
        };
        let rec = TraceRecord {
            k,
            min_t,
            r_norm: r,
            s_norm: s,
            rho: state.rho,
            pcheck_tz,
            event,
        };
        log::debug!(
            "admm k={k} min_t={min_t:.3e} r={r:.3e} s={s:.3e} rho={:.3e} inner={} event={}",
            state.rho,
            stats.inner_iterations,
            event.name()
        );
        state.record(rec.clone());
        trace.push(rec);
        if converged || k == cfg.max_iter {
            let outcome = if converged { AdmmOutcome::ResidualConverged } else { AdmmOutcome::MaxIter };
            return Ok(VerificationReport {
                outcome,
                coupling_verified: converged && min_t > 0.0,
                iterations: k,
                elapsed_secs: start.elapsed().as_secs_f64(),
                local_margins: agents.iter().enumerate().map(|(i, a)| a.set.max_margin(state.ps[i].as_ref(), &state.xs[i])).collect(),
                lambda_max_lc: lambda_max(&assemble_lc(ic, &state.xs)?),
                lambda_max_lc_z: last_lc_z,
                xs: state.xs.iter().map(to_sym4).collect(),
                ps: state.ps.iter().map(|p| p.as_ref().map(crate::linalg::to_rows)).collect(),
                weights: None,
                ts: state.ts.clone(),
                r_norm: r,
                s_norm: s,
                rho: state.rho,
                trace,
            });
        }
        state.rho = rho_update(state.rho, r, s, cfg.mu, cfg.tau_incr, cfg.tau_decr);
    }
    unreachable!("loop returns on the last iteration")
}

#[cfg(test)]
mod tests;
