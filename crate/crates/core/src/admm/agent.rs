use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dissipativity::{LocalLmiSet, VerifyOptions};
use crate::error::{Error, Result};
use crate::sdp::{self, LmiProblem, SolveStatus};

/// Fixed-size symmetric payload exchanged between agents and the coordinator.
pub type Sym4 = [[f64; 4]; 4];

pub fn to_sym4(m: &DMatrix<f64>) -> Sym4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    out
}

pub fn from_sym4(s: &Sym4) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |i, j| s[i][j])
}

/// Coordinator to agent: the consensus target, dual variable and penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoordinatorMessage {
    pub bus: usize,
    pub z: Sym4,
    pub y: Sym4,
    pub rho: f64,
    pub t_bar: f64,
}

/// Agent to coordinator: the local supply-rate iterate and its relaxation level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentMessage {
    pub bus: usize,
    pub x: Sym4,
    /// Storage matrix of dynamic buses, kept local in a networked deployment.
    pub p: Option<Vec<Vec<f64>>>,
    pub t: f64,
}

/// One bus of the distributed scheme. Keeps the active samples between calls.
#[derive(Debug, Clone)]
pub struct BusAgent {
    pub bus: usize,
    pub set: LocalLmiSet,
    active: BTreeSet<usize>,
    opts: VerifyOptions,
}

impl BusAgent {
    pub fn new(bus: usize, set: LocalLmiSet, opts: VerifyOptions) -> Self {
        let active = set.seed_indices(8);
        Self { bus, set, active, opts }
    }

    pub fn active_samples(&self) -> usize {
        self.active.len()
    }

    /// Minimizes `-t + tr(Y (X - Z)) + rho/2 ||X - Z||_F^2` subject to the
    /// local inequality relaxed to `<= -t I` at every sample and `t <= t_bar`.
    ///
    /// The returned `t` is the relaxation actually achieved over all samples,
    /// which can only be below the solver value.
    pub fn x_update(&mut self, msg: &CoordinatorMessage) -> Result<AgentMessage> {
        if !(msg.rho > 0.0) {
            return Err(Error::validation("rho", "must be > 0"));
        }
        let z = from_sym4(&msg.z);
        let y = from_sym4(&msg.y);
        let target = &z - &y / msg.rho;
        let n = self.set.state_dim;
        for _ in 0..self.opts.max_rounds {
            let mut prob = LmiProblem::new();
            let p = (n > 0).then(|| prob.add_matrix("P", n));
            let x = prob.add_matrix("X", 4);
            let t = prob.add_scalar("t");
            if let Some(p) = p {
                prob.require_lower_bound("P lower", p, self.opts.p_min);
                prob.require_upper_bound("P upper", p, self.opts.p_max);
            }
            prob.require_scalar_le("t cap", t, msg.t_bar);
            for &k in &self.active {
                prob.require_nsd(format!("sample {k}"), self.set.expression(k, p, x, Some(t), 0.0));
            }
            prob.add_linear_cost(t, -1.0);
            prob.add_frobenius_cost(x, &target, 0.5 * msg.rho);
            let sol = sdp::solve(&prob, &self.opts.settings);
            match sol.status {
                SolveStatus::Optimal | SolveStatus::Inaccurate => {}
                _ => return Err(Error::solver(Some(self.bus), format!("x-update: {}", sol.message))),
            }
            let pm = p.map(|p| sol.matrix(p));
            let xm = sol.matrix(x);
            let ts = sol.scalar(t);
            let margins = self.set.margins(pm.as_ref(), &xm);
            let tol = 1e-3 * ts.abs().max(1e-6);
            let mut viol: Vec<(usize, f64)> = margins
                .iter()
                .enumerate()
                .filter(|(k, m)| !self.active.contains(k) && **m > -ts + tol)
                .map(|(k, m)| (k, *m))
                .collect();
            if viol.is_empty() {
                let worst = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                return Ok(AgentMessage {
                    bus: self.bus,
                    x: to_sym4(&xm),
                    p: pm.as_ref().map(crate::linalg::to_rows),
                    t: ts.min(-worst),
                });
            }
            viol.sort_by(|a, b| b.1.total_cmp(&a.1));
            self.active.extend(viol.iter().take(self.opts.cuts_per_round).map(|(k, _)| *k));
        }
        Err(Error::solver(Some(self.bus), "x-update active-set loop did not settle"))
    }
}
