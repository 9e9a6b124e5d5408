use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{assemble_lc, Interconnection};
use crate::dissipativity::{AnalyticFamily, LocalLmiSet, SupplyRateMatrix, VerifyOptions, analytic_family_check};
use crate::error::{Error, Result};
use crate::linalg::{lambda_max, lambda_min};
use crate::sdp::{self, AffineExpr, LmiProblem, MatVar, SolveStatus};

/// What a bus contributes to the joint problem.
#[derive(Debug, Clone)]
pub enum LocalConstraint {
    Sampled(LocalLmiSet),
    Analytic(AnalyticFamily),
}

impl LocalConstraint {
    pub fn state_dim(&self) -> usize {
        match self {
            LocalConstraint::Sampled(s) => s.state_dim,
            LocalConstraint::Analytic(_) => 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Imposed as `l^c <= -coupling_margin I`.
    pub coupling_margin: f64,
    pub local: VerifyOptions,
    /// Largest coupling matrix (`2N`) handed to the dense conic backend.
    pub max_dense_dim: usize,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            coupling_margin: 1e-6,
            local: VerifyOptions::default(),
            max_dense_dim: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingResult {
    pub feasible: bool,
    pub xs: Vec<Vec<Vec<f64>>>,
    pub ps: Vec<Option<Vec<Vec<f64>>>>,
    /// `lambda_max(l^c)` recomputed at the returned point.
    pub lambda_max_lc: f64,
    /// Worst recomputed local margin per bus.
    pub local_margins: Vec<f64>,
    pub diagnostics: String,
}

impl CouplingResult {
    pub fn x_matrices(&self) -> Vec<DMatrix<f64>> {
        self.xs.iter().map(|r| crate::linalg::from_rows(r).unwrap_or_else(|| DMatrix::zeros(4, 4))).collect()
    }
}

fn selector(rows: &[usize]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(4, rows.len());
    for (c, r) in rows.iter().enumerate() {
        w[(*r, c)] = 1.0;
    }
    w
}

/// Adds the analytic family of one bus as LMIs on `X`.
fn encode_family(prob: &mut LmiProblem, bus: usize, family: AnalyticFamily, x: MatVar, strict: f64) {
    let q_sel = selector(&[0, 1]);
    match family {
        AnalyticFamily::PositiveQ => {
            let mut e = AffineExpr::zeros(2);
            e.add_sandwich(x, &q_sel, 1.0).add_identity_block(0, 2, -strict);
            prob.require_psd(format!("bus {bus} Q"), e);
        }
        AnalyticFamily::ConstantImpedance { zp, .. } => {
            let mut e = AffineExpr::zeros(2);
            e.add_sandwich(x, &q_sel, 1.0).add_identity_block(0, 2, zp - strict);
            prob.require_psd(format!("bus {bus} Q"), e);
            let mut r = AffineExpr::zeros(2);
            r.add_sandwich(x, &selector(&[2, 3]), 1.0);
            prob.require_psd(format!("bus {bus} R"), r);
            for i in 0..2 {
                for j in 0..2 {
                    let mut ei = DMatrix::zeros(4, 1);
                    ei[(i, 0)] = 1.0;
                    let mut ej = DMatrix::zeros(4, 1);
                    ej[(2 + j, 0)] = 1.0;
                    let target = if i == j { 0.5 } else { 0.0 };
                    let mut s = AffineExpr::zeros(1);
                    s.add_congruence(x, &ei, &ej, 0.5).add_identity_block(0, 1, -target);
                    prob.require_nsd(format!("bus {bus} S{i}{j} upper"), s.clone());
                    prob.require_psd(format!("bus {bus} S{i}{j} lower"), s);
                }
            }
        }
    }
}

/// One joint solve over all `X_i` (and `P_i` for dynamic buses) with `l^c <= 0`.
/// Local sample constraints enter through an active-set loop.
pub fn verify_coupling_centralized(
    ic: &Interconnection,
    locals: &[LocalConstraint],
    opts: &CouplingOptions,
) -> Result<CouplingResult> {
    let n = ic.n();
    if locals.len() != n {
        return Err(Error::Dimension(format!("{} local sets for {n} buses", locals.len())));
    }
    if 2 * n > opts.max_dense_dim {
        return Err(Error::solver(
            None,
            format!(
                "coupling matrix is {0}x{0}, above the dense backend limit {1}; use the distributed verification",
                2 * n,
                opts.max_dense_dim
            ),
        ));
    }
    let strict = opts.local.strict_margin;
    let mut active: Vec<BTreeSet<usize>> = locals
        .iter()
        .map(|l| match l {
            LocalConstraint::Sampled(s) => s.seed_indices(4),
            LocalConstraint::Analytic(_) => BTreeSet::new(),
        })
        .collect();
    for round in 0..opts.local.max_rounds {
        let mut prob = LmiProblem::new();
        let mut xs = Vec::with_capacity(n);
        let mut ps = Vec::with_capacity(n);
        for (i, l) in locals.iter().enumerate() {
            let x = prob.add_matrix(format!("X{i}"), 4);
            let p = (l.state_dim() > 0).then(|| prob.add_matrix(format!("P{i}"), l.state_dim()));
            if let Some(p) = p {
                prob.require_lower_bound(format!("P{i} lower"), p, opts.local.p_min);
                prob.require_upper_bound(format!("P{i} upper"), p, opts.local.p_max);
                prob.add_frobenius_cost(p, &DMatrix::zeros(p.dim(), p.dim()), 1.0);
            }
            prob.add_frobenius_cost(x, &DMatrix::zeros(4, 4), 1.0);
            match l {
                LocalConstraint::Sampled(s) => {
                    for &k in &active[i] {
                        prob.require_nsd(format!("bus {i} sample {k}"), s.expression(k, p, x, None, strict));
                    }
                }
                LocalConstraint::Analytic(f) => encode_family(&mut prob, i, *f, x, strict),
            }
            xs.push(x);
            ps.push(p);
        }
        let mut lc = AffineExpr::zeros(2 * n);
        for (i, x) in xs.iter().enumerate() {
            lc.add_sandwich(*x, ic.bus_map(i), 1.0);
        }
        lc.add_identity_block(0, 2 * n, opts.coupling_margin);
        prob.require_nsd("coupling", lc);

        let sol = sdp::solve(&prob, &opts.local.settings);
        if sol.status == SolveStatus::Infeasible {
            return Ok(CouplingResult {
                feasible: false,
                xs: vec![],
                ps: vec![],
                lambda_max_lc: f64::NAN,
                local_margins: vec![],
                diagnostics: format!("joint problem infeasible after {} rounds: {}", round + 1, sol.message),
            });
        }
        if sol.status == SolveStatus::Error {
            return Err(Error::solver(None, sol.message));
        }
        let xm: Vec<DMatrix<f64>> = xs.iter().map(|x| sol.matrix(*x)).collect();
        let pm: Vec<Option<DMatrix<f64>>> = ps.iter().map(|p| p.map(|p| sol.matrix(p))).collect();
        let mut added = false;
        let mut local_margins = Vec::with_capacity(n);
        for (i, l) in locals.iter().enumerate() {
            match l {
                LocalConstraint::Sampled(s) => {
                    let m = s.margins(pm[i].as_ref(), &xm[i]);
                    let mut viol: Vec<(usize, f64)> = m
                        .iter()
                        .enumerate()
                        .filter(|(k, v)| !active[i].contains(k) && **v > -0.5 * strict)
                        .map(|(k, v)| (k, *v))
                        .collect();
                    viol.sort_by(|a, b| b.1.total_cmp(&a.1));
                    if !viol.is_empty() {
                        added = true;
                        active[i].extend(viol.iter().take(opts.local.cuts_per_round).map(|(k, _)| *k));
                    }
                    local_margins.push(m.into_iter().fold(f64::NEG_INFINITY, f64::max));
                }
                LocalConstraint::Analytic(f) => {
                    let x = SupplyRateMatrix::new(xm[i].clone())?;
                    let ok = analytic_family_check(*f, &x, 1e-7);
                    let q_margin = -lambda_min(&x.q());
                    local_margins.push(if ok { q_margin.min(0.0) } else { q_margin.max(1e-7) });
                }
            }
        }
        if added {
            continue;
        }
        let lam = lambda_max(&assemble_lc(ic, &xm)?);
        let worst_local = local_margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let feasible = lam <= 0.0 && worst_local <= 0.0;
        return Ok(CouplingResult {
            feasible,
            xs: xm.iter().map(crate::linalg::to_rows).collect(),
            ps: pm.iter().map(|p| p.as_ref().map(crate::linalg::to_rows)).collect(),
            lambda_max_lc: lam,
            local_margins,
            diagnostics: format!(
                "{} rounds, {} active samples, backend: {}",
                round + 1,
                active.iter().map(|a| a.len()).sum::<usize>(),
                sol.message
            ),
        });
    }
    Err(Error::solver(None, "active-set loop did not settle"))
}
