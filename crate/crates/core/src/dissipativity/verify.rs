use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    lmi_lhs_dynamic, port_map, DissipativityCertificate, SampleMargin, SamplePoint, StorageMatrix,
    SupplyRateMatrix,
};
use crate::devices::{DeviceModel, JacobianSet};
use crate::error::{Error, Result};
use crate::linalg::lambda_max;
use crate::sdp::{self, AffineExpr, LmiProblem, MatVar, ScalarVar, SolveStatus, SolverSettings};

/// Sampled Jacobians of one device, deduplicated (many state axes leave the
/// Jacobians unchanged, e.g. frequency and integrator states).
#[derive(Debug, Clone)]
pub struct LocalLmiSet {
    pub device: String,
    pub state_dim: usize,
    pub epsilon: f64,
    pub points: Vec<SamplePoint>,
    pub jacobians: Vec<JacobianSet>,
    /// Index into `jacobians` for every point.
    pub point_jacobian: Vec<usize>,
}

impl LocalLmiSet {
    pub fn build(device: impl Into<String>, model: &DeviceModel, points: Vec<SamplePoint>, epsilon: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("samples", "at least one sample point is required"));
        }
        let mut jacobians: Vec<JacobianSet> = Vec::new();
        let mut keys: Vec<Vec<u64>> = Vec::new();
        let mut point_jacobian = Vec::with_capacity(points.len());
        for pt in &points {
            let j = model.eval_jacobians(&pt.x, &pt.u)?;
            if !j.is_finite() {
                return Err(Error::Domain(format!("non-finite Jacobian at {:?}", pt.coords())));
            }
            let key: Vec<u64> = [&j.a, &j.b, &j.cm, &j.dm]
                .iter()
                .flat_map(|m| m.iter().map(|v| v.to_bits()))
                .collect();
            match keys.iter().position(|k| *k == key) {
                Some(i) => point_jacobian.push(i),
                None => {
                    keys.push(key);
                    jacobians.push(j);
                    point_jacobian.push(jacobians.len() - 1);
                }
            }
        }
        Ok(Self {
            device: device.into(),
            state_dim: model.state_dim(),
            epsilon,
            points,
            jacobians,
            point_jacobian,
        })
    }

    pub fn is_static(&self) -> bool {
        self.state_dim == 0
    }

    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    /// `lambda_max` of the inequality at distinct Jacobian `k` (static sets ignore `p`).
    pub fn margin(&self, k: usize, p: Option<&DMatrix<f64>>, x: &DMatrix<f64>) -> f64 {
        let empty = DMatrix::zeros(0, 0);
        lambda_max(&lmi_lhs_dynamic(&self.jacobians[k], p.unwrap_or(&empty), x, self.epsilon))
    }

    pub fn margins(&self, p: Option<&DMatrix<f64>>, x: &DMatrix<f64>) -> Vec<f64> {
        (0..self.len()).map(|k| self.margin(k, p, x)).collect()
    }

    pub fn max_margin(&self, p: Option<&DMatrix<f64>>, x: &DMatrix<f64>) -> f64 {
        self.margins(p, x).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Affine form of the inequality at distinct Jacobian `k`, with an optional
    /// relaxation `+ t I` and a constant shift `+ shift I`; the caller requires it NSD.
    pub fn expression(&self, k: usize, p: Option<MatVar>, x: MatVar, relax: Option<ScalarVar>, shift: f64) -> AffineExpr {
        let j = &self.jacobians[k];
        let n = self.state_dim;
        let dim = n + 2;
        let mut e = AffineExpr::zeros(dim);
        if n > 0 {
            let p = p.expect("dynamic set needs a storage variable");
            let mut left = DMatrix::zeros(n, dim);
            for i in 0..n {
                left[(i, i)] = 1.0;
            }
            let mut right = DMatrix::zeros(n, dim);
            right.view_mut((0, 0), (n, n)).copy_from(&j.a);
            right.view_mut((0, n), (n, 2)).copy_from(&j.b);
            e.add_congruence(p, &left, &right, 1.0);
            e.add_identity_block(0, n, self.epsilon);
        }
        e.add_sandwich(x, &port_map(j), -1.0);
        if let Some(t) = relax {
            e.add_scalar_term(t, &DMatrix::identity(dim, dim));
        }
        e.add_identity_block(0, dim, shift);
        e
    }

    /// Spread-out starting subset for active-set solves.
    pub fn seed_indices(&self, count: usize) -> BTreeSet<usize> {
        let n = self.len();
        let step = (n / count.max(1)).max(1);
        (0..n).step_by(step).take(count).collect()
    }

    /// Margins of every recorded point for a candidate `(P, X)`.
    pub fn point_margins(&self, p: Option<&DMatrix<f64>>, x: &DMatrix<f64>) -> Vec<SampleMargin> {
        let m = self.margins(p, x);
        self.points
            .iter()
            .zip(&self.point_jacobian)
            .map(|(pt, k)| SampleMargin {
                point: pt.clone(),
                margin: m[*k],
            })
            .collect()
    }
}

/// Objective used to pick one certificate among the feasible ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ObjectiveHint {
    Feasibility,
    /// `||X||_F^2 + ||P||_F^2`; keeps certificates bounded.
    #[default]
    MinNorm,
    /// `||X - target||_F^2`.
    Target(DMatrix<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// The inequality is imposed as `LHS <= -strict_margin I`.
    pub strict_margin: f64,
    /// `P >= p_min I`.
    pub p_min: f64,
    /// `P <= p_max I`.
    pub p_max: f64,
    /// Samples added per active-set round.
    pub cuts_per_round: usize,
    pub max_rounds: usize,
    pub settings: SolverSettings,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            strict_margin: 1e-6,
            p_min: 1e-2,
            p_max: 1e3,
            cuts_per_round: 16,
            max_rounds: 60,
            settings: SolverSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum VerifyOutcome {
    Certified(DissipativityCertificate),
    Infeasible { diagnostic: String },
}

impl VerifyOutcome {
    pub fn certificate(&self) -> Option<&DissipativityCertificate> {
        match self {
            VerifyOutcome::Certified(c) => Some(c),
            VerifyOutcome::Infeasible { .. } => None,
        }
    }
}

fn add_hint(prob: &mut LmiProblem, hint: &ObjectiveHint, p: Option<MatVar>, x: MatVar) {
    match hint {
        ObjectiveHint::Feasibility => {}
        ObjectiveHint::MinNorm => {
            prob.add_frobenius_cost(x, &DMatrix::zeros(4, 4), 1.0);
            if let Some(p) = p {
                prob.add_frobenius_cost(p, &DMatrix::zeros(p.dim(), p.dim()), 1.0);
            }
        }
        ObjectiveHint::Target(t) => prob.add_frobenius_cost(x, t, 1.0),
    }
}

/// Active-set loop: solve with a subset of samples, add the worst violators, repeat.
fn solve_sampled(
    set: &LocalLmiSet,
    hint: &ObjectiveHint,
    opts: &VerifyOptions,
    shift: f64,
) -> Result<VerifyOutcome> {
    let n = set.state_dim;
    let mut active = set.seed_indices(8);
    for round in 0..opts.max_rounds {
        let mut prob = LmiProblem::new();
        let p = (n > 0).then(|| prob.add_matrix("P", n));
        let x = prob.add_matrix("X", 4);
        if let Some(p) = p {
            prob.require_lower_bound("P lower", p, opts.p_min);
            prob.require_upper_bound("P upper", p, opts.p_max);
        }
        for &k in &active {
            prob.require_nsd(format!("sample {k}"), set.expression(k, p, x, None, shift));
        }
        add_hint(&mut prob, hint, p, x);
        let sol = sdp::solve(&prob, &opts.settings);
        match sol.status {
            SolveStatus::Infeasible => {
                return Ok(VerifyOutcome::Infeasible {
                    diagnostic: format!(
                        "{}: infeasible on {} of {} distinct samples ({})",
                        set.device,
                        active.len(),
                        set.len(),
                        sol.message
                    ),
                })
            }
            SolveStatus::Error => return Err(Error::solver(None, format!("{}: {}", set.device, sol.message))),
            SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        }
        let pm = p.map(|p| sol.matrix(p));
        let xm = sol.matrix(x);
        let margins = set.margins(pm.as_ref(), &xm);
        let mut violators: Vec<(usize, f64)> = margins
            .iter()
            .enumerate()
            .filter(|(k, m)| !active.contains(k) && **m > -0.5 * shift)
            .map(|(k, m)| (k, *m))
            .collect();
        if violators.is_empty() {
            let worst = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if worst > 0.0 {
                return Ok(VerifyOutcome::Infeasible {
                    diagnostic: format!(
                        "{}: solver point violates active samples (max margin {worst:.3e}, {})",
                        set.device, sol.message
                    ),
                });
            }
            log::debug!("{}: certified after {} rounds, {} active samples", set.device, round + 1, active.len());
            let p_cert = match pm {
                Some(m) => Some(StorageMatrix::new(m)?),
                None => None,
            };
            return Ok(VerifyOutcome::Certified(DissipativityCertificate {
                device: set.device.clone(),
                sample_margins: set.point_margins(p_cert.as_ref().map(|p| p.matrix()), &xm),
                p: p_cert,
                x: SupplyRateMatrix::new(xm)?,
                epsilon: set.epsilon,
            }));
        }
        violators.sort_by(|a, b| b.1.total_cmp(&a.1));
        active.extend(violators.iter().take(opts.cuts_per_round).map(|(k, _)| *k));
    }
    Err(Error::solver(
        None,
        format!("{}: active-set loop did not settle in {} rounds", set.device, opts.max_rounds),
    ))
}

/// Searches `(P, X)` satisfying the dynamic inequality at every sample.
pub fn verify_dynamic(
    device: &str,
    model: &DeviceModel,
    samples: Vec<SamplePoint>,
    epsilon: f64,
    hint: &ObjectiveHint,
    opts: &VerifyOptions,
) -> Result<VerifyOutcome> {
    if model.is_static() {
        return Err(Error::validation("model", "static device; use verify_static"));
    }
    if !(epsilon > 0.0) {
        return Err(Error::validation("epsilon", "must be > 0"));
    }
    let set = LocalLmiSet::build(device, model, samples, epsilon)?;
    solve_sampled(&set, hint, opts, opts.strict_margin)
}

/// Searches `X` with `[I; Dm]^T X [I; Dm] >= I` at every sample. The static
/// condition is homogeneous in `X`, so the unit lower bound only fixes scale.
pub fn verify_static(
    device: &str,
    model: &DeviceModel,
    samples: Vec<SamplePoint>,
    hint: &ObjectiveHint,
    opts: &VerifyOptions,
) -> Result<VerifyOutcome> {
    if !model.is_static() {
        return Err(Error::validation("model", "dynamic device; use verify_dynamic"));
    }
    let set = LocalLmiSet::build(device, model, samples, 0.0)?;
    solve_sampled(&set, hint, opts, 1.0)
}
