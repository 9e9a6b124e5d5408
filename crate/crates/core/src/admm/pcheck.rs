use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interconnect::Interconnection;
use crate::linalg::lambda_max;
use crate::sdp::{self, AffineExpr, LmiProblem, SolveStatus, SolverSettings};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PCheckResult {
    /// Positive weights summing to `N`.
    pub p: Vec<f64>,
    /// `lambda_max(l^c(p_1 X_1, .., p_N X_N))` at the returned weights.
    pub t_z: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PCheckOptions {
    /// Lower bound on each weight.
    pub p_floor: f64,
    /// Largest `2N` solved by the conic backend; larger systems use a bundle method on eigenvector subspaces.
    pub dense_limit: usize,
    pub bundle_iters: usize,
    pub settings: SolverSettings,
}

impl Default for PCheckOptions {
    fn default() -> Self {
        Self {
            p_floor: 1e-6,
            dense_limit: 40,
            bundle_iters: 100,
            settings: SolverSettings::default(),
        }
    }
}

fn bus_terms(ic: &Interconnection, xs: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let w = ic.bus_map(i);
            w.transpose() * x * w
        })
        .collect()
}

fn weighted(terms: &[DMatrix<f64>], p: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(terms[0].nrows(), terms[0].ncols());
    for (t, w) in terms.iter().zip(p) {
        out += t * *w;
    }
    out
}

/// Euclidean projection onto `{p : p_i >= lo, sum p = total}`.
fn project_capped_simplex(v: &[f64], lo: f64, total: f64) -> Vec<f64> {
    let budget = total - lo * v.len() as f64;
    let mut u: Vec<f64> = v.iter().map(|x| x - lo).collect();
    let mut sorted = u.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, s) in sorted.iter().enumerate() {
        cum += s;
        let th = (cum - budget) / (k + 1) as f64;
        if s - th > 0.0 {
            theta = th;
        }
    }
    for x in u.iter_mut() {
        *x = (*x - theta).max(0.0) + lo;
    }
    u
}

/// Exact minimization with the conic backend; `p_N` is eliminated through the sum constraint.
fn solve_dense(terms: &[DMatrix<f64>], opts: &PCheckOptions) -> Result<Vec<f64>> {
    let n = terms.len();
    let dim = terms[0].nrows();
    let mut prob = LmiProblem::new();
    let ps: Vec<_> = (0..n - 1).map(|i| prob.add_scalar(format!("p{i}"))).collect();
    let t = prob.add_scalar("t_z");
    let last = &terms[n - 1];
    let mut lmi = AffineExpr::zeros(dim);
    lmi.add_constant(last, n as f64);
    for (i, p) in ps.iter().enumerate() {
        lmi.add_scalar_term(*p, &(&terms[i] - last));
        prob.require_scalar_ge(format!("p{i} floor"), *p, opts.p_floor);
    }
    lmi.add_scalar_term(t, &(-DMatrix::identity(dim, dim)));
    prob.require_nsd("coupling", lmi);
    let mut tail = AffineExpr::zeros(1);
    tail.add_identity_block(0, 1, n as f64 - opts.p_floor);
    for p in &ps {
        tail.add_scalar_term(*p, &DMatrix::from_element(1, 1, -1.0));
    }
    prob.require_psd("last weight floor", tail);
    prob.add_linear_cost(t, 1.0);
    let sol = sdp::solve(&prob, &opts.settings);
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Inaccurate => {}
        _ => return Err(Error::solver(None, format!("p-check: {}", sol.message))),
    }
    let mut p: Vec<f64> = ps.iter().map(|v| sol.scalar(*v)).collect();
    p.push(n as f64 - p.iter().sum::<f64>());
    Ok(project_capped_simplex(&p, opts.p_floor, n as f64))
}

/// Top `r` eigenpairs, largest first.
fn top_eigen(a: &DMatrix<f64>, r: usize) -> (Vec<f64>, DMatrix<f64>) {
    let e = crate::linalg::symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|i, j| e.eigenvalues[*j].total_cmp(&e.eigenvalues[*i]));
    let r = r.min(order.len());
    let vals = order[..r].iter().map(|i| e.eigenvalues[*i]).collect();
    let vecs = DMatrix::from_fn(a.nrows(), r, |row, c| e.eigenvectors[(row, order[c])]);
    (vals, vecs)
}

/// Orthonormal basis of the columns of `m`, dropping dependent ones.
fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<nalgebra::DVector<f64>> = Vec::new();
    for c in 0..m.ncols() {
        let mut v = m.column(c).into_owned();
        for _ in 0..2 {
            for q in &cols {
                let d = q.dot(&v);
                v -= q * d;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / nv);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Proximal bundle method on the eigenvalue function: the model is
/// `lambda_max(V^T A(p) V)` over an accumulated eigenvector subspace `V`,
/// which is a lower bound of the true value and small enough for the conic
/// backend. Stops early once the exact value is below `stop_below`.
fn solve_bundle(terms: &[DMatrix<f64>], start: &[f64], stop_below: f64, opts: &PCheckOptions) -> Vec<f64> {
    let n = terms.len();
    let total = n as f64;
    let block = 4;
    let cap = 36;
    let mut center = project_capped_simplex(start, opts.p_floor, total);
    let (vals, mut basis) = top_eigen(&weighted(terms, &center), block);
    let mut f_center = vals[0];
    let scale = terms.iter().map(|t| t.amax()).fold(0.0, f64::max).max(1e-12);
    let mut prox = scale / total;
    for _ in 0..opts.bundle_iters {
        if f_center < stop_below {
            break;
        }
        let r = basis.ncols();
        let reduced: Vec<DMatrix<f64>> = terms.iter().map(|t| basis.transpose() * t * &basis).collect();
        let mut prob = LmiProblem::new();
        let ps: Vec<_> = (0..n - 1).map(|i| prob.add_scalar(format!("p{i}"))).collect();
        let t = prob.add_scalar("t");
        let last = &reduced[n - 1];
        let mut lmi = AffineExpr::zeros(r);
        lmi.add_constant(last, total);
        for (i, p) in ps.iter().enumerate() {
            lmi.add_scalar_term(*p, &(&reduced[i] - last));
            prob.require_scalar_ge(format!("p{i} floor"), *p, opts.p_floor);
            prob.add_scalar_quadratic_cost(*p, center[i], 0.5 * prox);
        }
        lmi.add_scalar_term(t, &(-DMatrix::identity(r, r)));
        prob.require_nsd("model", lmi);
        let mut tail = AffineExpr::zeros(1);
        tail.add_identity_block(0, 1, total - opts.p_floor);
        for p in &ps {
            tail.add_scalar_term(*p, &DMatrix::from_element(1, 1, -1.0));
        }
        prob.require_psd("last weight floor", tail);
        prob.add_linear_cost(t, 1.0);
        let sol = sdp::solve(&prob, &opts.settings);
        if !matches!(sol.status, SolveStatus::Optimal | SolveStatus::Inaccurate) {
            break;
        }
        let mut cand: Vec<f64> = ps.iter().map(|v| sol.scalar(*v)).collect();
        cand.push(total - cand.iter().sum::<f64>());
        let cand = project_capped_simplex(&cand, opts.p_floor, total);
        let model = sol.scalar(t);
        let predicted = f_center - model;
        let (vals, vecs) = top_eigen(&weighted(terms, &cand), block);
        if predicted <= 1e-9 * (1.0 + f_center.abs()) {
            break;
        }
        if f_center - vals[0] >= 0.1 * predicted {
            center = cand;
            f_center = vals[0];
            prox = (prox * 0.5).max(1e-6 * scale / total);
        } else {
            prox = (prox * 2.0).min(1e6 * scale / total);
        }
        let mut stacked = DMatrix::zeros(basis.nrows(), vecs.ncols() + basis.ncols());
        stacked.view_mut((0, 0), (basis.nrows(), vecs.ncols())).copy_from(&vecs);
        stacked.view_mut((0, vecs.ncols()), (basis.nrows(), basis.ncols())).copy_from(&basis);
        basis = orthonormalize(&stacked);
        if basis.ncols() > cap {
            // keep the dominant part of the current model at the center
            let (_, top) = top_eigen(&weighted(terms, &center), cap / 2);
            let mut merged = DMatrix::zeros(basis.nrows(), top.ncols() + vecs.ncols());
            merged.view_mut((0, 0), (basis.nrows(), vecs.ncols())).copy_from(&vecs);
            merged.view_mut((0, vecs.ncols()), (basis.nrows(), top.ncols())).copy_from(&top);
            basis = orthonormalize(&merged);
        }
    }
    center
}

/// Minimizes `lambda_max(l^c(p_1 X_1, .., p_N X_N))` over positive weights
/// summing to `N`; passes when the value is below `-epsilon`. The verdict is
/// always taken from an eigenvalue evaluation at the returned weights.
pub fn p_check(
    ic: &Interconnection,
    xs: &[DMatrix<f64>],
    epsilon: f64,
    warm: Option<&[f64]>,
    opts: &PCheckOptions,
) -> Result<PCheckResult> {
    let n = ic.n();
    if xs.len() != n {
        return Err(Error::Dimension(format!("{} supply rates for {n} buses", xs.len())));
    }
    let terms = bus_terms(ic, xs);
    let uniform = vec![1.0; n];
    let p = if n == 1 {
        uniform
    } else if 2 * n <= opts.dense_limit {
        solve_dense(&terms, opts)?
    } else {
        let start = warm.filter(|w| w.len() == n).unwrap_or(&uniform);
        solve_bundle(&terms, start, -epsilon, opts)
    };
    let t_z = lambda_max(&weighted(&terms, &p));
    Ok(PCheckResult {
        passed: t_z < -epsilon,
        p,
        t_z,
    })
}

#[cfg(test)]
pub(crate) fn bundle_for_tests(ic: &Interconnection, xs: &[DMatrix<f64>], opts: &PCheckOptions) -> PCheckResult {
    let terms = bus_terms(ic, xs);
    let p = solve_bundle(&terms, &vec![1.0; xs.len()], f64::NEG_INFINITY, opts);
    let t_z = lambda_max(&weighted(&terms, &p));
    PCheckResult { passed: false, p, t_z }
}

#[cfg(test)]
pub(crate) fn capped_simplex_for_tests(v: &[f64], lo: f64, total: f64) -> Vec<f64> {
    project_capped_simplex(v, lo, total)
}
