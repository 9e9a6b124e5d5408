use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use super::{ConstraintKind, LmiProblem, LmiSolution, SolveStatus, SolverSettings};
use crate::linalg::svec_len;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Scaled packing used by the PSD triangle cone (off-diagonals times sqrt 2).
fn scaled_svec(m: &DMatrix<f64>, out: &mut Vec<(usize, f64)>, row0: usize) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let v = if i == j {
                m[(i, i)]
            } else {
                SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            if v != 0.0 {
                out.push((row0 + k, v));
            }
            k += 1;
        }
    }
}

/// Solves `problem` with the Clarabel interior-point method and recomputes
/// every constraint violation from the returned point.
pub fn solve(problem: &LmiProblem, settings: &SolverSettings) -> LmiSolution {
    let n = problem.num_scalars();
    let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut b: Vec<f64> = Vec::new();
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    for c in problem.constraints() {
        let dim = c.expr.dim();
        let row0 = b.len();
        let sign = match c.kind {
            ConstraintKind::Nsd => 1.0,
            ConstraintKind::Psd => -1.0,
        };
        if dim == 1 {
            b.push(-sign * c.expr.constant()[(0, 0)]);
            for (s, m) in c.expr.terms() {
                if m[(0, 0)] != 0.0 {
                    columns[s].push((row0, sign * m[(0, 0)]));
                }
            }
            cones.push(SupportedConeT::NonnegativeConeT(1));
            continue;
        }
        let mut consts = Vec::new();
        scaled_svec(c.expr.constant(), &mut consts, 0);
        b.resize(row0 + svec_len(dim), 0.0);
        for (k, v) in consts {
            b[row0 + k] = -sign * v;
        }
        for (s, m) in c.expr.terms() {
            let mut entries = Vec::new();
            scaled_svec(m, &mut entries, row0);
            columns[s].extend(entries.into_iter().map(|(r, v)| (r, sign * v)));
        }
        cones.push(SupportedConeT::PSDTriangleConeT(dim));
    }

    let m = b.len();
    let mut colptr = Vec::with_capacity(n + 1);
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    colptr.push(0);
    for col in &mut columns {
        col.sort_by_key(|(r, _)| *r);
        for (r, v) in col.iter() {
            rowval.push(*r);
            nzval.push(*v);
        }
        colptr.push(rowval.len());
    }
    let a = CscMatrix::new(m, n, colptr, rowval, nzval);

    let obj = problem.objective();
    let mut p_colptr = Vec::with_capacity(n + 1);
    let mut p_rowval = Vec::new();
    let mut p_nzval = Vec::new();
    p_colptr.push(0);
    for (s, q) in obj.quadratic.iter().enumerate() {
        if *q != 0.0 {
            p_rowval.push(s);
            p_nzval.push(2.0 * q);
        }
        p_colptr.push(p_rowval.len());
    }
    let p = CscMatrix::new(n, n, p_colptr, p_rowval, p_nzval);
    let q = obj.linear.clone();

    let clarabel_settings = DefaultSettings {
        max_iter: settings.max_iter,
        tol_gap_abs: settings.tol_gap_abs,
        tol_gap_rel: settings.tol_gap_rel,
        tol_feas: settings.tol_feas,
        verbose: settings.verbose,
        ..DefaultSettings::default()
    };

    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, clarabel_settings) {
        Ok(s) => s,
        Err(e) => {
            return LmiSolution {
                status: SolveStatus::Error,
                x: vec![0.0; n],
                objective: f64::NAN,
                violations: Vec::new(),
                max_violation: f64::INFINITY,
                iterations: 0,
                message: format!("backend rejected problem: {e:?}"),
            }
        }
    };
    solver.solve();
    let sol = &solver.solution;

    let x = sol.x.clone();
    let violations: Vec<f64> = problem
        .constraints()
        .iter()
        .map(|c| c.violation(&x))
        .collect();
    let max_violation = violations.iter().copied().fold(0.0, f64::max);

    let mut status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved
        | SolverStatus::MaxIterations
        | SolverStatus::MaxTime
        | SolverStatus::InsufficientProgress => SolveStatus::Inaccurate,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        _ => SolveStatus::Error,
    };
    if status == SolveStatus::Optimal && max_violation > settings.violation_tol {
        status = SolveStatus::Inaccurate;
    }

    LmiSolution {
        status,
        objective: obj.value(&x),
        x,
        violations,
        max_violation,
        iterations: sol.iterations,
        message: format!(
            "backend status {:?} after {} iterations ({:.3} s)",
            sol.status, sol.iterations, sol.solve_time
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdp::AffineExpr;

    #[test]
    fn min_trace_above_identity() {
        let mut p = LmiProblem::new();
        let x = p.add_matrix("X", 2);
        p.require_lower_bound("X >= I", x, 1.0);
        p.add_trace_cost(x, 1.0);
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 2.0).abs() < 1e-6);
        let xm = sol.matrix(x);
        assert!((xm - DMatrix::<f64>::identity(2, 2)).amax() < 1e-5);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut p = LmiProblem::new();
        let x = p.add_matrix("X", 2);
        p.require_upper_bound("X <= -I", x, -1.0);
        p.require_lower_bound("X >= I", x, 1.0);
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn frobenius_projection_onto_psd_cone() {
        // argmin ||X - T||_F s.t. X >= 0 equals the eigenvalue clipping of T
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, -2.0]);
        let mut p = LmiProblem::new();
        let x = p.add_matrix("X", 3);
        let mut e = AffineExpr::zeros(3);
        e.add_embedded(x, 0, 1.0);
        p.require_psd("X >= 0", e);
        p.add_frobenius_cost(x, &t, 1.0);
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = crate::linalg::project_psd(&t);
        assert!((sol.matrix(x) - oracle).amax() < 1e-5);
    }

    #[test]
    fn scalar_bounds_are_one_by_one_cones() {
        let mut p = LmiProblem::new();
        let t = p.add_scalar("t");
        p.require_scalar_le("t <= 3", t, 3.0);
        p.add_linear_cost(t, -1.0);
        let sol = solve(&p, &SolverSettings::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.scalar(t) - 3.0).abs() < 1e-6);
    }
}
