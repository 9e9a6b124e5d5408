//! Linear-matrix-inequality problems and a conic backend to solve them.
//!
//! A problem is a list of scalar decision variables (symmetric matrix
//! variables are stored as their packed upper triangle), affine symmetric
//! matrix expressions over those scalars, semidefinite constraints on the
//! expressions and a separable quadratic objective. The backend is treated as
//! a black box: every returned solution carries constraint violations that
//! are recomputed here by dense eigenvalue checks.

mod backend;
mod dump;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, svec_entry, svec_len};

pub use backend::solve;

/// Handle to a symmetric matrix variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    offset: usize,
    dim: usize,
}

impl MatVar {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Global scalar index of packed coordinate `k`.
    fn scalar(&self, k: usize) -> usize {
        self.offset + k
    }
}

/// Handle to a scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarVar {
    index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VariableKind {
    Scalar,
    Symmetric(usize),
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub kind: VariableKind,
    pub offset: usize,
}

/// `constant + sum_s x_s * terms[s]`, all symmetric `dim x dim`.
#[derive(Debug, Clone)]
pub struct AffineExpr {
    dim: usize,
    constant: DMatrix<f64>,
    terms: BTreeMap<usize, DMatrix<f64>>,
}

impl AffineExpr {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            constant: DMatrix::zeros(dim, dim),
            terms: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.terms.iter().map(|(k, v)| (*k, v))
    }

    fn term_mut(&mut self, scalar: usize) -> &mut DMatrix<f64> {
        let dim = self.dim;
        self.terms
            .entry(scalar)
            .or_insert_with(|| DMatrix::zeros(dim, dim))
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>, coef: f64) -> &mut Self {
        assert_eq!(m.shape(), (self.dim, self.dim), "constant shape");
        self.constant += m * coef;
        self
    }

    /// Adds `coef * I` on the diagonal block starting at `at` of size `len`.
    pub fn add_identity_block(&mut self, at: usize, len: usize, coef: f64) -> &mut Self {
        for i in at..at + len {
            self.constant[(i, i)] += coef;
        }
        self
    }

    /// Adds `v * m`.
    pub fn add_scalar_term(&mut self, v: ScalarVar, m: &DMatrix<f64>) -> &mut Self {
        assert_eq!(m.shape(), (self.dim, self.dim), "term shape");
        *self.term_mut(v.index) += m;
        self
    }

    /// Adds `coef * (L^T V R + R^T V L)` where `L` and `R` are `k x dim`.
    pub fn add_congruence(
        &mut self,
        v: MatVar,
        l: &DMatrix<f64>,
        r: &DMatrix<f64>,
        coef: f64,
    ) -> &mut Self {
        assert_eq!(l.shape(), (v.dim, self.dim), "left factor shape");
        assert_eq!(r.shape(), (v.dim, self.dim), "right factor shape");
        for k in 0..svec_len(v.dim) {
            let (i, j) = svec_entry(k);
            // L^T E R with E = e_i e_j^T (+ e_j e_i^T when i != j)
            let mut m = l.row(i).transpose() * r.row(j);
            if i != j {
                m += l.row(j).transpose() * r.row(i);
            }
            let sym = &m + m.transpose();
            if sym.iter().any(|x| *x != 0.0) {
                *self.term_mut(v.scalar(k)) += sym * coef;
            }
        }
        self
    }

    /// Adds `coef * W^T V W` where `W` is `k x dim`.
    pub fn add_sandwich(&mut self, v: MatVar, w: &DMatrix<f64>, coef: f64) -> &mut Self {
        self.add_congruence(v, w, w, 0.5 * coef)
    }

    /// Adds `coef * V` placed on the diagonal block starting at `at`.
    pub fn add_embedded(&mut self, v: MatVar, at: usize, coef: f64) -> &mut Self {
        let mut w = DMatrix::zeros(v.dim, self.dim);
        for i in 0..v.dim {
            w[(i, at + i)] = 1.0;
        }
        self.add_sandwich(v, &w, coef)
    }

    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (s, m) in &self.terms {
            if x[*s] != 0.0 {
                out += m * x[*s];
            }
        }
        out
    }

    /// Multiplies the whole expression by `coef`.
    pub fn scale(&mut self, coef: f64) -> &mut Self {
        self.constant *= coef;
        for m in self.terms.values_mut() {
            *m *= coef;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    /// expression is negative semidefinite
    Nsd,
    /// expression is positive semidefinite
    Psd,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub expr: AffineExpr,
}

impl Constraint {
    /// Amount by which the constraint is violated at `x` (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        self.signed_margin(x).max(0.0)
    }

    /// `lambda_max(expr)` for `Nsd`, `-lambda_min(expr)` for `Psd`; `<= 0` means satisfied.
    pub fn signed_margin(&self, x: &[f64]) -> f64 {
        let m = self.expr.evaluate(x);
        match self.kind {
            ConstraintKind::Nsd => linalg::lambda_max(&m),
            ConstraintKind::Psd => -linalg::lambda_min(&m),
        }
    }
}

/// Separable objective `c^T x + sum_s q_s x_s^2 + constant`.
#[derive(Debug, Clone, Default)]
pub struct Objective {
    pub linear: Vec<f64>,
    pub quadratic: Vec<f64>,
    pub constant: f64,
}

impl Objective {
    pub fn value(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let quad: f64 = self.quadratic.iter().zip(x).map(|(q, v)| q * v * v).sum();
        lin + quad + self.constant
    }

    pub fn is_feasibility(&self) -> bool {
        self.linear.iter().all(|c| *c == 0.0) && self.quadratic.iter().all(|q| *q == 0.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LmiProblem {
    num_scalars: usize,
    variables: Vec<Variable>,
    constraints: Vec<Constraint>,
    objective: Objective,
}

impl LmiProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_scalars(&self) -> usize {
        self.num_scalars
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    fn grow(&mut self, n: usize) -> usize {
        let offset = self.num_scalars;
        self.num_scalars += n;
        self.objective.linear.resize(self.num_scalars, 0.0);
        self.objective.quadratic.resize(self.num_scalars, 0.0);
        offset
    }

    pub fn add_matrix(&mut self, name: impl Into<String>, dim: usize) -> MatVar {
        let offset = self.grow(svec_len(dim));
        self.variables.push(Variable {
            name: name.into(),
            kind: VariableKind::Symmetric(dim),
            offset,
        });
        MatVar { offset, dim }
    }

    pub fn add_scalar(&mut self, name: impl Into<String>) -> ScalarVar {
        let index = self.grow(1);
        self.variables.push(Variable {
            name: name.into(),
            kind: VariableKind::Scalar,
            offset: index,
        });
        ScalarVar { index }
    }

    pub fn require_nsd(&mut self, name: impl Into<String>, expr: AffineExpr) {
        self.push(name.into(), ConstraintKind::Nsd, expr);
    }

    pub fn require_psd(&mut self, name: impl Into<String>, expr: AffineExpr) {
        self.push(name.into(), ConstraintKind::Psd, expr);
    }

    fn push(&mut self, name: String, kind: ConstraintKind, expr: AffineExpr) {
        debug_assert!(expr.terms.keys().all(|s| *s < self.num_scalars));
        self.constraints.push(Constraint { name, kind, expr });
    }

    /// `v >= lower * I`.
    pub fn require_lower_bound(&mut self, name: impl Into<String>, v: MatVar, lower: f64) {
        let mut e = AffineExpr::zeros(v.dim);
        e.add_embedded(v, 0, 1.0).add_identity_block(0, v.dim, -lower);
        self.require_psd(name, e);
    }

    /// `v <= upper * I`.
    pub fn require_upper_bound(&mut self, name: impl Into<String>, v: MatVar, upper: f64) {
        let mut e = AffineExpr::zeros(v.dim);
        e.add_embedded(v, 0, 1.0).add_identity_block(0, v.dim, -upper);
        self.require_nsd(name, e);
    }

    /// `v <= upper`, encoded as a 1x1 LMI.
    pub fn require_scalar_le(&mut self, name: impl Into<String>, v: ScalarVar, upper: f64) {
        let mut e = AffineExpr::zeros(1);
        e.add_scalar_term(v, &DMatrix::from_element(1, 1, 1.0))
            .add_identity_block(0, 1, -upper);
        self.require_nsd(name, e);
    }

    /// `v >= lower`, encoded as a 1x1 LMI.
    pub fn require_scalar_ge(&mut self, name: impl Into<String>, v: ScalarVar, lower: f64) {
        let mut e = AffineExpr::zeros(1);
        e.add_scalar_term(v, &DMatrix::from_element(1, 1, 1.0))
            .add_identity_block(0, 1, -lower);
        self.require_psd(name, e);
    }

    pub fn add_linear_cost(&mut self, v: ScalarVar, coef: f64) {
        self.objective.linear[v.index] += coef;
    }

    pub fn add_constant_cost(&mut self, c: f64) {
        self.objective.constant += c;
    }

    /// Adds `coef * tr(V)`.
    pub fn add_trace_cost(&mut self, v: MatVar, coef: f64) {
        for i in 0..v.dim {
            self.objective.linear[v.scalar(linalg::svec_index(i, i))] += coef;
        }
    }

    /// Adds `coef * tr(Y^T V)` for a symmetric `Y`.
    pub fn add_trace_inner_cost(&mut self, v: MatVar, y: &DMatrix<f64>, coef: f64) {
        for k in 0..svec_len(v.dim) {
            let (i, j) = svec_entry(k);
            let w = if i == j { y[(i, i)] } else { y[(i, j)] + y[(j, i)] };
            self.objective.linear[v.scalar(k)] += coef * w;
        }
    }

    /// Adds `coef * (v - center)^2`.
    pub fn add_scalar_quadratic_cost(&mut self, v: ScalarVar, center: f64, coef: f64) {
        self.objective.quadratic[v.index] += coef;
        self.objective.linear[v.index] += -2.0 * coef * center;
        self.objective.constant += coef * center * center;
    }

    /// Adds `coef * ||V - target||_F^2`.
    pub fn add_frobenius_cost(&mut self, v: MatVar, target: &DMatrix<f64>, coef: f64) {
        for k in 0..svec_len(v.dim) {
            let (i, j) = svec_entry(k);
            let mult = if i == j { 1.0 } else { 2.0 };
            let t = 0.5 * (target[(i, j)] + target[(j, i)]);
            self.objective.quadratic[v.scalar(k)] += coef * mult;
            self.objective.linear[v.scalar(k)] += -2.0 * coef * mult * t;
            self.objective.constant += coef * mult * t * t;
        }
    }

    /// Renders the problem in a line-oriented text format for debugging.
    pub fn dump(&self) -> String {
        dump::render(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Inaccurate,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: u32,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    pub tol_feas: f64,
    /// Tolerance under which a recomputed violation is accepted as satisfied.
    pub violation_tol: f64,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_gap_abs: 1e-8,
            tol_gap_rel: 1e-8,
            tol_feas: 1e-8,
            violation_tol: 1e-6,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmiSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Recomputed, per constraint, in problem order.
    pub violations: Vec<f64>,
    pub max_violation: f64,
    pub iterations: u32,
    pub message: String,
}

impl LmiSolution {
    pub fn matrix(&self, v: MatVar) -> DMatrix<f64> {
        linalg::unpack_sym(v.dim, &self.x[v.offset..v.offset + svec_len(v.dim)])
    }

    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.x[v.index]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sandwich_matches_dense_product() {
        let mut p = LmiProblem::new();
        let v = p.add_matrix("V", 2);
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 3.0]);
        let mut e = AffineExpr::zeros(3);
        e.add_sandwich(v, &w, 1.0);
        let x = [2.0, -0.7, 1.5];
        let vm = linalg::unpack_sym(2, &x);
        let expect = w.transpose() * &vm * &w;
        assert!((e.evaluate(&x) - expect).amax() < 1e-12);
    }

    #[test]
    fn congruence_matches_dense_product() {
        let mut p = LmiProblem::new();
        let v = p.add_matrix("V", 2);
        let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = DMatrix::from_row_slice(2, 3, &[-1.0, 0.3, 2.0, 0.4, -2.0, 1.0]);
        let mut e = AffineExpr::zeros(3);
        e.add_congruence(v, &l, &r, 1.0);
        let x = [1.0, 0.25, 3.0];
        let vm = linalg::unpack_sym(2, &x);
        let m = l.transpose() * &vm * &r;
        let expect = &m + m.transpose();
        assert!((e.evaluate(&x) - expect).amax() < 1e-12);
    }

    #[test]
    fn frobenius_cost_value() {
        let mut p = LmiProblem::new();
        let v = p.add_matrix("V", 2);
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, -1.0]);
        p.add_frobenius_cost(v, &t, 0.5);
        let x = [0.0, 1.0, 1.0];
        let vm = linalg::unpack_sym(2, &x);
        let expect = 0.5 * (vm - &t).norm_squared();
        assert!((p.objective().value(&x) - expect).abs() < 1e-12);
    }

    #[test]
    fn trace_inner_cost_value() {
        let mut p = LmiProblem::new();
        let v = p.add_matrix("V", 2);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, -3.0, -3.0, 2.0]);
        p.add_trace_inner_cost(v, &y, 2.0);
        let x = [0.5, 1.0, -1.0];
        let vm = linalg::unpack_sym(2, &x);
        let expect = 2.0 * (y.transpose() * vm).trace();
        assert!((p.objective().value(&x) - expect).abs() < 1e-12);
    }
}
