//! Projection onto `{Z : l^c(Z) <= 0}` for the coordinator step.
//!
//! Solved as `min 1/2 ||Z - V||^2` s.t. `l^c(Z) = M`, `M <= 0` by an inner
//! splitting method. The `Z`-step is a linear solve with `I + sigma L*L`,
//! where `L*L` is assembled from the blocks `G_ij = W_i W_j^T` and factored
//! once per `sigma`. A final uniform shift of the output blocks removes any
//! remaining violation exactly: lowering every `R_i` by `delta I` lowers
//! `l^c` by `delta I`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::interconnect::{assemble_lc, Interconnection};
use crate::linalg::{lambda_max, symmetrize};

const SQRT2: f64 = std::f64::consts::SQRT_2;
const PACKED: usize = 10;

/// Isometric packing of a symmetric `4 x 4` matrix (off-diagonals times sqrt 2).
fn svec_iso(m: &DMatrix<f64>, out: &mut [f64]) {
    let mut k = 0;
    for j in 0..4 {
        for i in 0..=j {
            out[k] = if i == j { m[(i, i)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            k += 1;
        }
    }
}

fn smat_iso(v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(4, 4);
    let mut k = 0;
    for j in 0..4 {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                m[(i, j)] = v[k] / SQRT2;
                m[(j, i)] = v[k] / SQRT2;
            }
            k += 1;
        }
    }
    m
}

fn iso_basis(k: usize) -> DMatrix<f64> {
    let mut v = [0.0; PACKED];
    v[k] = 1.0;
    smat_iso(&v)
}

fn project_nsd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = symmetrize(m).symmetric_eigen();
    let d = e.eigenvalues.map(|v| v.min(0.0));
    &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectorOptions {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_inner: usize,
}

impl Default for ProjectorOptions {
    fn default() -> Self {
        Self {
            eps_abs: 1e-8,
            eps_rel: 1e-7,
            max_inner: 3000,
        }
    }
}

/// Statistics of one projection.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ProjectionStats {
    pub inner_iterations: usize,
    /// Shift applied to restore exact feasibility.
    pub restoration: f64,
    pub lambda_max_lc: f64,
}

/// Warm-started projector bound to one interconnection.
pub struct CouplingProjector {
    ic: Interconnection,
    /// `L*L` in isometric coordinates, `10N x 10N`.
    gram: DMatrix<f64>,
    sigma: f64,
    factor: Cholesky<f64, Dyn>,
    lam: DMatrix<f64>,
    m: DMatrix<f64>,
    opts: ProjectorOptions,
}

impl CouplingProjector {
    pub fn new(ic: &Interconnection, opts: ProjectorOptions) -> Self {
        let n = ic.n();
        let mut gram = DMatrix::zeros(PACKED * n, PACKED * n);
        let basis: Vec<DMatrix<f64>> = (0..PACKED).map(iso_basis).collect();
        let mut col = [0.0; PACKED];
        for i in 0..n {
            for j in 0..n {
                let g = ic.bus_map(i) * ic.bus_map(j).transpose();
                if g.amax() == 0.0 {
                    continue;
                }
                for (k, e) in basis.iter().enumerate() {
                    svec_iso(&(&g * e * g.transpose()), &mut col);
                    for (r, v) in col.iter().enumerate() {
                        gram[(PACKED * i + r, PACKED * j + k)] = *v;
                    }
                }
            }
        }
        let gram = symmetrize(&gram);
        let norm = lambda_max(&gram).max(1e-12);
        let sigma = 1.0 / norm;
        let factor = Self::factorize(&gram, sigma);
        Self {
            ic: ic.clone(),
            gram,
            sigma,
            factor,
            lam: DMatrix::zeros(2 * n, 2 * n),
            m: DMatrix::zeros(2 * n, 2 * n),
            opts,
        }
    }

    fn factorize(gram: &DMatrix<f64>, sigma: f64) -> Cholesky<f64, Dyn> {
        let a = DMatrix::identity(gram.nrows(), gram.ncols()) + gram * sigma;
        Cholesky::new(a).expect("I + sigma L*L is positive definite")
    }

    /// `L*(M)_i = W_i M W_i^T`.
    fn adjoint(&self, m: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        (0..self.ic.n())
            .map(|i| {
                let w = self.ic.bus_map(i);
                w * m * w.transpose()
            })
            .collect()
    }

    /// Nearest (Frobenius) `Z` to `v` with `l^c(Z) <= 0`.
    pub fn project(&mut self, v: &[DMatrix<f64>]) -> (Vec<DMatrix<f64>>, ProjectionStats) {
        let n = self.ic.n();
        let vnorm = v.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
        let mut z = v.to_vec();
        let mut rhs = DVector::zeros(PACKED * n);
        let mut last_refactor = 0;
        let mut iters = 0;
        for it in 0..self.opts.max_inner {
            iters = it + 1;
            let pull = self.adjoint(&(&self.m * self.sigma - &self.lam));
            for i in 0..n {
                let blk = &v[i] + &pull[i];
                svec_iso(&blk, &mut rhs.as_mut_slice()[PACKED * i..PACKED * (i + 1)]);
            }
            let sol = self.factor.solve(&rhs);
            for (i, zi) in z.iter_mut().enumerate() {
                *zi = smat_iso(&sol.as_slice()[PACKED * i..PACKED * (i + 1)]);
            }
            let lz = assemble_lc(&self.ic, &z).expect("block sizes fixed at construction");
            let m_old = std::mem::replace(&mut self.m, project_nsd(&(&lz + &self.lam / self.sigma)));
            let gap = &lz - &self.m;
            self.lam += &gap * self.sigma;
            let r = gap.norm();
            let s = self.sigma * self.adjoint(&(&self.m - &m_old)).iter().map(|b| b.norm_squared()).sum::<f64>().sqrt();
            let r_tol = self.opts.eps_abs + self.opts.eps_rel * lz.norm().max(self.m.norm());
            let s_tol = self.opts.eps_abs + self.opts.eps_rel * vnorm.max(1.0);
            if r <= r_tol && s <= s_tol {
                break;
            }
            // keep the two residuals within a factor 10 of each other; refactor sparingly
            if it - last_refactor >= 25 {
                let scale = if r > 10.0 * s * (r_tol / s_tol) {
                    Some(4.0)
                } else if s > 10.0 * r * (s_tol / r_tol) {
                    Some(0.25)
                } else {
                    None
                };
                if let Some(f) = scale {
                    self.sigma *= f;
                    self.factor = Self::factorize(&self.gram, self.sigma);
                    last_refactor = it;
                }
            }
        }
        let lam_max = lambda_max(&assemble_lc(&self.ic, &z).expect("fixed sizes"));
        let delta = lam_max.max(0.0);
        if delta > 0.0 {
            for zi in z.iter_mut() {
                zi[(2, 2)] -= delta;
                zi[(3, 3)] -= delta;
            }
        }
        let lam_final = lambda_max(&assemble_lc(&self.ic, &z).expect("fixed sizes"));
        (
            z.iter().map(symmetrize).collect(),
            ProjectionStats {
                inner_iterations: iters,
                restoration: delta,
                lambda_max_lc: lam_final,
            },
        )
    }
}
