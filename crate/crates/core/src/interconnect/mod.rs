//! Network interconnection of device ports and the coupling inequality.
//!
//! With `I = Y V` (injected currents), every bus port satisfies `u = -C y`.
//! Current-in buses (set `a`) have `u = -I`, `y = V`; voltage-in buses (set
//! `b`) have `u = V`, `y = -I`. Eliminating `V_b` gives the hybrid form
//!
//! ```text
//! C = [[Yaa - Yab Ybb^-1 Yba, -Yab Ybb^-1],
//!      [Ybb^-1 Yba,            Ybb^-1     ]]
//! ```
//!
//! `P_pi` reorders the global `(u; y)` into per-bus `(u_i, y_i)` blocks, so
//! `l^c = [-C; I]^T P_pi^T blkdiag(X_i) P_pi [-C; I] = sum_i W_i^T X_i W_i`
//! with `W_i` the four rows of `P_pi [-C; I]` belonging to bus `i`.

mod centralized;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::devices::PortRole;
use crate::error::{Error, Result};
use crate::linalg;

pub use centralized::{verify_coupling_centralized, CouplingOptions, CouplingResult, LocalConstraint};

/// A series branch with total line-charging susceptance `b` split between its
/// ends. `tap` is an off-nominal ratio on the `from` side (1 for plain lines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineData {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "unit_tap")]
    pub tap: f64,
}

fn unit_tap() -> f64 {
    1.0
}

impl LineData {
    pub fn new(from: usize, to: usize, r: f64, x: f64, b: f64) -> Self {
        Self { from, to, r, x, b, tap: 1.0 }
    }

    pub fn with_tap(mut self, tap: f64) -> Self {
        self.tap = tap;
        self
    }
}

/// Real `2 x 2` block of the complex number `g + jb`.
fn complex_block(g: f64, b: f64) -> [[f64; 2]; 2] {
    [[g, -b], [b, g]]
}

fn add_block(m: &mut DMatrix<f64>, i: usize, j: usize, blk: [[f64; 2]; 2], sign: f64) {
    for (r, row) in blk.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            m[(2 * i + r, 2 * j + c)] += sign * v;
        }
    }
}

/// Bus admittance matrix in real DQ form (`2N x 2N`), buses indexed from 0.
pub fn build_admittance(lines: &[LineData], n: usize) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(2 * n, 2 * n);
    for (k, l) in lines.iter().enumerate() {
        if l.from >= n || l.to >= n {
            return Err(Error::validation(
                format!("lines[{k}]"),
                format!("bus index out of range 0..{n} ({} -> {})", l.from, l.to),
            ));
        }
        if l.from == l.to {
            return Err(Error::validation(format!("lines[{k}]"), "both ends on the same bus"));
        }
        let z2 = l.r * l.r + l.x * l.x;
        if !(z2 > 0.0) || !z2.is_finite() || !l.b.is_finite() {
            return Err(Error::validation(format!("lines[{k}]"), "needs finite nonzero impedance"));
        }
        if !(l.tap > 0.0) || !l.tap.is_finite() {
            return Err(Error::validation(format!("lines[{k}]"), "tap ratio must be finite and > 0"));
        }
        let series = complex_block(l.r / z2, -l.x / z2);
        let shunt = complex_block(0.0, 0.5 * l.b);
        let t = l.tap;
        add_block(&mut y, l.from, l.from, series, 1.0 / (t * t));
        add_block(&mut y, l.to, l.to, series, 1.0);
        add_block(&mut y, l.from, l.to, series, -1.0 / t);
        add_block(&mut y, l.to, l.from, series, -1.0 / t);
        add_block(&mut y, l.from, l.from, shunt, 1.0 / (t * t));
        add_block(&mut y, l.to, l.to, shunt, 1.0);
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct Interconnection {
    n: usize,
    c: DMatrix<f64>,
    roles: Vec<PortRole>,
    /// Rows of `P_pi [-C; I]` per bus, each `4 x 2N`.
    bus_maps: Vec<DMatrix<f64>>,
}

fn real_indices(buses: &[usize]) -> Vec<usize> {
    buses.iter().flat_map(|b| [2 * b, 2 * b + 1]).collect()
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Builds `C`, `P_pi` and the per-bus maps from the admittance and port roles.
///
/// Voltage-in buses without any network connection have an undetermined
/// input; their rows and columns of `C` are zero.
pub fn build_interconnection(y: &DMatrix<f64>, roles: &[PortRole]) -> Result<Interconnection> {
    let n = roles.len();
    if y.shape() != (2 * n, 2 * n) {
        return Err(Error::Dimension(format!(
            "admittance is {:?}, expected {}x{}",
            y.shape(),
            2 * n,
            2 * n
        )));
    }
    let isolated = |i: usize| (0..2 * n).all(|j| y[(2 * i, j)] == 0.0 && y[(2 * i + 1, j)] == 0.0);
    let a: Vec<usize> = (0..n).filter(|i| roles[*i] == PortRole::CurrentInVoltageOut).collect();
    let b: Vec<usize> = (0..n)
        .filter(|i| roles[*i] == PortRole::VoltageInCurrentOut && !isolated(*i))
        .collect();
    let (ra, rb) = (real_indices(&a), real_indices(&b));
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    let yaa = select(y, &ra, &ra);
    if b.is_empty() {
        for (i, gi) in ra.iter().enumerate() {
            for (j, gj) in ra.iter().enumerate() {
                c[(*gi, *gj)] = yaa[(i, j)];
            }
        }
    } else {
        let ybb = select(y, &rb, &rb);
        let sv = ybb.clone().svd(false, false).singular_values;
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > 1e-12 * smax.max(1.0)) {
            return Err(Error::Structural(format!(
                "admittance block of voltage-in buses is singular (smallest singular value {smin:.3e}); \
                 give at least one bus per island a current-in role"
            )));
        }
        let ybb_inv = ybb
            .try_inverse()
            .ok_or_else(|| Error::Structural("voltage-in admittance block not invertible".into()))?;
        let yab = select(y, &ra, &rb);
        let yba = select(y, &rb, &ra);
        let c_ab = -(&yab * &ybb_inv);
        let c_aa = &yaa + &c_ab * &yba;
        let c_ba = &ybb_inv * &yba;
        let blocks = [(&ra, &ra, c_aa), (&ra, &rb, c_ab), (&rb, &ra, c_ba), (&rb, &rb, ybb_inv)];
        for (rows, cols, m) in blocks {
            for (i, gi) in rows.iter().enumerate() {
                for (j, gj) in cols.iter().enumerate() {
                    c[(*gi, *gj)] = m[(i, j)];
                }
            }
        }
    }
    if !linalg::all_finite(&c) {
        return Err(Error::Structural("coupling matrix has non-finite entries".into()));
    }
    let bus_maps = (0..n)
        .map(|i| {
            let mut w = DMatrix::zeros(4, 2 * n);
            for r in 0..2 {
                for j in 0..2 * n {
                    w[(r, j)] = -c[(2 * i + r, j)];
                }
                w[(2 + r, 2 * i + r)] = 1.0;
            }
            w
        })
        .collect();
    Ok(Interconnection {
        n,
        c,
        roles: roles.to_vec(),
        bus_maps,
    })
}

impl Interconnection {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn roles(&self) -> &[PortRole] {
        &self.roles
    }

    /// Rows of `P_pi [-C; I]` for bus `i`.
    pub fn bus_map(&self, i: usize) -> &DMatrix<f64> {
        &self.bus_maps[i]
    }

    /// Permutation from `(u_1..u_N, y_1..y_N)` to `(u_1, y_1, .., u_N, y_N)`.
    pub fn p_pi(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut p = DMatrix::zeros(4 * n, 4 * n);
        for i in 0..n {
            for r in 0..2 {
                p[(4 * i + r, 2 * i + r)] = 1.0;
                p[(4 * i + 2 + r, 2 * n + 2 * i + r)] = 1.0;
            }
        }
        p
    }

    /// `max |u + C y|` over the stacked port vectors.
    pub fn consistency_residual(&self, u: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
        let yv = nalgebra::DVector::from_iterator(2 * self.n, y.iter().flatten().copied());
        let uv = nalgebra::DVector::from_iterator(2 * self.n, u.iter().flatten().copied());
        (uv + &self.c * yv).amax()
    }

    /// `G_ij = W_i W_j^T`, the `4 x 4` blocks of the Gram operator of `l^c`.
    pub fn gram_blocks(&self) -> Vec<Vec<DMatrix<f64>>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| &self.bus_maps[i] * self.bus_maps[j].transpose())
                    .collect()
            })
            .collect()
    }
}

/// `sum_i W_i^T X_i W_i`.
pub fn assemble_lc(ic: &Interconnection, xs: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if xs.len() != ic.n {
        return Err(Error::Dimension(format!("{} supply rates for {} buses", xs.len(), ic.n)));
    }
    let mut out = DMatrix::zeros(2 * ic.n, 2 * ic.n);
    for (i, x) in xs.iter().enumerate() {
        if x.shape() != (4, 4) {
            return Err(Error::Dimension(format!("bus {i}: supply rate is {:?}, expected 4x4", x.shape())));
        }
        let w = &ic.bus_maps[i];
        out += w.transpose() * x * w;
    }
    Ok(linalg::symmetrize(&out))
}

#[cfg(test)]
mod tests;
