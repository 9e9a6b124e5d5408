//! Stacked residual of the network DAE in the unknowns `w = (x, V)`.
//!
//! Device rows are `f_i(x_i, u_i)`. Port rows are `(Y V)_i + y_i` on
//! voltage-in buses and `V_i - y_i` on current-in buses, with `u_i = V_i` or
//! `u_i = -(Y V)_i` respectively.

use nalgebra::{DMatrix, DVector};

use super::case::NetworkCase;
use crate::devices::{DeviceModel, DeviceParams, PortRole, Sg3Params};
use crate::error::{Error, Result};

/// Balance generator adjusting `(P^m, E_f)` to hold its terminal voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceTarget {
    /// Bus position.
    pub bus: usize,
    pub v_mag: f64,
    pub v_angle: f64,
}

#[derive(Debug, Clone)]
pub struct NetworkSystem {
    pub(crate) models: Vec<DeviceModel>,
    pub(crate) y: DMatrix<f64>,
    pub(crate) offsets: Vec<usize>,
    pub(crate) nx: usize,
    pub(crate) n: usize,
    pub(crate) balance: Option<BalanceTarget>,
}

pub(crate) fn sg_params(m: &DeviceModel) -> Option<&Sg3Params> {
    match m.params() {
        DeviceParams::Sg3(p) => Some(p),
        _ => None,
    }
}

impl NetworkSystem {
    pub fn new(case: &NetworkCase) -> Result<Self> {
        case.validate()?;
        let (offsets, nx) = case.state_offsets();
        Ok(Self {
            models: case.models(),
            y: case.admittance()?,
            offsets,
            nx,
            n: case.n(),
            balance: None,
        })
    }

    /// Number of unknowns: states, bus voltages and the two balance parameters when active.
    pub fn dim(&self) -> usize {
        self.nx + 2 * self.n + if self.balance.is_some() { 2 } else { 0 }
    }

    pub fn with_balance(mut self, target: BalanceTarget) -> Result<Self> {
        if sg_params(&self.models[target.bus]).is_none() {
            return Err(Error::validation("balance_bus", "balance bus must host an SG3"));
        }
        self.balance = Some(target);
        Ok(self)
    }

    /// Current `(P^m, E_f)` of the balance generator.
    pub fn balance_params(&self) -> Option<[f64; 2]> {
        let b = self.balance?;
        sg_params(&self.models[b.bus]).map(|p| [p.pm, p.ef])
    }

    pub fn set_balance_params(&mut self, pm: f64, ef: f64) {
        if let Some(b) = self.balance {
            let m = &self.models[b.bus];
            if let Some(p) = sg_params(m) {
                let p = Sg3Params { pm, ef, ..p.clone() };
                self.models[b.bus] = DeviceModel::new(DeviceParams::Sg3(p), m.port_role()).expect("balance update keeps SG valid");
            }
        }
    }

    pub fn models(&self) -> &[DeviceModel] {
        &self.models
    }

    pub fn admittance(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn num_states(&self) -> usize {
        self.nx
    }

    pub fn num_buses(&self) -> usize {
        self.n
    }

    pub fn state_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.models[i].state_dim()
    }

    /// `Y V` per bus.
    pub fn currents(&self, v: &[f64]) -> Vec<[f64; 2]> {
        let vv = DVector::from_column_slice(v);
        let i = &self.y * vv;
        (0..self.n).map(|k| [i[2 * k], i[2 * k + 1]]).collect()
    }

    pub fn inputs(&self, v: &[f64]) -> Vec<[f64; 2]> {
        let cur = self.currents(v);
        (0..self.n)
            .map(|k| match self.models[k].port_role() {
                PortRole::VoltageInCurrentOut => [v[2 * k], v[2 * k + 1]],
                PortRole::CurrentInVoltageOut => [-cur[k][0], -cur[k][1]],
            })
            .collect()
    }

    /// Applies the balance parameters carried in `w` (if any) to a copy of the system.
    fn resolved(&self, w: &[f64]) -> std::borrow::Cow<'_, Self> {
        match self.balance {
            Some(_) => {
                let k = self.nx + 2 * self.n;
                let mut s = self.clone();
                s.set_balance_params(w[k], w[k + 1]);
                std::borrow::Cow::Owned(s)
            }
            None => std::borrow::Cow::Borrowed(self),
        }
    }

    /// Device residual and port residual, stacked.
    pub fn residual(&self, w: &[f64]) -> Result<DVector<f64>> {
        let sys = self.resolved(w);
        let (x, v) = (&w[..self.nx], &w[self.nx..self.nx + 2 * self.n]);
        let cur = sys.currents(v);
        let u = sys.inputs(v);
        let mut r = DVector::zeros(self.dim());
        for k in 0..self.n {
            let m = &sys.models[k];
            let xs = &x[self.state_range(k)];
            let f = m.eval_dynamics(xs, &u[k])?;
            for (j, fj) in f.iter().enumerate() {
                r[self.offsets[k] + j] = *fj;
            }
            let y = m.eval_output(xs, &u[k])?;
            let row = self.nx + 2 * k;
            match m.port_role() {
                PortRole::VoltageInCurrentOut => {
                    r[row] = cur[k][0] + y[0];
                    r[row + 1] = cur[k][1] + y[1];
                }
                PortRole::CurrentInVoltageOut => {
                    r[row] = v[2 * k] - y[0];
                    r[row + 1] = v[2 * k + 1] - y[1];
                }
            }
        }
        if let Some(b) = self.balance {
            let (vd, vq) = (v[2 * b.bus], v[2 * b.bus + 1]);
            let k = self.nx + 2 * self.n;
            r[k] = vd.hypot(vq) - b.v_mag;
            r[k + 1] = vq * b.v_angle.cos() - vd * b.v_angle.sin();
        }
        Ok(r)
    }

    /// Analytic Jacobian of [`residual`](Self::residual).
    pub fn jacobian(&self, w: &[f64]) -> Result<DMatrix<f64>> {
        let sys = self.resolved(w);
        let nv = 2 * self.n;
        let (x, v) = (&w[..self.nx], &w[self.nx..self.nx + nv]);
        let u = sys.inputs(v);
        let mut jm = DMatrix::zeros(self.dim(), self.dim());
        let yb = |i: usize, j: usize| self.y.view((2 * i, 2 * j), (2, 2)).into_owned();
        for k in 0..self.n {
            let m = &sys.models[k];
            let nk = m.state_dim();
            let o = self.offsets[k];
            let jac = m.eval_jacobians(&x[self.state_range(k)], &u[k])?;
            let row = self.nx + 2 * k;
            let ci = m.port_role() == PortRole::CurrentInVoltageOut;
            if nk > 0 {
                jm.view_mut((o, o), (nk, nk)).copy_from(&jac.a);
                let cm = if ci { -&jac.cm } else { jac.cm.clone() };
                jm.view_mut((row, o), (2, nk)).copy_from(&cm);
            }
            if ci {
                // u_k = -(Y V)_k
                for j in 0..self.n {
                    let ykj = yb(k, j);
                    if ykj.amax() == 0.0 {
                        continue;
                    }
                    if nk > 0 {
                        let blk = -(&jac.b * &ykj);
                        jm.view_mut((o, self.nx + 2 * j), (nk, 2)).copy_from(&blk);
                    }
                    let blk = &jac.dm * &ykj;
                    jm.view_mut((row, self.nx + 2 * j), (2, 2)).copy_from(&blk);
                }
                jm[(row, self.nx + 2 * k)] += 1.0;
                jm[(row + 1, self.nx + 2 * k + 1)] += 1.0;
            } else {
                if nk > 0 {
                    jm.view_mut((o, self.nx + 2 * k), (nk, 2)).copy_from(&jac.b);
                }
                for j in 0..self.n {
                    let ykj = yb(k, j);
                    if ykj.amax() != 0.0 {
                        jm.view_mut((row, self.nx + 2 * j), (2, 2)).copy_from(&ykj);
                    }
                }
                let mut diag = jm.view((row, self.nx + 2 * k), (2, 2)).into_owned();
                diag += &jac.dm;
                jm.view_mut((row, self.nx + 2 * k), (2, 2)).copy_from(&diag);
            }
        }
        if let Some(b) = self.balance {
            let k = self.nx + nv;
            let p = sg_params(&sys.models[b.bus]).expect("checked in with_balance");
            let o = self.offsets[b.bus];
            // omega' row depends on P^m, E'_q' row on E_f
            jm[(o + 1, k)] = 1.0 / p.m;
            jm[(o + 2, k + 1)] = 1.0 / p.t_d0;
            let (vd, vq) = (v[2 * b.bus], v[2 * b.bus + 1]);
            let mag = vd.hypot(vq).max(1e-12);
            let c = self.nx + 2 * b.bus;
            jm[(k, c)] = vd / mag;
            jm[(k, c + 1)] = vq / mag;
            jm[(k + 1, c)] = -b.v_angle.sin();
            jm[(k + 1, c + 1)] = b.v_angle.cos();
        }
        Ok(jm)
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub w: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Damped Newton with backtracking on `||F||_2`.
pub fn newton(sys: &NetworkSystem, w0: &[f64], max_iter: usize, tol: f64) -> NewtonReport {
    newton_with(w0, max_iter, tol, |w| sys.residual(w), |w| sys.jacobian(w))
}

pub(crate) fn newton_with(
    w0: &[f64],
    max_iter: usize,
    tol: f64,
    res: impl Fn(&[f64]) -> Result<DVector<f64>>,
    jac: impl Fn(&[f64]) -> Result<DMatrix<f64>>,
) -> NewtonReport {
    let fail = |w: Vec<f64>, it, r| NewtonReport {
        w,
        iterations: it,
        residual: r,
        converged: false,
    };
    let mut w = w0.to_vec();
    let mut r = match res(&w) {
        Ok(r) => r,
        Err(_) => return fail(w, 0, f64::INFINITY),
    };
    for it in 0..=max_iter {
        let rn = r.amax();
        if rn <= tol {
            return NewtonReport {
                w,
                iterations: it,
                residual: rn,
                converged: true,
            };
        }
        if it == max_iter {
            return fail(w, it, rn);
        }
        let j = match jac(&w) {
            Ok(j) => j,
            Err(_) => return fail(w, it, rn),
        };
        let step = match j.lu().solve(&(-&r)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return fail(w, it, rn),
        };
        let n0 = r.norm();
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1.0 / 1024.0 {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, d)| a + alpha * d).collect();
            if let Ok(rt) = res(&trial) {
                if rt.iter().all(|v| v.is_finite()) && rt.norm() <= (1.0 - 1e-4 * alpha) * n0 {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((wt, rt)) => {
                w = wt;
                r = rt;
            }
            None => return fail(w, it, rn),
        }
    }
    unreachable!()
}
