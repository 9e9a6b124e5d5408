//! Device equations in DQ input-output form, written once over [`Real`] so the
//! same code yields values and exact derivatives.

use super::dual::Real;
use super::params::*;
use super::PortRole;

/// Active and reactive power injected for terminal voltage `v` and injected current `i`.
fn power<T: Real>(v: [T; 2], i: [T; 2]) -> (T, T) {
    (i[0] * v[0] + i[1] * v[1], i[0] * v[1] - i[1] * v[0])
}

/// Current injected for a given complex power at terminal voltage `v`.
fn current_from_power<T: Real>(p: T, q: T, v: [T; 2]) -> [T; 2] {
    let v2 = v[0] * v[0] + v[1] * v[1];
    [(p * v[0] + q * v[1]) / v2, (p * v[1] - q * v[0]) / v2]
}

/// Local dq components for generator angle `delta` (`T(delta) * z`).
fn rotate<T: Real>(delta: T, z: [T; 2]) -> [T; 2] {
    let (c, s) = (delta.cos(), delta.sin());
    [c * z[0] + s * z[1], -(s * z[0]) + c * z[1]]
}

/// Back to the common DQ frame (`T(delta)^T * z`).
fn unrotate<T: Real>(delta: T, z: [T; 2]) -> [T; 2] {
    let (c, s) = (delta.cos(), delta.sin());
    [c * z[0] - s * z[1], s * z[0] + c * z[1]]
}

/// Stator currents (local dq) from terminal voltage (local dq) and `E'_q`.
fn sg_currents<T: Real>(p: &Sg3Params, e_q: T, v_dq: [T; 2]) -> [T; 2] {
    [-v_dq[1] / p.xq, (v_dq[0] - e_q) / p.xd_prime]
}

/// Terminal voltage (local dq) from stator currents (local dq) and `E'_q`.
fn sg_voltages<T: Real>(p: &Sg3Params, e_q: T, i_dq: [T; 2]) -> [T; 2] {
    [e_q + i_dq[1] * p.xd_prime, -(i_dq[0] * p.xq)]
}

/// Local dq stator currents for either port convention.
fn sg_local_currents<T: Real>(p: &Sg3Params, role: PortRole, x: &[T], u: [T; 2]) -> [T; 2] {
    let (delta, e_q) = (x[0], x[2]);
    match role {
        PortRole::VoltageInCurrentOut => sg_currents(p, e_q, rotate(delta, u)),
        PortRole::CurrentInVoltageOut => rotate(delta, [-u[0], -u[1]]),
    }
}

fn sg_dynamics<T: Real>(p: &Sg3Params, role: PortRole, x: &[T], u: [T; 2]) -> Vec<T> {
    let (omega, e_q) = (x[1], x[2]);
    let i_dq = sg_local_currents(p, role, x, u);
    let p_e = e_q * i_dq[0] + i_dq[0] * i_dq[1] * (p.xd_prime - p.xq);
    vec![
        omega,
        (-(omega * p.d) - p_e + p.pm) / p.m,
        (-e_q + i_dq[0] * (p.xd - p.xd_prime) + p.ef) / p.t_d0,
    ]
}

fn sg_output<T: Real>(p: &Sg3Params, role: PortRole, x: &[T], u: [T; 2]) -> [T; 2] {
    let (delta, e_q) = (x[0], x[2]);
    match role {
        PortRole::VoltageInCurrentOut => {
            let i = unrotate(delta, sg_local_currents(p, role, x, u));
            [-i[0], -i[1]]
        }
        PortRole::CurrentInVoltageOut => {
            let i_dq = sg_local_currents(p, role, x, u);
            unrotate(delta, sg_voltages(p, e_q, i_dq))
        }
    }
}

/// Electrical power of the generator, usable from either representation.
pub(crate) fn sg_electrical_power(p: &Sg3Params, role: PortRole, x: &[f64], u: [f64; 2]) -> f64 {
    let i_dq = sg_local_currents(p, role, x, u);
    x[2] * i_dq[0] + i_dq[0] * i_dq[1] * (p.xd_prime - p.xq)
}

fn pll_dynamics<T: Real>(p: &PllParams, x: &[T], u: [T; 2]) -> Vec<T> {
    let (xi, delta, pw, qw) = (x[0], x[1], x[2], x[3]);
    // V sin(theta - delta_pll) without forming the angle explicitly
    let v_d_local = u[1] * delta.cos() - u[0] * delta.sin();
    let v_mag = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let omega = v_d_local * p.kp + xi * p.ki;
    vec![
        v_d_local,
        omega,
        (-pw + p.p_ref - omega * p.d1) / p.tau1,
        (-qw + p.q_ref - (v_mag - p.v_ref) * p.d2) / p.tau2,
    ]
}

fn pll_output<T: Real>(x: &[T], u: [T; 2]) -> [T; 2] {
    let i = current_from_power(x[2], x[3], u);
    [-i[0], -i[1]]
}

fn polar<T: Real>(theta: T, v: T) -> [T; 2] {
    [v * theta.cos(), v * theta.sin()]
}

fn vsg_dynamics<T: Real>(p: &VsgParams, x: &[T], u: [T; 2]) -> Vec<T> {
    let (theta, omega, v) = (x[0], x[1], x[2]);
    let (pw, qw) = power(polar(theta, v), [-u[0], -u[1]]);
    vec![
        omega,
        (-(omega * p.d) - pw + p.p_ref - theta * p.k_i) / p.m,
        (-(v - p.v_ref) + (-qw + p.q_ref) * p.k_q / v) / p.t,
    ]
}

fn droop_angle<T: Real>(p: &DroopParams, theta: T, pw: T) -> T {
    (-(theta - p.theta_ref) - (pw - p.p_ref) * p.d1) / p.tau1
}

fn cd_dynamics<T: Real>(p: &DroopParams, x: &[T], u: [T; 2]) -> Vec<T> {
    let (theta, v) = (x[0], x[1]);
    let (pw, qw) = power(polar(theta, v), [-u[0], -u[1]]);
    vec![
        droop_angle(p, theta, pw),
        (-(v - p.v_ref) - (qw - p.q_ref) * p.d2) / p.tau2,
    ]
}

fn qd_dynamics<T: Real>(p: &DroopParams, x: &[T], u: [T; 2]) -> Vec<T> {
    let (theta, v) = (x[0], x[1]);
    let (pw, qw) = power(polar(theta, v), [-u[0], -u[1]]);
    vec![
        droop_angle(p, theta, pw),
        (-(qw * p.d2) - v * (v - p.qd_u_ref())) / p.tau2,
    ]
}

/// Load powers `(P^L, Q^L)` at terminal voltage `v`.
fn zip_loads<T: Real>(p: &ZipParams, v: [T; 2]) -> (T, T) {
    let v2 = v[0] * v[0] + v[1] * v[1];
    let mag = v2.sqrt();
    (
        v2 * p.zp + mag * p.ip + p.p0,
        v2 * p.zq + mag * p.iq + p.q0,
    )
}

/// Output `y = -I` of a ZIP load.
fn zip_output<T: Real>(p: &ZipParams, u: [T; 2]) -> [T; 2] {
    let (pl, ql) = zip_loads(p, u);
    let i = current_from_power(-pl, -ql, u);
    [-i[0], -i[1]]
}

fn linear_dynamics<T: Real>(p: &LinearParams, x: &[T], u: [T; 2]) -> Vec<T> {
    let n = p.a.nrows();
    (0..n)
        .map(|i| {
            let mut acc = u[0] * p.b[(i, 0)] + u[1] * p.b[(i, 1)];
            for (j, xj) in x.iter().enumerate() {
                acc = acc + *xj * p.a[(i, j)];
            }
            acc
        })
        .collect()
}

fn linear_output<T: Real>(p: &LinearParams, x: &[T], u: [T; 2]) -> [T; 2] {
    let mut y = [T::cst(0.0); 2];
    for (i, yi) in y.iter_mut().enumerate() {
        let mut acc = u[0] * p.d[(i, 0)] + u[1] * p.d[(i, 1)];
        for (j, xj) in x.iter().enumerate() {
            acc = acc + *xj * p.c[(i, j)];
        }
        *yi = acc;
    }
    y
}

pub(crate) fn dynamics<T: Real>(
    params: &super::DeviceParams,
    role: PortRole,
    x: &[T],
    u: [T; 2],
) -> Vec<T> {
    use super::DeviceParams as P;
    match params {
        P::Sg3(p) => sg_dynamics(p, role, x, u),
        P::Pll(p) => pll_dynamics(p, x, u),
        P::Vsg(p) => vsg_dynamics(p, x, u),
        P::Cd(p) => cd_dynamics(p, x, u),
        P::Qd(p) => qd_dynamics(p, x, u),
        P::Linear(p) => linear_dynamics(p, x, u),
        P::IntermediateNode | P::ConstVoltage(_) | P::Zip(_) => Vec::new(),
    }
}

pub(crate) fn output<T: Real>(
    params: &super::DeviceParams,
    role: PortRole,
    x: &[T],
    u: [T; 2],
) -> [T; 2] {
    use super::DeviceParams as P;
    match params {
        P::Sg3(p) => sg_output(p, role, x, u),
        P::Pll(_) => pll_output(x, u),
        P::Vsg(_) => polar(x[0], x[2]),
        P::Cd(_) | P::Qd(_) => polar(x[0], x[1]),
        P::Linear(p) => linear_output(p, x, u),
        P::IntermediateNode => [T::cst(0.0), T::cst(0.0)],
        P::ConstVoltage(p) => [T::cst(p.vd), T::cst(p.vq)],
        P::Zip(p) => zip_output(p, u),
    }
}

/// Current injected by a ZIP load at terminal voltage `v`.
pub(crate) fn zip_current(p: &ZipParams, v: [f64; 2]) -> [f64; 2] {
    let y = zip_output(p, v);
    [-y[0], -y[1]]
}
