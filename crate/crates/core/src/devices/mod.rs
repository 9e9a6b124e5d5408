//! Device catalog in the common DQ voltage-current input-output form.
//!
//! Each device is `x' = f(x, u)`, `y = h(x, u)` with a two-dimensional port.
//! Voltage-in devices take `u = V_DQ` and return `y = -I_DQ`; current-in
//! devices take `u = -I_DQ` and return `y = V_DQ`. `I` is the current
//! injected into the network.

mod dual;
mod models;
pub mod params;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use dual::{Dual, MAX_VARS};
pub use params::*;

/// Smallest terminal voltage magnitude at which power-to-current resolution is attempted.
pub const MIN_VOLTAGE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DqPair {
    pub d: f64,
    pub q: f64,
}

impl DqPair {
    pub fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    pub fn norm(&self) -> f64 {
        self.d.hypot(self.q)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.d, self.q]
    }

    pub fn is_finite(&self) -> bool {
        self.d.is_finite() && self.q.is_finite()
    }
}

impl From<[f64; 2]> for DqPair {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PortRole {
    /// `u = -I_DQ`, `y = V_DQ`.
    CurrentInVoltageOut,
    /// `u = V_DQ`, `y = -I_DQ`.
    VoltageInCurrentOut,
}

impl PortRole {
    pub fn name(&self) -> &'static str {
        match self {
            PortRole::CurrentInVoltageOut => "current_in",
            PortRole::VoltageInCurrentOut => "voltage_in",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "current_in" => Some(PortRole::CurrentInVoltageOut),
            "voltage_in" => Some(PortRole::VoltageInCurrentOut),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceKind {
    SG3,
    PLL,
    VSG,
    CD,
    QD,
    IntermediateNode,
    ConstVoltage,
    ZIP,
    Linear,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 9] = [
        DeviceKind::SG3,
        DeviceKind::PLL,
        DeviceKind::VSG,
        DeviceKind::CD,
        DeviceKind::QD,
        DeviceKind::IntermediateNode,
        DeviceKind::ConstVoltage,
        DeviceKind::ZIP,
        DeviceKind::Linear,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DeviceKind::SG3 => "SG3",
            DeviceKind::PLL => "PLL",
            DeviceKind::VSG => "VSG",
            DeviceKind::CD => "CD",
            DeviceKind::QD => "QD",
            DeviceKind::IntermediateNode => "IntermediateNode",
            DeviceKind::ConstVoltage => "ConstVoltage",
            DeviceKind::ZIP => "ZIP",
            DeviceKind::Linear => "Linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Port role used when none is requested.
    pub fn default_role(&self) -> PortRole {
        match self {
            DeviceKind::SG3
            | DeviceKind::PLL
            | DeviceKind::IntermediateNode
            | DeviceKind::ZIP
            | DeviceKind::Linear => PortRole::VoltageInCurrentOut,
            DeviceKind::VSG | DeviceKind::CD | DeviceKind::QD | DeviceKind::ConstVoltage => {
                PortRole::CurrentInVoltageOut
            }
        }
    }

    pub fn allows_role(&self, role: PortRole) -> bool {
        matches!(self, DeviceKind::SG3 | DeviceKind::Linear) || role == self.default_role()
    }

    /// `None` for the linear device, whose dimension comes from its matrices.
    pub fn fixed_state_dim(&self) -> Option<usize> {
        match self {
            DeviceKind::SG3 => Some(3),
            DeviceKind::PLL => Some(4),
            DeviceKind::VSG => Some(3),
            DeviceKind::CD | DeviceKind::QD => Some(2),
            DeviceKind::IntermediateNode | DeviceKind::ConstVoltage | DeviceKind::ZIP => Some(0),
            DeviceKind::Linear => None,
        }
    }
}

/// Physical meaning of a state coordinate, used to size sampling boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateClass {
    Angle,
    Frequency,
    Magnitude,
    Other,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceParams {
    Sg3(Sg3Params),
    Pll(PllParams),
    Vsg(VsgParams),
    Cd(DroopParams),
    Qd(DroopParams),
    IntermediateNode,
    ConstVoltage(ConstVoltageParams),
    Zip(ZipParams),
    Linear(LinearParams),
}

impl DeviceParams {
    pub fn kind(&self) -> DeviceKind {
        match self {
            DeviceParams::Sg3(_) => DeviceKind::SG3,
            DeviceParams::Pll(_) => DeviceKind::PLL,
            DeviceParams::Vsg(_) => DeviceKind::VSG,
            DeviceParams::Cd(_) => DeviceKind::CD,
            DeviceParams::Qd(_) => DeviceKind::QD,
            DeviceParams::IntermediateNode => DeviceKind::IntermediateNode,
            DeviceParams::ConstVoltage(_) => DeviceKind::ConstVoltage,
            DeviceParams::Zip(_) => DeviceKind::ZIP,
            DeviceParams::Linear(_) => DeviceKind::Linear,
        }
    }

    pub fn from_map(kind: DeviceKind, map: &ParamMap) -> Result<Self> {
        Ok(match kind {
            DeviceKind::SG3 => DeviceParams::Sg3(Sg3Params::from_map(map)?),
            DeviceKind::PLL => DeviceParams::Pll(PllParams::from_map(map)?),
            DeviceKind::VSG => DeviceParams::Vsg(VsgParams::from_map(map)?),
            DeviceKind::CD => DeviceParams::Cd(DroopParams::from_map("CD", map)?),
            DeviceKind::QD => DeviceParams::Qd(DroopParams::from_map("QD", map)?),
            DeviceKind::IntermediateNode => {
                if let Some(k) = map.keys().next() {
                    return Err(Error::validation(k.clone(), "IntermediateNode takes no parameters"));
                }
                DeviceParams::IntermediateNode
            }
            DeviceKind::ConstVoltage => DeviceParams::ConstVoltage(ConstVoltageParams::from_map(map)?),
            DeviceKind::ZIP => DeviceParams::Zip(ZipParams::from_map(map)?),
            DeviceKind::Linear => {
                return Err(Error::validation(
                    "kind",
                    "linear devices are built from matrices, not parameter maps",
                ))
            }
        })
    }

    pub fn to_map(&self) -> ParamMap {
        match self {
            DeviceParams::Sg3(p) => p.to_map(),
            DeviceParams::Pll(p) => p.to_map(),
            DeviceParams::Vsg(p) => p.to_map(),
            DeviceParams::Cd(p) | DeviceParams::Qd(p) => p.to_map(),
            DeviceParams::IntermediateNode | DeviceParams::Linear(_) => ParamMap::new(),
            DeviceParams::ConstVoltage(p) => p.to_map(),
            DeviceParams::Zip(p) => p.to_map(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DeviceParams::Sg3(p) => p.validate(),
            DeviceParams::Pll(p) => p.validate(),
            DeviceParams::Vsg(p) => p.validate(),
            DeviceParams::Cd(p) | DeviceParams::Qd(p) => p.validate(),
            DeviceParams::Zip(p) => p.validate(),
            DeviceParams::Linear(p) => p.validate(),
            DeviceParams::ConstVoltage(p) => {
                if p.vd.is_finite() && p.vq.is_finite() {
                    Ok(())
                } else {
                    Err(Error::validation("vd", "must be finite"))
                }
            }
            DeviceParams::IntermediateNode => Ok(()),
        }
    }
}

/// `A = df/dx`, `B = df/du`, `Cm = dh/dx`, `Dm = dh/du`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianSet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub cm: DMatrix<f64>,
    pub dm: DMatrix<f64>,
}

impl JacobianSet {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn max_abs_diff(&self, other: &JacobianSet) -> f64 {
        [
            (&self.a, &other.a),
            (&self.b, &other.b),
            (&self.cm, &other.cm),
            (&self.dm, &other.dm),
        ]
        .iter()
        .map(|(x, y)| if x.is_empty() { 0.0 } else { (*x - *y).amax() })
        .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [&self.a, &self.b, &self.cm, &self.dm]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// `T(angle) = [[cos, sin], [-sin, cos]]`, mapping common-frame DQ to a local frame.
pub fn dq_rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Current injected by a ZIP load at terminal voltage `v`.
pub fn zip_injection(params: &ZipParams, v: DqPair) -> Result<DqPair> {
    if !v.is_finite() || v.norm() < MIN_VOLTAGE {
        return Err(Error::Domain(format!(
            "ZIP terminal voltage magnitude {:.3e} below {MIN_VOLTAGE:.0e}",
            v.norm()
        )));
    }
    Ok(models::zip_current(params, v.as_array()).into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceModel {
    params: DeviceParams,
    role: PortRole,
}

/// Builds a device with its default port role.
pub fn build_device(kind: DeviceKind, params: &ParamMap) -> Result<DeviceModel> {
    DeviceModel::new(DeviceParams::from_map(kind, params)?, kind.default_role())
}

impl DeviceModel {
    pub fn new(params: DeviceParams, role: PortRole) -> Result<Self> {
        params.validate()?;
        let kind = params.kind();
        if !kind.allows_role(role) {
            return Err(Error::validation(
                "role",
                format!("{} cannot use port role {}", kind.name(), role.name()),
            ));
        }
        Ok(Self { params, role })
    }

    pub fn with_default_role(params: DeviceParams) -> Result<Self> {
        let role = params.kind().default_role();
        Self::new(params, role)
    }

    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        Self::new(
            DeviceParams::Linear(LinearParams { a, b, c, d }),
            PortRole::VoltageInCurrentOut,
        )
    }

    pub fn kind(&self) -> DeviceKind {
        self.params.kind()
    }

    pub fn params(&self) -> &DeviceParams {
        &self.params
    }

    pub fn port_role(&self) -> PortRole {
        self.role
    }

    pub fn state_dim(&self) -> usize {
        match &self.params {
            DeviceParams::Linear(p) => p.a.nrows(),
            p => p.kind().fixed_state_dim().unwrap_or(0),
        }
    }

    pub fn state_names(&self) -> Vec<String> {
        let fixed: &[&str] = match self.kind() {
            DeviceKind::SG3 => &["delta", "omega", "e_q"],
            DeviceKind::PLL => &["xi", "delta_pll", "p", "q"],
            DeviceKind::VSG => &["theta", "omega", "v"],
            DeviceKind::CD | DeviceKind::QD => &["theta", "v"],
            _ => &[],
        };
        if self.kind() == DeviceKind::Linear {
            (0..self.state_dim()).map(|i| format!("x{i}")).collect()
        } else {
            fixed.iter().map(|s| s.to_string()).collect()
        }
    }

    pub fn state_classes(&self) -> Vec<StateClass> {
        use StateClass::*;
        match self.kind() {
            DeviceKind::SG3 => vec![Angle, Frequency, Magnitude],
            DeviceKind::PLL => vec![Other, Angle, Other, Other],
            DeviceKind::VSG => vec![Angle, Frequency, Magnitude],
            DeviceKind::CD | DeviceKind::QD => vec![Angle, Magnitude],
            _ => vec![Other; self.state_dim()],
        }
    }

    pub fn is_static(&self) -> bool {
        self.state_dim() == 0
    }

    /// Rejects points where the equations are undefined.
    pub fn check_domain(&self, x: &[f64], u: &[f64; 2]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "{} expects {} states, got {}",
                self.kind().name(),
                self.state_dim(),
                x.len()
            )));
        }
        if x.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite state or input".into()));
        }
        let too_small = |what: &str, m: f64| {
            Err(Error::Domain(format!(
                "{} {what} magnitude {m:.3e} below {MIN_VOLTAGE:.0e}",
                self.kind().name()
            )))
        };
        match &self.params {
            DeviceParams::Pll(_) | DeviceParams::Zip(_) => {
                let m = u[0].hypot(u[1]);
                if m < MIN_VOLTAGE {
                    return too_small("terminal voltage", m);
                }
            }
            DeviceParams::Vsg(_) if x[2].abs() < MIN_VOLTAGE => {
                return too_small("internal voltage", x[2].abs())
            }
            _ => {}
        }
        Ok(())
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64; 2]) -> Result<Vec<f64>> {
        self.check_domain(x, u)?;
        Ok(models::dynamics(&self.params, self.role, x, *u))
    }

    pub fn eval_output(&self, x: &[f64], u: &[f64; 2]) -> Result<[f64; 2]> {
        self.check_domain(x, u)?;
        Ok(models::output(&self.params, self.role, x, *u))
    }

    /// Exact Jacobians by forward-mode differentiation.
    pub fn eval_jacobians(&self, x: &[f64], u: &[f64; 2]) -> Result<JacobianSet> {
        self.check_domain(x, u)?;
        let n = self.state_dim();
        if let DeviceParams::Linear(p) = &self.params {
            return Ok(JacobianSet {
                a: p.a.clone(),
                b: p.b.clone(),
                cm: p.c.clone(),
                dm: p.d.clone(),
            });
        }
        debug_assert!(n + 2 <= MAX_VARS);
        let xd: Vec<Dual> = x.iter().enumerate().map(|(i, v)| Dual::var(*v, i)).collect();
        let ud = [Dual::var(u[0], n), Dual::var(u[1], n + 1)];
        let f = models::dynamics(&self.params, self.role, &xd, ud);
        let h = models::output(&self.params, self.role, &xd, ud);
        let jac = |rows: &[Dual], c0: usize, nc: usize| {
            DMatrix::from_fn(rows.len(), nc, |i, j| rows[i].g[c0 + j])
        };
        Ok(JacobianSet {
            a: jac(&f, 0, n),
            b: jac(&f, n, 2),
            cm: jac(&h, 0, n),
            dm: jac(&h, n, 2),
        })
    }

    /// Central-difference Jacobians with step `h`.
    pub fn finite_difference_jacobians(&self, x: &[f64], u: &[f64; 2], h: f64) -> Result<JacobianSet> {
        self.check_domain(x, u)?;
        let n = self.state_dim();
        let eval = |z: &[f64]| {
            let uu = [z[n], z[n + 1]];
            let f = models::dynamics(&self.params, self.role, &z[..n], uu);
            let y = models::output(&self.params, self.role, &z[..n], uu);
            (f, y)
        };
        let mut z: Vec<f64> = x.iter().copied().chain(u.iter().copied()).collect();
        let mut df = DMatrix::zeros(n, n + 2);
        let mut dh = DMatrix::zeros(2, n + 2);
        for k in 0..n + 2 {
            let z0 = z[k];
            z[k] = z0 + h;
            let (fp, yp) = eval(&z);
            z[k] = z0 - h;
            let (fm, ym) = eval(&z);
            z[k] = z0;
            for i in 0..n {
                df[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
            }
            for i in 0..2 {
                dh[(i, k)] = (yp[i] - ym[i]) / (2.0 * h);
            }
        }
        Ok(JacobianSet {
            a: df.columns(0, n).into_owned(),
            b: df.columns(n, 2).into_owned(),
            cm: dh.columns(0, n).into_owned(),
            dm: dh.columns(n, 2).into_owned(),
        })
    }

    /// Terminal voltage and injected current implied by a port pair `(u, y)`.
    pub fn port_quantities(&self, u: &[f64; 2], y: &[f64; 2]) -> (DqPair, DqPair) {
        match self.role {
            PortRole::VoltageInCurrentOut => (DqPair::new(u[0], u[1]), DqPair::new(-y[0], -y[1])),
            PortRole::CurrentInVoltageOut => (DqPair::new(y[0], y[1]), DqPair::new(-u[0], -u[1])),
        }
    }

    /// Active and reactive power injected into the network at `(x, u)`.
    pub fn injected_power(&self, x: &[f64], u: &[f64; 2]) -> Result<(f64, f64)> {
        let y = self.eval_output(x, u)?;
        let (v, i) = self.port_quantities(u, &y);
        Ok((i.d * v.d + i.q * v.q, i.d * v.q - i.q * v.d))
    }

    /// Port input reproducing the given terminal voltage and injected current.
    pub fn input_from_port(&self, v: DqPair, i: DqPair) -> [f64; 2] {
        match self.role {
            PortRole::VoltageInCurrentOut => [v.d, v.q],
            PortRole::CurrentInVoltageOut => [-i.d, -i.q],
        }
    }

    /// Air-gap power of a synchronous generator (`None` for other kinds).
    pub fn electrical_power(&self, x: &[f64], u: &[f64; 2]) -> Option<f64> {
        match &self.params {
            DeviceParams::Sg3(p) => Some(models::sg_electrical_power(p, self.role, x, *u)),
            _ => None,
        }
    }
}
