//! Local delta dissipativity of single devices.
//!
//! Margins follow one sign convention throughout: a margin is the largest
//! eigenvalue of a matrix that must be negative semidefinite, so
//! `margin <= 0` means the condition holds at that point.

mod region;
mod sampling;
mod verify;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::devices::{DeviceModel, JacobianSet, ZipParams, DeviceParams};
use crate::error::{Error, Result};
use crate::linalg::{self, lambda_max, lambda_min};

pub use region::{characterize_region, cross_section, membership, CrossSection, DissipativeRegion, Membership};
pub use sampling::{BoxSpec, SampleBox};
pub use verify::{verify_dynamic, verify_static, LocalLmiSet, ObjectiveHint, VerifyOptions, VerifyOutcome};

/// Port dimension of every device.
pub const PORT_DIM: usize = 2;

/// Symmetric `4 x 4` supply rate `[[Q, S], [S^T, R]]` acting on `(u', y')`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyRateMatrix(DMatrix<f64>);

impl SupplyRateMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.shape() != (2 * PORT_DIM, 2 * PORT_DIM) {
            return Err(Error::Dimension(format!("supply rate must be 4x4, got {:?}", m.shape())));
        }
        if !linalg::all_finite(&m) {
            return Err(Error::validation("X", "non-finite entry"));
        }
        let scale = m.amax().max(1.0);
        if linalg::asymmetry(&m) > 1e-10 * scale {
            return Err(Error::validation("X", "not symmetric"));
        }
        Ok(Self(linalg::symmetrize(&m)))
    }

    pub fn from_blocks(q: &DMatrix<f64>, s: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Self> {
        let mut m = DMatrix::zeros(4, 4);
        m.view_mut((0, 0), (2, 2)).copy_from(q);
        m.view_mut((0, 2), (2, 2)).copy_from(s);
        m.view_mut((2, 0), (2, 2)).copy_from(&s.transpose());
        m.view_mut((2, 2), (2, 2)).copy_from(r);
        Self::new(m)
    }

    pub fn zeros() -> Self {
        Self(DMatrix::zeros(4, 4))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn q(&self) -> DMatrix<f64> {
        self.0.view((0, 0), (2, 2)).into_owned()
    }

    pub fn s(&self) -> DMatrix<f64> {
        self.0.view((0, 2), (2, 2)).into_owned()
    }

    pub fn r(&self) -> DMatrix<f64> {
        self.0.view((2, 2), (2, 2)).into_owned()
    }

    pub fn scaled(&self, p: f64) -> Self {
        Self(&self.0 * p)
    }
}

/// Positive definite storage weight `P` of `S = f^T P f`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageMatrix(DMatrix<f64>);

impl StorageMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || !linalg::all_finite(&m) {
            return Err(Error::validation("P", "must be a finite square matrix"));
        }
        let m = linalg::symmetrize(&m);
        let lmin = lambda_min(&m);
        if lmin <= 0.0 {
            return Err(Error::validation("P", format!("not positive definite (min eigenvalue {lmin:.3e})")));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        lambda_min(&self.0)
    }

    pub fn scaled(&self, p: f64) -> Self {
        Self(&self.0 * p)
    }
}

/// A point `(x, u)` of a device's state-input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: Vec<f64>,
    pub u: [f64; 2],
}

impl SamplePoint {
    pub fn new(x: Vec<f64>, u: [f64; 2]) -> Self {
        Self { x, u }
    }

    /// Concatenated coordinates `(x, u)`.
    pub fn coords(&self) -> Vec<f64> {
        self.x.iter().copied().chain(self.u).collect()
    }

    pub fn from_coords(c: &[f64]) -> Self {
        let n = c.len() - 2;
        Self::new(c[..n].to_vec(), [c[n], c[n + 1]])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMargin {
    pub point: SamplePoint,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipativityCertificate {
    pub device: String,
    /// `None` for static devices.
    pub p: Option<StorageMatrix>,
    pub x: SupplyRateMatrix,
    pub epsilon: f64,
    pub sample_margins: Vec<SampleMargin>,
}

impl DissipativityCertificate {
    pub fn max_margin(&self) -> f64 {
        self.sample_margins
            .iter()
            .map(|s| s.margin)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Positive rescaling `(pP, pX, p eps)`; margins scale by `p`.
    pub fn scaled(&self, p: f64) -> Self {
        Self {
            device: self.device.clone(),
            p: self.p.as_ref().map(|m| m.scaled(p)),
            x: self.x.scaled(p),
            epsilon: self.epsilon * p,
            sample_margins: self
                .sample_margins
                .iter()
                .map(|s| SampleMargin {
                    point: s.point.clone(),
                    margin: s.margin * p,
                })
                .collect(),
        }
    }

    /// Recomputes every stored margin from the model, independently of any solver.
    pub fn reverify(&self, model: &DeviceModel) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for s in &self.sample_margins {
            worst = worst.max(check_pointwise(model, self, &s.point)?);
        }
        Ok(worst)
    }
}

/// `[[0, I], [Cm, Dm]]`, mapping `(x', u')` to `(u', y')`.
pub fn port_map(j: &JacobianSet) -> DMatrix<f64> {
    let n = j.state_dim();
    let mut w = DMatrix::zeros(4, n + 2);
    w[(0, n)] = 1.0;
    w[(1, n + 1)] = 1.0;
    w.view_mut((2, 0), (2, n)).copy_from(&j.cm);
    w.view_mut((2, n), (2, 2)).copy_from(&j.dm);
    w
}

/// `[[PA + A^T P + eps I, PB], [B^T P, 0]] - W^T X W` with `W = [[0, I], [Cm, Dm]]`.
pub fn lmi_lhs_dynamic(j: &JacobianSet, p: &DMatrix<f64>, x: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let n = j.state_dim();
    let mut out = DMatrix::zeros(n + 2, n + 2);
    if n > 0 {
        let pa = p * &j.a;
        let pb = p * &j.b;
        let mut tl = &pa + pa.transpose();
        for i in 0..n {
            tl[(i, i)] += epsilon;
        }
        out.view_mut((0, 0), (n, n)).copy_from(&tl);
        out.view_mut((0, n), (n, 2)).copy_from(&pb);
        out.view_mut((n, 0), (2, n)).copy_from(&pb.transpose());
    }
    let w = port_map(j);
    out -= w.transpose() * x * &w;
    linalg::symmetrize(&out)
}

/// `[I; Dm]^T X [I; Dm]`, which must be positive semidefinite for a static device.
pub fn lmi_lhs_static(dm: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(4, 2);
    g[(0, 0)] = 1.0;
    g[(1, 1)] = 1.0;
    g.view_mut((2, 0), (2, 2)).copy_from(dm);
    linalg::symmetrize(&(g.transpose() * x * g))
}

/// Margin of the certificate's inequality at one point (`<= 0` passes).
pub fn check_pointwise(model: &DeviceModel, cert: &DissipativityCertificate, point: &SamplePoint) -> Result<f64> {
    let j = model.eval_jacobians(&point.x, &point.u)?;
    Ok(margin_at(&j, cert))
}

pub(crate) fn margin_at(j: &JacobianSet, cert: &DissipativityCertificate) -> f64 {
    match &cert.p {
        Some(p) => lambda_max(&lmi_lhs_dynamic(j, p.matrix(), cert.x.matrix(), cert.epsilon)),
        None => lambda_max(&-lmi_lhs_static(&j.dm, cert.x.matrix())),
    }
}

/// Closed-form admissible supply rates of some static devices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticFamily {
    /// Intermediate nodes and constant voltage sources: any `X` with `Q >= 0`.
    PositiveQ,
    /// Constant impedance loads: `Q >= -zp I`, `S = I/2`, `R >= 0`.
    ConstantImpedance { zp: f64, zq: f64 },
}

impl AnalyticFamily {
    pub fn for_device(model: &DeviceModel) -> Option<Self> {
        match model.params() {
            DeviceParams::IntermediateNode | DeviceParams::ConstVoltage(_) => Some(Self::PositiveQ),
            DeviceParams::Zip(z) if z.is_constant_impedance() => Some(Self::ConstantImpedance { zp: z.zp, zq: z.zq }),
            _ => None,
        }
    }

    pub fn for_zip(z: &ZipParams) -> Option<Self> {
        z.is_constant_impedance()
            .then_some(Self::ConstantImpedance { zp: z.zp, zq: z.zq })
    }
}

/// Membership of `X` in the family, with tolerance `tol` on eigenvalues and entries.
pub fn analytic_family_check(family: AnalyticFamily, x: &SupplyRateMatrix, tol: f64) -> bool {
    match family {
        AnalyticFamily::PositiveQ => lambda_min(&x.q()) >= -tol,
        AnalyticFamily::ConstantImpedance { zp, .. } => {
            let mut shifted = x.q();
            shifted[(0, 0)] += zp;
            shifted[(1, 1)] += zp;
            let half = DMatrix::<f64>::identity(2, 2) * 0.5;
            lambda_min(&shifted) >= -tol && (x.s() - half).amax() <= tol && lambda_min(&x.r()) >= -tol
        }
    }
}

#[cfg(test)]
mod tests;
