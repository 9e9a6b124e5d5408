//! Network-level certification: samples around anchor equilibria, the coupled
//! search for supply rates, and per-bus certified regions over the union box.

use serde::{Deserialize, Serialize};

use super::case::NetworkCase;
use super::{align_angles, Equilibrium};
use crate::admm::{self, AdmmConfig, VerificationReport};
use crate::dissipativity::{
    characterize_region, AnalyticFamily, BoxSpec, DissipativeRegion, DissipativityCertificate, LocalLmiSet, SampleBox,
    SamplePoint, StorageMatrix, SupplyRateMatrix,
};
use crate::error::{Error, Result};
use crate::interconnect::{verify_coupling_centralized, CouplingOptions, CouplingResult, LocalConstraint};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifySpec {
    /// Padding of the sample grid around each anchor.
    pub box_spec: BoxSpec,
    /// Padding of the region sweep box; `box_spec` when absent.
    pub region_box: Option<BoxSpec>,
    /// Grid points per axis for the LMI samples.
    pub levels: usize,
    /// Grid points per axis for the region sweep.
    pub resolution: usize,
    pub epsilon: f64,
    pub margin_guard: f64,
    /// Use the closed-form supply-rate families on static buses instead of samples.
    pub analytic_static: bool,
}

impl Default for CertifySpec {
    fn default() -> Self {
        Self {
            box_spec: BoxSpec::default(),
            region_box: None,
            levels: 3,
            resolution: 5,
            epsilon: 1e-3,
            margin_guard: 1e-6,
            analytic_static: false,
        }
    }
}

impl CertifySpec {
    pub fn validate(&self) -> Result<()> {
        self.box_spec.validate()?;
        if let Some(b) = &self.region_box {
            b.validate()?;
        }
        if self.levels < 2 {
            return Err(Error::validation("levels", "needs at least 2"));
        }
        if self.resolution < 2 {
            return Err(Error::validation("resolution", "needs at least 2"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::validation("epsilon", "must be finite and > 0"));
        }
        if !(self.margin_guard >= 0.0) {
            return Err(Error::validation("margin_guard", "must be >= 0"));
        }
        Ok(())
    }
}

/// Per-bus box: the union of padded boxes around each anchor. Angle states of
/// later anchors are first moved by multiples of `2 pi` next to the first anchor.
pub fn device_boxes(case: &NetworkCase, anchors: &[Equilibrium], spec: &BoxSpec) -> Result<Vec<SampleBox>> {
    if anchors.is_empty() {
        return Err(Error::validation("anchors", "at least one anchor equilibrium is required"));
    }
    (0..case.n())
        .map(|k| {
            let model = case.model_at(k);
            let classes = model.state_classes();
            let first = &anchors[0].buses[k];
            let mut bbox = SampleBox::around(&model, &first.x, &first.u, spec);
            for a in &anchors[1..] {
                let bp = a.buses.get(k).ok_or_else(|| Error::Dimension("anchor has too few buses".into()))?;
                let c = align_angles(&classes, &bp.sample().coords(), &bbox);
                let p = SamplePoint::from_coords(&c);
                bbox = bbox.union(&SampleBox::around(&model, &p.x, &p.u, spec));
            }
            Ok(bbox)
        })
        .collect()
}

/// Sample points of bus `k`: a grid on the padded box of each anchor. Gridding the
/// union box instead would mix states of one anchor with inputs of another.
pub fn anchor_samples(case: &NetworkCase, k: usize, anchors: &[Equilibrium], spec: &CertifySpec) -> Result<Vec<SamplePoint>> {
    let model = case.model_at(k);
    let classes = model.state_classes();
    let first = SampleBox::around(&model, &anchors[0].buses[k].x, &anchors[0].buses[k].u, &spec.box_spec);
    let mut pts = Vec::new();
    for a in anchors {
        let bp = a.buses.get(k).ok_or_else(|| Error::Dimension("anchor has too few buses".into()))?;
        let p = SamplePoint::from_coords(&align_angles(&classes, &bp.sample().coords(), &first));
        pts.extend(SampleBox::around(&model, &p.x, &p.u, &spec.box_spec).grid(spec.levels));
    }
    Ok(pts)
}

/// Sampled LMI sets on every bus; static buses with a closed-form family use it instead
/// when `spec.analytic_static` is set.
pub fn local_constraints(case: &NetworkCase, anchors: &[Equilibrium], spec: &CertifySpec) -> Result<Vec<LocalConstraint>> {
    (0..case.n())
        .map(|k| {
            let model = case.model_at(k);
            if spec.analytic_static && model.is_static() {
                if let Some(f) = AnalyticFamily::for_device(&model) {
                    return Ok(LocalConstraint::Analytic(f));
                }
            }
            Ok(LocalConstraint::Sampled(sampled_set(case, k, anchors, spec)?))
        })
        .collect()
}

fn sampled_set(case: &NetworkCase, k: usize, anchors: &[Equilibrium], spec: &CertifySpec) -> Result<LocalLmiSet> {
    let model = case.model_at(k);
    let eps = if model.is_static() { 0.0 } else { spec.epsilon };
    LocalLmiSet::build(bus_label(case, k), &model, anchor_samples(case, k, anchors, spec)?, eps)
}

fn bus_label(case: &NetworkCase, k: usize) -> String {
    format!("bus{}:{}", case.buses[k].id, case.buses[k].model.kind().name())
}

#[derive(Debug, Clone)]
pub enum CouplingSolution {
    Centralized(CouplingResult),
    Admm(Box<VerificationReport>),
}

#[derive(Debug, Clone)]
pub struct CaseCertificate {
    pub boxes: Vec<SampleBox>,
    pub solution: CouplingSolution,
    /// Whether the coupled problem was solved with every local constraint met.
    pub feasible: bool,
    pub certificates: Vec<DissipativityCertificate>,
    /// `None` on static buses.
    pub regions: Vec<Option<DissipativeRegion>>,
}

fn centralized_certificates(case: &NetworkCase, locals: &[LocalConstraint], res: &CouplingResult) -> Result<Vec<DissipativityCertificate>> {
    let xs = res.x_matrices();
    locals
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let x = SupplyRateMatrix::new(xs[k].clone())?;
            let p = match &res.ps[k] {
                Some(rows) => Some(StorageMatrix::new(
                    crate::linalg::from_rows(rows).ok_or_else(|| Error::Dimension("storage rows".into()))?,
                )?),
                None => None,
            };
            let (margins, eps) = match l {
                LocalConstraint::Sampled(s) => (s.point_margins(p.as_ref().map(|p| p.matrix()), x.matrix()), s.epsilon),
                LocalConstraint::Analytic(_) => (Vec::new(), 0.0),
            };
            Ok(DissipativityCertificate {
                device: bus_label(case, k),
                p,
                x,
                epsilon: eps,
                sample_margins: margins,
            })
        })
        .collect()
}

fn regions_for(
    case: &NetworkCase,
    anchors: &[Equilibrium],
    boxes: &[SampleBox],
    certs: &[DissipativityCertificate],
    spec: &CertifySpec,
) -> Result<Vec<Option<DissipativeRegion>>> {
    (0..case.n())
        .map(|k| {
            let model = case.model_at(k);
            if model.is_static() {
                return Ok(None);
            }
            let c = align_angles(&model.state_classes(), &anchors[0].buses[k].sample().coords(), &boxes[k]);
            characterize_region(&model, &certs[k], &boxes[k], spec.resolution, &SamplePoint::from_coords(&c), spec.margin_guard).map(Some)
        })
        .collect()
}

/// One joint conic solve over all buses, then regions from the resulting certificates.
pub fn certify_case(case: &NetworkCase, anchors: &[Equilibrium], spec: &CertifySpec, opts: &CouplingOptions) -> Result<CaseCertificate> {
    spec.validate()?;
    let boxes = device_boxes(case, anchors, spec.region_box.as_ref().unwrap_or(&spec.box_spec))?;
    let locals = local_constraints(case, anchors, spec)?;
    let ic = case.interconnection()?;
    let res = verify_coupling_centralized(&ic, &locals, opts)?;
    if !res.feasible {
        return Ok(CaseCertificate {
            boxes,
            feasible: false,
            certificates: Vec::new(),
            regions: vec![None; case.n()],
            solution: CouplingSolution::Centralized(res),
        });
    }
    let certs = centralized_certificates(case, &locals, &res)?;
    let regions = regions_for(case, anchors, &boxes, &certs, spec)?;
    Ok(CaseCertificate {
        boxes,
        feasible: true,
        certificates: certs,
        regions,
        solution: CouplingSolution::Centralized(res),
    })
}

/// Same pipeline with the distributed scheme in place of the joint solve.
pub fn certify_case_admm(case: &NetworkCase, anchors: &[Equilibrium], spec: &CertifySpec, cfg: &AdmmConfig) -> Result<CaseCertificate> {
    spec.validate()?;
    let boxes = device_boxes(case, anchors, spec.region_box.as_ref().unwrap_or(&spec.box_spec))?;
    let sets: Vec<LocalLmiSet> = (0..case.n())
        .map(|k| sampled_set(case, k, anchors, spec))
        .collect::<Result<_>>()?;
    let ic = case.interconnection()?;
    let rep = admm::run(cfg, &ic, sets.clone())?;
    let feasible = rep.coupling_verified;
    let (certs, regions) = if feasible {
        let certs = rep.certificates(&sets)?;
        let regions = regions_for(case, anchors, &boxes, &certs, spec)?;
        (certs, regions)
    } else {
        (Vec::new(), vec![None; case.n()])
    };
    Ok(CaseCertificate {
        boxes,
        feasible,
        certificates: certs,
        regions,
        solution: CouplingSolution::Admm(Box::new(rep)),
    })
}
