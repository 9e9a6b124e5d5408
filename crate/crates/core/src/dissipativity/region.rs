use serde::{Deserialize, Serialize};

use super::{margin_at, DissipativityCertificate, SampleBox, SamplePoint};
use crate::devices::DeviceModel;
use crate::error::{Error, Result};

/// Grid sweep of the certificate margin over a box.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DissipativeRegion {
    pub device: String,
    pub bbox: SampleBox,
    /// Grid points per axis (1 on degenerate axes).
    pub counts: Vec<usize>,
    /// Margins on the grid, first axis varying fastest. Points outside the
    /// model domain hold `+inf`.
    pub margins: Vec<f64>,
    /// Per cell, first axis varying fastest.
    pub certified_cells: Vec<bool>,
    pub margin_guard: f64,
    pub nominal_certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Certified,
    Uncertified,
    OutsideBox,
}

fn cell_counts(counts: &[usize]) -> Vec<usize> {
    counts.iter().map(|c| (*c).max(2) - 1).collect()
}

fn flat(idx: &[usize], counts: &[usize]) -> usize {
    let mut f = 0;
    for a in (0..idx.len()).rev() {
        f = f * counts[a] + idx[a];
    }
    f
}

fn for_each_index(counts: &[usize], mut visit: impl FnMut(&[usize])) {
    let total: usize = counts.iter().product();
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..total {
        visit(&idx);
        for a in 0..counts.len() {
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

impl DissipativeRegion {
    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn certified_fraction(&self) -> f64 {
        if self.certified_cells.is_empty() {
            return 0.0;
        }
        self.certified_cells.iter().filter(|c| **c).count() as f64 / self.certified_cells.len() as f64
    }

    fn corners_certified(&self, cell: &[usize]) -> bool {
        let d = self.dim();
        let mut ok = true;
        for mask in 0..(1usize << d) {
            let idx: Vec<usize> = (0..d)
                .map(|a| {
                    let step = (mask >> a) & 1;
                    (cell[a] + step).min(self.counts[a] - 1)
                })
                .collect();
            if !(self.margins[flat(&idx, &self.counts)] <= -self.margin_guard) {
                ok = false;
                break;
            }
        }
        ok
    }

    fn cell_of(&self, c: &[f64]) -> Vec<Vec<usize>> {
        // candidate cells per axis: two when the point sits on an interior grid line
        (0..self.dim())
            .map(|a| {
                let n = self.counts[a];
                if n == 1 {
                    return vec![0];
                }
                let (lo, hi) = (self.bbox.lo[a], self.bbox.hi[a]);
                let t = (c[a] - lo) / (hi - lo) * (n - 1) as f64;
                let k = (t.floor() as usize).min(n - 2);
                if t == t.floor() && k > 0 && (t as usize) == k {
                    vec![k, k - 1]
                } else {
                    vec![k]
                }
            })
            .collect()
    }
}

/// Evaluates the certificate on a tensor grid over `bbox` and marks the cells
/// whose corners all have margin `<= -margin_guard`.
pub fn characterize_region(
    model: &DeviceModel,
    cert: &DissipativityCertificate,
    bbox: &SampleBox,
    resolution: usize,
    nominal: &SamplePoint,
    margin_guard: f64,
) -> Result<DissipativeRegion> {
    if resolution < 2 {
        return Err(Error::validation("resolution", "needs at least 2 points per axis"));
    }
    let d = model.state_dim() + 2;
    if bbox.dim() != d {
        return Err(Error::Dimension(format!("box has {} axes, device needs {d}", bbox.dim())));
    }
    if !bbox.contains(&nominal.coords()) {
        return Err(Error::validation("box", "does not contain the nominal point"));
    }
    let counts: Vec<usize> = (0..d)
        .map(|a| if bbox.hi[a] > bbox.lo[a] { resolution } else { 1 })
        .collect();
    let mut margins = vec![f64::INFINITY; counts.iter().product()];
    for_each_index(&counts, |idx| {
        let c: Vec<f64> = (0..d).map(|a| bbox.level(a, idx[a], counts[a])).collect();
        let pt = SamplePoint::from_coords(&c);
        if let Ok(j) = model.eval_jacobians(&pt.x, &pt.u) {
            let m = margin_at(&j, cert);
            if m.is_finite() {
                margins[flat(idx, &counts)] = m;
            }
        }
    });
    let ccounts = cell_counts(&counts);
    let mut region = DissipativeRegion {
        device: cert.device.clone(),
        bbox: bbox.clone(),
        counts: counts.clone(),
        margins,
        certified_cells: Vec::new(),
        margin_guard,
        nominal_certified: false,
    };
    let mut cells = vec![false; ccounts.iter().product()];
    for_each_index(&ccounts, |cell| {
        cells[flat(cell, &ccounts)] = region.corners_certified(cell);
    });
    region.certified_cells = cells;
    region.nominal_certified = membership(&region, nominal) == Membership::Certified;
    if !region.nominal_certified {
        log::warn!("{}: nominal point is not in a certified cell", region.device);
    }
    Ok(region)
}

/// Conservative lookup: certified only if a cell containing the point has all corners certified.
pub fn membership(region: &DissipativeRegion, point: &SamplePoint) -> Membership {
    let c = point.coords();
    if !region.bbox.contains(&c) {
        return Membership::OutsideBox;
    }
    let ccounts = cell_counts(&region.counts);
    let options = region.cell_of(&c);
    let mut found = false;
    let choices: Vec<usize> = options.iter().map(|o| o.len()).collect();
    for_each_index(&choices, |pick| {
        if found {
            return;
        }
        let cell: Vec<usize> = pick.iter().enumerate().map(|(a, k)| options[a][*k]).collect();
        found = region.certified_cells[flat(&cell, &ccounts)];
    });
    if found {
        Membership::Certified
    } else {
        Membership::Uncertified
    }
}

/// Margins on a plane through `base` spanned by two coordinate axes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossSection {
    pub axes: [usize; 2],
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    /// `margins[i][j]` at `(first[i], second[j])`; `+inf` outside the model domain.
    pub margins: Vec<Vec<f64>>,
}

pub fn cross_section(
    model: &DeviceModel,
    cert: &DissipativityCertificate,
    bbox: &SampleBox,
    axes: [usize; 2],
    base: &SamplePoint,
    resolution: usize,
) -> Result<CrossSection> {
    let d = bbox.dim();
    if axes[0] >= d || axes[1] >= d || axes[0] == axes[1] {
        return Err(Error::validation("axes", format!("need two distinct axes below {d}")));
    }
    let res = resolution.max(2);
    let first: Vec<f64> = (0..res).map(|k| bbox.level(axes[0], k, res)).collect();
    let second: Vec<f64> = (0..res).map(|k| bbox.level(axes[1], k, res)).collect();
    let mut c = base.coords();
    let margins = first
        .iter()
        .map(|a| {
            second
                .iter()
                .map(|b| {
                    c[axes[0]] = *a;
                    c[axes[1]] = *b;
                    let pt = SamplePoint::from_coords(&c);
                    model
                        .eval_jacobians(&pt.x, &pt.u)
                        .map(|j| margin_at(&j, cert))
                        .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect();
    Ok(CrossSection {
        axes,
        first,
        second,
        margins,
    })
}
