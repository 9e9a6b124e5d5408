use serde::{Deserialize, Serialize};

use super::SamplePoint;
use crate::devices::{DeviceModel, StateClass};
use crate::error::{Error, Result};

/// Half-widths of a sampling box around an operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoxSpec {
    /// Radians, for angle states.
    pub angle: f64,
    /// For frequency deviation states.
    pub frequency: f64,
    /// Relative to the nominal value, for magnitude states.
    pub magnitude_rel: f64,
    /// Relative to `max(|x0|, 1)`, for all other states.
    pub other_rel: f64,
    /// Relative to `max(|u0|, input_floor)`, per input coordinate.
    pub input_rel: f64,
    pub input_floor: f64,
}

impl Default for BoxSpec {
    fn default() -> Self {
        Self {
            angle: 0.5,
            frequency: 0.05,
            magnitude_rel: 0.1,
            other_rel: 0.2,
            input_rel: 0.2,
            input_floor: 0.5,
        }
    }
}

impl BoxSpec {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("angle", self.angle),
            ("frequency", self.frequency),
            ("magnitude_rel", self.magnitude_rel),
            ("other_rel", self.other_rel),
            ("input_rel", self.input_rel),
            ("input_floor", self.input_floor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(k, "must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Axis-aligned box over the concatenated coordinates `(x, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::validation("box", "needs lo <= hi on every axis"));
        }
        Ok(Self { lo, hi })
    }

    /// Box centred on `(x0, u0)` with half-widths chosen per state class.
    pub fn around(model: &DeviceModel, x0: &[f64], u0: &[f64; 2], spec: &BoxSpec) -> Self {
        let classes = model.state_classes();
        let mut lo = Vec::with_capacity(x0.len() + 2);
        let mut hi = Vec::with_capacity(x0.len() + 2);
        for (v, c) in x0.iter().zip(classes) {
            let h = match c {
                StateClass::Angle => spec.angle,
                StateClass::Frequency => spec.frequency,
                StateClass::Magnitude => spec.magnitude_rel * v.abs(),
                StateClass::Other => spec.other_rel * v.abs().max(1.0),
            };
            lo.push(v - h);
            hi.push(v + h);
        }
        let umag = u0[0].hypot(u0[1]).max(spec.input_floor);
        for v in u0 {
            let h = spec.input_rel * umag;
            lo.push(v - h);
            hi.push(v + h);
        }
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        c.len() == self.dim() && c.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    /// Smallest box holding both boxes.
    pub fn union(&self, other: &SampleBox) -> SampleBox {
        SampleBox {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| a.min(*b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| a.max(*b)).collect(),
        }
    }

    /// Coordinate of grid index `k` out of `levels` on `axis`.
    pub fn level(&self, axis: usize, k: usize, levels: usize) -> f64 {
        if levels <= 1 || self.hi[axis] == self.lo[axis] {
            return 0.5 * (self.lo[axis] + self.hi[axis]);
        }
        self.lo[axis] + (self.hi[axis] - self.lo[axis]) * k as f64 / (levels - 1) as f64
    }

    /// Tensor grid with `levels` points per axis (degenerate axes contribute one point).
    pub fn grid(&self, levels: usize) -> Vec<SamplePoint> {
        let d = self.dim();
        let counts: Vec<usize> = (0..d)
            .map(|a| if self.hi[a] > self.lo[a] { levels.max(1) } else { 1 })
            .collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let c: Vec<f64> = (0..d).map(|a| self.level(a, idx[a], counts[a])).collect();
            out.push(SamplePoint::from_coords(&c));
            for a in 0..d {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}
