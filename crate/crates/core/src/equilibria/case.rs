use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::devices::{DeviceKind, DeviceModel, DeviceParams};
use crate::error::{Error, Result};
use crate::interconnect::{build_admittance, build_interconnection, Interconnection, LineData};

#[derive(Debug, Clone, PartialEq)]
pub struct CaseBus {
    pub id: usize,
    pub model: DeviceModel,
}

/// A structure-preserving network: one device per bus, lines between bus ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<CaseBus>,
    /// Endpoints are bus ids, not positions.
    pub lines: Vec<LineData>,
    /// Load scaling factor applied to every ZIP load.
    pub scaling: f64,
    pub balance_bus: Option<usize>,
}

impl NetworkCase {
    pub fn new(name: impl Into<String>, buses: Vec<CaseBus>, lines: Vec<LineData>) -> Result<Self> {
        let case = Self {
            name: name.into(),
            base_mva: 100.0,
            buses,
            lines,
            scaling: 1.0,
            balance_bus: None,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::validation("buses", "case has no buses"));
        }
        let mut seen = BTreeMap::new();
        for (k, b) in self.buses.iter().enumerate() {
            if let Some(prev) = seen.insert(b.id, k) {
                return Err(Error::validation(
                    "buses",
                    format!("duplicate bus id {} (entries {prev} and {k})", b.id),
                ));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            for end in [l.from, l.to] {
                if !seen.contains_key(&end) {
                    return Err(Error::validation(format!("lines[{k}]"), format!("unknown bus id {end}")));
                }
            }
        }
        if !(self.scaling > 0.0 && self.scaling.is_finite()) {
            return Err(Error::validation("scaling", "must be finite and > 0"));
        }
        if !(self.base_mva > 0.0 && self.base_mva.is_finite()) {
            return Err(Error::validation("base_mva", "must be finite and > 0"));
        }
        if let Some(b) = self.balance_bus {
            match self.index_of(b) {
                None => return Err(Error::validation("balance_bus", format!("unknown bus id {b}"))),
                Some(i) if self.buses[i].model.kind() != DeviceKind::SG3 => {
                    return Err(Error::validation("balance_bus", format!("bus {b} does not host an SG3")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn index_of(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn ids(&self) -> Vec<usize> {
        self.buses.iter().map(|b| b.id).collect()
    }

    /// Lines with endpoints translated to bus positions.
    pub fn indexed_lines(&self) -> Result<Vec<LineData>> {
        self.lines
            .iter()
            .map(|l| {
                let from = self.index_of(l.from).ok_or_else(|| Error::validation("lines", format!("unknown bus id {}", l.from)))?;
                let to = self.index_of(l.to).ok_or_else(|| Error::validation("lines", format!("unknown bus id {}", l.to)))?;
                Ok(LineData { from, to, ..l.clone() })
            })
            .collect()
    }

    pub fn admittance(&self) -> Result<DMatrix<f64>> {
        build_admittance(&self.indexed_lines()?, self.n())
    }

    pub fn interconnection(&self) -> Result<Interconnection> {
        let roles: Vec<_> = self.buses.iter().map(|b| b.model.port_role()).collect();
        build_interconnection(&self.admittance()?, &roles)
    }

    /// Device at position `i` with the load scaling applied.
    pub fn model_at(&self, i: usize) -> DeviceModel {
        let m = &self.buses[i].model;
        match m.params() {
            DeviceParams::Zip(z) if self.scaling != 1.0 => {
                DeviceModel::new(DeviceParams::Zip(z.scaled(self.scaling)), m.port_role()).expect("scaled load stays valid")
            }
            _ => m.clone(),
        }
    }

    pub fn models(&self) -> Vec<DeviceModel> {
        (0..self.n()).map(|i| self.model_at(i)).collect()
    }

    pub fn with_scaling(&self, s: f64) -> Self {
        Self {
            scaling: s,
            ..self.clone()
        }
    }

    /// Start of each bus's states in the stacked state vector, plus the total.
    pub fn state_offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.n());
        let mut k = 0;
        for b in &self.buses {
            offs.push(k);
            k += b.model.state_dim();
        }
        (offs, k)
    }

    pub fn total_states(&self) -> usize {
        self.state_offsets().1
    }

    pub fn dynamic_buses(&self) -> Vec<usize> {
        (0..self.n()).filter(|i| !self.buses[*i].model.is_static()).collect()
    }

    /// Replaces the device on bus position `i`.
    pub fn set_model(&mut self, i: usize, model: DeviceModel) {
        self.buses[i].model = model;
    }
}

/// Nominal state used for flat starts and as the centre of random starts.
pub fn nominal_state(model: &DeviceModel) -> Vec<f64> {
    match model.params() {
        DeviceParams::Sg3(p) => vec![0.0, 0.0, p.ef],
        DeviceParams::Pll(p) => vec![0.0, 0.0, p.p_ref, p.q_ref],
        DeviceParams::Vsg(p) => vec![0.0, 0.0, p.v_ref],
        DeviceParams::Cd(p) | DeviceParams::Qd(p) => vec![p.theta_ref, p.v_ref],
        _ => vec![0.0; model.state_dim()],
    }
}
