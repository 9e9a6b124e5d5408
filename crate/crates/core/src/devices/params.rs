//! Per-kind parameter records (per-unit on the system base).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ParamMap = BTreeMap<String, f64>;

/// Pulls named values out of a parameter map and rejects leftovers.
struct Reader<'a> {
    kind: &'static str,
    map: &'a ParamMap,
    seen: Vec<&'static str>,
}

impl<'a> Reader<'a> {
    fn new(kind: &'static str, map: &'a ParamMap) -> Self {
        Self {
            kind,
            map,
            seen: Vec::new(),
        }
    }

    fn req(&mut self, key: &'static str) -> Result<f64> {
        self.seen.push(key);
        let v = *self
            .map
            .get(key)
            .ok_or_else(|| Error::validation(key, format!("missing for {}", self.kind)))?;
        if !v.is_finite() {
            return Err(Error::validation(key, "must be finite"));
        }
        Ok(v)
    }

    fn opt(&mut self, key: &'static str, default: f64) -> Result<f64> {
        if self.map.contains_key(key) {
            self.req(key)
        } else {
            self.seen.push(key);
            Ok(default)
        }
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().find(|k| !self.seen.contains(&k.as_str())) {
            Some(k) => Err(Error::validation(
                k.clone(),
                format!("unknown parameter for {}", self.kind),
            )),
            None => Ok(()),
        }
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(field, format!("must be >= 0, got {v}")))
    }
}

/// Third-order synchronous generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sg3Params {
    pub m: f64,
    pub d: f64,
    pub t_d0: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub xq: f64,
    pub pm: f64,
    pub ef: f64,
}

impl Sg3Params {
    pub fn validate(&self) -> Result<()> {
        positive("m", self.m)?;
        nonnegative("d", self.d)?;
        positive("t_d0", self.t_d0)?;
        positive("xd", self.xd)?;
        positive("xd_prime", self.xd_prime)?;
        positive("xq", self.xq)?;
        for (k, v) in [("pm", self.pm), ("ef", self.ef)] {
            if !v.is_finite() {
                return Err(Error::validation(k, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new("SG3", map);
        let p = Self {
            m: r.req("m")?,
            d: r.req("d")?,
            t_d0: r.req("t_d0")?,
            xd: r.req("xd")?,
            xd_prime: r.req("xd_prime")?,
            xq: r.req("xq")?,
            pm: r.req("pm")?,
            ef: r.req("ef")?,
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [
            ("m", self.m),
            ("d", self.d),
            ("t_d0", self.t_d0),
            ("xd", self.xd),
            ("xd_prime", self.xd_prime),
            ("xq", self.xq),
            ("pm", self.pm),
            ("ef", self.ef),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// PLL-synchronised grid-following inverter with droop power loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PllParams {
    pub kp: f64,
    pub ki: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub d1: f64,
    pub d2: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_ref: f64,
}

impl PllParams {
    pub fn validate(&self) -> Result<()> {
        positive("kp", self.kp)?;
        positive("ki", self.ki)?;
        positive("tau1", self.tau1)?;
        positive("tau2", self.tau2)?;
        nonnegative("d1", self.d1)?;
        nonnegative("d2", self.d2)?;
        Ok(())
    }

    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new("PLL", map);
        let p = Self {
            kp: r.req("kp")?,
            ki: r.req("ki")?,
            tau1: r.req("tau1")?,
            tau2: r.req("tau2")?,
            d1: r.req("d1")?,
            d2: r.req("d2")?,
            p_ref: r.req("p_ref")?,
            q_ref: r.req("q_ref")?,
            v_ref: r.req("v_ref")?,
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [
            ("kp", self.kp),
            ("ki", self.ki),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("p_ref", self.p_ref),
            ("q_ref", self.q_ref),
            ("v_ref", self.v_ref),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Grid-forming inverter with virtual synchronous generator control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VsgParams {
    pub m: f64,
    pub d: f64,
    pub k_i: f64,
    pub t: f64,
    pub k_q: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_ref: f64,
}

impl VsgParams {
    pub fn validate(&self) -> Result<()> {
        positive("m", self.m)?;
        nonnegative("d", self.d)?;
        nonnegative("k_i", self.k_i)?;
        positive("t", self.t)?;
        nonnegative("k_q", self.k_q)?;
        Ok(())
    }

    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new("VSG", map);
        let p = Self {
            m: r.req("m")?,
            d: r.req("d")?,
            k_i: r.req("k_i")?,
            t: r.req("t")?,
            k_q: r.req("k_q")?,
            p_ref: r.req("p_ref")?,
            q_ref: r.req("q_ref")?,
            v_ref: r.req("v_ref")?,
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [
            ("m", self.m),
            ("d", self.d),
            ("k_i", self.k_i),
            ("t", self.t),
            ("k_q", self.k_q),
            ("p_ref", self.p_ref),
            ("q_ref", self.q_ref),
            ("v_ref", self.v_ref),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Shared by conventional (CD) and quadratic (QD) droop inverters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroopParams {
    pub tau1: f64,
    pub tau2: f64,
    pub d1: f64,
    pub d2: f64,
    pub theta_ref: f64,
    pub p_ref: f64,
    pub q_ref: f64,
    pub v_ref: f64,
}

impl DroopParams {
    pub fn validate(&self) -> Result<()> {
        positive("tau1", self.tau1)?;
        positive("tau2", self.tau2)?;
        nonnegative("d1", self.d1)?;
        nonnegative("d2", self.d2)?;
        positive("v_ref", self.v_ref)?;
        Ok(())
    }

    pub fn from_map(kind: &'static str, map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new(kind, map);
        let p = Self {
            tau1: r.req("tau1")?,
            tau2: r.req("tau2")?,
            d1: r.req("d1")?,
            d2: r.req("d2")?,
            theta_ref: r.req("theta_ref")?,
            p_ref: r.req("p_ref")?,
            q_ref: r.req("q_ref")?,
            v_ref: r.req("v_ref")?,
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("d1", self.d1),
            ("d2", self.d2),
            ("theta_ref", self.theta_ref),
            ("p_ref", self.p_ref),
            ("q_ref", self.q_ref),
            ("v_ref", self.v_ref),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Steady-state regulation constant of the quadratic droop voltage loop.
    pub fn qd_u_ref(&self) -> f64 {
        self.v_ref + self.d2 * self.q_ref / self.v_ref
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstVoltageParams {
    pub vd: f64,
    pub vq: f64,
}

impl ConstVoltageParams {
    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new("ConstVoltage", map);
        let p = Self {
            vd: r.req("vd")?,
            vq: r.req("vq")?,
        };
        r.finish()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [("vd", self.vd), ("vq", self.vq)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }
}

/// ZIP load coefficients. Omitted components default to zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ZipParams {
    pub zp: f64,
    pub zq: f64,
    pub ip: f64,
    pub iq: f64,
    pub p0: f64,
    pub q0: f64,
}

impl ZipParams {
    pub fn constant_impedance(zp: f64, zq: f64) -> Self {
        Self {
            zp,
            zq,
            ..Self::default()
        }
    }

    pub fn is_constant_impedance(&self) -> bool {
        self.ip == 0.0 && self.iq == 0.0 && self.p0 == 0.0 && self.q0 == 0.0
    }

    /// Active parts must be nonnegative; reactive parts may be capacitive.
    pub fn validate(&self) -> Result<()> {
        nonnegative("zp", self.zp)?;
        nonnegative("ip", self.ip)?;
        nonnegative("p0", self.p0)?;
        for (k, v) in [("zq", self.zq), ("iq", self.iq), ("q0", self.q0)] {
            if !v.is_finite() {
                return Err(Error::validation(k, "must be finite"));
            }
        }
        Ok(())
    }

    pub fn from_map(map: &ParamMap) -> Result<Self> {
        let mut r = Reader::new("ZIP", map);
        let p = Self {
            zp: r.opt("zp", 0.0)?,
            zq: r.opt("zq", 0.0)?,
            ip: r.opt("ip", 0.0)?,
            iq: r.opt("iq", 0.0)?,
            p0: r.opt("p0", 0.0)?,
            q0: r.opt("q0", 0.0)?,
        };
        r.finish()?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_map(&self) -> ParamMap {
        [
            ("zp", self.zp),
            ("zq", self.zq),
            ("ip", self.ip),
            ("iq", self.iq),
            ("p0", self.p0),
            ("q0", self.q0),
        ]
        .into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            zp: self.zp * s,
            zq: self.zq * s,
            ip: self.ip * s,
            iq: self.iq * s,
            p0: self.p0 * s,
            q0: self.q0 * s,
        }
    }
}

/// Synthetic linear device `x' = Ax + Bu, y = Cx + Du` (testing and reference use).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n
            || self.b.shape() != (n, 2)
            || self.c.shape() != (2, n)
            || self.d.shape() != (2, 2)
        {
            return Err(Error::Dimension(format!(
                "linear device needs A {n}x{n}, B {n}x2, C 2x{n}, D 2x2"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_field_is_named() {
        let mut map = Sg3Params {
            m: 1.0,
            d: 1.0,
            t_d0: 5.0,
            xd: 1.0,
            xd_prime: 0.2,
            xq: 0.9,
            pm: 0.5,
            ef: 1.1,
        }
        .to_map();
        map.remove("xq");
        match Sg3Params::from_map(&map) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "xq"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonpositive_time_constant_rejected() {
        let p = DroopParams {
            tau1: 0.0,
            tau2: 6.0,
            d1: 0.01,
            d2: 0.01,
            theta_ref: 0.0,
            p_ref: 0.0,
            q_ref: 0.0,
            v_ref: 1.0,
        };
        match p.validate() {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "tau1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let mut map = ZipParams::constant_impedance(1.0, 0.2).to_map();
        map.insert("zz".into(), 1.0);
        assert!(matches!(
            ZipParams::from_map(&map),
            Err(Error::Validation { field, .. }) if field == "zz"
        ));
    }

    #[test]
    fn qd_regulation_constant_balances_reference() {
        let p = DroopParams {
            tau1: 0.3,
            tau2: 8.0,
            d1: 0.01,
            d2: 0.01,
            theta_ref: 0.0,
            p_ref: 1.0,
            q_ref: 0.4,
            v_ref: 1.02,
        };
        let u = p.qd_u_ref();
        let residual = -p.d2 * p.q_ref - p.v_ref * (p.v_ref - u);
        assert!(residual.abs() < 1e-15);
    }
}
