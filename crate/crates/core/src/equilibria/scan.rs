//! Load-scaling scan with fixed certificates: the equilibrium is tracked from
//! `s = 1` outwards and every dynamic bus is checked against its region.

use serde::{Deserialize, Serialize};

use super::case::NetworkCase;
use super::system::{BalanceTarget, NetworkSystem};
use super::{align_angles, package, Equilibrium, NEWTON_MAX_ITER, NEWTON_TOL};
use crate::dissipativity::{membership, DissipativeRegion, Membership, SamplePoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanOptions {
    pub s_lo: f64,
    pub s_hi: f64,
    pub step: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            s_lo: 0.5,
            s_hi: 1.5,
            step: 0.005,
        }
    }
}

impl ScanOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::validation("s_step", "must be finite and > 0"));
        }
        if !(self.s_lo > 0.0 && self.s_lo <= 1.0 && self.s_hi >= 1.0 && self.s_hi.is_finite()) {
            return Err(Error::validation("s_range", "needs 0 < s_lo <= 1 <= s_hi"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPoint {
    pub s: f64,
    /// `None` when the equilibrium was lost at this `s`.
    pub equilibrium: Option<Equilibrium>,
    /// Per bus; `None` on static buses and buses without a region.
    pub membership: Vec<Option<Membership>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeviceInterval {
    pub id: usize,
    pub kind: String,
    /// Grid endpoints of the hole-free certified run through `s = 1`;
    /// `None` when `s = 1` itself is not certified.
    pub interval: Option<[f64; 2]>,
    pub lower_cause: String,
    pub upper_cause: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanResult {
    /// Sorted by `s`.
    pub points: Vec<ScanPoint>,
    pub devices: Vec<DeviceInterval>,
    /// Intersection over all dynamic buses.
    pub system: Option<[f64; 2]>,
    /// Why tracking stopped on each side, if it stopped before the range end.
    pub truncation: Vec<String>,
}

fn memberships(case: &NetworkCase, eq: &Equilibrium, regions: &[Option<DissipativeRegion>]) -> Vec<Option<Membership>> {
    (0..case.n())
        .map(|k| {
            let model = &case.buses[k].model;
            if model.is_static() {
                return None;
            }
            regions[k].as_ref().map(|r| {
                let c = align_angles(&model.state_classes(), &eq.buses[k].sample().coords(), &r.bbox);
                membership(r, &SamplePoint::from_coords(&c))
            })
        })
        .collect()
}

/// Grid `1, 1 +- step, ...` clipped to the range, in marching order from 1.
fn grid(opts: &ScanOptions, up: bool) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 1usize;
    loop {
        let s = if up { 1.0 + k as f64 * opts.step } else { 1.0 - k as f64 * opts.step };
        let s = (s * 1e9).round() / 1e9;
        if (up && s > opts.s_hi + 1e-12) || (!up && s < opts.s_lo - 1e-12) || s <= 0.0 {
            break;
        }
        out.push(s);
        k += 1;
    }
    out
}

/// Tracks the equilibrium from `nominal` (an equilibrium at `s = 1`) across the
/// range. With a balance bus its `(P^m, E_f)` are re-solved at every `s` to hold
/// the `s = 1` terminal voltage. Regions are never recomputed.
pub fn scan_loading(
    case: &NetworkCase,
    nominal: &Equilibrium,
    regions: &[Option<DissipativeRegion>],
    opts: &ScanOptions,
) -> Result<ScanResult> {
    opts.validate()?;
    if regions.len() != case.n() {
        return Err(Error::Dimension(format!("{} regions for {} buses", regions.len(), case.n())));
    }
    let base = case.with_scaling(1.0);
    let mut sys0 = NetworkSystem::new(&base)?;
    let mut w0 = nominal.unknowns();
    if let Some(id) = case.balance_bus {
        let b = case.index_of(id).ok_or_else(|| Error::validation("balance_bus", format!("unknown bus id {id}")))?;
        let [vd, vq] = nominal.voltages[b];
        sys0 = sys0.with_balance(BalanceTarget {
            bus: b,
            v_mag: vd.hypot(vq),
            v_angle: vq.atan2(vd),
        })?;
        w0.extend(sys0.balance_params().expect("balance set"));
    }
    let target = sys0.balance;

    let solve_at = |s: f64, guess: &[f64]| -> Result<(Option<(Equilibrium, Vec<f64>)>, String)> {
        let c = case.with_scaling(s);
        let mut sys = NetworkSystem::new(&c)?;
        if let Some(t) = target {
            sys = sys.with_balance(t)?;
        }
        let rep = super::system::newton(&sys, guess, NEWTON_MAX_ITER, NEWTON_TOL);
        if !rep.converged {
            return Ok((None, format!("equilibrium lost at s = {s} (Newton residual {:.3e} after {} iterations)", rep.residual, rep.iterations)));
        }
        let eq = package(&c, &sys, &rep.w, rep.iterations)?;
        Ok((Some((eq, rep.w)), String::new()))
    };

    let (first, cause) = solve_at(1.0, &w0)?;
    let (eq1, w1) = first.ok_or_else(|| Error::solver(None, cause))?;
    let m1 = memberships(case, &eq1, regions);
    let mut points = vec![ScanPoint {
        s: 1.0,
        equilibrium: Some(eq1),
        membership: m1.clone(),
    }];
    let mut truncation = Vec::new();
    let dynamic = case.dynamic_buses();
    // per bus: (lower, upper) ends and the causes
    let mut ends: Vec<[Option<f64>; 2]> = (0..case.n())
        .map(|k| {
            let ok = m1[k] == Some(Membership::Certified);
            [ok.then_some(1.0), ok.then_some(1.0)]
        })
        .collect();
    let mut causes: Vec<[String; 2]> = (0..case.n())
        .map(|k| {
            if m1[k] == Some(Membership::Certified) {
                [String::from("range end"), String::from("range end")]
            } else {
                let c = format!("not certified at s = 1 ({:?})", m1[k]);
                [c.clone(), c]
            }
        })
        .collect();

    for (side, up) in [(1usize, true), (0usize, false)] {
        let mut w = w1.clone();
        let mut open: Vec<bool> = (0..case.n()).map(|k| ends[k][side].is_some()).collect();
        for s in grid(opts, up) {
            let (res, cause) = solve_at(s, &w)?;
            match res {
                None => {
                    for k in &dynamic {
                        if open[*k] {
                            causes[*k][side] = cause.clone();
                        }
                    }
                    truncation.push(cause.clone());
                    points.push(ScanPoint {
                        s,
                        equilibrium: None,
                        membership: vec![None; case.n()],
                    });
                    break;
                }
                Some((eq, wn)) => {
                    let m = memberships(case, &eq, regions);
                    for k in &dynamic {
                        if !open[*k] {
                            continue;
                        }
                        if m[*k] == Some(Membership::Certified) {
                            ends[*k][side] = Some(s);
                        } else {
                            open[*k] = false;
                            causes[*k][side] = format!("{:?} at s = {s}", m[*k].unwrap_or(Membership::OutsideBox)).to_lowercase();
                        }
                    }
                    points.push(ScanPoint {
                        s,
                        equilibrium: Some(eq),
                        membership: m,
                    });
                    w = wn;
                }
            }
        }
    }
    points.sort_by(|a, b| a.s.total_cmp(&b.s));

    let devices: Vec<DeviceInterval> = dynamic
        .iter()
        .map(|k| DeviceInterval {
            id: case.buses[*k].id,
            kind: case.buses[*k].model.kind().name().to_string(),
            interval: match ends[*k] {
                [Some(lo), Some(hi)] => Some([lo, hi]),
                _ => None,
            },
            lower_cause: causes[*k][0].clone(),
            upper_cause: causes[*k][1].clone(),
        })
        .collect();
    let system = devices.iter().try_fold([f64::NEG_INFINITY, f64::INFINITY], |acc, d| {
        d.interval.map(|[lo, hi]| [acc[0].max(lo), acc[1].min(hi)])
    });
    Ok(ScanResult {
        points,
        devices,
        system: system.filter(|[lo, hi]| lo <= hi && lo.is_finite()),
        truncation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_marches_outwards_from_one() {
        let o = ScanOptions {
            s_lo: 0.99,
            s_hi: 1.012,
            step: 0.005,
        };
        assert_eq!(grid(&o, true), vec![1.005, 1.01]);
        assert_eq!(grid(&o, false), vec![0.995, 0.99]);
    }

    #[test]
    fn rejects_range_without_one() {
        let o = ScanOptions {
            s_lo: 1.1,
            s_hi: 1.2,
            step: 0.005,
        };
        assert!(o.validate().is_err());
    }
}
