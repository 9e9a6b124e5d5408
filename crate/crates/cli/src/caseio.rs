//! TOML case files: `[meta]`, `[options]`, `[[buses]]`, `[[lines]]` and an
//! optional `[certify]` section.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use gridcert::devices::{DeviceKind, DeviceModel, DeviceParams, PortRole};
use gridcert::dissipativity::BoxSpec;
use gridcert::equilibria::{CaseBus, CertifySpec, NetworkCase};
use gridcert::interconnect::LineData;
use gridcert::linalg::{from_rows, to_rows};
use gridcert::{Error, Result};
use serde::{Deserialize, Serialize};
use toml::Spanned;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    name: String,
    #[serde(default = "default_base")]
    base_mva: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    notes: String,
}

fn default_base() -> f64 {
    100.0
}

fn one() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Options {
    #[serde(default = "one")]
    scaling: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    balance_bus: Option<usize>,
}

impl Default for Options {
    fn default() -> Self {
        Self {
            scaling: 1.0,
            balance_bus: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Matrices {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BusEntry {
    id: Spanned<usize>,
    kind: Spanned<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<Spanned<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrices: Option<Matrices>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LineEntry {
    from: Spanned<usize>,
    to: Spanned<usize>,
    r: f64,
    x: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    tap: f64,
}

/// Certification settings stored with a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_guard")]
    pub margin_guard: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub analytic_static: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_spec: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_box: Option<BoxSpec>,
    /// Approximate stacked states of the equilibria the sample boxes are built around.
    #[serde(default)]
    pub anchors: Vec<Vec<f64>>,
}

fn default_levels() -> usize {
    CertifySpec::default().levels
}
fn default_resolution() -> usize {
    CertifySpec::default().resolution
}
fn default_epsilon() -> f64 {
    CertifySpec::default().epsilon
}
fn default_guard() -> f64 {
    CertifySpec::default().margin_guard
}

impl Default for CertifySection {
    fn default() -> Self {
        let d = CertifySpec::default();
        Self {
            levels: d.levels,
            resolution: d.resolution,
            epsilon: d.epsilon,
            margin_guard: d.margin_guard,
            analytic_static: d.analytic_static,
            box_spec: None,
            region_box: None,
            anchors: Vec::new(),
        }
    }
}

impl CertifySection {
    pub fn spec(&self) -> CertifySpec {
        CertifySpec {
            box_spec: self.box_spec.clone().unwrap_or_default(),
            region_box: self.region_box.clone(),
            levels: self.levels,
            resolution: self.resolution,
            epsilon: self.epsilon,
            margin_guard: self.margin_guard,
            analytic_static: self.analytic_static,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    meta: Meta,
    #[serde(default)]
    options: Options,
    #[serde(default)]
    buses: Vec<BusEntry>,
    #[serde(default)]
    lines: Vec<LineEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    certify: Option<CertifySection>,
}

/// A parsed case with its stored settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseDocument {
    pub case: NetworkCase,
    pub notes: String,
    pub certify: Option<CertifySection>,
}

impl CaseDocument {
    pub fn certify_section(&self) -> CertifySection {
        self.certify.clone().unwrap_or_default()
    }
}

/// 1-based line and column of a byte offset.
fn position(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn case_error(text: &str, span: Option<Range<usize>>, message: impl Into<String>) -> Error {
    let (line, column) = span.map_or((0, 0), |s| position(text, s.start));
    Error::Case {
        line,
        column,
        message: message.into(),
    }
}

fn build_model(text: &str, bus: &BusEntry) -> Result<DeviceModel> {
    let kind = DeviceKind::parse(bus.kind.get_ref())
        .ok_or_else(|| case_error(text, Some(bus.kind.span()), format!("unknown device kind '{}'", bus.kind.get_ref())))?;
    let role = match &bus.role {
        Some(r) => Some(
            PortRole::parse(r.get_ref())
                .ok_or_else(|| case_error(text, Some(r.span()), format!("unknown port role '{}' (current_in or voltage_in)", r.get_ref())))?,
        ),
        None => None,
    };
    let at = |e: Error| case_error(text, Some(bus.id.span()), format!("bus {}: {e}", bus.id.get_ref()));
    if kind == DeviceKind::Linear {
        let m = bus
            .matrices
            .as_ref()
            .ok_or_else(|| case_error(text, Some(bus.id.span()), format!("bus {}: linear device needs [buses.matrices]", bus.id.get_ref())))?;
        if !bus.params.is_empty() {
            return Err(at(Error::validation("params", "linear devices take matrices only")));
        }
        let mat = |rows: &Vec<Vec<f64>>, name: &str, cols: usize| {
            if rows.is_empty() {
                // empty state space: shapes follow from the port dimension
                let r = if name == "c" || name == "d" { 2 } else { 0 };
                return Ok(nalgebra::DMatrix::zeros(r, cols));
            }
            from_rows(rows).ok_or_else(|| Error::validation(name.to_string(), "rows have unequal lengths"))
        };
        let n = m.a.len();
        let model = DeviceModel::linear(mat(&m.a, "a", n).map_err(at)?, mat(&m.b, "b", 2).map_err(at)?, mat(&m.c, "c", n).map_err(at)?, mat(&m.d, "d", 2).map_err(at)?)
            .map_err(at)?;
        return match role {
            Some(r) if r != model.port_role() => DeviceModel::new(model.params().clone(), r).map_err(at),
            _ => Ok(model),
        };
    }
    if bus.matrices.is_some() {
        return Err(at(Error::validation("matrices", "only linear devices take matrices")));
    }
    let params = DeviceParams::from_map(kind, &bus.params).map_err(at)?;
    DeviceModel::new(params, role.unwrap_or_else(|| kind.default_role())).map_err(at)
}

/// Parses and validates a case document held in memory.
pub fn parse_case_str(text: &str) -> Result<CaseDocument> {
    let file: CaseFile = toml::from_str(text).map_err(|e| case_error(text, e.span(), e.message().to_string()))?;
    if file.buses.is_empty() {
        return Err(case_error(text, None, "case has no buses"));
    }
    let mut seen: BTreeMap<usize, Range<usize>> = BTreeMap::new();
    for b in &file.buses {
        if seen.contains_key(b.id.get_ref()) {
            return Err(case_error(text, Some(b.id.span()), format!("duplicate bus id {}", b.id.get_ref())));
        }
        seen.insert(*b.id.get_ref(), b.id.span());
    }
    for l in &file.lines {
        for end in [&l.from, &l.to] {
            if !seen.contains_key(end.get_ref()) {
                return Err(case_error(text, Some(end.span()), format!("line refers to unknown bus id {}", end.get_ref())));
            }
        }
    }
    let buses = file
        .buses
        .iter()
        .map(|b| {
            Ok(CaseBus {
                id: *b.id.get_ref(),
                model: build_model(text, b)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lines = file
        .lines
        .iter()
        .map(|l| LineData::new(*l.from.get_ref(), *l.to.get_ref(), l.r, l.x, l.b).with_tap(l.tap))
        .collect();
    let case = NetworkCase {
        name: file.meta.name,
        base_mva: file.meta.base_mva,
        buses,
        lines,
        scaling: file.options.scaling,
        balance_bus: file.options.balance_bus,
    };
    case.validate().map_err(|e| case_error(text, None, e.to_string()))?;
    if let Some(c) = &file.certify {
        c.spec().validate().map_err(|e| case_error(text, None, format!("certify: {e}")))?;
        let n = case.total_states();
        if let Some(a) = c.anchors.iter().find(|a| a.len() != n) {
            return Err(case_error(text, None, format!("certify: anchor has {} states, case has {n}", a.len())));
        }
    }
    Ok(CaseDocument {
        case,
        notes: file.meta.notes,
        certify: file.certify,
    })
}

pub fn parse_case(path: &Path) -> Result<CaseDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_case_str(&text)
}

fn spanned<T>(v: T) -> Spanned<T> {
    Spanned::new(0..0, v)
}

/// Serializes a document so that [`parse_case_str`] gives it back unchanged.
pub fn to_toml(doc: &CaseDocument) -> Result<String> {
    let case = &doc.case;
    let buses = case
        .buses
        .iter()
        .map(|b| {
            let kind = b.model.kind();
            let matrices = match b.model.params() {
                DeviceParams::Linear(p) => Some(Matrices {
                    a: to_rows(&p.a),
                    b: to_rows(&p.b),
                    c: to_rows(&p.c),
                    d: to_rows(&p.d),
                }),
                _ => None,
            };
            let default_role = match b.model.params() {
                DeviceParams::Linear(_) => PortRole::VoltageInCurrentOut,
                _ => kind.default_role(),
            };
            BusEntry {
                id: spanned(b.id),
                kind: spanned(kind.name().to_string()),
                role: (b.model.port_role() != default_role).then(|| spanned(b.model.port_role().name().to_string())),
                params: b.model.params().to_map(),
                matrices,
            }
        })
        .collect();
    let file = CaseFile {
        meta: Meta {
            name: case.name.clone(),
            base_mva: case.base_mva,
            notes: doc.notes.clone(),
        },
        options: Options {
            scaling: case.scaling,
            balance_bus: case.balance_bus,
        },
        buses,
        lines: case
            .lines
            .iter()
            .map(|l| LineEntry {
                from: spanned(l.from),
                to: spanned(l.to),
                r: l.r,
                x: l.x,
                b: l.b,
                tap: l.tap,
            })
            .collect(),
        certify: doc.certify.clone(),
    };
    toml::to_string(&file).map_err(|e| Error::validation("case", format!("cannot serialize: {e}")))
}
