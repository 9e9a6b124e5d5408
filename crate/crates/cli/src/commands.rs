//! Command implementations behind the `gridcert` binary. Each command writes
//! `report.json` plus CSV artifacts into the output directory and returns the
//! exit status.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gridcert::admm::{self, AdmmConfig};
use gridcert::dissipativity::{
    verify_dynamic, verify_static, DissipativeRegion, DissipativityCertificate, LocalLmiSet, ObjectiveHint,
    VerifyOutcome,
};
use gridcert::equilibria::{
    anchor_samples, assess_equilibrium, certify_case, certify_case_admm, guess_from_states, linearize,
    multistart_equilibria, scan_loading, simulate, solve_equilibrium, spectral_summary, CaseCertificate,
    CertifySpec, CouplingSolution, Equilibrium, Event, NetworkCase, ScanOptions, SimulationOptions,
    SpectralSummary, Verdict, NEWTON_TOL,
};
use gridcert::interconnect::CouplingOptions;
use gridcert::{Error, Result};
use serde_json::{json, Value};

use crate::caseio::{parse_case, CaseDocument};

/// Largest `2N` the joint conic solve is used for; bigger cases go through ADMM.
const CENTRAL_LIMIT: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    /// Success or certified.
    Ok,
    /// Inconclusive or infeasible.
    Inconclusive,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Inconclusive => 2,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Ok
        } else {
            Status::Inconclusive
        }
    }
}

/// Settings shared by every command.
#[derive(Debug, Clone)]
pub struct Common {
    pub case: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub deterministic: bool,
    pub epsilon: Option<f64>,
    pub grid_res: Option<usize>,
    /// Force the distributed coupling check even when the joint solve fits.
    pub admm: bool,
    pub admm_cfg: AdmmConfig,
}

impl Common {
    pub fn new(case: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            case: case.into(),
            out_dir: out_dir.into(),
            seed: 1,
            deterministic: false,
            epsilon: None,
            grid_res: None,
            admm: false,
            admm_cfg: AdmmConfig::default(),
        }
    }
}

pub struct Context {
    pub common: Common,
    pub doc: CaseDocument,
    pub spec: CertifySpec,
    command: String,
}

impl Context {
    pub fn load(command: &str, common: Common) -> Result<Self> {
        let doc = parse_case(&common.case)?;
        let mut spec = doc.certify_section().spec();
        if let Some(e) = common.epsilon {
            spec.epsilon = e;
        }
        if let Some(r) = common.grid_res {
            spec.resolution = r;
        }
        spec.validate()?;
        fs::create_dir_all(&common.out_dir)?;
        Ok(Self {
            common,
            doc,
            spec,
            command: command.to_string(),
        })
    }

    fn case(&self) -> &NetworkCase {
        &self.doc.case
    }

    fn path(&self, name: &str) -> PathBuf {
        self.common.out_dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn provenance(&self) -> Value {
        let c = &self.common;
        let a = &c.admm_cfg;
        json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "case_file": c.case.display().to_string(),
            "case_name": self.case().name,
            "seed": c.seed,
            "deterministic": c.deterministic,
            "certify": {
                "levels": self.spec.levels,
                "resolution": self.spec.resolution,
                "epsilon": self.spec.epsilon,
                "margin_guard": self.spec.margin_guard,
                "analytic_static": self.spec.analytic_static,
                "box_spec": self.spec.box_spec,
                "region_box": self.spec.region_box,
            },
            "admm": {
                "epsilon": a.epsilon, "eps_pri": a.eps_pri, "eps_dual": a.eps_dual, "mu": a.mu,
                "tau_incr": a.tau_incr, "tau_decr": a.tau_decr, "t_bar": a.t_bar, "max_iter": a.max_iter,
                "pcheck": a.pcheck,
            },
            "newton_tol": NEWTON_TOL,
        })
    }

    fn write_report(&self, status: Status, summary: &str, body: Value) -> Result<()> {
        let report = json!({
            "status": match status { Status::Ok => "ok", Status::Inconclusive => "inconclusive" },
            "exit_code": status.code(),
            "summary": summary,
            "provenance": self.provenance(),
            "result": body,
        });
        let mut f = self.create("report.json")?;
        serde_json::to_writer_pretty(&mut f, &report).map_err(|e| Error::validation("report", e.to_string()))?;
        writeln!(f)?;
        println!("{summary}");
        println!("report: {}", self.path("report.json").display());
        Ok(())
    }

    /// Anchors from the case file, each solved to an exact equilibrium.
    fn anchors(&self) -> Result<Vec<Equilibrium>> {
        let sec = self.doc.certify_section();
        if sec.anchors.is_empty() {
            return Err(Error::validation("certify.anchors", "the case file lists no anchor states"));
        }
        sec.anchors
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let g = guess_from_states(self.case(), a)?;
                solve_equilibrium(self.case(), &g)?
                    .equilibrium()
                    .ok_or_else(|| Error::solver(None, format!("anchor {} did not converge", i + 1)))
            })
            .collect()
    }

    fn use_admm(&self) -> bool {
        self.common.admm || 2 * self.case().n() > CENTRAL_LIMIT
    }

    fn certify(&self, anchors: &[Equilibrium]) -> Result<CaseCertificate> {
        if self.use_admm() {
            let mut cfg = self.common.admm_cfg.clone();
            if let Some(e) = self.common.epsilon {
                cfg.epsilon = e;
            }
            certify_case_admm(self.case(), anchors, &self.spec, &cfg)
        } else {
            certify_case(self.case(), anchors, &self.spec, &CouplingOptions::default())
        }
    }
}

fn configure_threads(deterministic: bool) {
    if deterministic {
        // a single worker keeps floating-point reductions in a fixed order
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

fn certificate_summary(case: &NetworkCase, k: usize, cert: &DissipativityCertificate) -> Result<Value> {
    let model = case.model_at(k);
    let reverified = cert.reverify(&model)?;
    Ok(json!({
        "device": cert.device,
        "lambda_min_p": cert.p.as_ref().map(|p| p.min_eigenvalue()),
        "epsilon": cert.epsilon,
        "samples": cert.sample_margins.len(),
        "max_margin": cert.max_margin(),
        "reverified_max_margin": reverified,
        "x": matrix_rows(cert.x.matrix()),
        "p": cert.p.as_ref().map(|p| matrix_rows(p.matrix())),
    }))
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

fn coupling_summary(ctx: &Context, cert: &CaseCertificate) -> Result<Value> {
    let mut out = match &cert.solution {
        CouplingSolution::Centralized(r) => json!({
            "method": "centralized",
            "feasible": r.feasible,
            "lambda_max_lc": r.lambda_max_lc,
            "local_margins": r.local_margins,
            "diagnostics": r.diagnostics,
        }),
        CouplingSolution::Admm(r) => {
            r.write_trace_csv(ctx.create("admm_trace.csv")?)?;
            json!({
                "method": "admm",
                "feasible": r.coupling_verified,
                "outcome": r.outcome.name(),
                "iterations": r.iterations,
                "elapsed_secs": r.elapsed_secs,
                "lambda_max_lc": r.lambda_max_lc,
                "local_margins": r.local_margins,
                "weights": r.weights,
                "trace": "admm_trace.csv",
            })
        }
    };
    let certs = cert
        .certificates
        .iter()
        .enumerate()
        .map(|(k, c)| certificate_summary(ctx.case(), k, c))
        .collect::<Result<Vec<_>>>()?;
    out["certificates"] = Value::Array(certs);
    Ok(out)
}

fn write_regions(ctx: &Context, regions: &[Option<DissipativeRegion>], only: Option<usize>) -> Result<Vec<Value>> {
    let case = ctx.case();
    let mut files = Vec::new();
    for (k, reg) in regions.iter().enumerate() {
        let id = case.buses[k].id;
        let Some(reg) = reg else { continue };
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let name = format!("region_bus{id}.csv");
        write_region_csv(case, k, reg, ctx.create(&name)?)?;
        files.push(json!({
            "bus": id,
            "device": reg.device,
            "file": name,
            "certified_fraction": reg.certified_fraction(),
            "nominal_certified": reg.nominal_certified,
            "lo": reg.bbox.lo,
            "hi": reg.bbox.hi,
        }));
    }
    Ok(files)
}

/// One row per grid point: coordinates, margin, and whether the margin clears the guard.
pub fn write_region_csv(case: &NetworkCase, k: usize, reg: &DissipativeRegion, mut out: impl Write) -> Result<()> {
    let model = case.model_at(k);
    let mut header: Vec<String> = model.state_names();
    header.extend(["u_d".to_string(), "u_q".to_string()]);
    writeln!(out, "{},margin,certified", header.join(","))?;
    let d = reg.dim();
    let total: usize = reg.counts.iter().product();
    let mut idx = vec![0usize; d];
    for flat in 0..total {
        let coords: Vec<String> = (0..d)
            .map(|a| format!("{:.6e}", reg.bbox.level(a, idx[a], reg.counts[a])))
            .collect();
        let m = reg.margins[flat];
        writeln!(out, "{},{:.6e},{}", coords.join(","), m, m <= -reg.margin_guard)?;
        for a in 0..d {
            idx[a] += 1;
            if idx[a] < reg.counts[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Ok(())
}

/// Column names of stacked states: `<bus id>_<state name>`.
pub fn state_columns(case: &NetworkCase) -> Vec<String> {
    case.buses
        .iter()
        .flat_map(|b| b.model.state_names().into_iter().map(move |n| format!("{}_{n}", b.id)))
        .collect()
}

fn write_equilibria_csv(
    ctx: &Context,
    name: &str,
    eqs: &[Equilibrium],
    spectra: &[SpectralSummary],
    verdicts: Option<&[Verdict]>,
) -> Result<()> {
    let mut f = ctx.create(name)?;
    let mut header = vec!["id".to_string()];
    header.extend(state_columns(ctx.case()));
    header.extend(["max_re".into(), "near_zero".into()]);
    if verdicts.is_some() {
        header.push("verdict".into());
    }
    writeln!(f, "{}", header.join(","))?;
    for (i, (e, s)) in eqs.iter().zip(spectra).enumerate() {
        let mut row = vec![e.id.to_string()];
        row.extend(e.states().iter().map(|v| format!("{v:.6}")));
        row.push(format!("{:.6}", s.max_real));
        row.push(s.near_zero.to_string());
        if let Some(v) = verdicts {
            row.push(v[i].name().to_string());
        }
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

fn spectra(case: &NetworkCase, eqs: &[Equilibrium]) -> Result<Vec<SpectralSummary>> {
    eqs.iter().map(|e| Ok(spectral_summary(&linearize(case, e)?))).collect()
}

/// Per-bus local search on the anchor samples, without coupling.
pub fn verify_local(common: Common) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("verify-local", common)?;
    let case = ctx.case();
    let anchors = ctx.anchors()?;
    let opts = CouplingOptions::default().local;
    let mut rows = Vec::new();
    let mut all = true;
    for k in 0..case.n() {
        let model = case.model_at(k);
        let label = format!("bus{}:{}", case.buses[k].id, model.kind().name());
        let samples = anchor_samples(case, k, &anchors, &ctx.spec)?;
        let outcome = if model.is_static() {
            verify_static(&label, &model, samples, &ObjectiveHint::Feasibility, &opts)?
        } else {
            verify_dynamic(&label, &model, samples, ctx.spec.epsilon, &ObjectiveHint::Feasibility, &opts)?
        };
        match outcome {
            VerifyOutcome::Certified(c) => rows.push(json!({"certified": true, "certificate": certificate_summary(case, k, &c)?})),
            VerifyOutcome::Infeasible { diagnostic } => {
                all = false;
                rows.push(json!({"device": label, "certified": false, "diagnostic": diagnostic}));
            }
        }
    }
    let n_ok = rows.iter().filter(|r| r["certified"] == true).count();
    let status = Status::from_bool(all);
    ctx.write_report(status, &format!("local dissipativity: {n_ok} of {} buses certified", case.n()), json!({ "buses": rows }))?;
    Ok(status)
}

/// Joint search of local certificates and the coupling condition, then regions.
pub fn verify_coupling(common: Common) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("verify-coupling", common)?;
    let anchors = ctx.anchors()?;
    let cert = ctx.certify(&anchors)?;
    let mut body = coupling_summary(&ctx, &cert)?;
    body["regions"] = Value::Array(write_regions(&ctx, &cert.regions, None)?);
    let summary = if cert.feasible {
        "coupling condition: verified"
    } else {
        "coupling condition: not verified (infeasible)"
    };
    let status = Status::from_bool(cert.feasible);
    ctx.write_report(status, summary, body)?;
    Ok(status)
}

/// The distributed scheme alone, with its iteration trace.
pub fn admm_verify(common: Common) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("admm-verify", common)?;
    let anchors = ctx.anchors()?;
    let case = ctx.case();
    let sets = (0..case.n())
        .map(|k| {
            let model = case.model_at(k);
            let eps = if model.is_static() { 0.0 } else { ctx.spec.epsilon };
            let label = format!("bus{}:{}", case.buses[k].id, model.kind().name());
            LocalLmiSet::build(label, &model, anchor_samples(case, k, &anchors, &ctx.spec)?, eps)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cfg = ctx.common.admm_cfg.clone();
    if let Some(e) = ctx.common.epsilon {
        cfg.epsilon = e;
    }
    let rep = admm::run(&cfg, &case.interconnection()?, sets)?;
    rep.write_trace_csv(ctx.create("admm_trace.csv")?)?;
    let status = Status::from_bool(rep.coupling_verified);
    let summary = format!(
        "admm: {} after {} iterations, coupling {}",
        rep.outcome.name(),
        rep.iterations,
        if rep.coupling_verified { "verified" } else { "not verified" }
    );
    let body = json!({
        "outcome": rep.outcome.name(),
        "coupling_verified": rep.coupling_verified,
        "iterations": rep.iterations,
        "elapsed_secs": rep.elapsed_secs,
        "r_norm": rep.r_norm,
        "s_norm": rep.s_norm,
        "rho": rep.rho,
        "ts": rep.ts,
        "weights": rep.weights,
        "lambda_max_lc": rep.lambda_max_lc,
        "lambda_max_lc_z": rep.lambda_max_lc_z,
        "local_margins": rep.local_margins,
        "trace": "admm_trace.csv",
    });
    ctx.write_report(status, &summary, body)?;
    Ok(status)
}

/// Multistart equilibrium search with the eigenvalue baseline.
pub fn find_equilibria(common: Common, starts: usize) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("find-equilibria", common)?;
    let case = ctx.case();
    let eqs = multistart_equilibria(case, starts, ctx.common.seed)?;
    let sp = spectra(case, &eqs)?;
    write_equilibria_csv(&ctx, "equilibria.csv", &eqs, &sp, None)?;
    let rows: Vec<Value> = eqs
        .iter()
        .zip(&sp)
        .map(|(e, s)| {
            json!({
                "id": e.id, "states": e.states(), "max_re": s.max_real, "near_zero": s.near_zero,
                "dynamic_residual": e.dynamic_residual, "network_residual": e.network_residual,
            })
        })
        .collect();
    for (e, s) in eqs.iter().zip(&sp) {
        println!("#{:<3} max Re = {:+.4}", e.id, s.max_real);
    }
    let summary = format!("{} distinct equilibria from {starts} starts", eqs.len());
    ctx.write_report(Status::Ok, &summary, json!({"starts": starts, "equilibria": rows, "table": "equilibria.csv"}))?;
    Ok(Status::Ok)
}

/// Certified-region assessment of given states, or of every multistart equilibrium.
pub fn assess(common: Common, states: &[Vec<f64>], starts: usize) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("assess", common)?;
    let case = ctx.case();
    let eqs: Vec<Equilibrium> = if states.is_empty() {
        multistart_equilibria(case, starts, ctx.common.seed)?
    } else {
        states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut e = solve_equilibrium(case, &guess_from_states(case, s)?)?
                    .equilibrium()
                    .ok_or_else(|| Error::solver(None, format!("no equilibrium near given state {}", i + 1)))?;
                e.id = i + 1;
                Ok(e)
            })
            .collect::<Result<_>>()?
    };
    let anchors = ctx.anchors()?;
    let cert = ctx.certify(&anchors)?;
    let sp = spectra(case, &eqs)?;
    let mut rows = Vec::new();
    let mut verdicts = Vec::new();
    for (e, s) in eqs.iter().zip(&sp) {
        let a = assess_equilibrium(case, e, &cert.regions)?;
        println!("#{:<3} {:<16} max Re = {:+.4}", e.id, a.verdict.name(), s.max_real);
        verdicts.push(a.verdict);
        rows.push(json!({
            "id": e.id, "states": e.states(), "verdict": a.verdict.name(), "max_re": s.max_real,
            "buses": a.buses,
        }));
    }
    write_equilibria_csv(&ctx, "assessment.csv", &eqs, &sp, Some(&verdicts))?;
    let certified = verdicts.iter().filter(|v| **v == Verdict::CertifiedStable).count();
    let all = certified == verdicts.len() && !verdicts.is_empty();
    let word = if all { Verdict::CertifiedStable.name() } else { Verdict::Inconclusive.name() };
    let summary = format!("{word}: {certified} of {} equilibria certified", verdicts.len());
    let mut body = json!({"coupling_feasible": cert.feasible, "equilibria": rows, "table": "assessment.csv"});
    body["regions"] = Value::Array(write_regions(&ctx, &cert.regions, None)?);
    let status = Status::from_bool(all);
    ctx.write_report(status, &summary, body)?;
    Ok(status)
}

/// Load scan with certificates fixed at `s = 1`.
pub fn scan(common: Common, opts: ScanOptions) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("scan-loading", common)?;
    let case = ctx.case();
    let anchors = ctx.anchors()?;
    let cert = ctx.certify(&anchors)?;
    let res = scan_loading(case, &anchors[0], &cert.regions, &opts)?;
    let mut f = ctx.create("scan.csv")?;
    let dyn_ids: Vec<usize> = case.dynamic_buses().iter().map(|k| case.buses[*k].id).collect();
    writeln!(
        f,
        "s,converged,{}",
        dyn_ids.iter().map(|id| format!("bus{id}")).collect::<Vec<_>>().join(",")
    )?;
    for p in &res.points {
        let cols: Vec<String> = case
            .dynamic_buses()
            .iter()
            .map(|k| match p.membership[*k] {
                Some(m) => serde_json::to_value(m).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                None => "none".into(),
            })
            .collect();
        writeln!(f, "{},{},{}", p.s, p.equilibrium.is_some(), cols.join(","))?;
    }
    f.flush()?;
    for d in &res.devices {
        match d.interval {
            Some([lo, hi]) => println!("bus {:<4} {:<5} s in [{lo:.3}, {hi:.3}]", d.id, d.kind),
            None => println!("bus {:<4} {:<5} not certified at s = 1", d.id, d.kind),
        }
    }
    let summary = match res.system {
        Some([lo, hi]) => format!("certified for every s in [{lo:.3}, {hi:.3}]"),
        None => "no load range certified".to_string(),
    };
    let status = Status::from_bool(res.system.is_some());
    let body = json!({
        "coupling_feasible": cert.feasible,
        "devices": res.devices,
        "system": res.system,
        "truncation": res.truncation,
        "table": "scan.csv",
        "options": opts,
    });
    ctx.write_report(status, &summary, body)?;
    Ok(status)
}

/// Time-domain run from an equilibrium near `from` (the first anchor by default).
pub fn run_simulation(common: Common, from: Option<Vec<f64>>, events: Vec<Event>, opts: SimulationOptions) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("simulate", common)?;
    let case = ctx.case();
    let start = match from {
        Some(s) => s,
        None => ctx
            .doc
            .certify_section()
            .anchors
            .first()
            .cloned()
            .ok_or_else(|| Error::validation("from", "no initial states given and the case has no anchors"))?,
    };
    let eq = solve_equilibrium(case, &guess_from_states(case, &start)?)?
        .equilibrium()
        .ok_or_else(|| Error::solver(None, "no equilibrium near the initial states"))?;
    let traj = simulate(case, &eq.unknowns(), &events, &opts)?;
    traj.write_csv(case, ctx.create("trajectory.csv")?)?;
    let status = Status::from_bool(traj.failed_at.is_none());
    let summary = match traj.failed_at {
        None => format!("simulated {} steps to t = {}", traj.t.len(), traj.t.last().copied().unwrap_or(0.0)),
        Some(t) => format!("simulation stopped at t = {t}: {}", traj.failure.clone().unwrap_or_default()),
    };
    let body = json!({
        "initial_states": eq.states(),
        "final_states": traj.last_states(),
        "events": events,
        "options": opts,
        "failed_at": traj.failed_at,
        "failure": traj.failure,
        "trajectory": "trajectory.csv",
    });
    ctx.write_report(status, &summary, body)?;
    Ok(status)
}

/// Certified-region grids as CSV, for one bus or all dynamic buses.
pub fn export_region(common: Common, bus: Option<usize>) -> Result<Status> {
    configure_threads(common.deterministic);
    let ctx = Context::load("export-region", common)?;
    if let Some(id) = bus {
        let k = ctx.case().index_of(id).ok_or_else(|| Error::validation("bus", format!("unknown bus id {id}")))?;
        if ctx.case().buses[k].model.is_static() {
            return Err(Error::validation("bus", format!("bus {id} is static and has no region")));
        }
    }
    let anchors = ctx.anchors()?;
    let cert = ctx.certify(&anchors)?;
    if !cert.feasible {
        ctx.write_report(Status::Inconclusive, "no certificate: coupling condition not verified", coupling_summary(&ctx, &cert)?)?;
        return Ok(Status::Inconclusive);
    }
    let files = write_regions(&ctx, &cert.regions, bus)?;
    let summary = format!("{} region file(s) written", files.len());
    ctx.write_report(Status::Ok, &summary, json!({ "regions": files }))?;
    Ok(Status::Ok)
}

/// Parses `a,b,c` into numbers.
pub fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}

/// `t:s` load-scale event.
pub fn parse_load_step(s: &str) -> std::result::Result<Event, String> {
    let v: Vec<&str> = s.split(':').collect();
    if v.len() != 2 {
        return Err("expected t:s".into());
    }
    let num = |x: &str| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    Ok(Event::LoadScale { t: num(v[0])?, s: num(v[1])? })
}

/// `t:bus:state:delta` state perturbation.
pub fn parse_perturbation(s: &str) -> std::result::Result<Event, String> {
    let v: Vec<&str> = s.split(':').collect();
    if v.len() != 4 {
        return Err("expected t:bus:state:delta".into());
    }
    let num = |x: &str| x.parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    let int = |x: &str| x.parse::<usize>().map_err(|e| format!("`{x}`: {e}"));
    Ok(Event::StatePerturbation {
        t: num(v[0])?,
        bus: int(v[1])?,
        state: int(v[2])?,
        delta: num(v[3])?,
    })
}

pub fn out_dir_default() -> &'static Path {
    Path::new("gridcert-out")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_parsers() {
        assert_eq!(parse_load_step("10:0.86").unwrap(), Event::LoadScale { t: 10.0, s: 0.86 });
        assert_eq!(
            parse_perturbation("1:2:1:0.5").unwrap(),
            Event::StatePerturbation { t: 1.0, bus: 2, state: 1, delta: 0.5 }
        );
        assert!(parse_load_step("10").is_err());
        assert!(parse_perturbation("1:x:1:0.5").is_err());
        assert_eq!(parse_list("1, 2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
    }
}
