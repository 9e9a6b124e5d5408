use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridcert::admm::AdmmConfig;
use gridcert::equilibria::{Event, ScanOptions, SimulationOptions};
use gridcert_cli::commands::{self, parse_list, parse_load_step, parse_perturbation, Common, Status};

/// Equilibrium-free stability certification of power-system cases.
///
/// Exit codes: 0 certified or success, 2 inconclusive or infeasible, 1 error.
#[derive(Parser)]
#[command(name = "gridcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Directory for report.json and CSV artifacts.
    #[arg(long, default_value = "gridcert-out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run parallel sections on one thread for bit-identical reruns.
    #[arg(long)]
    deterministic: bool,
    /// Dissipation margin epsilon (overrides the case file).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Region sweep points per axis (overrides the case file).
    #[arg(long)]
    grid_res: Option<usize>,
}

#[derive(Args, Clone)]
struct AdmmArgs {
    /// Use the distributed check even where the joint solve fits.
    #[arg(long)]
    admm: bool,
    #[arg(long)]
    eps_pri: Option<f64>,
    #[arg(long)]
    eps_dual: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    tau_incr: Option<f64>,
    #[arg(long)]
    tau_decr: Option<f64>,
    #[arg(long)]
    t_bar: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Disable the p-check (residual termination only).
    #[arg(long)]
    no_pcheck: bool,
}

impl AdmmArgs {
    fn config(&self) -> AdmmConfig {
        let mut c = AdmmConfig::default();
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut c.eps_pri, self.eps_pri);
        set(&mut c.eps_dual, self.eps_dual);
        set(&mut c.mu, self.mu);
        set(&mut c.tau_incr, self.tau_incr);
        set(&mut c.tau_decr, self.tau_decr);
        set(&mut c.t_bar, self.t_bar);
        if let Some(m) = self.max_iter {
            c.max_iter = m;
        }
        c.pcheck = !self.no_pcheck;
        c
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search local certificates bus by bus.
    VerifyLocal {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Joint local and coupling certification, with certified regions.
    VerifyCoupling {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        admm: AdmmArgs,
    },
    /// Distributed coupling verification with an iteration trace.
    AdmmVerify {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        admm: AdmmArgs,
    },
    /// Multistart equilibrium search and eigenvalue baseline.
    FindEquilibria {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 500)]
        starts: usize,
    },
    /// Certified/inconclusive verdict per equilibrium.
    Assess {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        admm: AdmmArgs,
        /// Stacked states near an equilibrium, comma separated; repeatable.
        /// Without it every multistart equilibrium is assessed.
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        states: Vec<Vec<f64>>,
        #[arg(long, default_value_t = 500)]
        starts: usize,
    },
    /// Load-scaling scan with certificates fixed at s = 1.
    ScanLoading {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        admm: AdmmArgs,
        /// lo,hi
        #[arg(long, value_parser = parse_list, default_value = "0.5,1.5")]
        s_range: Vec<f64>,
        #[arg(long, default_value_t = 0.005)]
        s_step: f64,
    },
    /// Trapezoidal time-domain simulation.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Initial states near an equilibrium; the first anchor by default.
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 10)]
        record_every: usize,
        /// t:s, repeatable.
        #[arg(long, value_parser = parse_load_step)]
        load_step: Vec<Event>,
        /// t:bus:state:delta, repeatable.
        #[arg(long, value_parser = parse_perturbation, allow_hyphen_values = true)]
        perturb: Vec<Event>,
    },
    /// Write certified-region grids as CSV.
    ExportRegion {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        admm: AdmmArgs,
        /// Bus id; all dynamic buses when absent.
        #[arg(long)]
        bus: Option<usize>,
    },
}

fn common(c: &CommonArgs, admm: Option<&AdmmArgs>) -> Common {
    let mut out = Common::new(&c.case, &c.out_dir);
    out.seed = c.seed;
    out.deterministic = c.deterministic;
    out.epsilon = c.epsilon;
    out.grid_res = c.grid_res;
    if let Some(a) = admm {
        out.admm = a.admm;
        out.admm_cfg = a.config();
    }
    out
}

fn run(cli: Cli) -> gridcert::Result<Status> {
    match cli.command {
        Command::VerifyLocal { common: c } => commands::verify_local(common(&c, None)),
        Command::VerifyCoupling { common: c, admm } => commands::verify_coupling(common(&c, Some(&admm))),
        Command::AdmmVerify { common: c, admm } => commands::admm_verify(common(&c, Some(&admm))),
        Command::FindEquilibria { common: c, starts } => commands::find_equilibria(common(&c, None), starts),
        Command::Assess { common: c, admm, states, starts } => commands::assess(common(&c, Some(&admm)), &states, starts),
        Command::ScanLoading { common: c, admm, s_range, s_step } => {
            if s_range.len() != 2 {
                return Err(gridcert::Error::validation("s_range", "expected lo,hi"));
            }
            let opts = ScanOptions {
                s_lo: s_range[0],
                s_hi: s_range[1],
                step: s_step,
            };
            commands::scan(common(&c, Some(&admm)), opts)
        }
        Command::Simulate {
            common: c,
            from,
            t_end,
            dt,
            record_every,
            mut load_step,
            perturb,
        } => {
            load_step.extend(perturb);
            let opts = SimulationOptions {
                dt,
                t_end,
                record_every,
                ..SimulationOptions::default()
            };
            commands::run_simulation(common(&c, None), from, load_step, opts)
        }
        Command::ExportRegion { common: c, admm, bus } => commands::export_region(common(&c, Some(&admm)), bus),
    }
}

fn main() -> ExitCode {
    // usage errors exit 1: code 2 is reserved for inconclusive results
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(status)) => ExitCode::from(status.code()),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(1),
    }
}
