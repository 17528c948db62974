//! Command layer of the `twr` binary: solve single instances, run sweeps and
//! self-checks.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::ffi::OsString;

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;
use twr_beamform::error::Error;
use twr_beamform::model::{to_db, Node};
use twr_beamform::sim::{run_sweep, write_summary_csv, write_trials_csv, SweepConfig};
use twr_beamform::solver::{solve, Candidate, CandidateCoords, CandidateKind, Solution};
use twr_beamform::verify::{run_verify, VerifyConfig};

use crate::config::{load, SolveConfig};

#[derive(Debug, Parser)]
#[command(name = "twr", version, about = "Minimum-power two-way relay beamforming")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads, 0 for one per core. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one instance and write solution.json.
    Solve,
    /// Run a grid sweep and write trials.csv and summary.csv.
    Sweep,
    /// Run the self-consistency checks.
    Verify {
        #[arg(long, hide = true)]
        inject_z_fault: bool,
    },
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Problem(Error),
    Internal(Error),
    VerifyFailed(Vec<&'static str>),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::CollinearChannels { .. } | Error::InfeasibleConstraint(_) | Error::NoFeasibleCandidate => {
                CliError::Problem(e)
            }
            Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) | CliError::Internal(_) => 1,
            CliError::Problem(_) => 2,
            CliError::VerifyFailed(_) => 3,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) | CliError::Io(m) => m.clone(),
            CliError::Problem(e) => format!("problem has no solution: {e}"),
            CliError::Internal(e) => format!("internal error: {e}"),
            CliError::VerifyFailed(names) => format!("verification failed: {}", names.join(", ")),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn require_config(cli: &Cli) -> Result<&Path, CliError> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[derive(Serialize)]
struct CandidateDoc {
    kind: CandidateKind,
    coords: Vec<f64>,
    power_watts: f64,
    power_dbw: f64,
    f1: f64,
    f2: f64,
    feasible: bool,
    iterations: usize,
}

impl From<&Candidate> for CandidateDoc {
    fn from(c: &Candidate) -> Self {
        CandidateDoc {
            kind: c.kind,
            coords: match c.coords {
                CandidateCoords::Pair(x, y) => vec![x, y],
                CandidateCoords::Scalar(x) => vec![x],
            },
            power_watts: c.power_watts,
            power_dbw: to_db(c.power_watts),
            f1: c.f[0],
            f2: c.f[1],
            feasible: c.feasible,
            iterations: c.iterations,
        }
    }
}

#[derive(Serialize)]
struct SolutionDoc {
    winner: CandidateKind,
    power_watts: f64,
    power_dbw: f64,
    f1: f64,
    f2: f64,
    sinr1_db: f64,
    sinr2_db: f64,
    kkt_residual: f64,
    multipliers: [f64; 2],
    iterations: usize,
    mrr_mrt_power_watts: f64,
    mrr_mrt_gap_db: f64,
    candidates: Vec<CandidateDoc>,
    /// Rows of `[re, im]` pairs.
    relay_matrix: Vec<Vec<[f64; 2]>>,
}

fn solution_doc(sol: &Solution, sinr: [f64; 2]) -> SolutionDoc {
    let best = &sol.best;
    let a = &best.a.0;
    SolutionDoc {
        winner: best.kind,
        power_watts: best.power_watts,
        power_dbw: to_db(best.power_watts),
        f1: best.f[0],
        f2: best.f[1],
        sinr1_db: to_db(sinr[0]),
        sinr2_db: to_db(sinr[1]),
        kkt_residual: sol.kkt_residual,
        multipliers: sol.multipliers,
        iterations: sol.all_candidates.iter().map(|c| c.iterations).sum(),
        mrr_mrt_power_watts: sol.mrr_mrt.power_watts,
        mrr_mrt_gap_db: to_db(sol.mrr_mrt.power_watts / best.power_watts),
        candidates: sol.all_candidates.iter().map(CandidateDoc::from).collect(),
        relay_matrix: (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| [a[(i, j)].re, a[(i, j)].im]).collect())
            .collect(),
    }
}

fn cmd_solve(cli: &Cli) -> Result<(), CliError> {
    let cfg: SolveConfig = load(require_config(cli)?)?;
    let (ch, sp) = cfg.instance(cli.seed)?;
    let sol = solve(&ch, &sp, &cfg.solve_options())?;
    let sinr = Node::BOTH.map(|n| twr_beamform::model::achieved_sinr(n, &sol.best.a, &ch, &sp).unwrap_or(f64::NAN));
    let doc = solution_doc(&sol, sinr);
    prepare_out(&cli.out)?;
    let path = cli.out.join("solution.json");
    serde_json::to_writer_pretty(create(&path)?, &doc).map_err(|e| io_err(&path, e))?;
    println!(
        "winner {} at {:.6} W ({:.4} dBW), f = ({:.9}, {:.9}), KKT residual {:.2e}",
        doc.winner, doc.power_watts, doc.power_dbw, doc.f1, doc.f2, doc.kkt_residual
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli) -> Result<(), CliError> {
    let mut cfg: SweepConfig = load(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    prepare_out(&cli.out)?;
    let cells = run_sweep(&cfg)?;
    let trials = cli.out.join("trials.csv");
    write_trials_csv(create(&trials)?, &cells).map_err(|e| io_err(&trials, e))?;
    let summary = cli.out.join("summary.csv");
    write_summary_csv(create(&summary)?, &cells).map_err(|e| io_err(&summary, e))?;
    for c in &cells {
        match &c.stats {
            Some(s) => println!(
                "sigma1 {:.3} sigmaR {:.3}: kept {:4} discarded {:4} degenerate {:4} failed {:2} | solver gap {:.5} dB | mrr gap {:.4} dB | iterations {:.2}",
                s.sigma1,
                s.sigma_r,
                s.n_kept,
                s.n_discarded,
                s.n_degenerate,
                s.n_failed,
                s.mean_gap_solver_db,
                s.mean_gap_mrr_db,
                s.mean_iterations
            ),
            None => {
                let r = &c.records[0];
                println!("sigma1 {:.3} sigmaR {:.3}: no kept trials", r.sigma1, r.sigma_r);
            }
        }
    }
    info!("wrote {} and {}", trials.display(), summary.display());
    Ok(())
}

fn cmd_verify(cli: &Cli, inject_z_fault: bool) -> Result<(), CliError> {
    let mut cfg: VerifyConfig = load(require_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.corrupt_z = inject_z_fault;
    if cfg.instances == 0 {
        return Err(CliError::Usage("instances must be at least 1".into()));
    }
    let report = run_verify(&cfg)?;
    for c in &report.checks {
        println!("{c}");
    }
    println!("{} degenerate draws skipped", report.skipped);
    prepare_out(&cli.out)?;
    let path = cli.out.join("verify.json");
    serde_json::to_writer_pretty(create(&path)?, &report).map_err(|e| io_err(&path, e))?;
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(report.failed().map(|c| c.name).collect()))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", cli.threads)))?;
    pool.install(|| match &cli.command {
        Command::Solve => cmd_solve(cli),
        Command::Sweep => cmd_sweep(cli),
        Command::Verify { inject_z_fault } => cmd_verify(cli, *inject_z_fault),
    })
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
