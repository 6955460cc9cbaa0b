use std::path::PathBuf;
use std::process::ExitCode;

use benignlab::experiment::{check_artifacts, run_experiment, run_sweep, write_artifacts, write_sweep, RunConfig};
use benignlab::{Error, InvariantSuite};
use clap::{Args, Parser, Subcommand};

const OK: u8 = 0;
const USAGE: u8 = 1;
const DIVERGENCE: u8 = 2;
const INVARIANT: u8 = 3;
const MISSING: u8 = 4;

#[derive(Parser)]
#[command(name = "benignlab", version, about = "Benign overfitting experiments for two-layer ReLU CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write every artifact to --out.
    Run(Flags),
    /// Sweep the (d, mu) grid and write the heatmaps to --out.
    Sweep(Flags),
    /// Replay the checks of a finished run.
    Check {
        /// Artifact directory (defaults to --out).
        dir: Option<PathBuf>,
        #[command(flatten)]
        flags: Flags,
    },
}

/// Every flag overrides the same-named key of --config.
#[derive(Args)]
struct Flags {
    /// key=value file; unknown keys are errors
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    mu: Option<String>,
    #[arg(long = "sigma-p")]
    sigma_p: Option<String>,
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    sigma0: Option<String>,
    #[arg(long = "test-count")]
    test_count: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Sweep threads; 0 = one per core
    #[arg(long)]
    workers: Option<String>,
    #[arg(long = "record-every")]
    record_every: Option<String>,
    /// Comma list or start..end:step
    #[arg(long = "d-values")]
    d_values: Option<String>,
    /// Comma list or start..end:step
    #[arg(long = "mu-values")]
    mu_values: Option<String>,
    #[arg(long)]
    replications: Option<String>,
    #[arg(long)]
    cutoff: Option<String>,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        let pairs = [
            ("d", &self.d),
            ("n", &self.n),
            ("mu", &self.mu),
            ("sigma-p", &self.sigma_p),
            ("p", &self.p),
            ("m", &self.m),
            ("eta", &self.eta),
            ("iters", &self.iters),
            ("epsilon", &self.epsilon),
            ("sigma0", &self.sigma0),
            ("test-count", &self.test_count),
            ("seed", &self.seed),
            ("out", &self.out),
            ("workers", &self.workers),
            ("record-every", &self.record_every),
            ("d-values", &self.d_values),
            ("mu-values", &self.mu_values),
            ("replications", &self.replications),
            ("cutoff", &self.cutoff),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Divergence { .. } | Error::IllConditioned { .. } => DIVERGENCE,
        Error::MissingArtifacts(_) | Error::Malformed { .. } => MISSING,
        _ => USAGE,
    }
}

fn report_failures(suite: &InvariantSuite) -> u8 {
    let mut code = OK;
    for c in suite.failures() {
        code = INVARIANT;
        let at = c.witness.as_ref().map_or(String::new(), |w| {
            let mut s = format!("at t={}", w.t);
            for (k, v) in [("j", w.j.map(i64::from)), ("r", w.r.map(|x| x as i64)), ("i", w.i.map(|x| x as i64)), ("k", w.k.map(|x| x as i64))] {
                if let Some(v) = v {
                    s.push_str(&format!(" {k}={v}"));
                }
            }
            s
        });
        eprintln!("FAIL {}: observed {} vs bound {} {at} ({})", c.name, c.observed, c.bound, c.detail);
    }
    code
}

fn cmd_run(flags: &Flags) -> Result<u8, Error> {
    let cfg = flags.resolve()?;
    let outcome = run_experiment(&cfg)?;
    write_artifacts(&outcome, &cfg.out)?;
    let e = &outcome.evaluation;
    println!(
        "t={} stop={} loss={:.6} test_error={:.4} (+/- {:.4}, clean {:.4}) artifacts={}",
        outcome.record.last().t,
        outcome.record.stop_reason.as_str(),
        outcome.record.final_loss(),
        e.estimate,
        e.std_err,
        e.clean_error,
        cfg.out.display()
    );
    Ok(report_failures(&outcome.invariants))
}

fn cmd_sweep(flags: &Flags) -> Result<u8, Error> {
    let cfg = flags.resolve()?;
    let sweep = run_sweep(&cfg)?;
    let suite = write_sweep(&sweep, &cfg, &cfg.out)?;
    for c in &sweep.cells {
        let cut = c.binarized(cfg.cutoff).map_or("-".to_string(), |b| b.to_string());
        match c.mean_error {
            Some(e) => println!("d={:<5} mu={:<5} error={e:.4} cut={cut}", c.d, c.mu),
            None => println!("d={:<5} mu={:<5} failed", c.d, c.mu),
        }
    }
    for c in suite.failures() {
        eprintln!("shape check {} did not hold: {}", c.name, c.detail);
    }
    for c in sweep.cells.iter().filter(|c| c.failed()) {
        for r in c.runs.iter().filter(|r| r.outcome.is_err()) {
            eprintln!("cell d={} mu={} rep={} failed: {}", c.d, c.mu, r.rep, r.outcome.as_ref().unwrap_err());
        }
    }
    Ok(if sweep.any_failed() { DIVERGENCE } else { OK })
}

fn cmd_check(dir: &Option<PathBuf>, flags: &Flags) -> Result<u8, Error> {
    let dir = match dir {
        Some(d) => d.clone(),
        None => flags.resolve()?.out,
    };
    let suite = check_artifacts(&dir)?;
    let code = report_failures(&suite);
    let passed = suite.checks.iter().filter(|c| c.passed()).count();
    println!("{passed}/{} checks passed in {}", suite.checks.len(), dir.display());
    Ok(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { OK });
        }
    };
    let result = match &cli.command {
        Command::Run(flags) => cmd_run(flags),
        Command::Sweep(flags) => cmd_sweep(flags),
        Command::Check { dir, flags } => cmd_check(dir, flags),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
