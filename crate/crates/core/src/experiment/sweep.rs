//! `(d, |mu|)` grid sweep with replications, the binarized heatmap and its
//! shape checks.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::data::generate_dataset;
use crate::error::{Error, Result};
use crate::evaluation::{phase_quantity, test_error};
use crate::io::{fmt_f64, fmt_opt, Table};
use crate::monitor::{InvariantReport, InvariantSuite, Witness};
use crate::rng::{derive_seed, stream};
use crate::trainer::train;

use super::RunConfig;

/// Master seed of replication `rep` of cell `(d, mu)`.
pub fn cell_seed(base: u64, d: usize, mu: f64, rep: usize) -> u64 {
    derive_seed(&[base, stream::CELL, d as u64, mu.to_bits(), rep as u64])
}

/// Configuration of one replication: `base` with `d`, `mu` and the derived seed.
pub fn cell_config(base: &RunConfig, d: usize, mu: f64, rep: usize) -> RunConfig {
    let mut c = base.clone();
    c.d = d;
    c.mu = mu;
    c.seed = cell_seed(base.seed, d, mu, rep);
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replication {
    pub test_error: f64,
    pub final_loss: f64,
}

/// Trains without monitoring and returns the test error and final loss.
/// Evaluates on the same test points as a full run with the same seed.
pub fn run_replication(config: &RunConfig) -> Result<Replication> {
    config.validate()?;
    let data = config.data_config();
    let ds = generate_dataset(&data)?;
    let rec = train(&ds, &config.train_config(), &mut [], None)?;
    let est = test_error(&rec.final_weights, &data, config.test_count, config.seeds().test)?;
    Ok(Replication {
        test_error: est.estimate,
        final_loss: rec.final_loss(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    pub rep: usize,
    pub seed: u64,
    pub outcome: std::result::Result<Replication, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub d: usize,
    pub mu: f64,
    pub runs: Vec<CellRun>,
    /// Mean over the successful replications; `None` if all failed.
    pub mean_error: Option<f64>,
    /// Sample standard deviation (0 with a single replication).
    pub std_error: Option<f64>,
    pub mean_final_loss: Option<f64>,
    pub phase_quantity: Option<f64>,
}

impl SweepCell {
    fn new(d: usize, mu: f64, runs: Vec<CellRun>, n: usize, sigma_p: f64) -> Self {
        let ok: Vec<Replication> = runs.iter().filter_map(|r| r.outcome.as_ref().ok().copied()).collect();
        let (mean_error, std_error, mean_final_loss) = if ok.is_empty() {
            (None, None, None)
        } else {
            let k = ok.len() as f64;
            let mean = ok.iter().map(|r| r.test_error).sum::<f64>() / k;
            let var = if ok.len() > 1 {
                ok.iter().map(|r| (r.test_error - mean).powi(2)).sum::<f64>() / (k - 1.0)
            } else {
                0.0
            };
            let loss = ok.iter().map(|r| r.final_loss).sum::<f64>() / k;
            (Some(mean), Some(var.sqrt()), Some(loss))
        };
        SweepCell {
            d,
            mu,
            runs,
            mean_error,
            std_error,
            mean_final_loss,
            phase_quantity: phase_quantity(n, mu, sigma_p, d).ok(),
        }
    }

    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }

    /// `1` iff the mean error exceeds `cutoff`.
    pub fn binarized(&self, cutoff: f64) -> Option<u8> {
        self.mean_error.map(|e| u8::from(e > cutoff))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub d_values: Vec<usize>,
    pub mu_values: Vec<f64>,
    pub cutoff: f64,
    /// In `(d, mu)` order of the grid lists.
    pub cells: Vec<SweepCell>,
}

impl Sweep {
    pub fn cell(&self, d: usize, mu: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.d == d && c.mu == mu)
    }

    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(SweepCell::failed)
    }
}

/// Runs every `(d, mu, rep)` of the grid on a pool of `config.workers`
/// threads (`0` = one per core). Results do not depend on the worker count.
pub fn run_sweep(config: &RunConfig) -> Result<Sweep> {
    config.validate()?;
    let jobs: Vec<(usize, f64, usize)> = config
        .d_values
        .iter()
        .flat_map(|&d| {
            config
                .mu_values
                .iter()
                .flat_map(move |&mu| (0..config.replications).map(move |rep| (d, mu, rep)))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    let runs: Vec<CellRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, mu, rep)| {
                let c = cell_config(config, d, mu, rep);
                CellRun {
                    rep,
                    seed: c.seed,
                    outcome: run_replication(&c).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    let mut runs = runs.into_iter();
    let mut cells = Vec::new();
    for &d in &config.d_values {
        for &mu in &config.mu_values {
            let reps: Vec<CellRun> = runs.by_ref().take(config.replications).collect();
            cells.push(SweepCell::new(d, mu, reps, config.n, config.sigma_p));
        }
    }
    Ok(Sweep {
        d_values: config.d_values.clone(),
        mu_values: config.mu_values.clone(),
        cutoff: config.cutoff,
        cells,
    })
}

/// `heatmap.csv`: `d,mu,mean_error,std_error,mean_final_loss,phase_quantity`.
/// Fields of cells whose replications all failed are empty.
pub fn write_heatmap_csv<W: Write>(sweep: &Sweep, mut out: W) -> Result<()> {
    writeln!(out, "d,mu,mean_error,std_error,mean_final_loss,phase_quantity")?;
    for c in &sweep.cells {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            c.d,
            c.mu,
            fmt_opt(c.mean_error),
            fmt_opt(c.std_error),
            fmt_opt(c.mean_final_loss),
            fmt_opt(c.phase_quantity)
        )?;
    }
    Ok(())
}

/// `heatmap_cut.csv` (`d,mu,cut`) computed from `heatmap.csv` alone.
pub fn write_cut_csv<W: Write>(heatmap: &Path, cutoff: f64, mut out: W) -> Result<()> {
    let tab = Table::read(heatmap)?;
    let (cd, cm, ce) = (tab.column("d")?, tab.column("mu")?, tab.column("mean_error")?);
    writeln!(out, "d,mu,cut")?;
    for row in 0..tab.rows.len() {
        let cut = tab.parse_opt(row, ce)?.map(|e| u8::from(e > cutoff).to_string());
        writeln!(out, "{},{},{}", tab.rows[row][cd], tab.rows[row][cm], cut.unwrap_or_default())?;
    }
    Ok(())
}

/// `cells.csv`: one row per replication, `d,mu,rep,seed,test_error,final_loss,status`.
pub fn write_cells_csv<W: Write>(sweep: &Sweep, mut out: W) -> Result<()> {
    writeln!(out, "d,mu,rep,seed,test_error,final_loss,status")?;
    for c in &sweep.cells {
        for r in &c.runs {
            let (e, l, s) = match &r.outcome {
                Ok(x) => (fmt_f64(x.test_error), fmt_f64(x.final_loss), "ok".to_string()),
                Err(msg) => (String::new(), String::new(), format!("failed: {}", msg.replace(',', ";"))),
            };
            writeln!(out, "{},{},{},{},{e},{l},{s}", c.d, c.mu, r.rep, r.seed)?;
        }
    }
    Ok(())
}

/// Binarized monotonicity along every row (increasing `mu`, the map should
/// not switch from benign to harmful) and column (increasing `d`, it should
/// not switch from harmful to benign). A line passes with at most one wrong
/// switch, and only if one side of it lies within `2 std` of the cutoff.
pub fn line_checks(sweep: &Sweep) -> Vec<InvariantReport> {
    let mut ds = sweep.d_values.clone();
    ds.sort_unstable();
    let mut mus = sweep.mu_values.clone();
    mus.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    for &d in &ds {
        let line: Vec<&SweepCell> = mus.iter().filter_map(|&mu| sweep.cell(d, mu)).collect();
        out.push(line_report(&format!("monotone_in_mu_at_d={d}"), &line, sweep.cutoff, true));
    }
    for &mu in &mus {
        let line: Vec<&SweepCell> = ds.iter().filter_map(|&d| sweep.cell(d, mu)).collect();
        out.push(line_report(&format!("monotone_in_d_at_mu={mu}"), &line, sweep.cutoff, false));
    }
    out
}

fn line_report(name: &str, line: &[&SweepCell], cutoff: f64, decreasing: bool) -> InvariantReport {
    let near = |c: &SweepCell| match (c.mean_error, c.std_error) {
        (Some(e), Some(s)) => (e - cutoff).abs() <= 2.0 * s,
        _ => false,
    };
    let valid: Vec<&SweepCell> = line.iter().copied().filter(|c| c.mean_error.is_some()).collect();
    let mut violations = 0usize;
    let mut excused = true;
    let mut witness = None;
    for w in valid.windows(2) {
        let (a, b) = (w[0].binarized(cutoff).unwrap_or(0), w[1].binarized(cutoff).unwrap_or(0));
        let wrong = if decreasing { b > a } else { b < a };
        if wrong {
            violations += 1;
            excused &= near(w[0]) || near(w[1]);
            witness.get_or_insert(Witness {
                t: 0,
                j: None,
                r: None,
                i: Some(w[1].d),
                k: None,
                value: w[1].mu,
            });
        }
    }
    let ok = violations == 0 || (violations == 1 && excused);
    InvariantReport::new(
        name,
        true,
        ok,
        1.0,
        violations as f64,
        if violations == 0 { None } else { witness },
        format!(
            "wrong-direction switches of the binarized map; witness i = d and value = mu of the cell after the first switch{}",
            if violations > 0 && !excused { "; a switch lies outside the 2 std slack" } else { "" }
        ),
    )
}

/// Mean error should not increase with the phase quantity beyond `2 std`
/// slack: for every pair of cells with `q_a < q_b`,
/// `e_b <= e_a + 2 max(s_a, s_b)`.
pub fn phase_order_check(sweep: &Sweep) -> InvariantReport {
    let cells: Vec<(f64, f64, f64, &SweepCell)> = sweep
        .cells
        .iter()
        .filter_map(|c| Some((c.phase_quantity?, c.mean_error?, c.std_error?, c)))
        .collect();
    let mut count = 0usize;
    let mut worst = (0.0f64, None);
    for a in &cells {
        for b in &cells {
            if a.0 < b.0 {
                let excess = b.1 - a.1 - 2.0 * a.2.max(b.2);
                if excess > 0.0 {
                    count += 1;
                    if excess > worst.0 {
                        worst = (excess, Some(Witness { t: 0, j: None, r: None, i: Some(b.3.d), k: Some(a.3.d), value: excess }));
                    }
                }
            }
        }
    }
    InvariantReport::new(
        "phase_order",
        true,
        count == 0,
        0.0,
        count as f64,
        worst.1,
        format!("pairs where error rises with n|mu|^4/(sigma_p^4 d) beyond 2 std; largest excess {:.4}", worst.0),
    )
}

pub fn sweep_checks(sweep: &Sweep) -> InvariantSuite {
    let mut suite = InvariantSuite::default();
    suite.extend(line_checks(sweep));
    suite.checks.push(phase_order_check(sweep));
    suite
}

/// Writes `heatmap.csv`, `heatmap_cut.csv`, `cells.csv`, `sweep_checks.json`
/// and `config.txt` into `dir`.
pub fn write_sweep(sweep: &Sweep, config: &RunConfig, dir: &Path) -> Result<InvariantSuite> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), config.to_text())?;
    let heatmap = dir.join("heatmap.csv");
    {
        let mut w = BufWriter::new(File::create(&heatmap)?);
        write_heatmap_csv(sweep, &mut w)?;
        w.flush()?;
    }
    let mut cut = BufWriter::new(File::create(dir.join("heatmap_cut.csv"))?);
    write_cut_csv(&heatmap, config.cutoff, &mut cut)?;
    cut.flush()?;
    let mut cells = BufWriter::new(File::create(dir.join("cells.csv"))?);
    write_cells_csv(sweep, &mut cells)?;
    cells.flush()?;
    let suite = sweep_checks(sweep);
    let mut js = BufWriter::new(File::create(dir.join("sweep_checks.json"))?);
    suite.write_json(&mut js)?;
    writeln!(js)?;
    js.flush()?;
    Ok(suite)
}
