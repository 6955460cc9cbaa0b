//! Replays the checks of a finished run from its artifact directory.

use std::path::Path;

use crate::cnn::Weights;
use crate::decomposition::{coefficient_summaries, compare, CoefficientHistory, AGREEMENT_ABS, AGREEMENT_REL, TIGHT_CONDITION};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::monitor::{ActivationHistory, InvariantReport, InvariantSuite, Witness, MONOTONE_TOL};
use crate::sign::Sign;
use crate::trainer::IterationRecord;

use super::run::{basis_for, initial_weights, replayable_checks};
use super::RunConfig;

/// Files `check` reads.
pub const REQUIRED: &[&str] = &[
    "config.txt",
    "run.csv",
    "margins.csv",
    "coeffs.csv",
    "coeff_entries.csv",
    "activations.csv",
    "weights.csv",
];

/// Lists required files absent from `dir`.
pub fn missing_artifacts(dir: &Path) -> Vec<String> {
    REQUIRED
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| f.to_string())
        .collect()
}

/// Rebuilds the iteration records from `run.csv` and `margins.csv`.
pub fn read_iterations(run_csv: &Path, margins_csv: &Path) -> Result<Vec<IterationRecord>> {
    let run = Table::read(run_csv)?;
    let mar = Table::read(margins_csv)?;
    let (ct, cl, ce) = (run.column("t")?, run.column("loss")?, run.column("test_error")?);
    let mut out = Vec::with_capacity(run.rows.len());
    for row in 0..run.rows.len() {
        out.push(IterationRecord {
            t: run.parse(row, ct)?,
            loss: run.parse(row, cl)?,
            margins: Vec::new(),
            logit_derivs: Vec::new(),
            max_margin: f64::NEG_INFINITY,
            min_margin: f64::INFINITY,
            test_error: run.parse_opt(row, ce)?,
        });
    }
    let (mt, mi, mz, mg) = (mar.column("t")?, mar.column("i")?, mar.column("margin")?, mar.column("logit_deriv")?);
    let mut k = 0;
    for row in 0..mar.rows.len() {
        let t: usize = mar.parse(row, mt)?;
        while k < out.len() && out[k].t != t {
            k += 1;
        }
        let it = out
            .get_mut(k)
            .ok_or_else(|| Error::malformed(&mar.file, format!("iteration {t} is absent from run.csv or out of order")))?;
        let i: usize = mar.parse(row, mi)?;
        if i != it.margins.len() {
            return Err(Error::malformed(&mar.file, "sample indices are not contiguous"));
        }
        let z: f64 = mar.parse(row, mz)?;
        it.margins.push(z);
        it.logit_derivs.push(mar.parse(row, mg)?);
        it.max_margin = it.max_margin.max(z);
        it.min_margin = it.min_margin.min(z);
    }
    if out.is_empty() || out.iter().any(|it| it.margins.is_empty()) {
        return Err(Error::malformed(&mar.file, "some iterations have no margins"));
    }
    Ok(out)
}

/// `coeffs.csv` must agree with the entries it summarizes, and its per-filter
/// aggregates must move monotonically.
pub fn summary_checks(coeffs_csv: &Path, history: &CoefficientHistory) -> Result<Vec<InvariantReport>> {
    let tab = Table::read(coeffs_csv)?;
    let cols = ["t", "j", "r", "sum_zeta", "min_omega", "max_zeta"]
        .map(|c| tab.column(c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut mismatch: Option<Witness> = None;
    let mut mismatches = 0usize;
    let mut drop: Option<Witness> = None;
    let mut worst_drop = 0.0f64;
    // (sum_zeta, min_omega) of the previous row, per filter
    let mut prev: Vec<Option<(f64, f64)>> = vec![None; 2 * history.m];
    for row in 0..tab.rows.len() {
        let t: usize = tab.parse(row, cols[0])?;
        let j = Sign::from_i64(tab.parse(row, cols[1])?).ok_or_else(|| Error::malformed(&tab.file, "j must be +1 or -1"))?;
        let r: usize = tab.parse(row, cols[2])?;
        let (sz, mo, mz): (f64, f64, f64) = (tab.parse(row, cols[3])?, tab.parse(row, cols[4])?, tab.parse(row, cols[5])?);
        let at = |value| Witness { t, j: Some(j.as_i8()), r: Some(r), i: None, k: None, value };
        let snap = history
            .snapshots
            .iter()
            .find(|(tt, _)| *tt == t)
            .ok_or_else(|| Error::malformed(&tab.file, format!("iteration {t} has no entries")))?;
        let s = coefficient_summaries(&snap.1)
            .into_iter()
            .find(|s| s.j == j && s.r == r)
            .ok_or_else(|| Error::malformed(&tab.file, "filter index out of range"))?;
        if !(close(sz, s.sum_zeta) && close(mo, s.min_omega) && close(mz, s.max_zeta)) {
            mismatches += 1;
            mismatch.get_or_insert(at(sz - s.sum_zeta));
        }
        let slot = &mut prev[j.index() * history.m + r];
        if let Some((psz, pmo)) = *slot {
            let fall = (psz - sz).max(mo - pmo);
            if fall > MONOTONE_TOL && fall > worst_drop {
                worst_drop = fall;
                drop = Some(at(fall));
            }
        }
        *slot = Some((sz, mo));
    }
    Ok(vec![
        InvariantReport::new(
            "summary_consistency",
            true,
            mismatches == 0,
            0.0,
            mismatches as f64,
            mismatch,
            "coeffs.csv aggregates vs coeff_entries.csv; observed = mismatching rows".into(),
        ),
        InvariantReport::new(
            "aggregate_monotonicity",
            true,
            drop.is_none(),
            MONOTONE_TOL,
            worst_drop,
            drop,
            "sum_i zeta nondecreasing and min_i omega nonincreasing per filter in coeffs.csv".into(),
        ),
    ])
}

/// Recomputes the final coefficients by projection from `weights.csv` and the
/// regenerated data and initialization, and compares with the last snapshot.
pub fn final_recovery_check(config: &RunConfig, weights_csv: &Path, history: &CoefficientHistory) -> Result<InvariantReport> {
    let (_, basis) = basis_for(config)?;
    let w = Weights::read_csv(weights_csv, config.m, config.d)?;
    let w0 = initial_weights(config)?;
    let rec = basis.recover(&w, &w0)?;
    let (t, last) = history
        .snapshots
        .last()
        .ok_or(Error::Empty("coefficient history has no snapshots"))?;
    if last.n() != rec.coeffs.n() {
        return Err(Error::DimensionMismatch { expected: rec.coeffs.n(), got: last.n() });
    }
    let a = compare(last, &rec.coeffs, AGREEMENT_REL, AGREEMENT_ABS);
    let witness = a.witness.map(|(_, j, r, i)| Witness {
        t: *t,
        j: Some(j.as_i8()),
        r: Some(r),
        i,
        k: None,
        value: a.worst_ratio,
    });
    Ok(InvariantReport::new(
        "final_recovery_agreement",
        basis.condition() < TIGHT_CONDITION,
        a.holds(),
        1.0,
        a.worst_ratio,
        if a.holds() { None } else { witness },
        format!("last snapshot vs projection of weights.csv; residual {:.3e}", rec.relative_residual),
    ))
}

/// Replays every persisted check of the run in `dir`.
pub fn check_artifacts(dir: &Path) -> Result<InvariantSuite> {
    let missing = missing_artifacts(dir);
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    let config = RunConfig::from_file(&dir.join("config.txt"))?;
    config.validate()?;
    let iterations = read_iterations(&dir.join("run.csv"), &dir.join("margins.csv"))?;
    let activations = ActivationHistory::read_csv(&dir.join("activations.csv"))?;
    if activations.m != config.m || activations.n() != config.n {
        return Err(Error::malformed("activations.csv", "shape differs from config.txt"));
    }
    let history = CoefficientHistory::read_csv(
        &dir.join("coeffs.csv"),
        &dir.join("coeff_entries.csv"),
        activations.labels.clone(),
        config.m,
    )?;
    let mut suite = InvariantSuite::default();
    suite.extend(replayable_checks(&config, &iterations, &history, &activations));
    suite.extend(summary_checks(&dir.join("coeffs.csv"), &history)?);
    suite.checks.push(final_recovery_check(&config, &dir.join("weights.csv"), &history)?);
    Ok(suite)
}
