//! Single run: data, training with both coefficient tracks, checks, evaluation,
//! and the artifact directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::cnn::Weights;
use crate::data::{dataset_stats, generate_dataset, sample_test_points, Dataset, SetStats};
use crate::decomposition::{AgreementPoint, Basis, CoefficientHistory, TIGHT_CONDITION};
use crate::error::Result;
use crate::evaluation::{phase_quantity, ErrorEstimate};
use crate::io::{fmt_f64, fmt_opt};
use crate::monitor::{
    check_activation_persistence, check_balanced_logits, check_margin_spread, check_monotonicity, check_ratio_band,
    check_structure, condition_report, dataset_diagnostics, warmup_index, ActivationHistory, ActivationRecorder,
    ConditionReport, InvariantReport, InvariantSuite, Witness, BAND_FACTOR, C4, KAPPA, SPREAD_BOUND,
};
use crate::trainer::{train, IterationRecord, RunRecord, TestProbe, TrainHook};
use crate::decomposition::DecompositionTracker;

use super::RunConfig;

/// Loss level after which the signal/noise ratio is expected to sit in its band.
pub const WARMUP_LOSS: f64 = 0.5;
/// Failure probability used for the concentration diagnostics and the
/// condition report.
pub const DELTA: f64 = 0.01;

/// Every file written by [`write_artifacts`].
pub const ARTIFACTS: &[&str] = &[
    "config.txt",
    "run.csv",
    "margins.csv",
    "coeffs.csv",
    "coeff_entries.csv",
    "activations.csv",
    "weights.csv",
    "dataset.csv",
    "evaluation.csv",
    "invariants.json",
    "condition.json",
];

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub dataset: Dataset,
    pub stats: SetStats,
    pub record: RunRecord,
    pub agreement: Vec<AgreementPoint>,
    /// Condition number of the Gram matrix of the scaled basis.
    pub basis_condition: f64,
    pub evaluation: ErrorEstimate,
    pub phase_quantity: Option<f64>,
    pub invariants: InvariantSuite,
    pub condition: ConditionReport,
}

impl RunOutcome {
    pub fn history(&self) -> &CoefficientHistory {
        self.record.coefficients.as_ref().expect("full runs track coefficients")
    }

    pub fn activations(&self) -> &ActivationHistory {
        self.record.activations.as_ref().expect("full runs record activations")
    }
}

/// Checks that need only the persisted histories; shared by `run` and `check`.
pub fn replayable_checks(
    config: &RunConfig,
    iterations: &[IterationRecord],
    history: &CoefficientHistory,
    activations: &ActivationHistory,
) -> Vec<InvariantReport> {
    let mut out = check_monotonicity(history);
    out.extend(check_structure(history));
    out.extend(check_balanced_logits(iterations, Some(history), C4, KAPPA));
    out.push(check_margin_spread(iterations, SPREAD_BOUND));
    out.push(ratio_band(config, iterations, history));
    out.extend(check_activation_persistence(activations));
    out
}

fn ratio_band(config: &RunConfig, iterations: &[IterationRecord], history: &CoefficientHistory) -> InvariantReport {
    if config.mu == 0.0 {
        return InvariantReport::new("ratio_band", true, true, BAND_FACTOR, 1.0, None, "no signal; nothing to check".into());
    }
    match warmup_index(iterations, WARMUP_LOSS) {
        Some(t) => check_ratio_band(history, config.mu, config.sigma_p, config.d, BAND_FACTOR, t),
        None => InvariantReport::new(
            "ratio_band",
            true,
            true,
            BAND_FACTOR,
            1.0,
            None,
            format!("training loss never fell below {WARMUP_LOSS}; nothing to check"),
        ),
    }
}

/// Stepped-vs-recovered agreement and reconstruction residual. Hard only when
/// the basis is well conditioned.
pub fn agreement_checks(agreement: &[AgreementPoint], condition: f64) -> Vec<InvariantReport> {
    let hard = condition < TIGHT_CONDITION;
    let worst = agreement
        .iter()
        .max_by(|a, b| a.agreement.worst_ratio.total_cmp(&b.agreement.worst_ratio));
    let ratio = worst.map_or(0.0, |p| p.agreement.worst_ratio);
    let witness = worst.and_then(|p| {
        p.agreement.witness.map(|(_, j, r, i)| Witness {
            t: p.t,
            j: Some(j.as_i8()),
            r: Some(r),
            i,
            k: None,
            value: p.agreement.worst_ratio,
        })
    });
    let residual = agreement.iter().map(|p| p.relative_residual).fold(0.0, f64::max);
    let ok = ratio <= 1.0;
    vec![
        InvariantReport::new(
            "coefficient_agreement",
            hard,
            ok,
            1.0,
            ratio,
            if ok { None } else { witness },
            format!(
                "stepped vs recovered, |a-b| / max(1e-6 max(|a|,|b|), 1e-9); worst |a-b| = {:.3e}; Gram condition {condition:.3e}",
                worst.map_or(0.0, |p| p.agreement.max_abs_diff)
            ),
        ),
        InvariantReport::new(
            "reconstruction_residual",
            hard,
            residual < 1e-8,
            1e-8,
            residual,
            None,
            "max over t, j, r of |recon - (w_t - w_0)| / max(1, |w_t - w_0|)".into(),
        ),
    ]
}

/// Runs the full pipeline for one configuration.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let seeds = config.seeds();
    let data_config = config.data_config();
    let train_config = config.train_config();
    let dataset = generate_dataset(&data_config)?;
    let stats = dataset_stats(&dataset)?;
    let probe = TestProbe {
        points: sample_test_points(&data_config, config.test_count, seeds.test)?,
        p: config.p,
    };
    let mut tracker = DecompositionTracker::new(&dataset, config.m, config.eta, config.record_every)?;
    let basis_condition = tracker.basis().condition();
    let mut recorder = ActivationRecorder::new(dataset.labels(), config.m, config.record_every);
    let mut record = {
        let mut hooks: [&mut dyn TrainHook; 2] = [&mut tracker, &mut recorder];
        train(&dataset, &train_config, &mut hooks, Some(&probe))?
    };
    let (history, agreement) = tracker.finish()?;
    record.coefficients = Some(history);
    record.activations = Some(recorder.finish());
    let evaluation = record.final_evaluation.clone().expect("probe attached");

    let mut invariants = InvariantSuite::default();
    invariants.extend(replayable_checks(
        config,
        &record.iterations,
        record.coefficients.as_ref().expect("set above"),
        record.activations.as_ref().expect("set above"),
    ));
    invariants.extend(agreement_checks(&agreement, basis_condition));
    invariants.extend(dataset_diagnostics(&stats, &data_config, DELTA));

    let t_star = record.last().t;
    let condition = condition_report(&data_config, &train_config, t_star, DELTA);
    let phase_quantity = phase_quantity(config.n, config.mu, config.sigma_p, config.d).ok();
    Ok(RunOutcome {
        config: config.clone(),
        dataset,
        stats,
        record,
        agreement,
        basis_condition,
        evaluation,
        phase_quantity,
        invariants,
        condition,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// `evaluation.csv`: `count,error,std_err,clean_error,bayes_gap,phase_quantity`.
pub fn write_evaluation_csv<W: Write>(mut out: W, est: &ErrorEstimate, phase: Option<f64>) -> Result<()> {
    writeln!(out, "count,error,std_err,clean_error,bayes_gap,phase_quantity")?;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        est.count,
        fmt_f64(est.estimate),
        fmt_f64(est.std_err),
        fmt_f64(est.clean_error),
        fmt_f64(est.bayes_gap),
        fmt_opt(phase)
    )?;
    Ok(())
}

/// Writes every file in [`ARTIFACTS`] into `dir`, creating it if needed.
pub fn write_artifacts(outcome: &RunOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.txt"), outcome.config.to_text())?;
    outcome.record.write_run_csv(create(dir, "run.csv")?)?;
    outcome.record.write_margins_csv(create(dir, "margins.csv")?)?;
    outcome.history().write_summary_csv(create(dir, "coeffs.csv")?)?;
    outcome.history().write_entries_csv(create(dir, "coeff_entries.csv")?)?;
    outcome.activations().write_csv(create(dir, "activations.csv")?)?;
    outcome.record.final_weights.write_csv(create(dir, "weights.csv")?)?;
    outcome.dataset.write_csv(create(dir, "dataset.csv")?)?;
    write_evaluation_csv(create(dir, "evaluation.csv")?, &outcome.evaluation, outcome.phase_quantity)?;
    let mut inv = create(dir, "invariants.json")?;
    outcome.invariants.write_json(&mut inv)?;
    writeln!(inv)?;
    let mut cond = create(dir, "condition.json")?;
    serde_json::to_writer_pretty(&mut cond, &outcome.condition)?;
    writeln!(cond)?;
    for mut w in [inv, cond] {
        w.flush()?;
    }
    Ok(())
}

/// Regenerates the initial weights of a run from its configuration.
pub fn initial_weights(config: &RunConfig) -> Result<Weights> {
    crate::cnn::init_weights(config.m, config.d, config.sigma0, config.seeds().init)
}

/// Basis of the training set a configuration generates.
pub fn basis_for(config: &RunConfig) -> Result<(Dataset, Basis)> {
    let ds = generate_dataset(&config.data_config())?;
    let basis = Basis::of(&ds)?;
    Ok((ds, basis))
}
