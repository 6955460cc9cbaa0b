//! Full-batch gradient descent loop with per-iteration recording.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cnn::{apply_step, evaluate, gradient_from_state, init_weights, BatchState, Weights};
use crate::data::{DataConfig, DataPoint, Dataset};
use crate::decomposition::CoefficientHistory;
use crate::error::{Error, Result};
use crate::evaluation::{error_on_points, ErrorEstimate};
use crate::io::{fmt_f64, fmt_opt};
use crate::monitor::ActivationHistory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub m: usize,
    pub eta: f64,
    pub sigma_0: f64,
    pub max_iters: usize,
    pub epsilon: f64,
    pub record_every: usize,
    pub init_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::config("m", "must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", "must be finite and positive"));
        }
        if !(self.sigma_0 >= 0.0 && self.sigma_0.is_finite()) {
            return Err(Error::config("sigma0", "must be finite and nonnegative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record-every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EpsilonReached,
    MaxIters,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::EpsilonReached => "epsilon-reached",
            StopReason::MaxIters => "max-iters",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub loss: f64,
    pub margins: Vec<f64>,
    pub logit_derivs: Vec<f64>,
    pub max_margin: f64,
    pub min_margin: f64,
    pub test_error: Option<f64>,
}

impl IterationRecord {
    pub fn spread(&self) -> f64 {
        self.max_margin - self.min_margin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub data_config: DataConfig,
    pub train_config: TrainConfig,
    pub iterations: Vec<IterationRecord>,
    pub coefficients: Option<CoefficientHistory>,
    pub activations: Option<ActivationHistory>,
    pub initial_weights: Weights,
    pub final_weights: Weights,
    pub stop_reason: StopReason,
    /// Evaluation of the final weights, when a test probe was attached.
    pub final_evaluation: Option<ErrorEstimate>,
}

impl RunRecord {
    pub fn last(&self) -> &IterationRecord {
        self.iterations.last().expect("a run records at least one iteration")
    }

    pub fn final_loss(&self) -> f64 {
        self.last().loss
    }

    /// `run.csv`: `t,loss,max_margin,min_margin,spread,test_error`.
    pub fn write_run_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,loss,max_margin,min_margin,spread,test_error")?;
        for it in &self.iterations {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                it.t,
                fmt_f64(it.loss),
                fmt_f64(it.max_margin),
                fmt_f64(it.min_margin),
                fmt_f64(it.spread()),
                fmt_opt(it.test_error)
            )?;
        }
        Ok(())
    }

    /// `margins.csv`: `t,i,margin,logit_deriv`.
    pub fn write_margins_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,i,margin,logit_deriv")?;
        for it in &self.iterations {
            for (i, (z, g)) in it.margins.iter().zip(&it.logit_derivs).enumerate() {
                writeln!(out, "{},{i},{},{}", it.t, fmt_f64(*z), fmt_f64(*g))?;
            }
        }
        Ok(())
    }
}

/// Observer called once per iteration `t` with the weights `W_t` and the
/// batch state whose logit derivatives and activation bits drive the step
/// `W_t -> W_{t+1}` (when one is taken).
pub trait TrainHook {
    fn observe(&mut self, t: usize, weights: &Weights, state: &BatchState) -> Result<()>;
}

/// A fixed test set evaluated at every recorded iteration.
pub struct TestProbe {
    pub points: Vec<DataPoint>,
    pub p: f64,
}

/// Trains from Gaussian initialization drawn with `config.init_seed`.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    hooks: &mut [&mut dyn TrainHook],
    probe: Option<&TestProbe>,
) -> Result<RunRecord> {
    config.validate()?;
    let w0 = init_weights(config.m, dataset.d(), config.sigma_0, config.init_seed)?;
    train_from(dataset, config, w0, hooks, probe)
}

/// Trains from the given initial weights.
pub fn train_from(
    dataset: &Dataset,
    config: &TrainConfig,
    initial: Weights,
    hooks: &mut [&mut dyn TrainHook],
    probe: Option<&TestProbe>,
) -> Result<RunRecord> {
    config.validate()?;
    let mut w = initial.clone();
    let mut iterations = Vec::new();
    let mut t = 0;
    let stop_reason = loop {
        if !w.is_finite() {
            return Err(Error::Divergence { iteration: t, what: "weights" });
        }
        let state = evaluate(&w, dataset)?;
        if !state.loss.is_finite() {
            return Err(Error::Divergence { iteration: t, what: "training loss" });
        }
        let stop = if state.loss <= config.epsilon {
            Some(StopReason::EpsilonReached)
        } else if t >= config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if t % config.record_every == 0 || stop.is_some() {
            let test_error = probe.map(|pr| error_on_points(&w, &pr.points, pr.p).estimate);
            iterations.push(IterationRecord {
                t,
                loss: state.loss,
                max_margin: state.max_margin(),
                min_margin: state.min_margin(),
                margins: state.margins.clone(),
                logit_derivs: state.logit_derivs.clone(),
                test_error,
            });
        }
        for hook in hooks.iter_mut() {
            hook.observe(t, &w, &state)?;
        }
        if let Some(reason) = stop {
            break reason;
        }
        let grad = gradient_from_state(&w, dataset, &state);
        w = apply_step(&w, &grad, config.eta);
        t += 1;
    };
    let final_evaluation = probe.map(|pr| error_on_points(&w, &pr.points, pr.p));
    Ok(RunRecord {
        data_config: dataset.config.clone(),
        train_config: config.clone(),
        iterations,
        coefficients: None,
        activations: None,
        initial_weights: initial,
        final_weights: w,
        stop_reason,
        final_evaluation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginPoint {
    pub t: usize,
    pub max_margin: f64,
    pub min_margin: f64,
    pub spread: f64,
}

/// `(max, min, max - min)` of the training margins at each recorded iteration.
pub fn margin_series(record: &RunRecord) -> Result<Vec<MarginPoint>> {
    if record.iterations.iter().any(|it| it.margins.is_empty()) || record.iterations.is_empty() {
        return Err(Error::Empty("run record has no margins"));
    }
    Ok(record
        .iterations
        .iter()
        .map(|it| MarginPoint {
            t: it.t,
            max_margin: it.max_margin,
            min_margin: it.min_margin,
            spread: it.spread(),
        })
        .collect())
}
