//! Monte-Carlo test error and its split against the label-noise floor.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{output, Weights};
use crate::data::{chunk_lengths, test_chunk, DataConfig, DataPoint};
use crate::error::{Error, Result};
use crate::sign::Sign;

/// Integer tallies over a set of labelled test points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub count: usize,
    /// Points whose observed label was flipped.
    pub flipped: usize,
    /// `sign(f) != y`, with `sign(0) = +1`.
    pub errors: usize,
    /// `y_hat * f <= 0`.
    pub clean_errors: usize,
    /// Unflipped points with `sign(f) != y_hat`.
    pub wrong_unflipped: usize,
    /// Flipped points with `sign(f) != y_hat`.
    pub wrong_flipped: usize,
    /// Points with `f == 0` exactly.
    pub ties: usize,
}

impl ErrorCounts {
    fn add(mut self, o: ErrorCounts) -> ErrorCounts {
        self.count += o.count;
        self.flipped += o.flipped;
        self.errors += o.errors;
        self.clean_errors += o.clean_errors;
        self.wrong_unflipped += o.wrong_unflipped;
        self.wrong_flipped += o.wrong_flipped;
        self.ties += o.ties;
        self
    }

    fn tally(w: &Weights, points: &[DataPoint]) -> ErrorCounts {
        let mut c = ErrorCounts::default();
        for pt in points {
            let f = output(w, pt);
            let pred = Sign::of(f);
            c.count += 1;
            if pt.is_flipped() {
                c.flipped += 1;
            }
            if pred != pt.y {
                c.errors += 1;
            }
            if pt.y_hat.value() * f <= 0.0 {
                c.clean_errors += 1;
            }
            if pred != pt.y_hat {
                if pt.is_flipped() {
                    c.wrong_flipped += 1;
                } else {
                    c.wrong_unflipped += 1;
                }
            }
            if f == 0.0 {
                c.ties += 1;
            }
        }
        c
    }

    /// A flipped point is misclassified iff the prediction matches its true
    /// label, so `errors = wrong_unflipped + (flipped - wrong_flipped)`.
    pub fn paired_identity_holds(&self) -> bool {
        self.errors + self.wrong_flipped == self.wrong_unflipped + self.flipped
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    /// Fraction of points with `sign(f) != y`.
    pub estimate: f64,
    pub count: usize,
    /// `sqrt(estimate (1 - estimate) / count)`
    pub std_err: f64,
    /// Fraction of points with `y_hat * f <= 0`.
    pub clean_error: f64,
    /// `estimate - p`
    pub bayes_gap: f64,
    pub counts: ErrorCounts,
}

impl ErrorEstimate {
    fn from_counts(counts: ErrorCounts, p: f64) -> Self {
        let n = counts.count as f64;
        let estimate = counts.errors as f64 / n;
        ErrorEstimate {
            estimate,
            count: counts.count,
            std_err: (estimate * (1.0 - estimate) / n).sqrt(),
            clean_error: counts.clean_errors as f64 / n,
            bayes_gap: estimate - p,
            counts,
        }
    }

    /// Realized fraction of flipped labels.
    pub fn flip_fraction(&self) -> f64 {
        self.counts.flipped as f64 / self.count as f64
    }
}

/// Error of `w` on a fixed set of points.
pub fn error_on_points(w: &Weights, points: &[DataPoint], p: f64) -> ErrorEstimate {
    ErrorEstimate::from_counts(ErrorCounts::tally(w, points), p)
}

/// Estimates `P(y != sign f(W, x))` on `count` fresh draws.
///
/// Points are generated and scored in chunks (see
/// [`crate::data::sample_test_points`]) in parallel; the result equals
/// [`error_on_points`] on `sample_test_points(config, count, seed)`.
pub fn test_error(w: &Weights, config: &DataConfig, count: usize, seed: u64) -> Result<ErrorEstimate> {
    config.validate()?;
    if count == 0 {
        return Err(Error::Empty("test point count must be at least 1"));
    }
    if w.d() != config.d {
        return Err(Error::DimensionMismatch { expected: w.d(), got: config.d });
    }
    let mu = config.signal();
    let chunks: Vec<(usize, usize)> = chunk_lengths(count).collect();
    let counts = chunks
        .par_iter()
        .map(|&(k, len)| ErrorCounts::tally(w, &test_chunk(config, &mu, seed, k, len)))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(ErrorCounts::default(), ErrorCounts::add);
    Ok(ErrorEstimate::from_counts(counts, config.p))
}

/// `p + (1 - 2p) * clean_error`
pub fn predicted_total(clean_error: f64, p: f64) -> f64 {
    p + (1.0 - 2.0 * p) * clean_error
}

/// `|estimate - (p + (1 - 2p) clean_error)|`
pub fn error_decomposition_check(est: &ErrorEstimate, p: f64) -> f64 {
    (est.estimate - predicted_total(est.clean_error, p)).abs()
}

/// `n |mu|^4 / (sigma_p^4 d)`
pub fn phase_quantity(n: usize, mu_norm: f64, sigma_p: f64, d: usize) -> Result<f64> {
    if n == 0 || d == 0 || !(mu_norm > 0.0) || !(sigma_p > 0.0) {
        return Err(Error::config("phase quantity", "all inputs must be positive"));
    }
    Ok(n as f64 * mu_norm.powi(4) / (sigma_p.powi(4) * d as f64))
}
