//! Synthetic signal+noise data with label-flipping noise.
//!
//! Each point has two patches of dimension `d`. One patch is `y_hat * mu`, the
//! other is Gaussian noise `xi ~ N(0, sigma_p^2 I)`. The observed label `y`
//! equals the true label `y_hat` with probability `1 - p`.
//!
//! Draw order per point, from a single `ChaCha8Rng` stream:
//!   1. `y_hat`: one `bool` (true -> +1),
//!   2. flip coin: one `f64` in [0, 1), flipped iff `< p`,
//!   3. signal slot: one `bool` (true -> patch 1 carries the signal),
//!   4. `d` standard normals scaled by `sigma_p`.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq};
use crate::rng::{derive_seed, rng, Rng};
use crate::sign::Sign;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub d: usize,
    pub n: usize,
    pub mu_norm: f64,
    pub sigma_p: f64,
    pub p: f64,
    pub seed: u64,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidDimension("d must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if !(self.mu_norm >= 0.0 && self.mu_norm.is_finite()) {
            return Err(Error::config("mu", "must be finite and nonnegative"));
        }
        if !(self.sigma_p > 0.0 && self.sigma_p.is_finite()) {
            return Err(Error::config("sigma-p", "must be finite and positive"));
        }
        if !(0.0..0.5).contains(&self.p) {
            return Err(Error::config("p", "must lie in [0, 0.5)"));
        }
        Ok(())
    }

    pub fn signal(&self) -> Vec<f64> {
        // validated configs always have d >= 1
        make_signal(self.d, self.mu_norm).expect("validated config")
    }
}

/// Which patch carries the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalSlot {
    First,
    Second,
}

impl SignalSlot {
    pub fn as_u8(self) -> u8 {
        match self {
            SignalSlot::First => 1,
            SignalSlot::Second => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub patch1: Vec<f64>,
    pub patch2: Vec<f64>,
    /// Observed label.
    pub y: Sign,
    /// True label.
    pub y_hat: Sign,
    pub signal_slot: SignalSlot,
}

impl DataPoint {
    pub fn signal_patch(&self) -> &[f64] {
        match self.signal_slot {
            SignalSlot::First => &self.patch1,
            SignalSlot::Second => &self.patch2,
        }
    }

    /// The noise vector (the non-signal patch).
    pub fn xi(&self) -> &[f64] {
        match self.signal_slot {
            SignalSlot::First => &self.patch2,
            SignalSlot::Second => &self.patch1,
        }
    }

    pub fn is_flipped(&self) -> bool {
        self.y != self.y_hat
    }

    pub fn d(&self) -> usize {
        self.patch1.len()
    }
}

/// A training set together with the signal vector it was drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub mu: Vec<f64>,
    pub points: Vec<DataPoint>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn d(&self) -> usize {
        self.mu.len()
    }

    pub fn labels(&self) -> Vec<Sign> {
        self.points.iter().map(|p| p.y).collect()
    }

    pub fn xis(&self) -> Vec<&[f64]> {
        self.points.iter().map(DataPoint::xi).collect()
    }

    /// Writes `index,y,y_hat,signal_slot,patch1_*,patch2_*` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.d();
        let mut header = String::from("index,y,y_hat,signal_slot");
        for k in 0..d {
            header.push_str(&format!(",patch1_{k}"));
        }
        for k in 0..d {
            header.push_str(&format!(",patch2_{k}"));
        }
        writeln!(out, "{header}")?;
        for (i, pt) in self.points.iter().enumerate() {
            let mut line = format!(
                "{i},{},{},{}",
                pt.y.as_i8(),
                pt.y_hat.as_i8(),
                pt.signal_slot.as_u8()
            );
            for v in pt.patch1.iter().chain(&pt.patch2) {
                line.push(',');
                line.push_str(&crate::io::fmt_f64(*v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// `(mu_norm, 0, ..., 0)` of length `d`.
pub fn make_signal(d: usize, mu_norm: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidDimension("signal dimension must be at least 1".into()));
    }
    let mut mu = vec![0.0; d];
    mu[0] = mu_norm;
    Ok(mu)
}

fn draw_point(rng: &mut Rng, mu: &[f64], sigma_p: f64, p: f64) -> DataPoint {
    let y_hat = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
    let flip = rng.random::<f64>() < p;
    let y = if flip { -y_hat } else { y_hat };
    let slot = if rng.random::<bool>() {
        SignalSlot::First
    } else {
        SignalSlot::Second
    };
    let xi: Vec<f64> = (0..mu.len())
        .map(|_| sigma_p * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let signal: Vec<f64> = mu.iter().map(|m| y_hat.value() * m).collect();
    let (patch1, patch2) = match slot {
        SignalSlot::First => (signal, xi),
        SignalSlot::Second => (xi, signal),
    };
    DataPoint {
        patch1,
        patch2,
        y,
        y_hat,
        signal_slot: slot,
    }
}

fn draw_points(config: &DataConfig, mu: &[f64], count: usize, seed: u64) -> Vec<DataPoint> {
    let mut r = rng(seed);
    (0..count)
        .map(|_| draw_point(&mut r, mu, config.sigma_p, config.p))
        .collect()
}

/// Draws `config.n` training points from `config.seed`.
pub fn generate_dataset(config: &DataConfig) -> Result<Dataset> {
    config.validate()?;
    let mu = config.signal();
    let points = draw_points(config, &mu, config.n, config.seed);
    Ok(Dataset {
        config: config.clone(),
        mu,
        points,
    })
}

/// Test points are generated in chunks of this many points, chunk `k` from
/// seed `derive_seed([seed, k])`.
pub const TEST_CHUNK: usize = 4096;

pub(crate) fn test_chunk(config: &DataConfig, mu: &[f64], seed: u64, chunk: usize, len: usize) -> Vec<DataPoint> {
    draw_points(config, mu, len, derive_seed(&[seed, chunk as u64]))
}

pub(crate) fn chunk_lengths(count: usize) -> impl Iterator<Item = (usize, usize)> {
    let chunks = count.div_ceil(TEST_CHUNK);
    (0..chunks).map(move |k| (k, TEST_CHUNK.min(count - k * TEST_CHUNK)))
}

/// `count` fresh points from the same distribution as `config`, independent
/// of `config.seed`.
pub fn sample_test_points(config: &DataConfig, count: usize, seed: u64) -> Result<Vec<DataPoint>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::Empty("test point count must be at least 1"));
    }
    let mu = config.signal();
    Ok(chunk_lengths(count)
        .flat_map(|(k, len)| test_chunk(config, &mu, seed, k, len))
        .collect())
}

/// Set sizes and noise geometry of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetStats {
    pub n: usize,
    /// y = y_hat
    pub clean: usize,
    /// y != y_hat
    pub flipped: usize,
    pub label_pos: usize,
    pub label_neg: usize,
    pub clean_pos: usize,
    pub clean_neg: usize,
    pub flipped_pos: usize,
    pub flipped_neg: usize,
    pub min_noise_norm_sq: f64,
    pub max_noise_norm_sq: f64,
    pub max_noise_cross: f64,
    pub max_noise_signal: f64,
    /// Points whose squared noise norm lies outside `[sigma_p^2 d / 2, 3 sigma_p^2 d / 2]`.
    pub noise_norm_outliers: usize,
}

impl SetStats {
    pub fn noise_norm_outlier_fraction(&self) -> f64 {
        self.noise_norm_outliers as f64 / self.n as f64
    }
}

pub fn dataset_stats(dataset: &Dataset) -> Result<SetStats> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset has no points"));
    }
    let pts = &dataset.points;
    let count = |f: &dyn Fn(&DataPoint) -> bool| pts.iter().filter(|p| f(p)).count();
    let norms: Vec<f64> = pts.iter().map(|p| norm_sq(p.xi())).collect();
    let mut max_cross: f64 = 0.0;
    for i in 0..pts.len() {
        for k in (i + 1)..pts.len() {
            max_cross = max_cross.max(dot(pts[i].xi(), pts[k].xi()).abs());
        }
    }
    let max_signal = pts
        .iter()
        .map(|p| dot(p.xi(), &dataset.mu).abs())
        .fold(0.0, f64::max);
    let var_d = dataset.config.sigma_p.powi(2) * dataset.d() as f64;
    Ok(SetStats {
        n: pts.len(),
        clean: count(&|p| !p.is_flipped()),
        flipped: count(&|p| p.is_flipped()),
        label_pos: count(&|p| p.y == Sign::Plus),
        label_neg: count(&|p| p.y == Sign::Minus),
        clean_pos: count(&|p| !p.is_flipped() && p.y == Sign::Plus),
        clean_neg: count(&|p| !p.is_flipped() && p.y == Sign::Minus),
        flipped_pos: count(&|p| p.is_flipped() && p.y == Sign::Plus),
        flipped_neg: count(&|p| p.is_flipped() && p.y == Sign::Minus),
        min_noise_norm_sq: norms.iter().copied().fold(f64::INFINITY, f64::min),
        max_noise_norm_sq: norms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_noise_cross: max_cross,
        max_noise_signal: max_signal,
        noise_norm_outliers: norms
            .iter()
            .filter(|&&v| v < var_d / 2.0 || v > 1.5 * var_d)
            .count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn config(n: usize, d: usize, p: f64, seed: u64) -> DataConfig {
        DataConfig {
            d,
            n,
            mu_norm: 5.0,
            sigma_p: 1.0,
            p,
            seed,
        }
    }

    #[test]
    fn signal_vector() {
        assert_eq!(make_signal(3, 5.0).unwrap(), vec![5.0, 0.0, 0.0]);
        assert_eq!(make_signal(2, 0.0).unwrap(), vec![0.0, 0.0]);
        let mu = make_signal(100, 5.0).unwrap();
        assert_eq!(norm_sq(&mu).sqrt(), 5.0);
        assert!(mu[1..].iter().all(|&v| v == 0.0));
        assert_eq!(mu[1..].len(), 99);
        assert!(matches!(make_signal(0, 1.0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn config_validation() {
        assert!(config(20, 100, 0.1, 0).validate().is_ok());
        assert!(config(20, 0, 0.1, 0).validate().is_err());
        assert!(config(0, 10, 0.1, 0).validate().is_err());
        assert!(config(20, 10, 0.5, 0).validate().is_err());
        assert!(config(20, 10, -0.1, 0).validate().is_err());
        let mut c = config(20, 10, 0.1, 0);
        c.sigma_p = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn no_flips_at_zero_p() {
        for seed in 0..20 {
            let ds = generate_dataset(&config(50, 10, 0.0, seed)).unwrap();
            assert!(ds.points.iter().all(|p| p.y == p.y_hat));
            assert_eq!(dataset_stats(&ds).unwrap().flipped, 0);
        }
        let test = sample_test_points(&config(1, 10, 0.0, 0), 500, 9).unwrap();
        assert!(test.iter().all(|p| p.y == p.y_hat));
    }

    #[test]
    fn exactly_one_signal_patch() {
        let ds = generate_dataset(&config(200, 8, 0.2, 3)).unwrap();
        for p in &ds.points {
            let signal: Vec<f64> = ds.mu.iter().map(|m| p.y_hat.value() * m).collect();
            assert_eq!(p.signal_patch(), signal.as_slice());
            assert_ne!(p.xi(), signal.as_slice());
        }
        let first = ds.points.iter().filter(|p| p.signal_slot == SignalSlot::First).count();
        assert!(first > 60 && first < 140);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_dataset(&config(20, 100, 0.1, 11)).unwrap();
        let b = generate_dataset(&config(20, 100, 0.1, 11)).unwrap();
        let c = generate_dataset(&config(20, 100, 0.1, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_flip_fraction() {
        // 3-sigma binomial band for n = 1e5, p = 0.1 is 0.1 +- 0.0028
        let ds = generate_dataset(&config(100_000, 2, 0.1, 1)).unwrap();
        let frac = dataset_stats(&ds).unwrap().flipped as f64 / 1e5;
        assert!((frac - 0.1).abs() < 0.003, "{frac}");
    }

    #[test]
    fn mean_flipped_count_over_replications() {
        let r = 1000;
        let total: usize = (0..r)
            .map(|s| dataset_stats(&generate_dataset(&config(20, 4, 0.1, s)).unwrap()).unwrap().flipped)
            .sum();
        let mean = total as f64 / r as f64;
        assert!((mean - 2.0).abs() < 0.2, "{mean}");
        assert!((mean / 20.0 - 0.1).abs() < 0.01);
    }

    #[test]
    fn stats_partition_sizes() {
        let ds = generate_dataset(&config(37, 30, 0.3, 5)).unwrap();
        let s = dataset_stats(&ds).unwrap();
        assert_eq!(s.clean + s.flipped, 37);
        assert_eq!(s.label_pos + s.label_neg, 37);
        assert_eq!(s.clean_pos + s.flipped_pos, s.label_pos);
        assert_eq!(s.clean_neg + s.flipped_neg, s.label_neg);
        assert!(s.min_noise_norm_sq <= s.max_noise_norm_sq);
    }

    #[test]
    fn noise_norm_band_diagnostic() {
        let ds = generate_dataset(&config(20, 100, 0.1, 2)).unwrap();
        let s = dataset_stats(&ds).unwrap();
        assert!(s.noise_norm_outlier_fraction() < 0.01);
        assert!(s.min_noise_norm_sq >= 50.0 && s.max_noise_norm_sq <= 150.0);
    }

    #[test]
    fn stats_of_empty_dataset() {
        let mut ds = generate_dataset(&config(2, 3, 0.1, 0)).unwrap();
        ds.points.clear();
        assert!(matches!(dataset_stats(&ds), Err(Error::Empty(_))));
    }

    #[test]
    fn test_points() {
        let c = config(20, 100, 0.1, 0);
        assert_eq!(sample_test_points(&c, 1000, 3).unwrap().len(), 1000);
        assert!(sample_test_points(&c, 0, 3).is_err());
        let a = sample_test_points(&c, 5000, 3).unwrap();
        let b = sample_test_points(&c, 5000, 3).unwrap();
        assert_eq!(a, b);
        // test stream does not reproduce the training stream
        let train = generate_dataset(&c).unwrap();
        assert_ne!(train.points[0], a[0]);
    }

    #[test]
    fn million_point_flip_fraction() {
        let c = config(1, 1, 0.1, 0);
        let pts = sample_test_points(&c, 1_000_000, 8).unwrap();
        let frac = pts.iter().filter(|p| p.is_flipped()).count() as f64 / 1e6;
        assert!((frac - 0.1).abs() < 0.001, "{frac}");
    }

    #[test]
    fn csv_export_layout() {
        let ds = generate_dataset(&config(3, 2, 0.1, 0)).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "index,y,y_hat,signal_slot,patch1_0,patch1_1,patch2_0,patch2_1"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 8);
        let v: f64 = row[4].parse().unwrap();
        assert_eq!(v, ds.points[0].patch1[0]);
        assert_eq!(text.lines().count(), 4);
    }
}
