//! Runtime checks of the structural properties of GD on this model.
//!
//! Every check reads recorded histories only, so it can be replayed from the
//! CSV artifacts of a finished run. Hard checks yield `Pass`/`Fail`;
//! probabilistic size bounds yield `Pass`/`Warn` and never fail a run.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::BatchState;
use crate::data::{DataConfig, SetStats};
use crate::decomposition::{coefficient_summaries, CoefficientHistory};
use crate::error::{Error, Result};
use crate::evaluation::phase_quantity;
use crate::io::Table;
use crate::sign::Sign;
use crate::trainer::{IterationRecord, TrainConfig, TrainHook};
use crate::cnn::Weights;

/// Default bound on the noise-coefficient imbalance across samples.
pub const KAPPA: f64 = 3.25;
/// Default bound on the margin gap across samples.
pub const C4: f64 = 5.0;
/// Empirical bound on the margin spread in the reference experiment.
pub const SPREAD_BOUND: f64 = 6.0;
/// Default width of the order-of-magnitude band for `gamma / sum zeta`.
pub const BAND_FACTOR: f64 = 10.0;
/// Slack for per-step monotonicity of zeta and omega.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    DiagnosticWarn,
}

/// Location and value of the worst observation of a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<i8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub value: f64,
}

impl Witness {
    fn at(t: usize, value: f64) -> Self {
        Witness { t, j: None, r: None, i: None, k: None, value }
    }

    fn filter(mut self, j: Sign, r: usize) -> Self {
        self.j = Some(j.as_i8());
        self.r = Some(r);
        self
    }

    fn sample(mut self, i: usize) -> Self {
        self.i = Some(i);
        self
    }

    fn pair(mut self, i: usize, k: usize) -> Self {
        self.i = Some(i);
        self.k = Some(k);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub name: String,
    pub status: Status,
    /// The bound the observation is compared against.
    pub bound: f64,
    /// Worst observed value (direction depends on the check).
    pub observed: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

impl InvariantReport {
    pub fn new(name: &str, hard: bool, ok: bool, bound: f64, observed: f64, witness: Option<Witness>, detail: String) -> Self {
        let status = match (ok, hard) {
            (true, _) => Status::Pass,
            (false, true) => Status::Fail,
            (false, false) => Status::DiagnosticWarn,
        };
        InvariantReport {
            name: name.to_owned(),
            status,
            bound,
            observed,
            witness,
            detail,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// A list of reports with JSON export.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantSuite {
    pub checks: Vec<InvariantReport>,
}

impl InvariantSuite {
    pub fn extend(&mut self, reports: impl IntoIterator<Item = InvariantReport>) {
        self.checks.extend(reports);
    }

    pub fn get(&self, name: &str) -> Option<&InvariantReport> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &InvariantReport> {
        self.checks.iter().filter(|c| c.failed())
    }

    pub fn all_hard_pass(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Monotonicity of the stepped coefficients:
/// zeta nondecreasing, omega nonincreasing, gamma strictly increasing on every
/// step whose increment is nonzero.
pub fn check_monotonicity(history: &CoefficientHistory) -> Vec<InvariantReport> {
    let mut zeta_worst = (f64::INFINITY, None);
    let mut omega_worst = (f64::NEG_INFINITY, None);
    let mut gamma_min = (f64::INFINITY, None);
    let mut ties = 0usize;
    for pair in history.snapshots.windows(2) {
        let ((_, prev), (t, cur)) = (&pair[0], &pair[1]);
        for (j, r) in cur.filters() {
            let dg = cur.gamma(j, r) - prev.gamma(j, r);
            if dg == 0.0 {
                ties += 1;
            } else if dg < gamma_min.0 {
                gamma_min = (dg, Some(Witness::at(*t, dg).filter(j, r)));
            }
            for i in 0..cur.n() {
                let dz = cur.zeta(j, r, i) - prev.zeta(j, r, i);
                if dz < zeta_worst.0 {
                    zeta_worst = (dz, Some(Witness::at(*t, dz).filter(j, r).sample(i)));
                }
                let dw = cur.omega(j, r, i) - prev.omega(j, r, i);
                if dw > omega_worst.0 {
                    omega_worst = (dw, Some(Witness::at(*t, dw).filter(j, r).sample(i)));
                }
            }
        }
    }
    let zeta_ok = zeta_worst.0 >= -MONOTONE_TOL;
    let omega_ok = omega_worst.0 <= MONOTONE_TOL;
    let gamma_ok = gamma_min.0 > 0.0;
    vec![
        InvariantReport::new(
            "zeta_nondecreasing",
            true,
            zeta_ok,
            -MONOTONE_TOL,
            finite_or(zeta_worst.0, 0.0),
            if zeta_ok { None } else { zeta_worst.1 },
            "minimum per-step change of zeta".into(),
        ),
        InvariantReport::new(
            "omega_nonincreasing",
            true,
            omega_ok,
            MONOTONE_TOL,
            finite_or(omega_worst.0, 0.0),
            if omega_ok { None } else { omega_worst.1 },
            "maximum per-step change of omega".into(),
        ),
        InvariantReport::new(
            "gamma_strictly_increasing",
            true,
            gamma_ok,
            0.0,
            finite_or(gamma_min.0, 0.0),
            if gamma_ok { None } else { gamma_min.1 },
            format!("minimum nonzero per-step change of gamma; {ties} zero-increment steps skipped"),
        ),
    ]
}

fn finite_or(v: f64, default: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        default
    }
}

/// Exact sign pattern and structural zeros of the stepped coefficients.
pub fn check_structure(history: &CoefficientHistory) -> Vec<InvariantReport> {
    let mut sign_bad = None;
    let mut zero_bad = None;
    for (t, c) in &history.snapshots {
        for (j, r) in c.filters() {
            for i in 0..c.n() {
                let (z, w) = (c.zeta(j, r, i), c.omega(j, r, i));
                if sign_bad.is_none() && (z < 0.0 || w > 0.0) {
                    let v = if z < 0.0 { z } else { w };
                    sign_bad = Some(Witness::at(*t, v).filter(j, r).sample(i));
                }
                let y = history.labels[i];
                let stray = if y == j { w } else { z };
                if zero_bad.is_none() && stray != 0.0 {
                    zero_bad = Some(Witness::at(*t, stray).filter(j, r).sample(i));
                }
            }
        }
    }
    vec![
        InvariantReport::new(
            "coefficient_signs",
            true,
            sign_bad.is_none(),
            0.0,
            sign_bad.as_ref().map_or(0.0, |w| w.value),
            sign_bad,
            "zeta >= 0 and omega <= 0 exactly".into(),
        ),
        InvariantReport::new(
            "structural_zeros",
            true,
            zero_bad.is_none(),
            0.0,
            zero_bad.as_ref().map_or(0.0, |w| w.value),
            zero_bad,
            "zeta = 0 when y_i != j, omega = 0 when y_i = j".into(),
        ),
    ]
}

/// `|mu|^2 / (sigma_p^2 d)`, the predicted order of `gamma / sum_i zeta`.
pub fn reference_ratio(mu_norm: f64, sigma_p: f64, d: usize) -> f64 {
    mu_norm * mu_norm / (sigma_p * sigma_p * d as f64)
}

/// Checks `gamma_{j,r} / sum_i zeta_{j,r,i}` stays within
/// `[1/band_factor, band_factor] * |mu|^2/(sigma_p^2 d)` for every recorded
/// `t >= t_check`. `observed` is the normalized ratio farthest from 1 in log scale.
pub fn check_ratio_band(
    history: &CoefficientHistory,
    mu_norm: f64,
    sigma_p: f64,
    d: usize,
    band_factor: f64,
    t_check: usize,
) -> InvariantReport {
    let reference = reference_ratio(mu_norm, sigma_p, d);
    let mut worst: Option<(f64, Witness)> = None;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (t, c) in history.snapshots.iter().filter(|(t, _)| *t >= t_check) {
        for s in coefficient_summaries(c) {
            let normalized = match s.ratio {
                Some(v) => v / reference,
                None => f64::INFINITY,
            };
            lo = lo.min(normalized);
            hi = hi.max(normalized);
            let dist = normalized.ln().abs();
            if worst.as_ref().is_none_or(|(d0, _)| dist > *d0 || dist.is_nan()) {
                worst = Some((dist, Witness::at(*t, normalized).filter(s.j, s.r)));
            }
        }
    }
    let ok = worst.as_ref().is_none_or(|(dist, _)| *dist <= band_factor.ln());
    let observed = worst.as_ref().map_or(1.0, |(_, w)| w.value);
    InvariantReport::new(
        "ratio_band",
        true,
        ok,
        band_factor,
        observed,
        if ok { None } else { worst.map(|(_, w)| w) },
        format!(
            "gamma/sum(zeta) normalized by {reference:.6}; range [{:.4}, {:.4}] over t >= {t_check}",
            finite_or(lo, 1.0),
            finite_or(hi, 1.0)
        ),
    )
}

/// First recorded iteration with training loss below `threshold`.
pub fn warmup_index(iterations: &[IterationRecord], threshold: f64) -> Option<usize> {
    iterations.iter().find(|it| it.loss < threshold).map(|it| it.t)
}

/// Balance of the per-sample quantities:
/// margin gap `max_{i,k} (y_i f_i - y_k f_k) <= c4`,
/// logit-derivative ratio `max l'_i / l'_k <= exp(c4)`,
/// noise-coefficient balance `max_{i,k} sum_r (zeta_{y_i,r,i} - zeta_{y_k,r,k}) <= kappa`,
/// and the exact logistic ratio bound `l'_i / l'_k <= exp(y_k f_k - y_i f_i)` for `y_k f_k >= y_i f_i`.
pub fn check_balanced_logits(
    iterations: &[IterationRecord],
    history: Option<&CoefficientHistory>,
    c4: f64,
    kappa: f64,
) -> Vec<InvariantReport> {
    let mut gap = (0.0f64, None);
    let mut ratio = (1.0f64, None);
    let mut consistency = (f64::NEG_INFINITY, None);
    let mut lower = (f64::INFINITY, None);
    for it in iterations {
        let z = &it.margins;
        let g = &it.logit_derivs;
        for i in 0..z.len() {
            for k in 0..z.len() {
                let dz = z[i] - z[k];
                if dz > gap.0 {
                    gap = (dz, Some(Witness::at(it.t, dz).pair(i, k)));
                }
                let q = g[i] / g[k];
                if q > ratio.0 {
                    ratio = (q, Some(Witness::at(it.t, q).pair(i, k)));
                }
                if z[k] >= z[i] {
                    // log(l'_i / l'_k) - (z_k - z_i) must be <= 0
                    let excess = q.ln() - (z[k] - z[i]);
                    if excess > consistency.0 {
                        consistency = (excess, Some(Witness::at(it.t, excess).pair(i, k)));
                    }
                    if z[i] >= -1.0 {
                        let slack = q.ln() - (z[k] - z[i] - 4f64.ln());
                        if slack < lower.0 {
                            lower = (slack, Some(Witness::at(it.t, slack).pair(i, k)));
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![
        InvariantReport::new(
            "margin_gap",
            true,
            gap.0 <= c4,
            c4,
            gap.0,
            if gap.0 <= c4 { None } else { gap.1 },
            "max over t, i, k of y_i f(x_i) - y_k f(x_k)".into(),
        ),
        InvariantReport::new(
            "logit_derivative_ratio",
            true,
            ratio.0 <= c4.exp(),
            c4.exp(),
            ratio.0,
            if ratio.0 <= c4.exp() { None } else { ratio.1 },
            "max over t, i, k of l'_i / l'_k".into(),
        ),
        InvariantReport::new(
            "logit_ratio_consistency",
            true,
            consistency.0 <= 1e-9,
            0.0,
            finite_or(consistency.0, 0.0),
            if consistency.0 <= 1e-9 { None } else { consistency.1 },
            "log(l'_i/l'_k) - (y_k f_k - y_i f_i) for pairs with y_k f_k >= y_i f_i".into(),
        ),
        InvariantReport::new(
            "logit_ratio_lower",
            false,
            lower.0 >= -1e-9,
            0.0,
            finite_or(lower.0, 0.0),
            if lower.0 >= -1e-9 { None } else { lower.1 },
            "l'_i/l'_k >= exp(y_k f_k - y_i f_i)/4 where y_i f_i >= -1 (diagnostic)".into(),
        ),
    ];
    if let Some(h) = history {
        let mut bal = (0.0f64, None);
        for (t, c) in &h.snapshots {
            let totals: Vec<f64> = (0..c.n())
                .map(|i| (0..c.m()).map(|r| c.zeta(h.labels[i], r, i)).sum())
                .collect();
            let (imax, vmax) = argmax(&totals);
            let (imin, vmin) = argmin(&totals);
            if vmax - vmin > bal.0 {
                bal = (vmax - vmin, Some(Witness::at(*t, vmax - vmin).pair(imax, imin)));
            }
        }
        out.push(InvariantReport::new(
            "zeta_balance",
            true,
            bal.0 <= kappa,
            kappa,
            bal.0,
            if bal.0 <= kappa { None } else { bal.1 },
            "max over t, i, k of sum_r zeta_{y_i,r,i} - sum_r zeta_{y_k,r,k}".into(),
        ));
    }
    out
}

fn argmax(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, x)| if x > a.1 { (i, x) } else { a })
}

fn argmin(v: &[f64]) -> (usize, f64) {
    v.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, x)| if x < a.1 { (i, x) } else { a })
}

/// Experiment-level check that the margin spread stays below `bound` at every
/// recorded iteration.
pub fn check_margin_spread(iterations: &[IterationRecord], bound: f64) -> InvariantReport {
    let worst = iterations
        .iter()
        .map(|it| (it.t, it.spread()))
        .fold((0, 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    let ok = worst.1 <= bound;
    InvariantReport::new(
        "margin_spread",
        true,
        ok,
        bound,
        worst.1,
        if ok { None } else { Some(Witness::at(worst.0, worst.1)) },
        "max over t of max_i y_i f - min_i y_i f".into(),
    )
}

/// Noise activation pattern at one iteration: `positive[i * m + r]` is
/// `<w_{y_i, r}, xi_i> > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSnapshot {
    pub t: usize,
    pub positive: Vec<bool>,
}

/// The sets `S_i = {r : <w_{y_i,r}, xi_i> > 0}` and
/// `S_{j,r} = {i : y_i = j, <w_{j,r}, xi_i> > 0}` over time.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationHistory {
    pub m: usize,
    pub labels: Vec<Sign>,
    pub snapshots: Vec<ActivationSnapshot>,
}

impl ActivationHistory {
    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// `S_i` at snapshot `s`.
    pub fn sample_set(&self, s: usize, i: usize) -> Vec<usize> {
        let m = self.m;
        (0..m).filter(|&r| self.snapshots[s].positive[i * m + r]).collect()
    }

    /// `S_{j,r}` at snapshot `s`.
    pub fn filter_set(&self, s: usize, j: Sign, r: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.labels[i] == j && self.snapshots[s].positive[i * self.m + r])
            .collect()
    }

    /// `activations.csv`: `t,i,y,mask` with `mask` a string of `m` bits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,i,y,mask")?;
        for snap in &self.snapshots {
            for i in 0..self.n() {
                let mask: String = (0..self.m)
                    .map(|r| if snap.positive[i * self.m + r] { '1' } else { '0' })
                    .collect();
                writeln!(out, "{},{i},{},{mask}", snap.t, self.labels[i].as_i8())?;
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let tab = Table::read(path)?;
        let (ct, ci, cy, cm) = (tab.column("t")?, tab.column("i")?, tab.column("y")?, tab.column("mask")?);
        let mut labels: Vec<Option<Sign>> = Vec::new();
        let mut m = None;
        let mut snapshots: Vec<ActivationSnapshot> = Vec::new();
        let mut rows: Vec<(usize, usize, Vec<bool>)> = Vec::new();
        for row in 0..tab.rows.len() {
            let t: usize = tab.parse(row, ct)?;
            let i: usize = tab.parse(row, ci)?;
            let y = Sign::from_i64(tab.parse(row, cy)?).ok_or_else(|| Error::malformed(&tab.file, "y must be +1 or -1"))?;
            let bits: Vec<bool> = tab.rows[row][cm]
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    _ => Err(Error::malformed(&tab.file, "mask must be 0/1")),
                })
                .collect::<Result<_>>()?;
            if *m.get_or_insert(bits.len()) != bits.len() {
                return Err(Error::malformed(&tab.file, "masks differ in length"));
            }
            if labels.len() <= i {
                labels.resize(i + 1, None);
            }
            labels[i] = Some(y);
            rows.push((t, i, bits));
        }
        let labels: Vec<Sign> = labels
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::malformed(&tab.file, "sample indices are not contiguous"))?;
        let (m, n) = (m.unwrap_or(0), labels.len());
        for (t, i, bits) in rows {
            if snapshots.last().is_none_or(|s| s.t != t) {
                if snapshots.last().is_some_and(|s| s.t > t) {
                    return Err(Error::malformed(&tab.file, "iterations are not increasing"));
                }
                snapshots.push(ActivationSnapshot { t, positive: vec![false; n * m] });
            }
            let snap = snapshots.last_mut().expect("pushed above");
            snap.positive[i * m..(i + 1) * m].copy_from_slice(&bits);
        }
        Ok(ActivationHistory { m, labels, snapshots })
    }
}

/// Training hook recording [`ActivationSnapshot`]s every `stride` iterations
/// and at the last iteration.
pub struct ActivationRecorder {
    m: usize,
    labels: Vec<Sign>,
    stride: usize,
    snapshots: Vec<ActivationSnapshot>,
    last: Option<ActivationSnapshot>,
}

impl ActivationRecorder {
    pub fn new(labels: Vec<Sign>, m: usize, stride: usize) -> Self {
        ActivationRecorder {
            m,
            labels,
            stride: stride.max(1),
            snapshots: Vec::new(),
            last: None,
        }
    }

    pub fn finish(mut self) -> ActivationHistory {
        if let Some(last) = self.last.take() {
            if self.snapshots.last().map(|s| s.t) != Some(last.t) {
                self.snapshots.push(last);
            }
        }
        ActivationHistory {
            m: self.m,
            labels: self.labels,
            snapshots: self.snapshots,
        }
    }
}

impl TrainHook for ActivationRecorder {
    fn observe(&mut self, t: usize, _weights: &Weights, state: &BatchState) -> Result<()> {
        let (m, n) = (self.m, self.labels.len());
        let mut positive = vec![false; n * m];
        for i in 0..n {
            for r in 0..m {
                positive[i * m + r] = state.noise_preact(self.labels[i], r, i) > 0.0;
            }
        }
        let snap = ActivationSnapshot { t, positive };
        if t.is_multiple_of(self.stride) {
            self.snapshots.push(snap.clone());
        }
        self.last = Some(snap);
        Ok(())
    }
}

/// Initial activation sets never lose members; initial sizes are compared
/// against `0.4 m` and `n / 8` as diagnostics.
pub fn check_activation_persistence(history: &ActivationHistory) -> Vec<InvariantReport> {
    let (m, n) = (history.m, history.n());
    let mut sample_lost: Option<Witness> = None;
    let mut filter_lost: Option<Witness> = None;
    let mut sample_losses = 0usize;
    let mut filter_losses = 0usize;
    if let Some(first) = history.snapshots.first() {
        for snap in &history.snapshots[1..] {
            for i in 0..n {
                for r in 0..m {
                    if first.positive[i * m + r] && !snap.positive[i * m + r] {
                        // r left S_i and, equivalently, i left S_{y_i, r}
                        let w = Witness::at(snap.t, 0.0).filter(history.labels[i], r).sample(i);
                        sample_losses += 1;
                        filter_losses += 1;
                        sample_lost.get_or_insert(w.clone());
                        filter_lost.get_or_insert(w);
                    }
                }
            }
        }
    }
    let (min_sample, min_filter) = match history.snapshots.first() {
        Some(_) => {
            let min_sample = (0..n).map(|i| history.sample_set(0, i).len()).min().unwrap_or(0);
            let min_filter = Sign::BOTH
                .into_iter()
                .flat_map(|j| (0..m).map(move |r| (j, r)))
                .map(|(j, r)| history.filter_set(0, j, r).len())
                .min()
                .unwrap_or(0);
            (min_sample, min_filter)
        }
        None => (m, n),
    };
    vec![
        InvariantReport::new(
            "sample_set_persistence",
            true,
            sample_lost.is_none(),
            0.0,
            sample_losses as f64,
            sample_lost,
            "S_i(0) subset of S_i(t); observed = number of lost (i, r, t)".into(),
        ),
        InvariantReport::new(
            "filter_set_persistence",
            true,
            filter_lost.is_none(),
            0.0,
            filter_losses as f64,
            filter_lost,
            "S_{j,r}(0) subset of S_{j,r}(t); observed = number of lost (i, r, t)".into(),
        ),
        InvariantReport::new(
            "initial_sample_set_size",
            false,
            min_sample as f64 >= 0.4 * m as f64,
            0.4 * m as f64,
            min_sample as f64,
            None,
            "min_i |S_i(0)| (diagnostic)".into(),
        ),
        InvariantReport::new(
            "initial_filter_set_size",
            false,
            min_filter as f64 >= n as f64 / 8.0,
            n as f64 / 8.0,
            min_filter as f64,
            None,
            "min_{j,r} |S_{j,r}(0)| (diagnostic)".into(),
        ),
    ]
}

/// Concentration diagnostics on a training set (warn-only).
pub fn dataset_diagnostics(stats: &SetStats, config: &DataConfig, delta: f64) -> Vec<InvariantReport> {
    let n = stats.n as f64;
    let band = ((n / 2.0) * (4.0 / delta).ln()).sqrt();
    let clean_dev = (stats.clean as f64 - (1.0 - config.p) * n).abs();
    let var_d = config.sigma_p.powi(2) * config.d as f64;
    vec![
        InvariantReport::new(
            "clean_set_size",
            false,
            clean_dev <= band,
            band,
            clean_dev,
            None,
            "| |S_+| - (1-p) n |".into(),
        ),
        InvariantReport::new(
            "noise_norm_band",
            false,
            stats.noise_norm_outliers == 0,
            0.0,
            stats.noise_norm_outliers as f64,
            None,
            format!(
                "points with |xi|^2 outside [{:.3}, {:.3}]; observed range [{:.3}, {:.3}]",
                var_d / 2.0,
                1.5 * var_d,
                stats.min_noise_norm_sq,
                stats.max_noise_norm_sq
            ),
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionClause {
    pub clause: usize,
    pub description: String,
    /// Headroom `lhs / rhs` with the constant set to 1; `>= 1` means the
    /// clause holds at that constant.
    pub ratio: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub delta: f64,
    pub t_star: usize,
    pub clauses: Vec<ConditionClause>,
    pub phase_quantity: f64,
}

/// Evaluates the six sufficient conditions of the convergence analysis as
/// headroom ratios with the constant `C = 1`, plus `n |mu|^4 / (sigma_p^4 d)`.
/// Informational only.
pub fn condition_report(data: &DataConfig, train: &TrainConfig, t_star: usize, delta: f64) -> ConditionReport {
    let (n, d, m) = (data.n as f64, data.d as f64, train.m as f64);
    let (mu, sp) = (data.mu_norm, data.sigma_p);
    let log_t = (t_star.max(2) as f64).ln();
    let clause = |k: usize, description: &str, ratio: f64| ConditionClause {
        clause: k,
        description: description.to_owned(),
        ratio,
        satisfied: ratio >= 1.0,
    };
    let d_need = (n * mu * mu * log_t / (sp * sp)).max(n * n * (n * m / delta).ln() * log_t * log_t);
    let width = (m / (n / delta).ln()).min(n / (m / delta).ln());
    let signal = mu * mu / (sp * sp * (n / delta).ln());
    let noise_rate = if data.p > 0.0 { 1.0 / data.p } else { f64::INFINITY };
    let init = (1.0 / train.sigma_0) / (sp * d / n.sqrt()).max((m / delta).ln().sqrt() * mu);
    let lr = (1.0 / train.eta)
        / (sp * sp * d.powf(1.5) / (n * n * m * (n / delta).ln().sqrt())).max(sp * sp * d / n);
    let quantity = if mu > 0.0 { phase_quantity(data.n, mu, sp, data.d).unwrap_or(0.0) } else { 0.0 };
    ConditionReport {
        delta,
        t_star,
        clauses: vec![
            clause(1, "d >= max{n |mu|^2 log T / sigma_p^2, n^2 log(nm/delta) log^2 T}", d / d_need),
            clause(2, "m >= log(n/delta) and n >= log(m/delta)", width),
            clause(3, "|mu|^2 >= sigma_p^2 log(n/delta)", signal),
            clause(4, "p <= 1", noise_rate),
            clause(5, "sigma_0 <= 1/max{sigma_p d/sqrt(n), sqrt(log(m/delta)) |mu|}", init),
            clause(6, "eta <= 1/max{sigma_p^2 d^1.5/(n^2 m sqrt(log(n/delta))), sigma_p^2 d/n}", lr),
        ],
        phase_quantity: quantity,
    }
}
