//! Signal-noise decomposition of the filters.
//!
//! Every filter moves only within `span{mu, xi_1, ..., xi_n}`:
//!
//! ```text
//! w_{j,r}(t) = w_{j,r}(0) + j * gamma_{j,r} * mu / |mu|^2
//!            + sum_i (zeta_{j,r,i} + omega_{j,r,i}) * xi_i / |xi_i|^2
//! ```
//!
//! The coefficients are tracked two ways. [`step_coefficients`] applies the
//! closed-form recurrences driven by the logit derivatives and activation bits
//! of each GD step. [`Basis::recover`] solves for them from the weights by
//! projecting onto the scaled basis. [`DecompositionTracker`] runs both and
//! records how far apart they are.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::cnn::{BatchState, Weights};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{fmt_f64, fmt_opt, Table};
use crate::linalg::{axpy, dot, norm_sq};
use crate::sign::Sign;
use crate::trainer::TrainHook;

/// Gram condition number above which recovery is refused.
pub const MAX_CONDITION: f64 = 1e12;
/// Gram condition number above which the tight agreement tolerance is not expected to hold.
pub const TIGHT_CONDITION: f64 = 1e8;

/// `gamma[j][r]`, `zeta[j][r][i]`, `omega[j][r][i]`, flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    m: usize,
    n: usize,
    gamma: Vec<f64>,
    zeta: Vec<f64>,
    omega: Vec<f64>,
}

impl Coefficients {
    pub fn zeros(m: usize, n: usize) -> Self {
        Coefficients {
            m,
            n,
            gamma: vec![0.0; 2 * m],
            zeta: vec![0.0; 2 * m * n],
            omega: vec![0.0; 2 * m * n],
        }
    }

    /// Splits `rho` into its positive part (`zeta`) and negative part (`omega`).
    pub fn from_gamma_rho(m: usize, n: usize, gamma: Vec<f64>, rho: &[f64]) -> Self {
        assert_eq!(gamma.len(), 2 * m);
        assert_eq!(rho.len(), 2 * m * n);
        Coefficients {
            m,
            n,
            gamma,
            zeta: rho.iter().map(|&v| if v >= 0.0 { v } else { 0.0 }).collect(),
            omega: rho.iter().map(|&v| if v <= 0.0 { v } else { 0.0 }).collect(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn gi(&self, j: Sign, r: usize) -> usize {
        j.index() * self.m + r
    }

    #[inline]
    fn ri(&self, j: Sign, r: usize, i: usize) -> usize {
        (j.index() * self.m + r) * self.n + i
    }

    pub fn gamma(&self, j: Sign, r: usize) -> f64 {
        self.gamma[self.gi(j, r)]
    }

    pub fn zeta(&self, j: Sign, r: usize, i: usize) -> f64 {
        self.zeta[self.ri(j, r, i)]
    }

    pub fn omega(&self, j: Sign, r: usize, i: usize) -> f64 {
        self.omega[self.ri(j, r, i)]
    }

    pub fn rho(&self, j: Sign, r: usize, i: usize) -> f64 {
        self.zeta(j, r, i) + self.omega(j, r, i)
    }

    pub fn set_gamma(&mut self, j: Sign, r: usize, v: f64) {
        let k = self.gi(j, r);
        self.gamma[k] = v;
    }

    pub fn set_zeta(&mut self, j: Sign, r: usize, i: usize, v: f64) {
        let k = self.ri(j, r, i);
        self.zeta[k] = v;
    }

    pub fn set_omega(&mut self, j: Sign, r: usize, i: usize, v: f64) {
        let k = self.ri(j, r, i);
        self.omega[k] = v;
    }

    /// Iterates `(j, r)` in storage order.
    pub fn filters(&self) -> impl Iterator<Item = (Sign, usize)> {
        let m = self.m;
        Sign::BOTH.into_iter().flat_map(move |j| (0..m).map(move |r| (j, r)))
    }

    pub fn sum_zeta(&self, j: Sign, r: usize) -> f64 {
        (0..self.n).map(|i| self.zeta(j, r, i)).sum()
    }

    /// `w(0) + j gamma mu/|mu|^2 + sum_i rho_i xi_i/|xi_i|^2` minus `w(0)`.
    pub fn displacement(&self, basis: &Basis, j: Sign, r: usize) -> Vec<f64> {
        let mut v = vec![0.0; basis.d()];
        axpy(j.value() * self.gamma(j, r), &basis.vectors[0], &mut v);
        for i in 0..self.n {
            axpy(self.rho(j, r, i), &basis.vectors[i + 1], &mut v);
        }
        v
    }
}

/// Squared norms `|mu|^2` and `|xi_i|^2` used by the recurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisNorms {
    pub mu_sq: f64,
    pub xi_sq: Vec<f64>,
}

impl BasisNorms {
    pub fn of(dataset: &Dataset) -> Self {
        BasisNorms {
            mu_sq: norm_sq(&dataset.mu),
            xi_sq: dataset.points.iter().map(|p| norm_sq(p.xi())).collect(),
        }
    }
}

/// Activation bits of one GD step, `[j][r][i]`, using `relu'(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationBits {
    m: usize,
    n: usize,
    signal: Vec<bool>,
    noise: Vec<bool>,
}

impl ActivationBits {
    pub fn from_state(state: &BatchState) -> Self {
        let (m, n) = (state.m, state.n);
        let mut signal = Vec::with_capacity(2 * m * n);
        let mut noise = Vec::with_capacity(2 * m * n);
        for j in Sign::BOTH {
            for r in 0..m {
                for i in 0..n {
                    signal.push(state.signal_active(j, r, i));
                    noise.push(state.noise_active(j, r, i));
                }
            }
        }
        ActivationBits { m, n, signal, noise }
    }

    pub fn from_fn(m: usize, n: usize, mut f: impl FnMut(Sign, usize, usize) -> (bool, bool)) -> Self {
        let mut bits = ActivationBits {
            m,
            n,
            signal: Vec::with_capacity(2 * m * n),
            noise: Vec::with_capacity(2 * m * n),
        };
        for j in Sign::BOTH {
            for r in 0..m {
                for i in 0..n {
                    let (s, z) = f(j, r, i);
                    bits.signal.push(s);
                    bits.noise.push(z);
                }
            }
        }
        bits
    }

    pub fn signal(&self, j: Sign, r: usize, i: usize) -> bool {
        self.signal[(j.index() * self.m + r) * self.n + i]
    }

    pub fn noise(&self, j: Sign, r: usize, i: usize) -> bool {
        self.noise[(j.index() * self.m + r) * self.n + i]
    }
}

/// Per-sample labels needed by the recurrences.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLabels {
    /// Observed labels `y_i`.
    pub y: Vec<Sign>,
    /// `y_i == y_hat_i` (membership in the clean set).
    pub clean: Vec<bool>,
}

impl SampleLabels {
    pub fn of(dataset: &Dataset) -> Self {
        SampleLabels {
            y: dataset.labels(),
            clean: dataset.points.iter().map(|p| !p.is_flipped()).collect(),
        }
    }
}

/// One application of the coefficient recurrences:
///
/// ```text
/// gamma += -(eta/(nm)) [sum_{clean} l'_i s_i - sum_{flipped} l'_i s_i] |mu|^2,  s_i = relu'(<w, y_hat_i mu>)
/// zeta_i += -(eta/(nm)) l'_i relu'(<w, xi_i>) |xi_i|^2   if y_i = j
/// omega_i += (eta/(nm)) l'_i relu'(<w, xi_i>) |xi_i|^2   if y_i = -j
/// ```
pub fn step_coefficients(
    coeffs: &Coefficients,
    logit_derivs: &[f64],
    bits: &ActivationBits,
    norms: &BasisNorms,
    labels: &SampleLabels,
    eta: f64,
) -> Result<Coefficients> {
    let (m, n) = (coeffs.m, coeffs.n);
    for len in [logit_derivs.len(), norms.xi_sq.len(), labels.y.len(), labels.clean.len(), bits.n] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    if bits.m != m {
        return Err(Error::DimensionMismatch { expected: m, got: bits.m });
    }
    let scale = eta / (n as f64 * m as f64);
    let mut next = coeffs.clone();
    for j in Sign::BOTH {
        for r in 0..m {
            let mut clean_sum = 0.0;
            let mut flipped_sum = 0.0;
            for i in 0..n {
                if bits.signal(j, r, i) {
                    if labels.clean[i] {
                        clean_sum += logit_derivs[i];
                    } else {
                        flipped_sum += logit_derivs[i];
                    }
                }
            }
            let g = coeffs.gamma(j, r) - scale * (clean_sum - flipped_sum) * norms.mu_sq;
            next.set_gamma(j, r, g);
            for i in 0..n {
                if !bits.noise(j, r, i) {
                    continue;
                }
                let inc = scale * logit_derivs[i] * norms.xi_sq[i];
                if labels.y[i] == j {
                    next.set_zeta(j, r, i, coeffs.zeta(j, r, i) - inc);
                } else {
                    next.set_omega(j, r, i, coeffs.omega(j, r, i) + inc);
                }
            }
        }
    }
    Ok(next)
}

/// The scaled basis `{mu/|mu|^2, xi_1/|xi_1|^2, ..., xi_n/|xi_n|^2}` with a
/// Cholesky factorization of its Gram matrix.
#[derive(Debug, Clone)]
pub struct Basis {
    vectors: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    cholesky: Cholesky<f64, Dyn>,
    condition: f64,
}

/// Coefficients recovered by projection, with the reconstruction residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    pub coeffs: Coefficients,
    /// `max_{j,r} |recon - (w_t - w_0)| / max(1, |w_t - w_0|)`
    pub relative_residual: f64,
}

impl Basis {
    pub fn new(mu: &[f64], xis: &[&[f64]]) -> Result<Self> {
        let d = mu.len();
        let mut vectors = Vec::with_capacity(xis.len() + 1);
        for v in std::iter::once(mu).chain(xis.iter().copied()) {
            if v.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: v.len() });
            }
            let nsq = norm_sq(v);
            if !(nsq > 0.0) {
                return Err(Error::IllConditioned { condition: f64::INFINITY });
            }
            vectors.push(v.iter().map(|x| x / nsq).collect::<Vec<f64>>());
        }
        let k = vectors.len();
        let gram = DMatrix::from_fn(k, k, |a, b| dot(&vectors[a], &vectors[b]));
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let lo = eig.min();
        let hi = eig.max();
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let cholesky = Cholesky::new(gram.clone()).ok_or(Error::IllConditioned { condition })?;
        Ok(Basis {
            vectors,
            gram,
            cholesky,
            condition,
        })
    }

    pub fn of(dataset: &Dataset) -> Result<Self> {
        Basis::new(&dataset.mu, &dataset.xis())
    }

    pub fn d(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn n(&self) -> usize {
        self.vectors.len() - 1
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Expresses each `w_{j,r}(t) - w_{j,r}(0)` in the scaled basis.
    pub fn recover(&self, current: &Weights, initial: &Weights) -> Result<Recovery> {
        if current.d() != self.d() || initial.d() != self.d() || current.m() != initial.m() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: current.d(),
            });
        }
        let (m, n) = (current.m(), self.n());
        let mut gamma = vec![0.0; 2 * m];
        let mut rho = vec![0.0; 2 * m * n];
        let mut worst: f64 = 0.0;
        for j in Sign::BOTH {
            for r in 0..m {
                let v: Vec<f64> = current
                    .filter(j, r)
                    .iter()
                    .zip(initial.filter(j, r))
                    .map(|(a, b)| a - b)
                    .collect();
                let rhs = DVector::from_iterator(n + 1, self.vectors.iter().map(|b| dot(b, &v)));
                let c = self.cholesky.solve(&rhs);
                gamma[j.index() * m + r] = j.value() * c[0];
                for i in 0..n {
                    rho[(j.index() * m + r) * n + i] = c[i + 1];
                }
                let mut recon = vec![0.0; self.d()];
                for (a, b) in self.vectors.iter().enumerate() {
                    axpy(c[a], b, &mut recon);
                }
                let err: f64 = recon
                    .iter()
                    .zip(&v)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(err / norm_sq(&v).sqrt().max(1.0));
            }
        }
        Ok(Recovery {
            coeffs: Coefficients::from_gamma_rho(m, n, gamma, &rho),
            relative_residual: worst,
        })
    }
}

/// Worst entrywise disagreement between two coefficient sets, measured as
/// `|a - b| / max(rel * max(|a|, |b|), abs_floor)`; `<= 1` means agreement.
#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub worst_ratio: f64,
    pub max_abs_diff: f64,
    /// `(kind, j, r, i)` of the worst entry; `i` is `None` for gamma.
    pub witness: Option<(&'static str, Sign, usize, Option<usize>)>,
}

impl Agreement {
    pub fn holds(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

pub fn compare(a: &Coefficients, b: &Coefficients, rel: f64, abs_floor: f64) -> Agreement {
    let mut out = Agreement {
        worst_ratio: 0.0,
        max_abs_diff: 0.0,
        witness: None,
    };
    let mut consider = |x: f64, y: f64, w: (&'static str, Sign, usize, Option<usize>)| {
        let diff = (x - y).abs();
        let ratio = diff / (rel * x.abs().max(y.abs())).max(abs_floor);
        out.max_abs_diff = out.max_abs_diff.max(diff);
        if ratio > out.worst_ratio || ratio.is_nan() {
            out.worst_ratio = if ratio.is_nan() { f64::INFINITY } else { ratio };
            out.witness = Some(w);
        }
    };
    for (j, r) in a.filters() {
        consider(a.gamma(j, r), b.gamma(j, r), ("gamma", j, r, None));
        for i in 0..a.n {
            consider(a.zeta(j, r, i), b.zeta(j, r, i), ("zeta", j, r, Some(i)));
            consider(a.omega(j, r, i), b.omega(j, r, i), ("omega", j, r, Some(i)));
        }
    }
    out
}

/// Per-filter aggregates of a coefficient set.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub j: Sign,
    pub r: usize,
    pub gamma: f64,
    pub sum_zeta: f64,
    pub max_zeta: f64,
    pub min_omega: f64,
    /// `gamma / sum_zeta`, absent when `sum_zeta == 0`.
    pub ratio: Option<f64>,
}

pub fn coefficient_summaries(coeffs: &Coefficients) -> Vec<FilterSummary> {
    coeffs
        .filters()
        .map(|(j, r)| {
            let sum_zeta = coeffs.sum_zeta(j, r);
            let max_zeta = (0..coeffs.n).map(|i| coeffs.zeta(j, r, i)).fold(0.0, f64::max);
            let min_omega = (0..coeffs.n).map(|i| coeffs.omega(j, r, i)).fold(0.0, f64::min);
            let gamma = coeffs.gamma(j, r);
            FilterSummary {
                j,
                r,
                gamma,
                sum_zeta,
                max_zeta,
                min_omega,
                ratio: (sum_zeta != 0.0).then(|| gamma / sum_zeta),
            }
        })
        .collect()
}

/// Stepped coefficients at each recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientHistory {
    pub m: usize,
    pub n: usize,
    pub labels: Vec<Sign>,
    pub snapshots: Vec<(usize, Coefficients)>,
}

impl CoefficientHistory {
    /// `coeffs.csv`: `t,j,r,gamma,sum_zeta,min_omega,max_zeta,ratio`.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,j,r,gamma,sum_zeta,min_omega,max_zeta,ratio")?;
        for (t, c) in &self.snapshots {
            for s in coefficient_summaries(c) {
                writeln!(
                    out,
                    "{t},{},{},{},{},{},{},{}",
                    s.j.as_i8(),
                    s.r,
                    fmt_f64(s.gamma),
                    fmt_f64(s.sum_zeta),
                    fmt_f64(s.min_omega),
                    fmt_f64(s.max_zeta),
                    fmt_opt(s.ratio)
                )?;
            }
        }
        Ok(())
    }

    /// `coeff_entries.csv`: `t,j,r,i,zeta,omega`.
    pub fn write_entries_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,j,r,i,zeta,omega")?;
        for (t, c) in &self.snapshots {
            for (j, r) in c.filters() {
                for i in 0..c.n {
                    writeln!(
                        out,
                        "{t},{},{r},{i},{},{}",
                        j.as_i8(),
                        fmt_f64(c.zeta(j, r, i)),
                        fmt_f64(c.omega(j, r, i))
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Rebuilds the history from `coeffs.csv` (gamma) and `coeff_entries.csv`.
    pub fn read_csv(summary: &Path, entries: &Path, labels: Vec<Sign>, m: usize) -> Result<Self> {
        let n = labels.len();
        let s = Table::read(summary)?;
        let e = Table::read(entries)?;
        let mut snapshots: Vec<(usize, Coefficients)> = Vec::new();
        let lookup = |snaps: &mut Vec<(usize, Coefficients)>, t: usize, file: &str| -> Result<usize> {
            match snaps.iter().position(|(tt, _)| *tt == t) {
                Some(k) => Ok(k),
                None => {
                    if snaps.last().is_some_and(|(tt, _)| *tt > t) {
                        return Err(Error::malformed(file, "iterations are not increasing"));
                    }
                    snaps.push((t, Coefficients::zeros(m, n)));
                    Ok(snaps.len() - 1)
                }
            }
        };
        let (ct, cj, cr, cg) = (s.column("t")?, s.column("j")?, s.column("r")?, s.column("gamma")?);
        for row in 0..s.rows.len() {
            let t: usize = s.parse(row, ct)?;
            let j = Sign::from_i64(s.parse(row, cj)?).ok_or_else(|| Error::malformed(&s.file, "j must be +1 or -1"))?;
            let r: usize = s.parse(row, cr)?;
            if r >= m {
                return Err(Error::malformed(&s.file, "filter index out of range"));
            }
            let k = lookup(&mut snapshots, t, &s.file)?;
            snapshots[k].1.set_gamma(j, r, s.parse(row, cg)?);
        }
        let (et, ej, er, ei, ez, eo) = (
            e.column("t")?,
            e.column("j")?,
            e.column("r")?,
            e.column("i")?,
            e.column("zeta")?,
            e.column("omega")?,
        );
        for row in 0..e.rows.len() {
            let t: usize = e.parse(row, et)?;
            let j = Sign::from_i64(e.parse(row, ej)?).ok_or_else(|| Error::malformed(&e.file, "j must be +1 or -1"))?;
            let r: usize = e.parse(row, er)?;
            let i: usize = e.parse(row, ei)?;
            if r >= m || i >= n {
                return Err(Error::malformed(&e.file, "index out of range"));
            }
            let k = snapshots
                .iter()
                .position(|(tt, _)| *tt == t)
                .ok_or_else(|| Error::malformed(&e.file, format!("iteration {t} absent from coeffs.csv")))?;
            snapshots[k].1.set_zeta(j, r, i, e.parse(row, ez)?);
            snapshots[k].1.set_omega(j, r, i, e.parse(row, eo)?);
        }
        Ok(CoefficientHistory { m, n, labels, snapshots })
    }
}

/// Stepped-vs-recovered comparison at one recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementPoint {
    pub t: usize,
    pub agreement: Agreement,
    pub relative_residual: f64,
}

/// Relative tolerance of the stepped/recovered agreement.
pub const AGREEMENT_REL: f64 = 1e-6;
/// Absolute floor of the stepped/recovered agreement.
pub const AGREEMENT_ABS: f64 = 1e-9;

/// Training hook that advances the recurrences every step and cross-checks
/// them against projection every `stride` iterations (and at the last one).
pub struct DecompositionTracker {
    basis: Basis,
    norms: BasisNorms,
    labels: SampleLabels,
    eta: f64,
    stride: usize,
    initial: Option<Weights>,
    current: Coefficients,
    history: Vec<(usize, Coefficients)>,
    agreement: Vec<AgreementPoint>,
    last: Option<(usize, Weights, Coefficients)>,
}

impl DecompositionTracker {
    pub fn new(dataset: &Dataset, m: usize, eta: f64, stride: usize) -> Result<Self> {
        Ok(DecompositionTracker {
            basis: Basis::of(dataset)?,
            norms: BasisNorms::of(dataset),
            labels: SampleLabels::of(dataset),
            eta,
            stride: stride.max(1),
            initial: None,
            current: Coefficients::zeros(m, dataset.len()),
            history: Vec::new(),
            agreement: Vec::new(),
            last: None,
        })
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    fn snapshot(&mut self, t: usize, weights: &Weights, coeffs: Coefficients) -> Result<()> {
        let initial = self.initial.as_ref().expect("initial weights recorded at t = 0");
        let rec = self.basis.recover(weights, initial)?;
        self.agreement.push(AgreementPoint {
            t,
            agreement: compare(&coeffs, &rec.coeffs, AGREEMENT_REL, AGREEMENT_ABS),
            relative_residual: rec.relative_residual,
        });
        self.history.push((t, coeffs));
        Ok(())
    }

    /// Closes the run and returns the stepped history with its agreement trace.
    pub fn finish(mut self) -> Result<(CoefficientHistory, Vec<AgreementPoint>)> {
        if let Some((t, w, c)) = self.last.take() {
            if self.history.last().map(|(tt, _)| *tt) != Some(t) {
                self.snapshot(t, &w, c)?;
            }
        }
        Ok((
            CoefficientHistory {
                m: self.current.m,
                n: self.current.n,
                labels: self.labels.y.clone(),
                snapshots: self.history,
            },
            self.agreement,
        ))
    }
}

impl TrainHook for DecompositionTracker {
    fn observe(&mut self, t: usize, weights: &Weights, state: &BatchState) -> Result<()> {
        if t == 0 {
            self.initial = Some(weights.clone());
        }
        let coeffs = self.current.clone();
        if t.is_multiple_of(self.stride) {
            self.snapshot(t, weights, coeffs.clone())?;
        }
        let bits = ActivationBits::from_state(state);
        self.current = step_coefficients(&coeffs, &state.logit_derivs, &bits, &self.norms, &self.labels, self.eta)?;
        self.last = Some((t, weights.clone(), coeffs));
        Ok(())
    }
}
