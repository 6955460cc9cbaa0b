//! Two-layer ReLU CNN with fixed second layer `+1/m` / `-1/m`.
//!
//! `f(W, x) = F_{+1}(W_{+1}, x) - F_{-1}(W_{-1}, x)` where
//! `F_j = (1/m) sum_r [relu(<w_{j,r}, x1>) + relu(<w_{j,r}, x2>)]`.
//!
//! The ReLU derivative uses `relu'(0) = 1`: a unit counts as active iff its
//! pre-activation is `>= 0`. [`is_active`] is the only place that decides it,
//! and both the gradient and the coefficient recurrences read it.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DataPoint, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::rng::rng;
use crate::sign::Sign;

#[inline]
pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// ReLU subgradient indicator with `relu'(0) = 1`.
#[inline]
pub fn is_active(z: f64) -> bool {
    z >= 0.0
}

/// `log(1 + exp(-z))` without overflow.
#[inline]
pub fn logistic_loss(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// Derivative of [`logistic_loss`]: `-1 / (1 + exp(z))`, always in `[-1, 0]`.
#[inline]
pub fn logistic_derivative(z: f64) -> f64 {
    if z >= 0.0 {
        let e = (-z).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + z.exp())
    }
}

/// First-layer filters: two banks of `m` filters of dimension `d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    m: usize,
    d: usize,
    plus: Vec<f64>,
    minus: Vec<f64>,
}

impl Weights {
    pub fn zeros(m: usize, d: usize) -> Self {
        Weights {
            m,
            d,
            plus: vec![0.0; m * d],
            minus: vec![0.0; m * d],
        }
    }

    /// Builds weights from `value(bank, r, coord)`.
    pub fn from_fn(m: usize, d: usize, mut value: impl FnMut(Sign, usize, usize) -> f64) -> Self {
        let mut w = Weights::zeros(m, d);
        for bank in Sign::BOTH {
            for r in 0..m {
                for (k, x) in w.filter_mut(bank, r).iter_mut().enumerate() {
                    *x = value(bank, r, k);
                }
            }
        }
        w
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn bank(&self, bank: Sign) -> &[f64] {
        match bank {
            Sign::Plus => &self.plus,
            Sign::Minus => &self.minus,
        }
    }

    fn bank_mut(&mut self, bank: Sign) -> &mut [f64] {
        match bank {
            Sign::Plus => &mut self.plus,
            Sign::Minus => &mut self.minus,
        }
    }

    pub fn filter(&self, bank: Sign, r: usize) -> &[f64] {
        &self.bank(bank)[r * self.d..(r + 1) * self.d]
    }

    pub fn filter_mut(&mut self, bank: Sign, r: usize) -> &mut [f64] {
        let d = self.d;
        &mut self.bank_mut(bank)[r * d..(r + 1) * d]
    }

    /// Swaps the two banks.
    pub fn swapped(&self) -> Self {
        Weights {
            m: self.m,
            d: self.d,
            plus: self.minus.clone(),
            minus: self.plus.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.plus.iter().chain(&self.minus).all(|v| v.is_finite())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.plus.iter().chain(&self.minus).copied()
    }

    /// Writes the `bank,r,coord,value` checkpoint.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bank,r,coord,value")?;
        for bank in Sign::BOTH {
            for r in 0..self.m {
                for (k, v) in self.filter(bank, r).iter().enumerate() {
                    writeln!(out, "{},{r},{k},{}", bank.as_i8(), crate::io::fmt_f64(*v))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(path: &std::path::Path, m: usize, d: usize) -> Result<Weights> {
        let table = crate::io::Table::read(path)?;
        let (cb, cr, ck, cv) = (
            table.column("bank")?,
            table.column("r")?,
            table.column("coord")?,
            table.column("value")?,
        );
        if table.rows.len() != 2 * m * d {
            return Err(Error::malformed(
                &table.file,
                format!("expected {} rows, found {}", 2 * m * d, table.rows.len()),
            ));
        }
        let mut w = Weights::zeros(m, d);
        for row in 0..table.rows.len() {
            let bank = Sign::from_i64(table.parse(row, cb)?)
                .ok_or_else(|| Error::malformed(&table.file, "bank must be +1 or -1"))?;
            let r: usize = table.parse(row, cr)?;
            let k: usize = table.parse(row, ck)?;
            if r >= m || k >= d {
                return Err(Error::malformed(&table.file, "index out of range"));
            }
            w.filter_mut(bank, r)[k] = table.parse(row, cv)?;
        }
        Ok(w)
    }
}

/// Every entry i.i.d. `N(0, sigma_0^2)`, filled bank `+1` first, then by filter
/// and coordinate.
pub fn init_weights(m: usize, d: usize, sigma_0: f64, seed: u64) -> Result<Weights> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidDimension(format!("m = {m}, d = {d}")));
    }
    let normal = Normal::new(0.0, sigma_0)
        .map_err(|_| Error::config("sigma0", "must be finite and nonnegative"))?;
    let mut r = rng(seed);
    Ok(Weights::from_fn(m, d, |_, _, _| normal.sample(&mut r)))
}

/// Result of evaluating the network on a single input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub f: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    /// `activations[bank.index()][r][patch]`, `patch` 0 or 1.
    pub activations: [Vec<[bool; 2]>; 2],
}

pub fn forward(w: &Weights, patch1: &[f64], patch2: &[f64]) -> Result<Forward> {
    for p in [patch1, patch2] {
        if p.len() != w.d() {
            return Err(Error::DimensionMismatch {
                expected: w.d(),
                got: p.len(),
            });
        }
    }
    let m = w.m();
    let mut sums = [0.0; 2];
    let mut activations = [Vec::with_capacity(m), Vec::with_capacity(m)];
    for bank in Sign::BOTH {
        for r in 0..m {
            let filt = w.filter(bank, r);
            let z1 = dot(filt, patch1);
            let z2 = dot(filt, patch2);
            sums[bank.index()] += relu(z1) + relu(z2);
            activations[bank.index()].push([is_active(z1), is_active(z2)]);
        }
    }
    let f_plus = sums[0] / m as f64;
    let f_minus = sums[1] / m as f64;
    Ok(Forward {
        f: f_plus - f_minus,
        f_plus,
        f_minus,
        activations,
    })
}

pub fn forward_point(w: &Weights, x: &DataPoint) -> Result<Forward> {
    forward(w, &x.patch1, &x.patch2)
}

/// Network output only; skips activation bookkeeping.
pub fn output(w: &Weights, x: &DataPoint) -> f64 {
    let m = w.m();
    let mut total = 0.0;
    for bank in Sign::BOTH {
        let mut s = 0.0;
        for r in 0..m {
            let filt = w.filter(bank, r);
            s += relu(dot(filt, &x.patch1)) + relu(dot(filt, &x.patch2));
        }
        total += bank.value() * s / m as f64;
    }
    total
}

/// Everything one full-batch GD step needs, computed once per iteration.
///
/// Pre-activations are stored by role (signal patch vs. noise patch), indexed
/// `[bank][r][i]`. The gradient and the coefficient recurrences both read the
/// activation bits from here.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchState {
    pub m: usize,
    pub n: usize,
    pub outputs: Vec<f64>,
    /// `y_i * f(W, x_i)`
    pub margins: Vec<f64>,
    /// `l'(y_i * f(W, x_i))`
    pub logit_derivs: Vec<f64>,
    pub loss: f64,
    signal_pre: Vec<f64>,
    noise_pre: Vec<f64>,
}

impl BatchState {
    #[inline]
    fn idx(&self, bank: Sign, r: usize, i: usize) -> usize {
        (bank.index() * self.m + r) * self.n + i
    }

    /// `<w_{j,r}, y_hat_i mu>`
    pub fn signal_preact(&self, bank: Sign, r: usize, i: usize) -> f64 {
        self.signal_pre[self.idx(bank, r, i)]
    }

    /// `<w_{j,r}, xi_i>`
    pub fn noise_preact(&self, bank: Sign, r: usize, i: usize) -> f64 {
        self.noise_pre[self.idx(bank, r, i)]
    }

    pub fn signal_active(&self, bank: Sign, r: usize, i: usize) -> bool {
        is_active(self.signal_preact(bank, r, i))
    }

    pub fn noise_active(&self, bank: Sign, r: usize, i: usize) -> bool {
        is_active(self.noise_preact(bank, r, i))
    }

    pub fn max_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_dims(w: &Weights, dataset: &Dataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset has no points"));
    }
    if dataset.d() != w.d() {
        return Err(Error::DimensionMismatch {
            expected: w.d(),
            got: dataset.d(),
        });
    }
    Ok(())
}

/// Forward pass over the whole training set.
pub fn evaluate(w: &Weights, dataset: &Dataset) -> Result<BatchState> {
    check_dims(w, dataset)?;
    let (m, n) = (w.m(), dataset.len());
    let mut signal_pre = vec![0.0; 2 * m * n];
    let mut noise_pre = vec![0.0; 2 * m * n];
    let mut outputs = vec![0.0; n];
    for (i, pt) in dataset.points.iter().enumerate() {
        let mut total = 0.0;
        for bank in Sign::BOTH {
            let mut s = 0.0;
            for r in 0..m {
                let filt = w.filter(bank, r);
                let zs = dot(filt, pt.signal_patch());
                let zn = dot(filt, pt.xi());
                let k = (bank.index() * m + r) * n + i;
                signal_pre[k] = zs;
                noise_pre[k] = zn;
                s += relu(zs) + relu(zn);
            }
            total += bank.value() * s / m as f64;
        }
        outputs[i] = total;
    }
    let margins: Vec<f64> = dataset
        .points
        .iter()
        .zip(&outputs)
        .map(|(p, f)| p.y.value() * f)
        .collect();
    let loss = margins.iter().map(|&z| logistic_loss(z)).sum::<f64>() / n as f64;
    let logit_derivs = margins.iter().map(|&z| logistic_derivative(z)).collect();
    Ok(BatchState {
        m,
        n,
        outputs,
        margins,
        logit_derivs,
        loss,
        signal_pre,
        noise_pre,
    })
}

/// `(1/n) sum_i log(1 + exp(-y_i f(W, x_i)))`
pub fn training_loss(w: &Weights, dataset: &Dataset) -> Result<f64> {
    Ok(evaluate(w, dataset)?.loss)
}

/// Gradient of the training loss, laid out like [`Weights`].
///
/// For each filter:
/// `grad_{j,r} = (1/(nm)) sum_i l'_i j y_i [relu'(<w, xi_i>) xi_i + relu'(<w, y_hat_i mu>) y_hat_i mu]`,
/// summed in ascending `i`.
pub fn gradient_from_state(w: &Weights, dataset: &Dataset, state: &BatchState) -> Weights {
    let (m, n) = (w.m(), dataset.len());
    let scale = 1.0 / (n as f64 * m as f64);
    let mut grad = Weights::zeros(m, w.d());
    for bank in Sign::BOTH {
        for r in 0..m {
            let g = grad.filter_mut(bank, r);
            for (i, pt) in dataset.points.iter().enumerate() {
                let coef = scale * state.logit_derivs[i] * bank.value() * pt.y.value();
                if state.noise_active(bank, r, i) {
                    axpy(coef, pt.xi(), g);
                }
                if state.signal_active(bank, r, i) {
                    axpy(coef, pt.signal_patch(), g);
                }
            }
        }
    }
    grad
}

pub fn gradient(w: &Weights, dataset: &Dataset) -> Result<Weights> {
    let state = evaluate(w, dataset)?;
    Ok(gradient_from_state(w, dataset, &state))
}

/// `W - eta * grad`
pub fn apply_step(w: &Weights, grad: &Weights, eta: f64) -> Weights {
    let mut next = w.clone();
    for bank in Sign::BOTH {
        axpy(-eta, grad.bank(bank), next.bank_mut(bank));
    }
    next
}

/// One full-batch gradient descent step.
pub fn gd_step(w: &Weights, dataset: &Dataset, eta: f64) -> Result<Weights> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::config("eta", "must be finite and nonnegative"));
    }
    let grad = gradient(w, dataset)?;
    Ok(apply_step(w, &grad, eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, DataConfig, SignalSlot};
    use crate::linalg::norm_sq;
    use proptest::prelude::*;

    fn small_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        generate_dataset(&DataConfig {
            d,
            n,
            mu_norm: 3.0,
            sigma_p: 1.0,
            p: 0.2,
            seed,
        })
        .unwrap()
    }

    fn point(patch1: Vec<f64>, patch2: Vec<f64>, y: Sign) -> DataPoint {
        DataPoint {
            patch1,
            patch2,
            y,
            y_hat: y,
            signal_slot: SignalSlot::First,
        }
    }

    #[test]
    fn stable_loss() {
        assert!((logistic_loss(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(logistic_loss(100.0) < 1e-43);
        assert!(logistic_loss(100.0) > 0.0);
        assert!((logistic_loss(-800.0) - 800.0).abs() < 1e-12);
        assert!(logistic_loss(1e6).is_finite());
        assert_eq!(logistic_derivative(0.0), -0.5);
        assert!(logistic_derivative(-800.0) == -1.0);
    }

    #[test]
    fn zero_init() {
        let w = init_weights(3, 4, 0.0, 1).unwrap();
        assert!(w.values().all(|v| v == 0.0));
        let ds = small_dataset(5, 4, 0);
        let out = forward_point(&w, &ds.points[0]).unwrap();
        assert_eq!((out.f, out.f_plus, out.f_minus), (0.0, 0.0, 0.0));
        assert!((training_loss(&w, &ds).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn init_is_seeded_gaussian() {
        let a = init_weights(10, 100, 0.01, 4).unwrap();
        let b = init_weights(10, 100, 0.01, 4).unwrap();
        assert_eq!(a, b);
        let vals: Vec<f64> = a.values().collect();
        assert_eq!(vals.len(), 2000);
        let mean = vals.iter().sum::<f64>() / 2000.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1999.0;
        assert!((var / 1e-4 - 1.0).abs() < 0.2, "{var}");
        assert!(init_weights(0, 3, 0.1, 0).is_err());
    }

    #[test]
    fn hand_evaluated_forward() {
        let w = Weights::from_fn(1, 2, |bank, _, k| match (bank, k) {
            (Sign::Plus, 0) => 1.0,
            _ => 0.0,
        });
        let out = forward(&w, &[2.0, -1.0], &[0.0, 3.0]).unwrap();
        assert_eq!(out.f_plus, 2.0);
        assert_eq!(out.f_minus, 0.0);
        assert_eq!(out.f, 2.0);
        // <w, (0, 3)> = 0 counts as active
        assert_eq!(out.activations[0][0], [true, true]);
        assert!(forward(&w, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn bank_swap_negates_output() {
        let w = init_weights(4, 6, 1.0, 2).unwrap();
        let ds = small_dataset(10, 6, 1);
        for p in &ds.points {
            assert_eq!(output(&w, p), -output(&w.swapped(), p));
            assert_eq!(output(&w, p), forward_point(&w, p).unwrap().f);
        }
    }

    #[test]
    fn saturated_loss_tail() {
        // m = 1, d = 1, w_{+1} = 25, both patches 1 -> y f = 50
        let w = Weights::from_fn(1, 1, |b, _, _| if b == Sign::Plus { 25.0 } else { 0.0 });
        let ds = Dataset {
            config: DataConfig { d: 1, n: 1, mu_norm: 1.0, sigma_p: 1.0, p: 0.0, seed: 0 },
            mu: vec![1.0],
            points: vec![point(vec![1.0], vec![1.0], Sign::Plus)],
        };
        let g = gradient(&w, &ds).unwrap();
        assert!(norm_sq(g.bank(Sign::Plus)).sqrt() < 1e-20);

        let w = Weights::from_fn(1, 1, |b, _, _| if b == Sign::Plus { 50.0 } else { 0.0 });
        assert!(training_loss(&w, &ds).unwrap() < 1e-43);
    }

    #[test]
    fn all_active_reduces_to_linear_model() {
        // Positive patches and positive weights keep every unit active, so
        // f = (1/m) sum_r <w_{+1,r} - w_{-1,r}, x1 + x2>.
        let d = 5;
        let pts: Vec<DataPoint> = (0..6)
            .map(|i| {
                let y = if i % 3 == 0 { Sign::Minus } else { Sign::Plus };
                let a: Vec<f64> = (0..d).map(|k| 0.5 + ((i * 7 + k * 3) % 5) as f64 * 0.2).collect();
                let b: Vec<f64> = (0..d).map(|k| 0.1 + ((i + k * 11) % 4) as f64 * 0.3).collect();
                point(a, b, y)
            })
            .collect();
        let ds = Dataset {
            config: DataConfig { d, n: 6, mu_norm: 1.0, sigma_p: 1.0, p: 0.0, seed: 0 },
            mu: vec![1.0; d],
            points: pts,
        };
        let m = 3;
        let w = Weights::from_fn(m, d, |b, r, k| 0.1 + 0.05 * (r + k) as f64 + if b == Sign::Plus { 0.02 } else { 0.0 });
        let g = gradient(&w, &ds).unwrap();
        // linear-model gradient: (1/(nm)) sum_i l'_i y_i j (x1 + x2)
        let n = ds.len() as f64;
        for bank in Sign::BOTH {
            for r in 0..m {
                let mut expect = vec![0.0; d];
                for p in &ds.points {
                    let z = p.y.value() * output(&w, p);
                    let c = logistic_derivative(z) * p.y.value() * bank.value() / (n * m as f64);
                    for k in 0..d {
                        expect[k] += c * (p.patch1[k] + p.patch2[k]);
                    }
                }
                for (a, e) in g.filter(bank, r).iter().zip(&expect) {
                    assert!((a - e).abs() < 1e-15, "{a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn zero_step_is_identity() {
        let ds = small_dataset(8, 10, 3);
        let w = init_weights(4, 10, 0.1, 3).unwrap();
        assert_eq!(gd_step(&w, &ds, 0.0).unwrap(), w);
        assert!(gd_step(&w, &ds, f64::NAN).is_err());
    }

    #[test]
    fn half_steps_differ_from_full_step() {
        let ds = small_dataset(10, 8, 7);
        let w = init_weights(3, 8, 0.5, 7).unwrap();
        let full = gd_step(&w, &ds, 2.0).unwrap();
        let half = gd_step(&gd_step(&w, &ds, 1.0).unwrap(), &ds, 1.0).unwrap();
        let diff: f64 = full.values().zip(half.values()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "{diff}");
    }

    #[test]
    fn dimension_mismatch() {
        let ds = small_dataset(3, 5, 0);
        let w = Weights::zeros(2, 4);
        assert!(matches!(evaluate(&w, &ds), Err(Error::DimensionMismatch { .. })));
        let mut empty = ds.clone();
        empty.points.clear();
        assert!(matches!(training_loss(&Weights::zeros(2, 5), &empty), Err(Error::Empty(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let w = init_weights(3, 4, 0.3, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.csv");
        w.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        assert_eq!(Weights::read_csv(&path, 3, 4).unwrap(), w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("bank,r,coord,value\n1,0,0,"));
        assert!(Weights::read_csv(&path, 3, 5).is_err());
    }

    proptest! {
        #[test]
        fn logistic_derivative_in_range(z in -30.0f64..30.0) {
            let g = logistic_derivative(z);
            prop_assert!(g > -1.0 && g < 0.0);
            prop_assert!(logistic_loss(z) > 0.0);
        }

        #[test]
        fn output_is_positively_homogeneous(seed in 0u64..1000, scale in 0.01f64..100.0) {
            let w = init_weights(2, 3, 1.0, seed).unwrap();
            let scaled = Weights::from_fn(2, 3, |b, r, k| scale * w.filter(b, r)[k]);
            let ds = small_dataset(2, 3, seed);
            for p in &ds.points {
                let a = output(&scaled, p);
                let b = scale * output(&w, p);
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
