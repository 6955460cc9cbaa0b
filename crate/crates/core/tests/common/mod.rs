//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use benignlab::cnn::Weights;
use benignlab::{Dataset, Sign};

/// Loss written directly from the model definition, without any library math.
pub fn naive_loss(w: &Weights, ds: &Dataset) -> f64 {
    let relu = |z: f64| if z > 0.0 { z } else { 0.0 };
    let mut total = 0.0;
    for pt in &ds.points {
        let mut f = 0.0;
        for bank in [Sign::Plus, Sign::Minus] {
            let s = if bank == Sign::Plus { 1.0 } else { -1.0 };
            for r in 0..w.m() {
                let filt = w.filter(bank, r);
                let a: f64 = filt.iter().zip(&pt.patch1).map(|(x, y)| x * y).sum();
                let b: f64 = filt.iter().zip(&pt.patch2).map(|(x, y)| x * y).sum();
                f += s * (relu(a) + relu(b)) / w.m() as f64;
            }
        }
        let z = pt.y.value() * f;
        total += (1.0 + (-z).exp()).ln();
    }
    total / ds.len() as f64
}

/// Distance from `v` to span(basis), by modified Gram-Schmidt.
pub fn distance_to_span(v: &[f64], basis: &[&[f64]]) -> f64 {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.to_vec();
        for e in &q {
            let c: f64 = u.iter().zip(e).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
        }
        let nrm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-12 {
            q.push(u.iter().map(|x| x / nrm).collect());
        }
    }
    let mut res = v.to_vec();
    for e in &q {
        let c: f64 = res.iter().zip(e).map(|(x, y)| x * y).sum();
        res.iter_mut().zip(e).for_each(|(x, y)| *x -= c * y);
    }
    res.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central finite differences of [`naive_loss`] against the analytic gradient
/// at `count` random coordinates of filters whose pre-activations all satisfy
/// `|z| > 1e-3`. Returns the worst relative error.
pub fn finite_difference_check(w: &Weights, ds: &Dataset, count: usize, h: f64, seed: u64) -> f64 {
    use rand::Rng;
    let grad = benignlab::cnn::gradient(w, ds).unwrap();
    let kink_free = |bank: Sign, r: usize| {
        ds.points.iter().all(|pt| {
            [&pt.patch1, &pt.patch2]
                .iter()
                .all(|p| w.filter(bank, r).iter().zip(p.iter()).map(|(a, b)| a * b).sum::<f64>().abs() > 1e-3)
        })
    };
    let filters: Vec<(Sign, usize)> = [Sign::Plus, Sign::Minus]
        .into_iter()
        .flat_map(|b| (0..w.m()).map(move |r| (b, r)))
        .filter(|&(b, r)| kink_free(b, r))
        .collect();
    assert!(!filters.is_empty(), "no kink-free filter");
    let mut rng = benignlab::rng::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (bank, r) = filters[rng.random_range(0..filters.len())];
        let k = rng.random_range(0..w.d());
        let mut wp = w.clone();
        wp.filter_mut(bank, r)[k] += h;
        let mut wm = w.clone();
        wm.filter_mut(bank, r)[k] -= h;
        let fd = (naive_loss(&wp, ds) - naive_loss(&wm, ds)) / (2.0 * h);
        let g = grad.filter(bank, r)[k];
        let rel = (fd - g).abs() / g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
