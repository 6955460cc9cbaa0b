//! Shared fixtures for the criterion benchmarks.

use benignlab::cnn::{init_weights, Weights};
use benignlab::data::{generate_dataset, DataConfig, Dataset};

/// The reference configuration at dimension `d` with signal strength `mu`.
pub fn reference_setup(d: usize, mu: f64) -> (Dataset, Weights) {
    let ds = generate_dataset(&DataConfig {
        d,
        n: 20,
        mu_norm: mu,
        sigma_p: 1.0,
        p: 0.1,
        seed: 1,
    })
    .expect("valid config");
    let w = init_weights(10, d, 0.01, 2).expect("valid dims");
    (ds, w)
}
