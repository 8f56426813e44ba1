//! Seeded inputs for the benchmarks.

use memnorm::dnc::{Dnc, DncConfig, DncState};
use memnorm::gbdt::FeatureMatrix;
use memnorm::tensor::{Parameters, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape matches data")
}

/// A cell with initialized parameters, a zero state for `batch` and one input.
pub fn dnc_fixture(config: DncConfig, batch: usize) -> (Dnc, Parameters, DncState, Tensor) {
    let mut r = rng(1);
    let dnc = Dnc::new(config).expect("valid config");
    let mut params = Parameters::new();
    dnc.init_params(&mut params, &mut r)
        .expect("fresh parameters");
    let state = DncState::zeros(&config, batch);
    let x = uniform(&mut r, &[batch, config.input_size], -1.0, 1.0);
    (dnc, params, state, x)
}

/// Integer-valued features with labels from a noisy linear rule.
pub fn classification_data(rows: usize, cols: usize) -> (FeatureMatrix, Vec<f64>) {
    let mut r = rng(2);
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| f64::from(r.gen_range(0u8..64)))
        .collect();
    let labels = data
        .chunks(cols)
        .map(|row| f64::from(u8::from(row[0] + row[1] > 64.0 + r.gen_range(-8.0..8.0))))
        .collect();
    (
        FeatureMatrix::new(rows, cols, data).expect("shape matches data"),
        labels,
    )
}
