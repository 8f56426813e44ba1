//! Small models and random inputs shared by the DNC and seq2seq tests.

use memnorm::dnc::{Dnc, DncConfig, DncVars};
use memnorm::seq2seq::{Seq2Seq, Seq2SeqConfig};
use memnorm::tensor::{Parameters, Tensor, Var};
use rand::Rng;

pub fn tiny_dnc() -> DncConfig {
    DncConfig {
        memory_size: 4,
        word_size: 3,
        read_heads: 1,
        hidden_size: 8,
        input_size: 2,
        output_size: 2,
    }
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Rows of non-negative weights summing to `total`.
pub fn weights(rng: &mut impl Rng, rows: usize, n: usize, total: f64) -> Tensor {
    let mut data = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|x| x / s * total));
    }
    Tensor::new(vec![rows * n], data).unwrap()
}

pub fn reshape(t: Tensor, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), t.into_data()).unwrap()
}

/// Parameter tensors in path order, matching [`dnc_vars`].
pub fn dnc_param_tensors(dnc: &Dnc, seed: u64) -> Vec<Tensor> {
    let mut params = Parameters::new();
    dnc.init_params(&mut params, &mut super::rng(seed)).unwrap();
    params.iter().map(|(_, e)| e.value.clone()).collect()
}

pub fn dnc_vars(v: &[Var]) -> DncVars {
    // sorted paths: controller/b, controller/w, interface/b, interface/w,
    // output/b, output/w, read_out/w
    DncVars {
        controller_b: v[0],
        controller_w: v[1],
        interface_b: v[2],
        interface_w: v[3],
        output_b: v[4],
        output_w: v[5],
        read_out_w: v[6],
    }
}

pub fn tiny_seq2seq() -> Seq2SeqConfig {
    let mut c = Seq2SeqConfig::new(7, 8, 3, 4, 4, 3, 1, 8, 4);
    c.max_output_len = 8;
    c
}

/// Initialized parameters scaled by `scale` plus uniform noise, so zero-initialized
/// biases and the initial query are random too.
pub fn random_seq2seq_params(m: &Seq2Seq, seed: u64, scale: f64) -> Parameters {
    let mut init = Parameters::new();
    m.init_params(&mut init, &mut super::rng(seed)).unwrap();
    let mut r = super::rng(seed + 1000);
    let mut params = Parameters::new();
    for (path, e) in init.iter() {
        let data = e
            .value
            .data()
            .iter()
            .map(|x| x * scale + r.gen_range(-0.3..0.3))
            .collect();
        params
            .insert(path, Tensor::new(e.value.shape().to_vec(), data).unwrap())
            .unwrap();
    }
    params
}
