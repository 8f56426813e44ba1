//! Finite-difference checks of the fused memory ops and of whole unrolled
//! models.

use memnorm::dnc::{ops, Dnc, StepOptions};
use memnorm::seq2seq::{Seq2Seq, EOS};
use memnorm::tensor::gradcheck::{self, GradCheckOptions, GradCheckReport};
use memnorm::tensor::{BoundParams, Tensor};

use super::fixtures::{
    dnc_param_tensors, dnc_vars, random_seq2seq_params, reshape, tiny_dnc, tiny_seq2seq, uniform,
    weights,
};
use super::{rng, weighted_sum, PrimitiveCase};

/// One case per fused memory op.
pub fn fused_cases(seed: u64) -> Vec<PrimitiveCase> {
    let mut r = rng(seed);
    let (b, n, h, w) = (2, 5, 3, 3);
    let mut link = uniform(&mut r, &[b, n, n], 0.0, 0.3);
    for bb in 0..b {
        for i in 0..n {
            link.data_mut()[bb * n * n + i * n + i] = 0.0;
        }
    }
    vec![
        PrimitiveCase {
            name: "usage_update",
            inputs: vec![
                uniform(&mut r, &[b, n], 0.0, 1.0),
                reshape(weights(&mut r, b, n, 0.8), &[b, n]),
                reshape(weights(&mut r, b * h, n, 0.9), &[b, h, n]),
                uniform(&mut r, &[b, h], 0.0, 1.0),
            ],
            loss: Box::new(move |g, v| {
                let out = ops::usage_update(g, v[0], v[1], v[2], v[3])?;
                weighted_sum(g, out, seed)
            }),
        },
        PrimitiveCase {
            name: "allocation",
            // distinct usages keep the sort fixed under perturbation
            inputs: vec![uniform(&mut r, &[3, 6], 0.0, 1.0)],
            loss: Box::new(move |g, v| {
                let out = ops::allocation(g, v[0])?;
                weighted_sum(g, out, seed)
            }),
        },
        PrimitiveCase {
            name: "link_update",
            inputs: vec![
                link,
                reshape(weights(&mut r, b, n, 0.7), &[b, n]),
                reshape(weights(&mut r, b, n, 0.6), &[b, n]),
            ],
            loss: Box::new(move |g, v| {
                let out = ops::link_update(g, v[0], v[1], v[2])?;
                weighted_sum(g, out, seed)
            }),
        },
        PrimitiveCase {
            name: "memory_write",
            inputs: vec![
                uniform(&mut r, &[b, n, w], -1.0, 1.0),
                reshape(weights(&mut r, b, n, 0.9), &[b, n]),
                uniform(&mut r, &[b, w], 0.0, 1.0),
                uniform(&mut r, &[b, w], -1.0, 1.0),
            ],
            loss: Box::new(move |g, v| {
                let out = ops::memory_write(g, v[0], v[1], v[2], v[3])?;
                weighted_sum(g, out, seed)
            }),
        },
    ]
}

pub fn check_case(case: &PrimitiveCase) -> GradCheckReport {
    gradcheck::check(&case.inputs, GradCheckOptions::default(), |g, v| {
        (case.loss)(g, v)
    })
    .unwrap()
}

/// Three DNC steps on a batch of two, loss over every output and the final
/// read vectors.
pub fn dnc_unrolled(seed: u64) -> GradCheckReport {
    let dnc = Dnc::new(tiny_dnc()).unwrap();
    let mut r = rng(seed);
    let (batch, steps) = (2, 3);
    let mut inputs = dnc_param_tensors(&dnc, seed);
    for t in inputs.iter_mut() {
        // larger biases so gates sit away from 0.5 and reads differ by mode
        t.data_mut().iter_mut().for_each(|x| *x *= 1.5);
    }
    let n_params = inputs.len();
    for _ in 0..steps {
        inputs.push(uniform(&mut r, &[batch, 2], -1.0, 1.0));
    }
    gradcheck::check(&inputs, GradCheckOptions::default(), |g, v| {
        let p = dnc_vars(&v[..n_params]);
        let mut state = dnc.initial_state(g, batch);
        let mut total = None;
        for (t, &x) in v[n_params..].iter().enumerate() {
            let (y, next) = dnc.step(g, &p, &state, x, StepOptions::default())?;
            state = next;
            let term = weighted_sum(g, y, t as u64)?;
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let mem = weighted_sum(g, state.read_vectors, 100)?;
        g.add(total.unwrap(), mem)
    })
    .unwrap()
}

/// Two steps with zeroed controller reads and a forced write gate.
pub fn dnc_ablated(seed: u64) -> GradCheckReport {
    let dnc = Dnc::new(tiny_dnc()).unwrap();
    let mut inputs = dnc_param_tensors(&dnc, seed);
    let n_params = inputs.len();
    inputs.push(uniform(&mut rng(seed), &[1, 2], -1.0, 1.0));
    let opts = StepOptions {
        ablate_reads: true,
        force_write_gate: Some(0.7),
    };
    gradcheck::check(&inputs, GradCheckOptions::default(), |g, v| {
        let p = dnc_vars(&v[..n_params]);
        let s0 = dnc.initial_state(g, 1);
        let (_, s1) = dnc.step(g, &p, &s0, v[n_params], opts)?;
        let (y, _) = dnc.step(g, &p, &s1, v[n_params], opts)?;
        weighted_sum(g, y, 1)
    })
    .unwrap()
}

/// Teacher-forced loss of the tiny translator on two pairs of different
/// lengths, up to 40 entries per parameter.
pub fn encoder_decoder(seed: u64) -> GradCheckReport {
    let m = Seq2Seq::new(tiny_seq2seq()).unwrap();
    let params = random_seq2seq_params(&m, seed, 1.5);
    let paths: Vec<String> = params.paths().map(String::from).collect();
    let inputs: Vec<Tensor> = params.iter().map(|(_, e)| e.value.clone()).collect();
    let sources = vec![vec![4, 5, 6], vec![6, 4]];
    let targets = vec![vec![5, 4, EOS], vec![7, EOS]];
    let opts = GradCheckOptions {
        max_entries_per_input: Some(40),
        ..Default::default()
    };
    gradcheck::check(&inputs, opts, |g, vs| {
        let bound = BoundParams::from_vars(paths.iter().cloned().zip(vs.iter().copied()));
        let p = m.bind(&bound)?;
        let enc = m.encode(g, &p, &sources, StepOptions::default())?;
        m.decode_train(g, &p, &enc, &targets, StepOptions::default())
    })
    .unwrap()
}
