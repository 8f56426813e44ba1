use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{train_loop, Control, LogEntry, TrainConfig};
use crate::dnc::StepOptions;
use crate::error::{Error, Result};
use crate::seq2seq::{Seq2Seq, Seq2SeqConfig, EOS, RESERVED};
use crate::tensor::Parameters;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyTaskConfig {
    /// Distinct content symbols.
    pub symbols: usize,
    /// Training lengths are uniform in `1..=max_len`; held-out sequences
    /// all have length `max_len`.
    pub max_len: usize,
    pub train: TrainConfig,
    pub validation_size: usize,
    pub test_size: usize,
    /// Stop once validation accuracy reaches this; otherwise train for the
    /// whole step budget.
    pub stop_accuracy: Option<f64>,
    /// Sequences per length in the breakdown.
    pub per_length_size: usize,
    /// Also score the kept model with memory reads removed.
    pub ablate_memory: bool,
}

impl Default for CopyTaskConfig {
    fn default() -> Self {
        CopyTaskConfig {
            symbols: 8,
            max_len: 8,
            train: TrainConfig {
                batch_size: 16,
                max_steps: 20_000,
                eval_every: 250,
                seed: 42,
                learning_rate: 1e-3,
                clip_norm: 10.0,
                ablate_memory: false,
            },
            validation_size: 200,
            test_size: 1000,
            stop_accuracy: None,
            per_length_size: 100,
            ablate_memory: true,
        }
    }
}

impl CopyTaskConfig {
    pub fn model_config(&self) -> Seq2SeqConfig {
        let vocab = RESERVED.len() + self.symbols;
        Seq2SeqConfig::small(vocab, vocab)
    }

    /// Probability of guessing a held-out sequence.
    pub fn chance(&self) -> f64 {
        (self.symbols as f64).powi(-(self.max_len as i32))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthAccuracy {
    pub len: usize,
    pub total: usize,
    pub full: usize,
    pub ablated: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyTaskReport {
    /// Held-out accuracy of the freshly initialised model.
    pub untrained_accuracy: f64,
    pub steps_trained: usize,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub validation_accuracy: f64,
    /// Exact-match accuracy on held-out length-`max_len` sequences.
    pub accuracy: f64,
    /// Same, with memory reads removed from the controller input.
    pub ablated_accuracy: Option<f64>,
    pub chance: f64,
    pub per_length: Vec<LengthAccuracy>,
    pub log: Vec<LogEntry>,
}

fn random_sequence(rng: &mut impl Rng, len: usize, symbols: usize) -> Vec<usize> {
    (0..len)
        .map(|_| RESERVED.len() + rng.gen_range(0..symbols))
        .collect()
}

/// Distinct sequences of length `len`, none in `exclude`.
fn held_out(
    rng: &mut impl Rng,
    n: usize,
    len: usize,
    symbols: usize,
    exclude: &mut HashSet<Vec<usize>>,
) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = random_sequence(rng, len, symbols);
        if exclude.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Fraction of `sources` reproduced exactly.
pub fn copy_accuracy(
    model: &Seq2Seq,
    params: &Parameters,
    sources: &[Vec<usize>],
    opts: StepOptions,
) -> Result<f64> {
    Ok(copy_hits(model, params, sources, opts)? as f64 / sources.len().max(1) as f64)
}

fn copy_hits(
    model: &Seq2Seq,
    params: &Parameters,
    sources: &[Vec<usize>],
    opts: StepOptions,
) -> Result<usize> {
    let mut hits = 0;
    for chunk in sources.chunks(100) {
        let out = model.translate(params, chunk, opts)?;
        hits += out.iter().zip(chunk).filter(|(o, s)| o == s).count();
    }
    Ok(hits)
}

/// Trains on random sequences, keeps the parameters with the best
/// validation accuracy (latest on ties) and scores them with and without
/// memory reads.
pub fn run_copy_task(cfg: &CopyTaskConfig) -> Result<CopyTaskReport> {
    if cfg.symbols == 0 || cfg.max_len == 0 || cfg.validation_size == 0 || cfg.test_size == 0 {
        return Err(Error::InvalidArgument(
            "copy task sizes must be positive".into(),
        ));
    }
    let distinct = (cfg.symbols as f64).powi(cfg.max_len as i32);
    if ((cfg.validation_size + cfg.test_size) as f64) > distinct {
        return Err(Error::InvalidArgument(format!(
            "{} held-out sequences requested but only {distinct} distinct ones exist",
            cfg.validation_size + cfg.test_size
        )));
    }
    let model = Seq2Seq::new(cfg.model_config())?;
    let mut params = Parameters::new();
    model.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?;

    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x00c0_ffee);
    let mut excluded = HashSet::new();
    let validation = held_out(
        &mut data_rng,
        cfg.validation_size,
        cfg.max_len,
        cfg.symbols,
        &mut excluded,
    );
    let test = held_out(
        &mut data_rng,
        cfg.test_size,
        cfg.max_len,
        cfg.symbols,
        &mut excluded,
    );
    let per_length: Vec<Vec<Vec<usize>>> = (1..=cfg.max_len)
        .map(|len| {
            (0..cfg.per_length_size)
                .map(|_| random_sequence(&mut data_rng, len, cfg.symbols))
                .collect()
        })
        .collect();

    let full = StepOptions::default();
    let untrained_accuracy = copy_accuracy(&model, &params, &test, full)?;
    let ablated = StepOptions {
        ablate_reads: true,
        force_write_gate: None,
    };
    let batch = cfg.train.batch_size;
    let next_batch = |rng: &mut ChaCha8Rng| {
        let mut src = Vec::with_capacity(batch);
        while src.len() < batch {
            let len = rng.gen_range(1..=cfg.max_len);
            let s = random_sequence(rng, len, cfg.symbols);
            if !excluded.contains(&s) {
                src.push(s);
            }
        }
        let tgt = src
            .iter()
            .map(|s| {
                let mut t = s.clone();
                t.push(EOS);
                t
            })
            .collect();
        (src, tgt)
    };
    let mut best: Option<(f64, usize, Parameters)> = None;
    let mut steps_trained = 0;
    let on_eval = |step: usize, p: &Parameters, _e: &LogEntry| {
        steps_trained = step;
        let acc = copy_accuracy(&model, p, &validation, full)?;
        log::info!("step {step} validation accuracy {acc:.4}");
        if best.as_ref().is_none_or(|(b, _, _)| acc >= *b) {
            best = Some((acc, step, p.clone()));
        }
        Ok(if cfg.stop_accuracy.is_some_and(|s| acc >= s) {
            Control::Stop
        } else {
            Control::Continue
        })
    };
    let log = train_loop(&model, &mut params, &cfg.train, next_batch, on_eval)?;
    let (validation_accuracy, best_step, params) = best.expect("at least one evaluation runs");

    let mut breakdown = Vec::with_capacity(per_length.len());
    for (i, seqs) in per_length.iter().enumerate() {
        breakdown.push(LengthAccuracy {
            len: i + 1,
            total: seqs.len(),
            full: copy_hits(&model, &params, seqs, full)?,
            ablated: cfg
                .ablate_memory
                .then(|| copy_hits(&model, &params, seqs, ablated))
                .transpose()?,
        });
    }
    Ok(CopyTaskReport {
        untrained_accuracy,
        steps_trained,
        best_step,
        validation_accuracy,
        accuracy: copy_accuracy(&model, &params, &test, full)?,
        ablated_accuracy: cfg
            .ablate_memory
            .then(|| copy_accuracy(&model, &params, &test, ablated))
            .transpose()?,
        chance: cfg.chance(),
        per_length: breakdown,
        log,
    })
}
