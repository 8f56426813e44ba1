use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::SentenceRecord;
use crate::dnc::StepOptions;
use crate::error::{Error, Result};
use crate::featurize::{label_token, TokenLabel};
use crate::seq2seq::{
    format_input, output_words, Seq2Seq, Seq2SeqConfig, Vocab, EOS, NORM_CLOSE, NORM_OPEN,
};
use crate::tensor::{clip_grad_norm, Adam, Parameters};

/// Context words on each side of a token sent to the translator.
pub const CONTEXT_WINDOW: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: usize,
    /// Log, checkpoint and evaluate every this many steps.
    pub eval_every: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub ablate_memory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            max_steps: 200_000,
            eval_every: 1000,
            seed: 42,
            learning_rate: 1e-4,
            clip_norm: 10.0,
            ablate_memory: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch ≥ 1 required".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("steps ≥ 1 required".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidArgument("eval-every ≥ 1 required".into()));
        }
        if [self.learning_rate, self.clip_norm]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::InvalidArgument(
                "learning rate and clip norm must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            ablate_reads: self.ablate_memory,
            force_write_gate: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean training loss over the steps since the previous entry; at step 0
    /// the loss of the first batch before any update.
    pub loss: f64,
    pub perplexity: f64,
}

impl LogEntry {
    fn new(step: usize, loss: f64) -> Self {
        LogEntry {
            step,
            loss,
            perplexity: loss.exp(),
        }
    }
}

/// A batch of `(source ids, target ids ending in EOS)`.
pub type Batch = (Vec<Vec<usize>>, Vec<Vec<usize>>);

/// What the loop should do after an evaluation callback.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Adam training with global-norm clipping. `next_batch` draws batches from
/// the loop's seeded generator; `on_eval` runs every `eval_every` steps
/// and after the last step.
pub fn train_loop<B, E>(
    model: &Seq2Seq,
    params: &mut Parameters,
    cfg: &TrainConfig,
    mut next_batch: B,
    mut on_eval: E,
) -> Result<Vec<LogEntry>>
where
    B: FnMut(&mut ChaCha8Rng) -> Batch,
    E: FnMut(usize, &Parameters, &LogEntry) -> Result<Control>,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = Adam::with_lr(cfg.learning_rate);
    let opts = cfg.step_options();
    let mut log = Vec::new();

    let (src, tgt) = next_batch(&mut rng);
    let first = LogEntry::new(0, model.loss(params, &src, &tgt, opts)?);
    log::info!(
        "step 0 loss {:.4} perplexity {:.3}",
        first.loss,
        first.perplexity
    );
    log.push(first);
    let mut pending = Some((src, tgt));

    let (mut total, mut count) = (0.0, 0);
    for step in 1..=cfg.max_steps {
        let (src, tgt) = pending.take().unwrap_or_else(|| next_batch(&mut rng));
        total += model.loss_and_grads(params, &src, &tgt, opts)?;
        count += 1;
        clip_grad_norm(params, cfg.clip_norm);
        adam.step(params)?;
        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let entry = LogEntry::new(step, total / count as f64);
            log::info!(
                "step {step} loss {:.4} perplexity {:.3}",
                entry.loss,
                entry.perplexity
            );
            let control = on_eval(step, params, &entry)?;
            log.push(entry);
            (total, count) = (0.0, 0);
            if control == Control::Stop {
                break;
            }
        }
    }
    Ok(log)
}

/// A trained translator with its vocabularies.
#[derive(Clone, Debug)]
pub struct Translator {
    pub model: Seq2Seq,
    pub params: Parameters,
    pub input_vocab: Vocab,
    pub output_vocab: Vocab,
}

/// Sibling file paths of a translator rooted at `base` (`x.mnrm` gives
/// `x.config.json`, `x.input.vocab`, `x.output.vocab`).
pub fn translator_files(base: &Path) -> [PathBuf; 4] {
    let stem = base.with_extension("");
    let sib = |suffix: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    [
        sib(".mnrm"),
        sib(".config.json"),
        sib(".input.vocab"),
        sib(".output.vocab"),
    ]
}

impl Translator {
    pub fn save(&self, base: &Path) -> Result<Vec<PathBuf>> {
        let [weights, config, input, output] = translator_files(base);
        self.params.save(&weights, false)?;
        fs::write(&config, serde_json::to_string_pretty(self.model.config())?)?;
        self.input_vocab.save(&input)?;
        self.output_vocab.save(&output)?;
        Ok(vec![weights, config, input, output])
    }

    pub fn load(base: &Path) -> Result<Self> {
        let [weights, config, input, output] = translator_files(base);
        let cfg: Seq2SeqConfig = serde_json::from_str(&fs::read_to_string(&config)?)?;
        let model = Seq2Seq::new(cfg)?;
        let input_vocab = Vocab::load(&input)?;
        let output_vocab = Vocab::load(&output)?;
        if input_vocab.len() != model.config().input_vocab
            || output_vocab.len() != model.config().output_vocab
        {
            return Err(Error::Format(format!(
                "vocabulary sizes {}/{} do not match the model config",
                input_vocab.len(),
                output_vocab.len()
            )));
        }
        Ok(Translator {
            model,
            params: Parameters::load(&weights)?,
            input_vocab,
            output_vocab,
        })
    }

    /// Source ids for a formatted symbol sequence; unknown symbols map to UNK.
    pub fn encode_source(&self, symbols: &[String]) -> Vec<usize> {
        self.input_vocab.encode(symbols)
    }

    /// Space-joined output words per source; `None` where the model emitted
    /// nothing or the source exceeds the input limit.
    pub fn translate(
        &self,
        sources: &[Vec<String>],
        opts: StepOptions,
        batch: usize,
    ) -> Result<Vec<Option<String>>> {
        let limit = self.model.config().max_input_len;
        let mut out = vec![None; sources.len()];
        let usable: Vec<usize> = (0..sources.len())
            .filter(|&i| !sources[i].is_empty() && sources[i].len() <= limit)
            .collect();
        for chunk in usable.chunks(batch.max(1)) {
            let ids: Vec<Vec<usize>> = chunk
                .iter()
                .map(|&i| self.encode_source(&sources[i]))
                .collect();
            let decoded = self.model.translate(&self.params, &ids, opts)?;
            for (&i, d) in chunk.iter().zip(decoded) {
                let words = self.output_vocab.decode(&d);
                if !words.is_empty() {
                    out[i] = Some(words.join(" "));
                }
            }
        }
        Ok(out)
    }
}

/// Formatted source symbols and target words.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

/// One pair per ToBeNormalized token.
pub fn translation_pairs(records: &[SentenceRecord]) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for s in records {
        let befores = s.befores();
        for (i, t) in s.tokens.iter().enumerate() {
            if label_token(&t.before, &t.after) == TokenLabel::ToBeNormalized {
                out.push(TrainingPair {
                    source: format_input(&befores, i, CONTEXT_WINDOW),
                    target: output_words(&t.after)
                        .into_iter()
                        .map(String::from)
                        .collect(),
                });
            }
        }
    }
    out
}

/// Input vocabulary = markers then characters in first-seen order; output
/// vocabulary = words in first-seen order.
pub fn build_vocabs(pairs: &[TrainingPair]) -> (Vocab, Vocab) {
    let mut input = Vocab::from_symbols([NORM_OPEN, NORM_CLOSE]);
    let mut output = Vocab::new();
    for p in pairs {
        for s in &p.source {
            input.insert(s);
        }
        for w in &p.target {
            output.insert(w);
        }
    }
    (input, output)
}

#[derive(Clone, Debug)]
pub struct TranslatorOutcome {
    pub translator: Translator,
    pub log: Vec<LogEntry>,
    pub pairs: usize,
    /// Pairs dropped for exceeding the length limits.
    pub skipped_overlength: usize,
}

/// Trains a translator on every ToBeNormalized token of `records`.
/// `make_config` receives the input and output vocabulary sizes. When
/// `checkpoint` is set, weights are written there at every evaluation.
pub fn train_translator(
    records: &[SentenceRecord],
    make_config: impl Fn(usize, usize) -> Seq2SeqConfig,
    cfg: &TrainConfig,
    checkpoint: Option<&Path>,
) -> Result<TranslatorOutcome> {
    cfg.validate()?;
    let pairs = translation_pairs(records);
    if pairs.is_empty() {
        return Err(Error::Empty(
            "no ToBeNormalized tokens to train the translator on".into(),
        ));
    }
    let (input_vocab, output_vocab) = build_vocabs(&pairs);
    let model = Seq2Seq::new(make_config(input_vocab.len(), output_vocab.len()))?;
    let (max_in, max_out) = (model.config().max_input_len, model.config().max_output_len);
    let data: Vec<(Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .filter(|p| p.source.len() <= max_in && p.target.len() < max_out)
        .map(|p| {
            let mut tgt = output_vocab.encode(&p.target);
            tgt.push(EOS);
            (input_vocab.encode(&p.source), tgt)
        })
        .collect();
    let skipped = pairs.len() - data.len();
    if skipped > 0 {
        log::warn!("skipped {skipped} overlength training pairs");
    }
    if data.is_empty() {
        return Err(Error::Empty(
            "every training pair exceeds the length limits".into(),
        ));
    }
    log::info!(
        "{} training pairs, input vocabulary {}, output vocabulary {}",
        data.len(),
        input_vocab.len(),
        output_vocab.len()
    );

    let mut params = Parameters::new();
    model.init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let batch = cfg.batch_size.min(data.len());
    let next_batch = |rng: &mut ChaCha8Rng| {
        let mut src = Vec::with_capacity(batch);
        let mut tgt = Vec::with_capacity(batch);
        for _ in 0..batch {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(rng);
                cursor = 0;
            }
            let (s, t) = &data[order[cursor]];
            cursor += 1;
            src.push(s.clone());
            tgt.push(t.clone());
        }
        (src, tgt)
    };
    let on_eval = |_step: usize, p: &Parameters, _e: &LogEntry| {
        if let Some(path) = checkpoint {
            p.save(path, true)?;
        }
        Ok(Control::Continue)
    };
    let log = train_loop(&model, &mut params, cfg, next_batch, on_eval)?;
    Ok(TranslatorOutcome {
        translator: Translator {
            model,
            params,
            input_vocab,
            output_vocab,
        },
        log,
        pairs: pairs.len(),
        skipped_overlength: skipped,
    })
}
