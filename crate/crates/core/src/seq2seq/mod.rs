//! Attention encoder-decoder whose recurrent unit is one shared DNC.
//!
//! The encoder consumes character embeddings; the decoder consumes the
//! previous output word's embedding concatenated with an attention context
//! over the encoder outputs. Because one DNC serves both phases, encoder steps
//! pad their input with a zero context so both phases have the same width.

mod format;
mod vocab;

pub use format::{format_input, output_words, target_of, NORM_CLOSE, NORM_OPEN};
pub use vocab::{Vocab, EOS, GO, PAD, RESERVED, UNK};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dnc::{glorot, Dnc, DncConfig, DncStateVars, DncVars, StepOptions};
use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Graph, Parameters, Tensor, Var};

/// Added to attention scores of padding positions.
const MASKED_SCORE: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seq2SeqConfig {
    pub input_vocab: usize,
    pub output_vocab: usize,
    pub embedding_size: usize,
    /// Hidden width of the additive attention scorer.
    pub attention_units: usize,
    /// `input_size` must be `embedding_size + output_size`; `output_size` is the
    /// annotation width.
    pub dnc: DncConfig,
    pub max_input_len: usize,
    pub max_output_len: usize,
}

pub const MAX_INPUT_LEN: usize = 220;
pub const MAX_OUTPUT_LEN: usize = 60;

impl Seq2SeqConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        input_vocab: usize,
        output_vocab: usize,
        embedding_size: usize,
        attention_units: usize,
        memory_size: usize,
        word_size: usize,
        read_heads: usize,
        hidden_size: usize,
        annotation_size: usize,
    ) -> Self {
        Seq2SeqConfig {
            input_vocab,
            output_vocab,
            embedding_size,
            attention_units,
            dnc: DncConfig {
                memory_size,
                word_size,
                read_heads,
                hidden_size,
                input_size: embedding_size + annotation_size,
                output_size: annotation_size,
            },
            max_input_len: MAX_INPUT_LEN,
            max_output_len: MAX_OUTPUT_LEN,
        }
    }

    /// Desk-scale sizes: 32x16 memory, 2 read heads, 128 hidden, embedding 16.
    pub fn small(input_vocab: usize, output_vocab: usize) -> Self {
        Self::new(input_vocab, output_vocab, 16, 64, 32, 16, 2, 128, 64)
    }

    /// 256x64 memory, 5 read heads, 1024 hidden, embedding 32.
    pub fn paper(input_vocab: usize, output_vocab: usize) -> Self {
        Self::new(input_vocab, output_vocab, 32, 256, 256, 64, 5, 1024, 256)
    }

    pub fn annotation_size(&self) -> usize {
        self.dnc.output_size
    }

    pub fn validate(&self) -> Result<()> {
        self.dnc.validate()?;
        for (name, v) in [
            ("input_vocab", self.input_vocab),
            ("output_vocab", self.output_vocab),
        ] {
            if v < RESERVED.len() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be at least {} (reserved ids), got {v}",
                    RESERVED.len()
                )));
            }
        }
        for (name, v) in [
            ("embedding_size", self.embedding_size),
            ("attention_units", self.attention_units),
            ("max_input_len", self.max_input_len),
            ("max_output_len", self.max_output_len),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        if self.dnc.input_size != self.embedding_size + self.dnc.output_size {
            return Err(Error::InvalidArgument(format!(
                "dnc input size {} must equal embedding size {} plus annotation size {}",
                self.dnc.input_size, self.embedding_size, self.dnc.output_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Seq2SeqVars {
    pub dnc: DncVars,
    pub input_embedding: Var,
    pub output_embedding: Var,
    pub attn_query: Var,
    pub attn_keys: Var,
    pub attn_score: Var,
    pub init_query: Var,
    pub out_w: Var,
    pub out_b: Var,
}

/// Encoder result for a batch of right-padded sources.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// One `[B, n]` output per source position.
    pub outputs: Vec<Var>,
    pub lengths: Vec<usize>,
    /// State after each row's last real step.
    pub state: DncStateVars,
}

/// Attention memory derived from [`Encoded`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionKeys {
    /// `[B, T, n]`
    pub annotations: Var,
    /// `U_a h`, `[B, T, A]`
    pub projected: Var,
    /// Zero at real positions, a large negative number at padding, `[B, T]`.
    pub bias: Var,
    pub batch: usize,
    pub len: usize,
}

/// Decoder carry between steps.
#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub dnc: DncStateVars,
    /// Previous DNC output, or the learned initial query before the first step.
    pub query: Var,
}

#[derive(Clone, Debug)]
pub struct Seq2Seq {
    config: Seq2SeqConfig,
    dnc: Dnc,
}

impl Seq2Seq {
    pub fn new(config: Seq2SeqConfig) -> Result<Self> {
        config.validate()?;
        Ok(Seq2Seq {
            dnc: Dnc::new(config.dnc)?,
            config,
        })
    }

    pub fn config(&self) -> &Seq2SeqConfig {
        &self.config
    }

    pub fn dnc(&self) -> &Dnc {
        &self.dnc
    }

    pub fn init_params<R: Rng>(&self, params: &mut Parameters, rng: &mut R) -> Result<()> {
        let c = &self.config;
        let (n, a, e) = (c.annotation_size(), c.attention_units, c.embedding_size);
        self.dnc.init_params(params, rng)?;
        params.insert("emb/input", glorot(rng, c.input_vocab, e))?;
        params.insert("emb/output", glorot(rng, c.output_vocab, e))?;
        params.insert("attn/query", glorot(rng, n, a))?;
        params.insert("attn/keys", glorot(rng, n, a))?;
        params.insert("attn/score", glorot(rng, a, 1))?;
        params.insert("attn/init_query", Tensor::zeros(&[n]))?;
        params.insert("out/w", glorot(rng, n, c.output_vocab))?;
        params.insert("out/b", Tensor::zeros(&[c.output_vocab]))?;
        Ok(())
    }

    /// Every parameter zero.
    pub fn zero_params(&self, params: &mut Parameters) -> Result<()> {
        let mut tmp = Parameters::new();
        self.init_params(&mut tmp, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        for (path, e) in tmp.iter() {
            params.insert(path, Tensor::zeros(e.value.shape()))?;
        }
        Ok(())
    }

    pub fn bind(&self, bound: &BoundParams) -> Result<Seq2SeqVars> {
        Ok(Seq2SeqVars {
            dnc: self.dnc.bind(bound)?,
            input_embedding: bound.get("emb/input")?,
            output_embedding: bound.get("emb/output")?,
            attn_query: bound.get("attn/query")?,
            attn_keys: bound.get("attn/keys")?,
            attn_score: bound.get("attn/score")?,
            init_query: bound.get("attn/init_query")?,
            out_w: bound.get("out/w")?,
            out_b: bound.get("out/b")?,
        })
    }

    fn check_ids(ids: &[usize], size: usize, limit: usize) -> Result<()> {
        if ids.len() > limit {
            return Err(Error::TooLong {
                len: ids.len(),
                limit,
            });
        }
        match ids.iter().find(|&&id| id >= size) {
            Some(&id) => Err(Error::IdOutOfRange { id, size }),
            None => Ok(()),
        }
    }

    /// Runs the encoder over right-padded `sources`.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        sources: &[Vec<usize>],
        opts: StepOptions,
    ) -> Result<Encoded> {
        let c = &self.config;
        for s in sources {
            Self::check_ids(s, c.input_vocab, c.max_input_len)?;
        }
        let batch = sources.len();
        let len = sources.iter().map(Vec::len).max().unwrap_or(0);
        let mut state = self.dnc.initial_state(g, batch);
        let pad_context = g.zeros(&[batch, c.annotation_size()]);
        let mut outputs = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = sources
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD))
                .collect();
            let emb = g.embedding(p.input_embedding, ids)?;
            let x = g.concat(&[emb, pad_context], 1)?;
            let (y, next) = self.dnc.step(g, &p.dnc, &state, x, opts)?;
            let live: Vec<bool> = sources.iter().map(|s| t < s.len()).collect();
            state = if live.iter().all(|&l| l) {
                next
            } else {
                DncStateVars::select(g, &live, &next, &state)?
            };
            outputs.push(y);
        }
        Ok(Encoded {
            outputs,
            lengths: sources.iter().map(Vec::len).collect(),
            state,
        })
    }

    /// Stacks annotations and precomputes their key projection.
    pub fn attention_keys(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        enc: &Encoded,
    ) -> Result<AttentionKeys> {
        if enc.outputs.is_empty() || enc.lengths.contains(&0) {
            return Err(Error::Empty(
                "attention needs at least one annotation per sequence".into(),
            ));
        }
        let (batch, len, n) = (
            enc.lengths.len(),
            enc.outputs.len(),
            self.config.annotation_size(),
        );
        let flat = g.concat(&enc.outputs, 1)?;
        let annotations = g.reshape(flat, &[batch, len, n])?;
        let projected = g.matmul(annotations, p.attn_keys)?;
        let mut bias = vec![0.0; batch * len];
        for (b, &l) in enc.lengths.iter().enumerate() {
            bias[b * len + l..(b + 1) * len]
                .iter_mut()
                .for_each(|x| *x = MASKED_SCORE);
        }
        let bias = g.constant(Tensor::new(vec![batch, len], bias)?);
        Ok(AttentionKeys {
            annotations,
            projected,
            bias,
            batch,
            len,
        })
    }

    /// `c = Σ_i α_i h_i` with `α = softmax_i(v_aᵀ tanh(W_a q + U_a h_i))`.
    /// Returns `([B, n] context, [B, T] weights)`.
    pub fn attention_context(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        keys: &AttentionKeys,
        query: Var,
    ) -> Result<(Var, Var)> {
        let (b, t, a) = (keys.batch, keys.len, self.config.attention_units);
        let q = g.matmul(query, p.attn_query)?;
        let q = g.reshape(q, &[b, 1, a])?;
        let hidden = g.add(keys.projected, q)?;
        let hidden = g.tanh(hidden);
        let scores = g.matmul(hidden, p.attn_score)?;
        let scores = g.reshape(scores, &[b, t])?;
        let scores = g.add(scores, keys.bias)?;
        let alpha = g.softmax(scores)?;
        let alpha3 = g.reshape(alpha, &[b, 1, t])?;
        let ctx = g.matmul(alpha3, keys.annotations)?;
        let ctx = g.reshape(ctx, &[b, self.config.annotation_size()])?;
        Ok((ctx, alpha))
    }

    pub fn decoder_start(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        enc: &Encoded,
    ) -> Result<DecoderState> {
        let zeros = g.zeros(&[enc.lengths.len(), self.config.annotation_size()]);
        let query = g.add(zeros, p.init_query)?;
        Ok(DecoderState {
            dnc: enc.state,
            query,
        })
    }

    /// One decoder step consuming `prev` ids; returns `[B, K_y]` logits.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        keys: &AttentionKeys,
        state: &DecoderState,
        prev: Vec<usize>,
        opts: StepOptions,
    ) -> Result<(Var, DecoderState)> {
        let (ctx, _) = self.attention_context(g, p, keys, state.query)?;
        let emb = g.embedding(p.output_embedding, prev)?;
        let x = g.concat(&[emb, ctx], 1)?;
        let (y, dnc) = self.dnc.step(g, &p.dnc, &state.dnc, x, opts)?;
        let logits = g.matmul(y, p.out_w)?;
        let logits = g.add(logits, p.out_b)?;
        Ok((logits, DecoderState { dnc, query: y }))
    }

    /// Teacher-forced mean cross-entropy over every real target position.
    /// Each target must end with [`EOS`].
    pub fn decode_train(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        enc: &Encoded,
        targets: &[Vec<usize>],
        opts: StepOptions,
    ) -> Result<Var> {
        let c = &self.config;
        if targets.len() != enc.lengths.len() {
            return Err(Error::InvalidArgument(format!(
                "{} targets for {} encoded sources",
                targets.len(),
                enc.lengths.len()
            )));
        }
        for t in targets {
            Self::check_ids(t, c.output_vocab, c.max_output_len)?;
            if t.last() != Some(&EOS) {
                return Err(Error::InvalidArgument(
                    "target sequence must end with <eos>".into(),
                ));
            }
        }
        let keys = self.attention_keys(g, p, enc)?;
        let mut state = self.decoder_start(g, p, enc)?;
        let len = targets.iter().map(Vec::len).max().unwrap_or(0);
        let mut logits = Vec::with_capacity(len);
        let mut gold = Vec::with_capacity(len * targets.len());
        for t in 0..len {
            let prev = targets
                .iter()
                .map(|y| {
                    if t == 0 {
                        GO
                    } else {
                        y.get(t - 1).copied().unwrap_or(PAD)
                    }
                })
                .collect();
            let (l, next) = self.decode_step(g, p, &keys, &state, prev, opts)?;
            logits.push(l);
            gold.extend(targets.iter().map(|y| y.get(t).copied()));
            state = next;
        }
        let all = g.concat(&logits, 0)?;
        g.softmax_cross_entropy(all, gold)
    }

    /// Argmax decoding, lowest id on ties; each sequence stops at [`EOS`]
    /// (not included) or after `max_output_len` tokens.
    pub fn decode_greedy(
        &self,
        g: &mut Graph,
        p: &Seq2SeqVars,
        enc: &Encoded,
        opts: StepOptions,
    ) -> Result<Vec<Vec<usize>>> {
        let keys = self.attention_keys(g, p, enc)?;
        let mut state = self.decoder_start(g, p, enc)?;
        let batch = enc.lengths.len();
        let k = self.config.output_vocab;
        let mut out = vec![Vec::new(); batch];
        let mut done = vec![false; batch];
        let mut prev = vec![GO; batch];
        for _ in 0..self.config.max_output_len {
            let (logits, next) = self.decode_step(g, p, &keys, &state, prev.clone(), opts)?;
            let values = g.value(logits);
            for b in 0..batch {
                let row = &values[b * k..(b + 1) * k];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                prev[b] = best;
                if !done[b] {
                    if best == EOS {
                        done[b] = true;
                    } else {
                        out[b].push(best);
                    }
                }
            }
            state = next;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }

    /// Greedy translation of a batch of sources with frozen parameters.
    pub fn translate(
        &self,
        params: &Parameters,
        sources: &[Vec<usize>],
        opts: StepOptions,
    ) -> Result<Vec<Vec<usize>>> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let p = self.bind(&bound)?;
        let enc = self.encode(&mut g, &p, sources, opts)?;
        self.decode_greedy(&mut g, &p, &enc, opts)
    }

    /// Teacher-forced loss with gradients accumulated into `params`.
    pub fn loss_and_grads(
        &self,
        params: &mut Parameters,
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
        opts: StepOptions,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let p = self.bind(&bound)?;
        let enc = self.encode(&mut g, &p, sources, opts)?;
        let loss = self.decode_train(&mut g, &p, &enc, targets, opts)?;
        g.backward(loss)?;
        params.accumulate_grads(&g, &bound);
        Ok(g.value(loss)[0])
    }

    /// Teacher-forced loss without gradients.
    pub fn loss(
        &self,
        params: &Parameters,
        sources: &[Vec<usize>],
        targets: &[Vec<usize>],
        opts: StepOptions,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let bound = params.bind_frozen(&mut g);
        let p = self.bind(&bound)?;
        let enc = self.encode(&mut g, &p, sources, opts)?;
        let loss = self.decode_train(&mut g, &p, &enc, targets, opts)?;
        Ok(g.value(loss)[0])
    }
}
