use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classifier::classify_sentence;
use super::train::{Translator, CONTEXT_WINDOW};
use crate::corpus::SentenceRecord;
use crate::dnc::StepOptions;
use crate::error::{Error, Result};
use crate::featurize::{label_token, TokenLabel};
use crate::gbdt::TreeEnsemble;
use crate::seq2seq::format_input;

pub const CLASSIFIER_FILE: &str = "classifier.gbdt";
pub const TRANSLATOR_FILE: &str = "translator.mnrm";
/// Sources translated per batch at inference time.
pub const INFERENCE_BATCH: usize = 32;

/// The classifier and translator of a models directory.
#[derive(Clone, Debug)]
pub struct Models {
    pub classifier: TreeEnsemble,
    pub translator: Translator,
}

impl Models {
    pub fn classifier_path(dir: &Path) -> PathBuf {
        dir.join(CLASSIFIER_FILE)
    }

    pub fn translator_path(dir: &Path) -> PathBuf {
        dir.join(TRANSLATOR_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let classifier = Self::classifier_path(dir);
        let translator = Self::translator_path(dir);
        let missing: Vec<PathBuf> = [&classifier, &translator]
            .into_iter()
            .filter(|p| !p.is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        Ok(Models {
            classifier: TreeEnsemble::load(&classifier)?,
            translator: Translator::load(&translator)?,
        })
    }
}

/// Output of one token through the two-stage system.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenOutput {
    pub predicted_label: TokenLabel,
    pub output: String,
    /// The translator produced nothing and the input was copied.
    pub fallback: bool,
}

/// Runs classifier then translator over whole sentences. Tokens the
/// translator cannot handle are copied unchanged and flagged as fallbacks.
pub fn normalize_sentences<S: AsRef<str>>(
    models: &Models,
    sentences: &[Vec<S>],
    opts: StepOptions,
) -> Result<Vec<Vec<TokenOutput>>> {
    let mut outputs = Vec::with_capacity(sentences.len());
    let mut queue: Vec<(usize, usize)> = Vec::new();
    let mut sources = Vec::new();
    for (si, tokens) in sentences.iter().enumerate() {
        let labels = classify_sentence(&models.classifier, tokens)?;
        let mut row = Vec::with_capacity(tokens.len());
        for (ti, label) in labels.into_iter().enumerate() {
            if label == TokenLabel::ToBeNormalized {
                queue.push((si, ti));
                sources.push(format_input(tokens, ti, CONTEXT_WINDOW));
            }
            row.push(TokenOutput {
                predicted_label: label,
                output: tokens[ti].as_ref().to_string(),
                fallback: false,
            });
        }
        outputs.push(row);
    }
    let translated = models
        .translator
        .translate(&sources, opts, INFERENCE_BATCH)?;
    for ((si, ti), t) in queue.into_iter().zip(translated) {
        let slot = &mut outputs[si][ti];
        match t {
            Some(text) => slot.output = text,
            None => slot.fallback = true,
        }
    }
    let fallbacks = outputs.iter().flatten().filter(|t| t.fallback).count();
    if fallbacks > 0 {
        log::warn!("{fallbacks} tokens fell back to their unnormalized form");
    }
    Ok(outputs)
}

/// Reference output of a token: `after`, except that `<self>` and `sil`
/// stand for the token itself.
pub fn reference_output<'a>(before: &'a str, after: &'a str) -> &'a str {
    if after == "<self>" || after == "sil" {
        before
    } else {
        after
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub total: usize,
    pub correct: usize,
}

impl ClassCounts {
    /// `correct / total`; zero for an empty class.
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Confusion counts of the first stage against reference labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfusion {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub class: String,
    pub before: String,
    pub window: String,
    pub predicted: String,
    pub expected: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ablate_memory: bool,
    pub overall: ClassCounts,
    pub overall_accuracy: f64,
    pub classes: BTreeMap<String, ClassCounts>,
    pub classifier: StageConfusion,
    pub fallbacks: usize,
    pub mismatches: Vec<Mismatch>,
}

impl EvaluationReport {
    /// Tallies predictions against the reference outputs of `records`.
    pub fn from_outputs(
        records: &[SentenceRecord],
        outputs: &[Vec<TokenOutput>],
        ablate_memory: bool,
    ) -> Result<Self> {
        if records.len() != outputs.len() {
            return Err(Error::InvalidArgument(
                "one output row per sentence required".into(),
            ));
        }
        let mut report = EvaluationReport {
            ablate_memory,
            ..Default::default()
        };
        for (s, out) in records.iter().zip(outputs) {
            if s.tokens.len() != out.len() {
                return Err(Error::InvalidArgument(
                    "one output per token required".into(),
                ));
            }
            let befores = s.befores();
            for (i, (t, o)) in s.tokens.iter().zip(out).enumerate() {
                let expected = reference_output(&t.before, &t.after);
                let ok = o.output == expected;
                let c = report.classes.entry(t.class.clone()).or_default();
                c.total += 1;
                c.correct += usize::from(ok);
                report.overall.total += 1;
                report.overall.correct += usize::from(ok);
                report.fallbacks += usize::from(o.fallback);
                let truth = label_token(&t.before, &t.after) == TokenLabel::ToBeNormalized;
                let said = o.predicted_label == TokenLabel::ToBeNormalized;
                let cm = &mut report.classifier;
                match (said, truth) {
                    (true, true) => cm.true_positive += 1,
                    (true, false) => cm.false_positive += 1,
                    (false, false) => cm.true_negative += 1,
                    (false, true) => cm.false_negative += 1,
                }
                if !ok {
                    report.mismatches.push(Mismatch {
                        class: t.class.clone(),
                        before: t.before.clone(),
                        window: format_input(&befores, i, CONTEXT_WINDOW).concat(),
                        predicted: o.output.clone(),
                        expected: expected.to_string(),
                    });
                }
            }
        }
        report.overall_accuracy = report.overall.accuracy();
        Ok(report)
    }

    /// Classes ordered by descending count, then name.
    pub fn ranked_classes(&self) -> Vec<(&str, &ClassCounts)> {
        let mut v: Vec<(&str, &ClassCounts)> =
            self.classes.iter().map(|(k, c)| (k.as_str(), c)).collect();
        v.sort_by(|a, b| b.1.total.cmp(&a.1.total).then(a.0.cmp(b.0)));
        v
    }

    /// Fixed-width table with the ALL row first.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>10} {:>10} {:>9}",
            "class", "count", "correct", "accuracy"
        );
        let mut row = |name: &str, c: &ClassCounts| {
            let _ = writeln!(
                out,
                "{:<14} {:>10} {:>10} {:>9.4}",
                name,
                c.total,
                c.correct,
                c.accuracy()
            );
        };
        row("ALL", &self.overall);
        for (name, c) in self.ranked_classes() {
            row(name, c);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `class, before, window, predicted, expected` rows with a header.
    pub fn write_mismatches<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Necessary)
            .from_writer(out);
        w.write_record(["class", "before", "window", "predicted", "expected"])?;
        for m in &self.mismatches {
            w.write_record([&m.class, &m.before, &m.window, &m.predicted, &m.expected])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Normalizes every sentence of `records` and scores the result.
pub fn evaluate(
    models: &Models,
    records: &[SentenceRecord],
    ablate_memory: bool,
) -> Result<EvaluationReport> {
    let opts = StepOptions {
        ablate_reads: ablate_memory,
        force_write_gate: None,
    };
    let sentences: Vec<Vec<&str>> = records.iter().map(|s| s.befores()).collect();
    let outputs = normalize_sentences(models, &sentences, opts)?;
    EvaluationReport::from_outputs(records, &outputs, ablate_memory)
}
