//! Duplicating whole sentences until rare token kinds reach a target count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SentenceRecord, Token};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenPredicate {
    /// Tokens whose unit (see [`measure_unit`]) equals `unit`.
    MeasureUnit { unit: String },
    /// Expands to one `MeasureUnit` rule per unit seen in the corpus.
    EveryMeasureUnit,
    /// Tokens whose numeric value (see [`cardinal_value`]) exceeds `value`.
    CardinalAbove { value: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpsampleRule {
    pub class: String,
    pub predicate: TokenPredicate,
    pub target: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    /// Count already at or above target.
    Satisfied,
    Applied,
    /// No sentence matches.
    Skipped,
}

/// One JSON line of the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub class: String,
    pub predicate: TokenPredicate,
    pub target: usize,
    pub status: RuleStatus,
    pub count_before: usize,
    pub count_after_rule: usize,
    pub duplicated_sentences: usize,
    /// Count in the final corpus; later rules can raise it further.
    pub final_count: usize,
}

/// Unit of a measure token: what follows the leading number, trimmed.
/// `"15 м/с"` gives `"м/с"`, `"2.5g/cm3"` gives `"g/cm3"`.
pub fn measure_unit(before: &str) -> Option<&str> {
    let start = before
        .char_indices()
        .find(|&(_, c)| {
            !(c.is_ascii_digit() || c.is_whitespace() || matches!(c, '.' | ',' | '-' | '+'))
        })
        .map(|(i, _)| i)?;
    if start == 0 || !before[..start].chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    let unit = before[start..].trim();
    (!unit.is_empty()).then_some(unit)
}

/// Numeric value of a cardinal after removing digit-grouping commas and
/// spaces; `None` unless what remains is an optionally signed integer or
/// decimal.
pub fn cardinal_value(before: &str) -> Option<f64> {
    let cleaned: String = before
        .chars()
        .filter(|&c| c != ',' && !c.is_whitespace())
        .collect();
    let digits = cleaned.strip_prefix('-').unwrap_or(&cleaned);
    if digits.is_empty()
        || !digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        || digits.matches('.').count() > 1
    {
        return None;
    }
    cleaned.parse().ok()
}

fn matches(rule: &UpsampleRule, t: &Token) -> bool {
    if t.class != rule.class {
        return false;
    }
    match &rule.predicate {
        TokenPredicate::MeasureUnit { unit } => measure_unit(&t.before) == Some(unit.as_str()),
        TokenPredicate::EveryMeasureUnit => measure_unit(&t.before).is_some(),
        TokenPredicate::CardinalAbove { value } => {
            cardinal_value(&t.before).is_some_and(|v| v > *value)
        }
    }
}

fn sentence_matches(rule: &UpsampleRule, s: &SentenceRecord) -> usize {
    s.tokens.iter().filter(|t| matches(rule, t)).count()
}

/// Tokens matching `rule` across `records`.
pub fn count_matches(records: &[SentenceRecord], rule: &UpsampleRule) -> usize {
    records.iter().map(|s| sentence_matches(rule, s)).sum()
}

fn expand(records: &[SentenceRecord], rules: &[UpsampleRule]) -> Vec<UpsampleRule> {
    let mut out = Vec::new();
    for rule in rules {
        if rule.predicate != TokenPredicate::EveryMeasureUnit {
            out.push(rule.clone());
            continue;
        }
        let mut units: BTreeMap<&str, usize> = BTreeMap::new();
        for t in records
            .iter()
            .flat_map(|s| &s.tokens)
            .filter(|t| t.class == rule.class)
        {
            if let Some(u) = measure_unit(&t.before) {
                *units.entry(u).or_default() += 1;
            }
        }
        out.extend(
            units
                .into_iter()
                .filter(|&(_, c)| c < rule.target)
                .map(|(u, _)| UpsampleRule {
                    class: rule.class.clone(),
                    predicate: TokenPredicate::MeasureUnit {
                        unit: u.to_string(),
                    },
                    target: rule.target,
                }),
        );
    }
    out
}

/// Applies `rules` in order. For each rule, sentences containing a matching
/// token are appended round-robin, in a seeded shuffled order, until the
/// matching-token count reaches the target; a sentence with `m` matches can
/// overshoot by fewer than `m`. Original sentences keep their positions.
pub fn upsample(
    records: &[SentenceRecord],
    rules: &[UpsampleRule],
    seed: u64,
) -> (Vec<SentenceRecord>, Vec<ManifestEntry>) {
    let mut corpus = records.to_vec();
    let expanded = expand(records, rules);
    let mut entries = Vec::with_capacity(expanded.len());
    for (k, rule) in expanded.iter().enumerate() {
        let before = count_matches(&corpus, rule);
        let mut entry = ManifestEntry {
            class: rule.class.clone(),
            predicate: rule.predicate.clone(),
            target: rule.target,
            status: RuleStatus::Satisfied,
            count_before: before,
            count_after_rule: before,
            duplicated_sentences: 0,
            final_count: 0,
        };
        if before >= rule.target {
            entries.push(entry);
            continue;
        }
        let mut sources: Vec<(usize, usize)> = corpus
            .iter()
            .enumerate()
            .map(|(i, s)| (i, sentence_matches(rule, s)))
            .filter(|&(_, m)| m > 0)
            .collect();
        if sources.is_empty() {
            log::warn!(
                "up-sampling rule {:?} for {} matches no sentence; skipped",
                rule.predicate,
                rule.class
            );
            entry.status = RuleStatus::Skipped;
            entries.push(entry);
            continue;
        }
        sources.shuffle(&mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64)));
        let mut count = before;
        for &(i, m) in sources.iter().cycle() {
            if count >= rule.target {
                break;
            }
            corpus.push(corpus[i].clone());
            count += m;
            entry.duplicated_sentences += 1;
        }
        entry.status = RuleStatus::Applied;
        entry.count_after_rule = count;
        entries.push(entry);
    }
    for (entry, rule) in entries.iter_mut().zip(&expanded) {
        entry.final_count = count_matches(&corpus, rule);
    }
    (corpus, entries)
}

/// Reads a JSON array of rules; an empty or whitespace-only file has none.
pub fn load_rules(path: &Path) -> Result<Vec<UpsampleRule>> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })
}

/// One JSON object per line.
pub fn write_manifest<W: Write>(mut out: W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        writeln!(out)?;
    }
    Ok(())
}
