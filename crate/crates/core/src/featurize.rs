//! Fixed-width numeric encoding of a token and its neighbours, and the
//! RemainSame / ToBeNormalized labelling.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gbdt::FeatureMatrix;

/// Characters kept per token.
pub const BLOCK: usize = 30;
/// `[-1, prev, -1, target, -1, next, -1]`.
pub const WINDOW_FEATURES: usize = 3 * BLOCK + 4;
pub const SEPARATOR: f64 = -1.0;
/// Offset of the target block.
pub const TARGET_OFFSET: usize = BLOCK + 2;

/// Code points of the first [`BLOCK`] characters of each token, zero padded.
/// Absent neighbours encode as all zeros.
pub fn encode_token_window(
    prev: Option<&str>,
    target: &str,
    next: Option<&str>,
) -> [f64; WINDOW_FEATURES] {
    let mut out = [0.0; WINDOW_FEATURES];
    for (k, token) in [prev, Some(target), next].into_iter().enumerate() {
        let start = k * (BLOCK + 1);
        out[start] = SEPARATOR;
        if let Some(tok) = token {
            for (slot, c) in out[start + 1..start + 1 + BLOCK]
                .iter_mut()
                .zip(tok.chars())
            {
                *slot = f64::from(u32::from(c));
            }
        }
    }
    out[WINDOW_FEATURES - 1] = SEPARATOR;
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenLabel {
    RemainSame,
    ToBeNormalized,
}

impl TokenLabel {
    pub fn as_f64(self) -> f64 {
        match self {
            TokenLabel::RemainSame => 0.0,
            TokenLabel::ToBeNormalized => 1.0,
        }
    }
}

/// RemainSame iff `after` is `<self>`, `sil` or equal to `before`.
pub fn label_token(before: &str, after: &str) -> TokenLabel {
    if after == "<self>" || after == "sil" || after == before {
        TokenLabel::RemainSame
    } else {
        TokenLabel::ToBeNormalized
    }
}

/// One window vector per token of a sentence.
pub fn encode_sentence<S: AsRef<str>>(tokens: &[S]) -> Vec<[f64; WINDOW_FEATURES]> {
    (0..tokens.len())
        .map(|i| {
            let prev = i.checked_sub(1).map(|j| tokens[j].as_ref());
            let next = tokens.get(i + 1).map(AsRef::as_ref);
            encode_token_window(prev, tokens[i].as_ref(), next)
        })
        .collect()
}

/// Writes `f0..f93,label` CSV rows, label 1 for ToBeNormalized.
pub fn write_feature_csv<W: Write>(
    out: W,
    features: &FeatureMatrix,
    labels: &[TokenLabel],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..features.cols()).map(|i| format!("f{i}")).collect();
    header.push("label".into());
    w.write_record(&header)?;
    for (i, label) in labels.iter().enumerate().take(features.rows()) {
        let mut rec: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(label.as_f64().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
