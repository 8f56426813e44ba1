use crate::corpus::SentenceRecord;
use crate::error::{Error, Result};
use crate::featurize::{encode_sentence, label_token, TokenLabel};
use crate::gbdt::{
    evaluate_binary, fit_with, BinaryReport, FeatureMatrix, GbdtParams, TreeEnsemble,
};

/// Feature rows and labels for every token, in corpus order.
pub fn token_dataset(records: &[SentenceRecord]) -> Result<(FeatureMatrix, Vec<TokenLabel>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for s in records {
        rows.extend(encode_sentence(&s.befores()));
        labels.extend(s.tokens.iter().map(|t| label_token(&t.before, &t.after)));
    }
    if rows.is_empty() {
        return Err(Error::Empty("no tokens to featurize".into()));
    }
    Ok((FeatureMatrix::from_rows(&rows)?, labels))
}

/// Probability threshold above which a token is ToBeNormalized.
pub const DECISION_THRESHOLD: f64 = 0.5;

/// Per-token decisions for one sentence.
pub fn classify_sentence<S: AsRef<str>>(
    model: &TreeEnsemble,
    tokens: &[S],
) -> Result<Vec<TokenLabel>> {
    encode_sentence(tokens)
        .iter()
        .map(|row| {
            Ok(if model.predict_proba(row)? > DECISION_THRESHOLD {
                TokenLabel::ToBeNormalized
            } else {
                TokenLabel::RemainSame
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ClassifierOutcome {
    pub model: TreeEnsemble,
    pub train_sentences: usize,
    pub validation_sentences: usize,
    /// Absent when the validation part is empty.
    pub validation: Option<BinaryReport>,
    /// Set when training labels hold a single class.
    pub notice: Option<String>,
    /// `(round, training log-loss)` per boosting round.
    pub rounds: Vec<(usize, f64)>,
}

/// Fits on the leading sentences and validates on the trailing
/// `validation_fraction` of them.
pub fn train_classifier(
    records: &[SentenceRecord],
    params: &GbdtParams,
    validation_fraction: f64,
) -> Result<ClassifierOutcome> {
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::InvalidArgument(format!(
            "validation fraction {validation_fraction} outside [0, 1)"
        )));
    }
    let held = (records.len() as f64 * validation_fraction).floor() as usize;
    let (train, valid) = records.split_at(records.len() - held);
    let (x, labels) = token_dataset(train)?;
    let y: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    let notice = (positives == 0 || positives == y.len()).then(|| {
        let msg = "training labels hold a single class; the model is a constant".to_string();
        log::warn!("{msg}");
        msg
    });
    let mut rounds = Vec::new();
    let model = fit_with(&x, &y, params, |r, loss| {
        log::debug!("round {r} log-loss {loss:.6}");
        rounds.push((r, loss));
    })?;
    let validation = if valid.is_empty() {
        None
    } else {
        let (vx, vl) = token_dataset(valid)?;
        let probs = model.predict_all(&vx)?;
        let truth: Vec<bool> = vl
            .iter()
            .map(|&l| l == TokenLabel::ToBeNormalized)
            .collect();
        Some(evaluate_binary(&probs, &truth)?)
    };
    Ok(ClassifierOutcome {
        model,
        train_sentences: train.len(),
        validation_sentences: valid.len(),
        validation,
        notice,
        rounds,
    })
}
