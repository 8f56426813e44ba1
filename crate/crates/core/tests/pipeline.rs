use memnorm::corpus::{SentenceRecord, Token};
use memnorm::dnc::StepOptions;
use memnorm::featurize::TokenLabel;
use memnorm::gbdt::{GbdtParams, TreeEnsemble};
use memnorm::pipeline::{
    build_vocabs, evaluate, normalize_sentences, train_classifier, train_translator,
    translation_pairs, Control, EvaluationReport, Models, TokenOutput, TrainConfig, Translator,
};
use memnorm::seq2seq::{Seq2Seq, Seq2SeqConfig};
use memnorm::tensor::Parameters;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tok(class: &str, before: &str, after: &str) -> Token {
    Token::new(class, before, after)
}

fn sent(tokens: Vec<Token>) -> SentenceRecord {
    SentenceRecord { tokens }
}

fn city() -> SentenceRecord {
    sent(vec![
        tok("PLAIN", "The", "<self>"),
        tok("PLAIN", "city", "<self>"),
        tok("PLAIN", "is", "<self>"),
        tok("MEASURE", "15km", "fifteen kilometers"),
        tok("PLAIN", "away", "<self>"),
        tok("PLAIN", "from", "<self>"),
        tok("PLAIN", "here", "<self>"),
        tok("PUNCT", ".", "sil"),
    ])
}

fn fixture() -> Vec<SentenceRecord> {
    vec![
        city(),
        sent(vec![
            tok("PLAIN", "It", "<self>"),
            tok("DATE", "1999", "nineteen ninety nine"),
            tok("PUNCT", ".", "sil"),
        ]),
        sent(vec![
            tok("CARDINAL", "12", "twelve"),
            tok("PLAIN", "cats", "<self>"),
        ]),
        sent(vec![
            tok("PLAIN", "Dr", "doctor"),
            tok("PLAIN", "Who", "<self>"),
        ]),
        sent(vec![tok("LETTERS", "BBC", "b b c"), tok("PUNCT", "!", "!")]),
    ]
}

fn pass(label: TokenLabel, output: &str) -> TokenOutput {
    TokenOutput {
        predicted_label: label,
        output: output.to_string(),
        fallback: false,
    }
}

fn perfect(records: &[SentenceRecord]) -> Vec<Vec<TokenOutput>> {
    records
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| {
                    let label = memnorm::featurize::label_token(&t.before, &t.after);
                    pass(
                        label,
                        memnorm::pipeline::reference_output(&t.before, &t.after),
                    )
                })
                .collect()
        })
        .collect()
}

#[test]
fn all_correct_gives_unit_accuracies() {
    let r = EvaluationReport::from_outputs(&fixture(), &perfect(&fixture()), false).unwrap();
    assert_eq!(r.overall_accuracy, 1.0);
    assert!(r.classes.values().all(|c| c.accuracy() == 1.0));
    assert!(r.mismatches.is_empty());
}

#[test]
fn planted_errors_match_hand_count() {
    let records = fixture();
    let mut out = perfect(&records);
    // DATE mistranslated; Dr left unnormalized by the gate
    out[1][1].output = "nineteen ninety".into();
    out[3][0] = pass(TokenLabel::RemainSame, "Dr");
    let r = EvaluationReport::from_outputs(&records, &out, false).unwrap();
    assert_eq!((r.overall.total, r.overall.correct), (17, 15));
    assert_eq!((r.classes["DATE"].total, r.classes["DATE"].correct), (1, 0));
    assert_eq!(
        (r.classes["PLAIN"].total, r.classes["PLAIN"].correct),
        (10, 9)
    );
    assert_eq!(
        (r.classes["PUNCT"].total, r.classes["PUNCT"].correct),
        (3, 3)
    );
    assert_eq!(r.classifier.false_negative, 1);
    assert_eq!(r.classifier.true_positive, 4);
    assert_eq!(r.mismatches.len(), 2);
    assert_eq!(r.mismatches[0].window, "It <norm> 1999 </norm> .");
    assert_eq!(r.mismatches[1].expected, "doctor");
    let table = r.to_table();
    assert!(table.lines().nth(1).unwrap().starts_with("ALL"));
    let mut tsv = Vec::new();
    r.write_mismatches(&mut tsv).unwrap();
    assert_eq!(String::from_utf8(tsv).unwrap().lines().count(), 3);
}

proptest! {
    #[test]
    fn overall_is_count_weighted_mean(flips in proptest::collection::vec(any::<bool>(), 17)) {
        let records = fixture();
        let mut out = perfect(&records);
        for (o, flip) in out.iter_mut().flatten().zip(&flips) {
            if *flip {
                o.output.push('x');
            }
        }
        let r = EvaluationReport::from_outputs(&records, &out, false).unwrap();
        let total: usize = r.classes.values().map(|c| c.total).sum();
        let correct: usize = r.classes.values().map(|c| c.correct).sum();
        prop_assert_eq!(total, r.overall.total);
        prop_assert_eq!(correct, r.overall.correct);
        prop_assert_eq!(correct, flips.iter().filter(|f| !**f).count());
        prop_assert_eq!(r.overall_accuracy, correct as f64 / total as f64);
    }
}

fn tiny_config(kx: usize, ky: usize) -> Seq2SeqConfig {
    Seq2SeqConfig::new(kx, ky, 8, 8, 8, 6, 1, 24, 16)
}

fn random_translator(records: &[SentenceRecord], seed: u64) -> Translator {
    let (input_vocab, output_vocab) = build_vocabs(&translation_pairs(records));
    let model = Seq2Seq::new(tiny_config(input_vocab.len(), output_vocab.len())).unwrap();
    let mut params = Parameters::new();
    model
        .init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap();
    Translator {
        model,
        params,
        input_vocab,
        output_vocab,
    }
}

/// Constant gate: base score far below or above zero.
fn constant_gate(normalize_all: bool) -> TreeEnsemble {
    TreeEnsemble {
        trees: Vec::new(),
        base_score: if normalize_all { 30.0 } else { -30.0 },
        num_features: memnorm::featurize::WINDOW_FEATURES,
        params: GbdtParams::default(),
    }
}

#[test]
fn normalize_keeps_token_count_and_passes_through() {
    let records = fixture();
    let sentences: Vec<Vec<&str>> = records.iter().map(|s| s.befores()).collect();
    let mut models = Models {
        classifier: constant_gate(false),
        translator: random_translator(&records, 1),
    };
    let out = normalize_sentences(&models, &sentences, StepOptions::default()).unwrap();
    for (o, s) in out.iter().zip(&sentences) {
        let words: Vec<&str> = o.iter().map(|t| t.output.as_str()).collect();
        assert_eq!(&words, s);
    }
    models.classifier = constant_gate(true);
    let out = normalize_sentences(&models, &sentences, StepOptions::default()).unwrap();
    for (o, s) in out.iter().zip(&sentences) {
        assert_eq!(o.len(), s.len());
        assert!(o
            .iter()
            .all(|t| t.predicted_label == TokenLabel::ToBeNormalized));
    }
}

#[test]
fn ablation_is_inert_without_a_read_path() {
    let records = fixture();
    let mut translator = random_translator(&records, 3);
    let cfg = translator.model.config().dnc;
    let (x, rw) = (cfg.input_size, cfg.read_heads * cfg.word_size);
    translator
        .params
        .get_mut("dnc/read_out/w")
        .unwrap()
        .data_mut()
        .fill(0.0);
    let w = translator.params.get_mut("dnc/controller/w").unwrap();
    let cols = w.shape()[1];
    w.data_mut()[x * cols..(x + rw) * cols].fill(0.0);
    let models = Models {
        classifier: constant_gate(true),
        translator,
    };
    let full = evaluate(&models, &records, false).unwrap();
    let ablated = evaluate(&models, &records, true).unwrap();
    assert_eq!(full.mismatches, ablated.mismatches);
    assert_eq!(full.classes, ablated.classes);
}

#[test]
fn evaluation_json_is_deterministic() {
    let records = fixture();
    let models = Models {
        classifier: constant_gate(true),
        translator: random_translator(&records, 5),
    };
    let a = evaluate(&models, &records, false)
        .unwrap()
        .to_json()
        .unwrap();
    let b = evaluate(&models, &records, false)
        .unwrap()
        .to_json()
        .unwrap();
    assert_eq!(a, b);
}

#[test]
fn translator_files_round_trip() {
    let records = fixture();
    let t = random_translator(&records, 7);
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("translator.mnrm");
    let files = t.save(&base).unwrap();
    assert_eq!(files.len(), 4);
    let back = Translator::load(&base).unwrap();
    let srcs: Vec<Vec<String>> = translation_pairs(&records)
        .into_iter()
        .map(|p| p.source)
        .collect();
    let opts = StepOptions::default();
    assert_eq!(
        t.translate(&srcs, opts, 4).unwrap(),
        back.translate(&srcs, opts, 4).unwrap()
    );
    assert_eq!(back.input_vocab, t.input_vocab);
}

fn short_run(steps: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        max_steps: steps,
        eval_every: 5,
        seed: 11,
        learning_rate: 1e-2,
        clip_norm: 10.0,
        ablate_memory: false,
    }
}

#[test]
fn translator_training_is_reproducible_and_checkpoints() {
    let records = fixture();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt.mnrm");
    let a = train_translator(&records, tiny_config, &short_run(10), Some(&ckpt)).unwrap();
    let b = train_translator(&records, tiny_config, &short_run(10), None).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(
        a.log.iter().map(|e| e.step).collect::<Vec<_>>(),
        vec![0, 5, 10]
    );
    assert_eq!(a.pairs, 5);
    assert_eq!(a.skipped_overlength, 0);
    // fresh model: perplexity close to the output vocabulary size
    let ky = a.translator.output_vocab.len() as f64;
    assert!(
        (a.log[0].perplexity / ky - 1.0).abs() < 0.5,
        "{} vs {ky}",
        a.log[0].perplexity
    );
    assert_eq!(
        Parameters::load(&ckpt)
            .unwrap()
            .entry("dnc/controller/w")
            .unwrap()
            .step(),
        10
    );
}

#[test]
fn zero_steps_rejected() {
    let err = train_translator(&fixture(), tiny_config, &short_run(0), None).unwrap_err();
    assert!(err.to_string().contains("steps ≥ 1"));
}

#[test]
fn two_stage_system_learns_the_worked_example() {
    let mut records = Vec::new();
    for _ in 0..4 {
        records.extend(fixture());
    }
    let gate = train_classifier(
        &records,
        &GbdtParams {
            n_estimators: 20,
            ..Default::default()
        },
        0.0,
    )
    .unwrap();
    assert!(gate.notice.is_none());
    let cfg = TrainConfig {
        batch_size: 5,
        max_steps: 300,
        eval_every: 100,
        ..short_run(0)
    };
    let trained = train_translator(&records, tiny_config, &cfg, None).unwrap();
    let models = Models {
        classifier: gate.model,
        translator: trained.translator,
    };
    let out = normalize_sentences(
        &models,
        &[vec![
            "The", "city", "is", "15km", "away", "from", "here", ".",
        ]],
        StepOptions::default(),
    )
    .unwrap();
    let words: Vec<&str> = out[0].iter().map(|t| t.output.as_str()).collect();
    assert_eq!(
        words,
        [
            "The",
            "city",
            "is",
            "fifteen kilometers",
            "away",
            "from",
            "here",
            "."
        ]
    );
    let report = evaluate(&models, &records, false).unwrap();
    assert_eq!(report.overall_accuracy, 1.0, "{}", report.to_table());
}

#[test]
fn single_class_corpus_gives_a_notice() {
    let records = vec![
        sent(vec![
            tok("PLAIN", "a", "<self>"),
            tok("PLAIN", "b", "<self>")
        ]);
        10
    ];
    let out = train_classifier(&records, &GbdtParams::default(), 0.1).unwrap();
    assert!(out.notice.is_some());
    assert!(out.model.trees.is_empty());
    assert_eq!((out.train_sentences, out.validation_sentences), (9, 1));
}

#[test]
fn small_config_memorizes_three_pairs_within_two_thousand_steps() {
    let model = Seq2Seq::new(Seq2SeqConfig::small(7, 8)).unwrap();
    let mut params = Parameters::new();
    model
        .init_params(&mut params, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    let eos = memnorm::seq2seq::EOS;
    let batch = (
        vec![vec![4, 5, 6], vec![6, 5], vec![5, 4, 4, 6]],
        vec![vec![4, 5, 6, eos], vec![7, eos], vec![6, 6, 4, eos]],
    );
    let cfg = TrainConfig {
        batch_size: 3,
        max_steps: 2000,
        eval_every: 25,
        learning_rate: 1e-3,
        ..short_run(0)
    };
    let log = memnorm::pipeline::train_loop(
        &model,
        &mut params,
        &cfg,
        |_| batch.clone(),
        |_, _, e| {
            Ok(if e.perplexity < 1.05 {
                Control::Stop
            } else {
                Control::Continue
            })
        },
    )
    .unwrap();
    let last = log.last().unwrap();
    assert!(last.perplexity < 1.05 && last.step <= 2000, "{last:?}");
}
