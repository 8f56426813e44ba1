use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use memnorm::corpus::{self, load_many, load_tsv, standard_splits, ReadOptions, SentenceRecord};
use memnorm::dnc::StepOptions;
use memnorm::gbdt::GbdtParams;
use memnorm::pipeline::{
    self, run_copy_task, CopyTaskConfig, EvaluationReport, Models, TrainConfig,
};
use memnorm::seq2seq::Seq2SeqConfig;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{
    Cli, Command, CopyTaskArgs, DataArgs, EvaluateArgs, Global, ModelSize, NormalizeArgs,
    TrainClassifierArgs, TrainTranslatorArgs, UpsampleArgs,
};

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

const RUNTIME: u8 = 1;
const USAGE: u8 = 2;

fn usage(msg: String) -> Failure {
    Failure {
        code: USAGE,
        error: anyhow!(msg),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<memnorm::Error>() {
            Some(memnorm::Error::MissingFiles(_) | memnorm::Error::InvalidArgument(_)) => USAGE,
            _ => RUNTIME,
        };
        Failure { code, error }
    }
}

impl From<memnorm::Error> for Failure {
    fn from(e: memnorm::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type Outcome<T = ()> = Result<T, Failure>;

pub fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if g.jobs == 0 {
        return Err(usage("--jobs must be at least 1".into()));
    }
    match &cli.command {
        Command::TrainClassifier(a) => train_classifier(g, a),
        Command::TrainTranslator(a) => train_translator(g, a),
        Command::Normalize(a) => normalize(g, a),
        Command::Evaluate(a) => evaluate(g, a),
        Command::Upsample(a) => upsample(g, a),
        Command::CopyTask(a) => copy_task(g, a),
    }
}

fn begin<A: Serialize>(name: &str, g: &Global, args: &A) -> Outcome<RunManifest> {
    let config = serde_json::to_value(args).map_err(anyhow::Error::from)?;
    Ok(RunManifest::begin(name, config, g.seed, g.jobs))
}

fn finish(manifest: RunManifest, g: &Global, default: Option<PathBuf>) -> Outcome {
    if let Some(path) = g.manifest.clone().or(default) {
        manifest.finish(&path)?;
    }
    Ok(())
}

/// `dir/stem.suffix` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.with_extension("").into_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Outcome {
    if path.is_dir() {
        Ok(())
    } else {
        Err(usage(format!(
            "{what} {} does not exist or is not a directory",
            path.display()
        )))
    }
}

fn load_train(d: &DataArgs) -> Outcome<Vec<SentenceRecord>> {
    require_dir(&d.data, "data directory")?;
    let splits = standard_splits(&d.data, d.lang.into())?;
    let opts = ReadOptions {
        max_lines: d.max_lines,
        ..Default::default()
    };
    let (records, stats) = load_many(&splits.train, opts)?;
    log::info!(
        "loaded {} sentences, {} tokens from {} shards",
        stats.sentences,
        stats.tokens,
        splits.train.len()
    );
    Ok(records)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ClassifierMetrics<'a> {
    train_sentences: usize,
    validation_sentences: usize,
    trees: usize,
    final_train_log_loss: Option<f64>,
    validation: Option<&'a memnorm::gbdt::BinaryReport>,
    notice: Option<&'a str>,
    top_features: Vec<(usize, f64)>,
}

fn train_classifier(g: &Global, a: &TrainClassifierArgs) -> Outcome {
    let manifest = begin("train-classifier", g, a)?;
    let params = GbdtParams {
        learning_rate: a.learning_rate,
        max_depth: a.max_depth,
        min_child_weight: a.min_child_weight,
        lambda: a.lambda,
        gamma: a.gamma,
        n_estimators: a.estimators,
    };
    let records = load_train(&a.data)?;
    let out = pipeline::train_classifier(&records, &params, a.validation_fraction)?;
    ensure_parent(&a.out)?;
    out.model.save(&a.out)?;
    let metrics_path = sibling(&a.out, ".metrics.json");
    let metrics = ClassifierMetrics {
        train_sentences: out.train_sentences,
        validation_sentences: out.validation_sentences,
        trees: out.model.trees.len(),
        final_train_log_loss: out.rounds.last().map(|r| r.1),
        validation: out.validation.as_ref(),
        notice: out.notice.as_deref(),
        top_features: out
            .model
            .feature_importance()
            .into_iter()
            .take(10)
            .collect(),
    };
    write_json(&metrics_path, &metrics)?;
    match &out.validation {
        Some(v) => println!(
            "validation accuracy {:.6} auc {} f1 RemainSame {:.4} ToBeNormalized {:.4}",
            v.accuracy,
            v.auc.map_or("n/a".into(), |x| format!("{x:.6}")),
            v.classes[0].f1,
            v.classes[1].f1
        ),
        None => println!("no validation sentences"),
    }
    if let Some(n) = &out.notice {
        println!("notice: {n}");
    }
    let mut manifest = manifest;
    manifest.outputs = vec![a.out.clone(), metrics_path];
    finish(manifest, g, Some(sibling(&a.out, ".run.json")))
}

fn describe(cfg: &Seq2SeqConfig) -> String {
    let d = &cfg.dnc;
    format!(
        "N×W={}×{}, R={}, hidden={}, embedding={}, attention={}, annotation={}",
        d.memory_size,
        d.word_size,
        d.read_heads,
        d.hidden_size,
        cfg.embedding_size,
        cfg.attention_units,
        d.output_size
    )
}

fn train_translator(g: &Global, a: &TrainTranslatorArgs) -> Outcome {
    let manifest = begin("train-translator", g, a)?;
    let cfg = TrainConfig {
        batch_size: a.batch,
        max_steps: a.steps,
        eval_every: a.eval_every,
        seed: g.seed,
        learning_rate: a.learning_rate,
        clip_norm: a.clip_norm,
        ablate_memory: false,
    };
    cfg.validate()?;
    let make = match a.config {
        ModelSize::Small => Seq2SeqConfig::small,
        ModelSize::Paper => Seq2SeqConfig::paper,
    };
    println!("{}", describe(&make(0, 0)));
    let records = load_train(&a.data)?;
    ensure_parent(&a.out)?;
    let checkpoint = sibling(&a.out, ".checkpoint.mnrm");
    let out = pipeline::train_translator(&records, make, &cfg, Some(&checkpoint))?;
    let mut outputs = out.translator.save(&a.out)?;
    let log_path = sibling(&a.out, ".loss.tsv");
    let mut log = String::from("step\tloss\tperplexity\n");
    for e in &out.log {
        let _ = writeln!(log, "{}\t{:.6}\t{:.6}", e.step, e.loss, e.perplexity);
    }
    fs::write(&log_path, log).with_context(|| format!("writing {}", log_path.display()))?;
    outputs.extend([log_path, checkpoint]);
    println!(
        "{} training pairs ({} skipped as overlength); final perplexity {:.4}",
        out.pairs,
        out.skipped_overlength,
        out.log.last().map_or(f64::NAN, |e| e.perplexity)
    );
    let mut manifest = manifest;
    manifest.outputs = outputs;
    finish(manifest, g, Some(sibling(&a.out, ".run.json")))
}

fn load_models(dir: &Path) -> Outcome<Models> {
    require_dir(dir, "models directory")?;
    Ok(Models::load(dir)?)
}

/// Lines translated per batch.
const NORMALIZE_CHUNK: usize = 256;

fn normalize(g: &Global, a: &NormalizeArgs) -> Outcome {
    let manifest = begin("normalize", g, a)?;
    let models = load_models(&a.models)?;
    let reader: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(BufReader::new(
            File::open(p).with_context(|| format!("opening {}", p.display()))?,
        )),
        None => Box::new(io::stdin().lock()),
    };
    let mut writer: Box<dyn Write> = match &a.out {
        Some(p) => {
            ensure_parent(p)?;
            Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let opts = StepOptions {
        ablate_reads: a.ablate_memory,
        force_write_gate: None,
    };
    let lines: Vec<String> = reader
        .lines()
        .collect::<io::Result<_>>()
        .map_err(anyhow::Error::from)?;
    let mut fallbacks = 0;
    for chunk in lines.chunks(NORMALIZE_CHUNK) {
        let sentences: Vec<Vec<&str>> = chunk
            .iter()
            .map(|l| l.split_whitespace().collect())
            .collect();
        let out = pipeline::normalize_sentences(&models, &sentences, opts)?;
        for row in out {
            fallbacks += row.iter().filter(|t| t.fallback).count();
            let words: Vec<&str> = row.iter().map(|t| t.output.as_str()).collect();
            writeln!(writer, "{}", words.join(" ")).map_err(anyhow::Error::from)?;
        }
    }
    writer.flush().map_err(anyhow::Error::from)?;
    log::info!(
        "{} sentences normalized, {fallbacks} fallback tokens",
        lines.len()
    );
    let mut manifest = manifest;
    manifest.outputs = a.out.iter().cloned().collect();
    finish(manifest, g, a.out.as_ref().map(|p| sibling(p, ".run.json")))
}

fn write_report(dir: &Path, name: &str, r: &EvaluationReport) -> Outcome<Vec<PathBuf>> {
    let json = dir.join(format!("{name}.json"));
    let table = dir.join(format!("{name}.txt"));
    let tsv = dir.join(format!("{name}.mismatches.tsv"));
    fs::write(&json, r.to_json()? + "\n").map_err(anyhow::Error::from)?;
    fs::write(&table, r.to_table()).map_err(anyhow::Error::from)?;
    r.write_mismatches(BufWriter::new(
        File::create(&tsv).map_err(anyhow::Error::from)?,
    ))?;
    Ok(vec![json, table, tsv])
}

/// Class, count, accuracy with and without memory.
fn side_by_side(full: &EvaluationReport, ablated: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>10} {:>12} {:>16}",
        "class", "count", "accuracy", "without memory"
    );
    let mut row = |name: &str, total: usize, a: f64, b: f64| {
        let _ = writeln!(out, "{name:<14} {total:>10} {a:>12.6} {b:>16.6}");
    };
    row(
        "ALL",
        full.overall.total,
        full.overall.accuracy(),
        ablated.overall.accuracy(),
    );
    for (name, c) in full.ranked_classes() {
        let b = ablated.classes.get(name).map_or(0.0, |x| x.accuracy());
        row(name, c.total, c.accuracy(), b);
    }
    out
}

fn evaluate(g: &Global, a: &EvaluateArgs) -> Outcome {
    let manifest = begin("evaluate", g, a)?;
    require_dir(&a.data.data, "data directory")?;
    let models = load_models(&a.models)?;
    let splits = standard_splits(&a.data.data, a.data.lang.into())?;
    let limit = a
        .data
        .max_lines
        .map_or(splits.test_lines, |m| m.min(splits.test_lines));
    let opts = ReadOptions {
        max_lines: Some(limit),
        ..Default::default()
    };
    let (records, stats) = load_tsv(&splits.test, opts)?;
    log::info!(
        "evaluating on {} sentences, {} tokens",
        stats.sentences,
        stats.tokens
    );
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let full = pipeline::evaluate(&models, &records, false)?;
    let mut outputs = write_report(&a.out, "report", &full)?;
    if a.ablate_memory {
        let ablated = pipeline::evaluate(&models, &records, true)?;
        outputs.extend(write_report(&a.out, "report.ablated", &ablated)?);
        let table = side_by_side(&full, &ablated);
        let path = a.out.join("comparison.txt");
        fs::write(&path, &table).map_err(anyhow::Error::from)?;
        outputs.push(path);
        print!("{table}");
    } else {
        print!("{}", full.to_table());
    }
    let mut manifest = manifest;
    manifest.outputs = outputs;
    finish(manifest, g, Some(a.out.join("run.json")))
}

/// File holding the appended duplicates in the output directory.
pub const DUPLICATES_FILE: &str = "upsampled-duplicates";
pub const RULE_MANIFEST_FILE: &str = "upsample-manifest.jsonl";

fn shard_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if entry.file_type()?.is_file() && !hidden {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

fn upsample(g: &Global, a: &UpsampleArgs) -> Outcome {
    let manifest = begin("upsample", g, a)?;
    require_dir(&a.input, "input directory")?;
    if !a.rules.is_file() {
        return Err(usage(format!(
            "rules file {} does not exist",
            a.rules.display()
        )));
    }
    let rules = corpus::load_rules(&a.rules)?;
    let files = shard_files(&a.input)?;
    let mut records = Vec::new();
    for f in &files {
        records.extend(load_tsv(f, ReadOptions::default())?.0);
    }
    let (out_corpus, entries) = corpus::upsample(&records, &rules, g.seed);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut outputs = Vec::new();
    for f in &files {
        let dest = a.out.join(f.file_name().expect("listed files have names"));
        fs::copy(f, &dest).with_context(|| format!("copying {}", f.display()))?;
        outputs.push(dest);
    }
    let duplicates = &out_corpus[records.len()..];
    if !duplicates.is_empty() {
        let path = a.out.join(DUPLICATES_FILE);
        corpus::write_tsv(
            BufWriter::new(File::create(&path).map_err(anyhow::Error::from)?),
            duplicates,
        )?;
        outputs.push(path);
    }
    let rule_manifest = a.out.join(RULE_MANIFEST_FILE);
    corpus::write_manifest(
        BufWriter::new(File::create(&rule_manifest).map_err(anyhow::Error::from)?),
        &entries,
    )?;
    outputs.push(rule_manifest);
    for e in &entries {
        println!(
            "{}\t{}\t{:?}\t{} -> {} (target {})",
            e.class,
            serde_json::to_string(&e.predicate).map_err(anyhow::Error::from)?,
            e.status,
            e.count_before,
            e.final_count,
            e.target
        );
    }
    println!(
        "{} sentences in, {} duplicated",
        records.len(),
        duplicates.len()
    );
    let mut manifest = manifest;
    manifest.outputs = outputs;
    finish(manifest, g, Some(a.out.join("run.json")))
}

fn copy_task(g: &Global, a: &CopyTaskArgs) -> Outcome {
    let manifest = begin("copy-task", g, a)?;
    let mut cfg = CopyTaskConfig {
        symbols: a.symbols,
        max_len: a.len_max,
        test_size: a.test_size,
        validation_size: a.validation_size,
        ablate_memory: a.ablate_memory,
        ..Default::default()
    };
    cfg.train = TrainConfig {
        batch_size: a.batch,
        max_steps: a.steps,
        eval_every: a.eval_every,
        seed: g.seed,
        learning_rate: a.learning_rate,
        ..cfg.train
    };
    cfg.train.validate()?;
    let report = run_copy_task(&cfg)?;
    println!("untrained accuracy {:.4}", report.untrained_accuracy);
    println!(
        "accuracy {:.4} on {} held-out length-{} sequences (step {} of {})",
        report.accuracy, cfg.test_size, cfg.max_len, report.best_step, report.steps_trained
    );
    if let Some(x) = report.ablated_accuracy {
        println!("accuracy without memory {x:.4}");
    }
    println!("len\tfull\tablated\ttotal");
    for l in &report.per_length {
        let ablated = l.ablated.map_or("-".into(), |x| x.to_string());
        println!("{}\t{}\t{}\t{}", l.len, l.full, ablated, l.total);
    }
    let mut manifest = manifest;
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        write_json(out, &report)?;
        manifest.outputs.push(out.clone());
    }
    finish(manifest, g, a.out.as_ref().map(|p| sibling(p, ".run.json")))
}
