//! End-to-end training, normalization and evaluation on top of the core
//! modules.

mod classifier;
mod copy_task;
mod evaluate;
mod train;

pub use classifier::{
    classify_sentence, token_dataset, train_classifier, ClassifierOutcome, DECISION_THRESHOLD,
};
pub use copy_task::{copy_accuracy, run_copy_task, CopyTaskConfig, CopyTaskReport, LengthAccuracy};
pub use evaluate::{
    evaluate, normalize_sentences, reference_output, ClassCounts, EvaluationReport, Mismatch,
    Models, StageConfusion, TokenOutput, CLASSIFIER_FILE, INFERENCE_BATCH, TRANSLATOR_FILE,
};
pub use train::{
    build_vocabs, train_loop, train_translator, translation_pairs, translator_files, Batch,
    Control, LogEntry, TrainConfig, TrainingPair, Translator, TranslatorOutcome, CONTEXT_WINDOW,
};
