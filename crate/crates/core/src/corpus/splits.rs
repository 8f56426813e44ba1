use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Ru,
}

impl Language {
    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Ru => "ru",
        }
    }

    pub fn train_files(self) -> usize {
        match self {
            Language::En => 2,
            Language::Ru => 4,
        }
    }

    /// Head of shard 99 used as the test set.
    pub fn test_lines(self) -> usize {
        match self {
            Language::En => 100_002,
            Language::Ru => 100_007,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "en" | "english" => Ok(Language::En),
            "ru" | "russian" => Ok(Language::Ru),
            _ => Err(Error::InvalidArgument(format!(
                "unknown language `{s}` (expected en or ru)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StandardSplits {
    pub train: Vec<PathBuf>,
    pub test: PathBuf,
    pub test_lines: usize,
}

pub fn shard_name(index: usize) -> String {
    format!("output-{index:05}-of-00100")
}

/// Train shards and the test slice. Shards are looked up in `dir` and then
/// in `dir/<lang>_with_types`.
pub fn standard_splits(dir: &Path, lang: Language) -> Result<StandardSplits> {
    let wanted: Vec<usize> = (0..lang.train_files()).chain([99]).collect();
    let roots = [
        dir.to_path_buf(),
        dir.join(format!("{}_with_types", lang.code())),
    ];
    for root in &roots {
        let paths: Vec<PathBuf> = wanted.iter().map(|&i| root.join(shard_name(i))).collect();
        if paths.iter().all(|p| p.is_file()) {
            let (train, test) = paths.split_at(paths.len() - 1);
            return Ok(StandardSplits {
                train: train.to_vec(),
                test: test[0].clone(),
                test_lines: lang.test_lines(),
            });
        }
    }
    let missing = wanted
        .iter()
        .map(|&i| dir.join(shard_name(i)))
        .filter(|p| !p.is_file())
        .collect();
    Err(Error::MissingFiles(missing))
}
