use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const GO: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<go>", "<eos>", "<unk>"];

/// Symbol table; line number in the saved file is the id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    /// The four reserved symbols only.
    pub fn new() -> Self {
        let mut v = Vocab {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        for s in RESERVED {
            v.insert(s);
        }
        v
    }

    /// Reserved symbols followed by `symbols` in first-seen order.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for s in symbols {
            v.insert(s.as_ref());
        }
        v
    }

    /// Id of `symbol`, adding it if unseen.
    pub fn insert(&mut self, symbol: &str) -> usize {
        if let Some(&id) = self.ids.get(symbol) {
            return id;
        }
        let id = self.symbols.len();
        self.symbols.push(symbol.to_string());
        self.ids.insert(symbol.to_string(), id);
        id
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    /// Id of `symbol`, or [`UNK`].
    pub fn id(&self, symbol: &str) -> usize {
        self.get(symbol).unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s.as_ref())).collect()
    }

    /// Symbols for `ids` up to the first [`EOS`], skipping other reserved ids.
    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .filter(|&&id| id >= RESERVED.len())
            .filter_map(|&id| self.symbol(id))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.symbols {
            if s.contains('\n') {
                return Err(Error::Format(format!(
                    "vocabulary symbol {s:?} contains a newline"
                )));
            }
            writeln!(out, "{s}")?;
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let body = text.strip_suffix('\n').unwrap_or(&text);
        let mut v = Vocab {
            symbols: Vec::new(),
            ids: HashMap::new(),
        };
        for (i, line) in body.split('\n').enumerate() {
            if i < RESERVED.len() && line != RESERVED[i] {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("expected reserved symbol {}, found {line:?}", RESERVED[i]),
                });
            }
            if v.ids.contains_key(line) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("duplicate symbol {line:?}"),
                });
            }
            v.insert(line);
        }
        if v.len() < RESERVED.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: v.len() + 1,
                msg: "missing reserved symbols".into(),
            });
        }
        Ok(v)
    }
}
