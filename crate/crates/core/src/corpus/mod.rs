//! Sentence-level access to the three-column normalization corpus.

mod splits;
mod upsample;

pub use splits::{shard_name, standard_splits, Language, StandardSplits};
pub use upsample::{
    cardinal_value, count_matches, load_rules, measure_unit, upsample, write_manifest,
    ManifestEntry, RuleStatus, TokenPredicate, UpsampleRule,
};

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EOS_MARKER: &str = "<eos>";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub class: String,
    pub before: String,
    pub after: String,
}

impl Token {
    pub fn new(
        class: impl Into<String>,
        before: impl Into<String>,
        after: impl Into<String>,
    ) -> Self {
        Token {
            class: class.into(),
            before: before.into(),
            after: after.into(),
        }
    }
}

/// A non-empty sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub tokens: Vec<Token>,
}

impl SentenceRecord {
    pub fn befores(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.before.as_str()).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadOptions {
    /// Also end sentences at blank lines.
    pub blank_line_delimiter: bool,
    /// Stop after this many physical lines.
    pub max_lines: Option<usize>,
}

/// Streams sentences from a TSV source. A trailing sentence without an
/// `<eos>` row is still yielded and counted in [`dangling`](Self::dangling).
pub struct SentenceReader<R> {
    lines: std::io::Lines<R>,
    origin: String,
    opts: ReadOptions,
    line: usize,
    dangling: usize,
    done: bool,
}

impl<R: BufRead> SentenceReader<R> {
    pub fn new(reader: R, origin: impl Into<String>, opts: ReadOptions) -> Self {
        SentenceReader {
            lines: reader.lines(),
            origin: origin.into(),
            opts,
            line: 0,
            dangling: 0,
            done: false,
        }
    }

    pub fn dangling(&self) -> usize {
        self.dangling
    }

    fn parse_error(&self, msg: String) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line: self.line,
            msg,
        }
    }
}

impl<R: BufRead> Iterator for SentenceReader<R> {
    type Item = Result<SentenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut tokens = Vec::new();
        loop {
            if self.opts.max_lines.is_some_and(|m| self.line >= m) {
                self.done = true;
                break;
            }
            let raw = match self.lines.next() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e.into()));
                }
                Some(Ok(l)) => l,
            };
            self.line += 1;
            let line = raw.strip_suffix('\r').unwrap_or(&raw);
            if line.is_empty() && self.opts.blank_line_delimiter {
                if tokens.is_empty() {
                    continue;
                }
                return Some(Ok(SentenceRecord { tokens }));
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() >= 2 && cols[0] == EOS_MARKER && cols[1] == EOS_MARKER && cols.len() <= 3
            {
                if tokens.is_empty() {
                    continue;
                }
                return Some(Ok(SentenceRecord { tokens }));
            }
            if cols.len() != 3 {
                self.done = true;
                return Some(Err(self.parse_error(format!(
                    "expected 3 tab-separated columns, found {}",
                    cols.len()
                ))));
            }
            tokens.push(Token::new(cols[0], cols[1], cols[2]));
        }
        if tokens.is_empty() {
            None
        } else {
            self.dangling += 1;
            Some(Ok(SentenceRecord { tokens }))
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub sentences: usize,
    pub tokens: usize,
    /// Sentences cut off by end of input.
    pub dangling: usize,
}

pub fn read_tsv<R: BufRead>(
    reader: R,
    origin: &str,
    opts: ReadOptions,
) -> Result<(Vec<SentenceRecord>, LoadStats)> {
    let mut it = SentenceReader::new(reader, origin, opts);
    let mut out = Vec::new();
    for s in &mut it {
        out.push(s?);
    }
    let stats = LoadStats {
        sentences: out.len(),
        tokens: out.iter().map(|s| s.tokens.len()).sum(),
        dangling: it.dangling(),
    };
    if stats.dangling > 0 {
        log::warn!("{origin}: last sentence has no {EOS_MARKER} row");
    }
    Ok((out, stats))
}

pub fn load_tsv(path: &Path, opts: ReadOptions) -> Result<(Vec<SentenceRecord>, LoadStats)> {
    let f = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_tsv(BufReader::new(f), &path.display().to_string(), opts)
}

/// Loads every file in order into one sentence list.
pub fn load_many(
    paths: &[impl AsRef<Path>],
    opts: ReadOptions,
) -> Result<(Vec<SentenceRecord>, LoadStats)> {
    let mut all = Vec::new();
    let mut total = LoadStats::default();
    for p in paths {
        let (s, st) = load_tsv(p.as_ref(), opts)?;
        all.extend(s);
        total.sentences += st.sentences;
        total.tokens += st.tokens;
        total.dangling += st.dangling;
    }
    Ok((all, total))
}

/// Writes tokens as `class\tbefore\tafter` and ends each sentence with an
/// `<eos>\t<eos>` row. Fields must not contain tabs or newlines.
pub fn write_tsv<W: Write>(mut out: W, sentences: &[SentenceRecord]) -> Result<()> {
    for s in sentences {
        for t in &s.tokens {
            for field in [&t.class, &t.before, &t.after] {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(Error::InvalidArgument(format!(
                        "field {field:?} contains a tab or line break"
                    )));
                }
            }
            writeln!(out, "{}\t{}\t{}", t.class, t.before, t.after)?;
        }
        writeln!(out, "{EOS_MARKER}\t{EOS_MARKER}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str) -> Result<(Vec<SentenceRecord>, LoadStats)> {
        read_tsv(text.as_bytes(), "t.tsv", ReadOptions::default())
    }

    #[test]
    fn empty_input() {
        let (s, st) = read("").unwrap();
        assert!(s.is_empty());
        assert_eq!(st, LoadStats::default());
    }

    #[test]
    fn minimal_sentence_with_either_eos_width() {
        for eos in ["<eos>\t<eos>\t", "<eos>\t<eos>"] {
            let (s, st) = read(&format!("PLAIN\tthe\t<self>\n{eos}\n")).unwrap();
            assert_eq!(
                s,
                vec![SentenceRecord {
                    tokens: vec![Token::new("PLAIN", "the", "<self>")]
                }]
            );
            assert_eq!(st.dangling, 0);
        }
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = read("PLAIN\tthe\t<self>\nPLAIN\tbad\n").unwrap_err();
        assert_eq!(
            err.to_string(),
            "t.tsv:2: expected 3 tab-separated columns, found 2"
        );
    }

    #[test]
    fn dangling_sentence_is_counted() {
        let (s, st) = read("PLAIN\ta\t<self>\n<eos>\t<eos>\nPLAIN\tb\t<self>\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(st.dangling, 1);
    }

    #[test]
    fn blank_lines_behind_flag() {
        let text = "PLAIN\ta\t<self>\n\nPLAIN\tb\t<self>\n\n";
        assert!(read(text).is_err());
        let opts = ReadOptions {
            blank_line_delimiter: true,
            ..Default::default()
        };
        let (s, st) = read_tsv(text.as_bytes(), "t", opts).unwrap();
        assert_eq!((s.len(), st.dangling), (2, 0));
    }

    #[test]
    fn max_lines_truncates() {
        let text =
            "PLAIN\ta\t<self>\n<eos>\t<eos>\nPLAIN\tb\t<self>\nPLAIN\tc\t<self>\n<eos>\t<eos>\n";
        let opts = ReadOptions {
            max_lines: Some(3),
            ..Default::default()
        };
        let (s, st) = read_tsv(text.as_bytes(), "t", opts).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1].tokens.len(), 1);
        assert_eq!(st.dangling, 1);
    }
}
