//! Plain-text ensemble format.
//!
//! Line 1 is a header of space-separated `key=value` pairs. Every further line
//! is one node: `tree node kind feature threshold left right weight gain`,
//! tab-separated, with `-` in columns that do not apply to the node kind.
//! Floats use the shortest representation that parses back exactly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{GbdtParams, Node, Tree, TreeEnsemble};
use crate::error::{Error, Result};

const MAGIC: &str = "gbdt-v1";

impl TreeEnsemble {
    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "{MAGIC} base_score={} eta={} features={} trees={} max_depth={} min_child_weight={} lambda={} gamma={} estimators={}\n",
            self.base_score,
            p.learning_rate,
            self.num_features,
            self.trees.len(),
            p.max_depth,
            p.min_child_weight,
            p.lambda,
            p.gamma,
            p.n_estimators
        );
        for (t, tree) in self.trees.iter().enumerate() {
            for (n, node) in tree.nodes.iter().enumerate() {
                let _ = match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        gain,
                    } => writeln!(
                        out,
                        "{t}\t{n}\tsplit\t{feature}\t{threshold}\t{left}\t{right}\t-\t{gain}"
                    ),
                    Node::Leaf { weight } => {
                        writeln!(out, "{t}\t{n}\tleaf\t-\t-\t-\t-\t{weight}\t-")
                    }
                };
            }
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; `origin` names the source in errors.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| err(1, "empty ensemble file".into()))?;
        let mut fields = header.split(' ');
        if fields.next() != Some(MAGIC) {
            return Err(err(1, format!("expected header starting with {MAGIC}")));
        }
        let kv: HashMap<&str, &str> = fields.filter_map(|f| f.split_once('=')).collect();
        fn get<T: FromStr>(kv: &HashMap<&str, &str>, key: &str) -> std::result::Result<T, String> {
            let raw = kv.get(key).ok_or_else(|| format!("header lacks `{key}`"))?;
            raw.parse()
                .map_err(|_| format!("bad value `{raw}` for `{key}`"))
        }
        let header_err = |m: String| err(1, m);
        let defaults = GbdtParams::default();
        let params = GbdtParams {
            learning_rate: get(&kv, "eta").map_err(header_err)?,
            max_depth: get(&kv, "max_depth").unwrap_or(defaults.max_depth),
            min_child_weight: get(&kv, "min_child_weight").unwrap_or(defaults.min_child_weight),
            lambda: get(&kv, "lambda").unwrap_or(defaults.lambda),
            gamma: get(&kv, "gamma").unwrap_or(defaults.gamma),
            n_estimators: get(&kv, "estimators").unwrap_or(defaults.n_estimators),
        };
        let base_score: f64 = get(&kv, "base_score").map_err(header_err)?;
        let num_features: usize = get(&kv, "features").map_err(header_err)?;
        let n_trees: usize = get(&kv, "trees").map_err(header_err)?;

        let mut trees: Vec<Tree> = (0..n_trees).map(|_| Tree { nodes: Vec::new() }).collect();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 9 {
                return Err(err(
                    lineno,
                    format!("expected 9 columns, found {}", cols.len()),
                ));
            }
            let num = |c: usize| -> Result<usize> {
                cols[c].parse().map_err(|_| {
                    err(
                        lineno,
                        format!("column {} is not an index: `{}`", c + 1, cols[c]),
                    )
                })
            };
            let float = |c: usize| -> Result<f64> {
                cols[c].parse().map_err(|_| {
                    err(
                        lineno,
                        format!("column {} is not a number: `{}`", c + 1, cols[c]),
                    )
                })
            };
            let (t, n) = (num(0)?, num(1)?);
            let tree = trees
                .get_mut(t)
                .ok_or_else(|| err(lineno, format!("tree {t} beyond header count {n_trees}")))?;
            if n != tree.nodes.len() {
                return Err(err(lineno, format!("node {n} out of order in tree {t}")));
            }
            let node = match cols[2] {
                "split" => Node::Split {
                    feature: num(3)?,
                    threshold: float(4)?,
                    left: num(5)?,
                    right: num(6)?,
                    gain: float(8)?,
                },
                "leaf" => Node::Leaf { weight: float(7)? },
                other => return Err(err(lineno, format!("unknown node kind `{other}`"))),
            };
            if let Node::Split { feature, .. } = node {
                if feature >= num_features {
                    return Err(err(lineno, format!("feature {feature} out of range")));
                }
            }
            tree.nodes.push(node);
        }
        for (t, tree) in trees.iter().enumerate() {
            let len = tree.nodes.len();
            let dangling = tree.nodes.iter().any(|node| match node {
                Node::Split { left, right, .. } => *left >= len || *right >= len,
                Node::Leaf { .. } => false,
            });
            if len == 0 || dangling {
                return Err(Error::Format(format!("{origin}: tree {t} is incomplete")));
            }
        }
        Ok(TreeEnsemble {
            trees,
            base_score,
            num_features,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?, &path.display().to_string())
    }
}
