use super::{logit, FeatureMatrix, GbdtParams, Node, Tree, TreeEnsemble};
use crate::error::{Error, Result};
use crate::tensor::sigmoid;

/// Gains within this relative distance of the incumbent do not displace it,
/// so equal gains resolve to the lowest feature, then the lowest threshold.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
    pub right_grad: f64,
    pub right_hess: f64,
}

pub(crate) fn improves(gain: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) => gain > b + TIE_TOLERANCE * b.abs().max(1.0),
    }
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`.
pub(crate) fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Distinct sorted values of every feature and each row's bin in them.
struct Bins {
    values: Vec<Vec<f64>>,
    /// Column-major: `bins[f][row]`.
    bins: Vec<Vec<u32>>,
    offsets: Vec<usize>,
    total: usize,
}

impl Bins {
    fn new(x: &FeatureMatrix) -> Self {
        let mut values = Vec::with_capacity(x.cols());
        let mut bins = Vec::with_capacity(x.cols());
        let mut offsets = Vec::with_capacity(x.cols());
        let mut total = 0;
        for f in 0..x.cols() {
            let col: Vec<f64> = (0..x.rows()).map(|r| x.get(r, f)).collect();
            let mut distinct = col.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            let idx = col
                .iter()
                .map(|v| distinct.partition_point(|d| d < v) as u32)
                .collect();
            offsets.push(total);
            total += distinct.len();
            values.push(distinct);
            bins.push(idx);
        }
        Bins {
            values,
            bins,
            offsets,
            total,
        }
    }

    /// Interleaved `(grad, hess, count)` per bin over `rows`.
    fn histogram(&self, rows: &[usize], grad: &[f64], hess: &[f64]) -> Vec<f64> {
        let mut hist = vec![0.0; 3 * self.total];
        for (f, col) in self.bins.iter().enumerate() {
            let base = self.offsets[f];
            for &r in rows {
                let at = 3 * (base + col[r] as usize);
                hist[at] += grad[r];
                hist[at + 1] += hess[r];
                hist[at + 2] += 1.0;
            }
        }
        hist
    }

    fn best_split(
        &self,
        hist: &[f64],
        g: f64,
        h: f64,
        params: &GbdtParams,
    ) -> Option<SplitCandidate> {
        let mut best: Option<SplitCandidate> = None;
        for (f, values) in self.values.iter().enumerate() {
            let base = self.offsets[f];
            let (mut gl, mut hl) = (0.0, 0.0);
            let mut prev: Option<f64> = None;
            for (b, &value) in values.iter().enumerate() {
                let at = 3 * (base + b);
                if hist[at + 2] == 0.0 {
                    continue;
                }
                if let Some(p) = prev {
                    let (gr, hr) = (g - gl, h - hl);
                    if hl >= params.min_child_weight && hr >= params.min_child_weight {
                        let gain = split_gain(gl, hl, gr, hr, params.lambda, params.gamma);
                        if gain > 0.0 && improves(gain, best.as_ref().map(|c| c.gain)) {
                            best = Some(SplitCandidate {
                                feature: f,
                                threshold: p + (value - p) / 2.0,
                                gain,
                                left_grad: gl,
                                left_hess: hl,
                                right_grad: gr,
                                right_hess: hr,
                            });
                        }
                    }
                }
                gl += hist[at];
                hl += hist[at + 1];
                prev = Some(value);
            }
        }
        best
    }
}

/// Best split of `rows` under the given gradients, if any has positive gain.
pub fn best_split(
    x: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[usize],
    params: &GbdtParams,
) -> Option<SplitCandidate> {
    let sub = x.select(rows);
    let g: Vec<f64> = rows.iter().map(|&r| grad[r]).collect();
    let h: Vec<f64> = rows.iter().map(|&r| hess[r]).collect();
    let bins = Bins::new(&sub);
    let local: Vec<usize> = (0..rows.len()).collect();
    let hist = bins.histogram(&local, &g, &h);
    bins.best_split(&hist, g.iter().sum(), h.iter().sum(), params)
}

struct Grower<'a> {
    x: &'a FeatureMatrix,
    bins: &'a Bins,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: &mut [usize], hist: Vec<f64>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r]).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            weight: leaf_weight(g, h, self.params.lambda),
        });
        if depth >= self.params.max_depth {
            return id;
        }
        let Some(split) = self.bins.best_split(&hist, g, h, self.params) else {
            return id;
        };
        let mut n_left = 0;
        for i in 0..rows.len() {
            if self.x.get(rows[i], split.feature) < split.threshold {
                rows.swap(i, n_left);
                n_left += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(n_left);
        let (left_hist, right_hist) = if left_rows.len() <= right_rows.len() {
            let small = self.bins.histogram(left_rows, self.grad, self.hess);
            let large = hist.iter().zip(&small).map(|(p, s)| p - s).collect();
            (small, large)
        } else {
            let small = self.bins.histogram(right_rows, self.grad, self.hess);
            let large = hist.iter().zip(&small).map(|(p, s)| p - s).collect();
            (large, small)
        };
        drop(hist);
        let left = self.grow(left_rows, left_hist, depth + 1);
        let right = self.grow(right_rows, right_hist, depth + 1);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            gain: split.gain,
        };
        id
    }
}

fn validate(x: &FeatureMatrix, labels: &[f64], params: &GbdtParams) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::Empty("no training rows".into()));
    }
    if x.rows() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::InvalidArgument(format!("label {l} is not 0 or 1")));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("features must be finite".into()));
    }
    if params.learning_rate.is_nan()
        || params.learning_rate <= 0.0
        || params.lambda < 0.0
        || params.min_child_weight < 0.0
        || params.gamma < 0.0
    {
        return Err(Error::InvalidArgument(format!(
            "invalid boosting parameters {params:?}"
        )));
    }
    Ok(())
}

/// Fits `params.n_estimators` trees; `on_round(round, train_log_loss)` is
/// called after each tree.
pub fn fit_with<F: FnMut(usize, f64)>(
    x: &FeatureMatrix,
    labels: &[f64],
    params: &GbdtParams,
    mut on_round: F,
) -> Result<TreeEnsemble> {
    validate(x, labels, params)?;
    let positives: f64 = labels.iter().sum();
    let prior = positives / labels.len() as f64;
    let mut ensemble = TreeEnsemble {
        trees: Vec::new(),
        base_score: logit(prior),
        num_features: x.cols(),
        params: params.clone(),
    };
    if positives == 0.0 || positives == labels.len() as f64 {
        return Ok(ensemble);
    }
    let bins = Bins::new(x);
    let mut margin = vec![ensemble.base_score; x.rows()];
    let mut grad = vec![0.0; x.rows()];
    let mut hess = vec![0.0; x.rows()];
    let mut rows: Vec<usize> = (0..x.rows()).collect();
    for round in 0..params.n_estimators {
        for i in 0..x.rows() {
            let p = sigmoid(margin[i]);
            grad[i] = p - labels[i];
            hess[i] = p * (1.0 - p);
        }
        let hist = bins.histogram(&rows, &grad, &hess);
        let mut grower = Grower {
            x,
            bins: &bins,
            grad: &grad,
            hess: &hess,
            params,
            nodes: Vec::new(),
        };
        grower.grow(&mut rows, hist, 0);
        let tree = Tree {
            nodes: grower.nodes,
        };
        for (i, m) in margin.iter_mut().enumerate() {
            *m += params.learning_rate * tree.predict(x.row(i));
        }
        ensemble.trees.push(tree);
        on_round(round, log_loss(&margin, labels));
    }
    Ok(ensemble)
}

pub fn fit(x: &FeatureMatrix, labels: &[f64], params: &GbdtParams) -> Result<TreeEnsemble> {
    fit_with(x, labels, params, |_, _| {})
}

/// Mean logistic loss of `margins` against 0/1 `labels`.
pub fn log_loss(margins: &[f64], labels: &[f64]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, computed stably
            m.max(0.0) + (-m.abs()).exp().ln_1p() - y * m
        })
        .sum();
    total / labels.len() as f64
}
