//! Direct, loop-by-loop evaluations of the addressing, attention and split
//! formulas. None of them call into the library's kernels.

use memnorm::dnc::InterfaceVector;
use memnorm::gbdt::{GbdtParams, SplitCandidate};
use memnorm::seq2seq::{Encoded, Seq2Seq};
use memnorm::tensor::{Graph, Parameters, Tensor, COSINE_EPS};

/// `exp(β D(k, M_i)) / Σ_j exp(β D(k, M_j))` with
/// `D(u, v) = u·v / (|u| |v| + ε)`.
pub fn content_weighting(memory: &[Vec<f64>], key: &[f64], strength: f64) -> Vec<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sims: Vec<f64> = memory
        .iter()
        .map(|row| {
            let dot: f64 = row.iter().zip(key).map(|(a, b)| a * b).sum();
            dot / (norm(row) * norm(key) + COSINE_EPS)
        })
        .collect();
    let z: f64 = sims.iter().map(|s| (strength * s).exp()).sum();
    sims.iter().map(|s| (strength * s).exp() / z).collect()
}

/// `a_i = (1 - u_i) Π u_j` over every `j` ranked before `i`, ranking by
/// usage then index. No sorting involved.
pub fn allocation(u: &[f64]) -> Vec<f64> {
    (0..u.len())
        .map(|i| {
            let before: f64 = (0..u.len())
                .filter(|&j| u[j] < u[i] || (u[j] == u[i] && j < i))
                .map(|j| u[j])
                .product();
            (1.0 - u[i]) * before
        })
        .collect()
}

/// Link and precedence update built from explicit outer products:
/// `L' = (J - w 1ᵀ - 1 wᵀ) ∘ L + w pᵀ`, diagonal then cleared.
pub fn temporal_links(link: &[Vec<f64>], prec: &[f64], w: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = w.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let keep = 1.0 - w[i] - w[j];
            out[i][j] = keep * link[i][j] + w[i] * prec[j];
        }
    }
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    let sum: f64 = w.iter().sum();
    let p = (0..n).map(|i| (1.0 - sum) * prec[i] + w[i]).collect();
    (out, p)
}

/// `M ∘ (E - w eᵀ) + w vᵀ` with every matrix materialized.
pub fn write_memory(memory: &[Vec<f64>], w: &[f64], erase: &[f64], v: &[f64]) -> Vec<Vec<f64>> {
    let (n, width) = (memory.len(), erase.len());
    let retain: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..width).map(|j| 1.0 - w[i] * erase[j]).collect())
        .collect();
    let add: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..width).map(|j| w[i] * v[j]).collect())
        .collect();
    (0..n)
        .map(|i| {
            (0..width)
                .map(|j| memory[i][j] * retain[i][j] + add[i][j])
                .collect()
        })
        .collect()
}

/// `Mᵀ w`, one column at a time.
pub fn read_memory(memory: &[Vec<f64>], w: &[f64]) -> Vec<f64> {
    let width = memory[0].len();
    (0..width)
        .map(|j| (0..memory.len()).map(|i| memory[i][j] * w[i]).sum())
        .collect()
}

/// Additive attention for one example: `e_j = vᵀ tanh(Wq + U h_j)`,
/// `α = softmax(e)`, context `Σ α_j h_j`. Matrices are row-major `n x units`.
pub fn attention(
    ann: &[Vec<f64>],
    query: &[f64],
    wa: &[f64],
    ua: &[f64],
    va: &[f64],
    units: usize,
) -> (Vec<f64>, Vec<f64>) {
    let n = query.len();
    let proj =
        |x: &[f64], m: &[f64], j: usize| (0..n).map(|i| x[i] * m[i * units + j]).sum::<f64>();
    let scores: Vec<f64> = ann
        .iter()
        .map(|h| {
            (0..units)
                .map(|j| va[j] * (proj(query, wa, j) + proj(h, ua, j)).tanh())
                .sum()
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let ctx = (0..n)
        .map(|k| ann.iter().zip(&alpha).map(|(h, a)| a * h[k]).sum())
        .collect();
    (ctx, alpha)
}

/// Runs the model's attention on explicit annotations for a batch of one.
pub fn model_attention(
    m: &Seq2Seq,
    params: &Parameters,
    ann: &[Vec<f64>],
    query: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let p = m.bind(&bound).unwrap();
    let n = query.len();
    let enc = Encoded {
        outputs: ann
            .iter()
            .map(|h| g.constant(Tensor::new(vec![1, n], h.clone()).unwrap()))
            .collect(),
        lengths: vec![ann.len()],
        state: m.dnc().initial_state(&mut g, 1),
    };
    let keys = m.attention_keys(&mut g, &p, &enc).unwrap();
    let q = g.constant(Tensor::new(vec![1, n], query.to_vec()).unwrap());
    let (ctx, alpha) = m.attention_context(&mut g, &p, &keys, q).unwrap();
    (g.value(ctx).to_vec(), g.value(alpha).to_vec())
}

/// Attention through the model and through [`attention`] on the same inputs.
pub fn attention_pair(
    m: &Seq2Seq,
    params: &Parameters,
    ann: &[Vec<f64>],
    query: &[f64],
) -> [(Vec<f64>, Vec<f64>); 2] {
    let get = |p: &str| params.get(p).unwrap().data().to_vec();
    let units = m.config().attention_units;
    [
        model_attention(m, params, ann, query),
        attention(
            ann,
            query,
            &get("attn/query"),
            &get("attn/keys"),
            &get("attn/score"),
            units,
        ),
    ]
}

/// Tries every feature and every midpoint between consecutive distinct values,
/// summing gradients directly. Same tie rule as the library: a later candidate
/// must beat the incumbent by a relative 1e-12.
pub fn exhaustive_split(
    rows: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    p: &GbdtParams,
) -> Option<SplitCandidate> {
    let (gt, ht): (f64, f64) = (g.iter().sum(), h.iter().sum());
    let mut best: Option<SplitCandidate> = None;
    for f in 0..rows[0].len() {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (mut gl, mut hl) = (0.0, 0.0);
            for (i, r) in rows.iter().enumerate() {
                if r[f] < t {
                    gl += g[i];
                    hl += h[i];
                }
            }
            let (gr, hr) = (gt - gl, ht - hl);
            if hl < p.min_child_weight || hr < p.min_child_weight {
                continue;
            }
            let gain = 0.5
                * (gl * gl / (hl + p.lambda) + gr * gr / (hr + p.lambda)
                    - gt * gt / (ht + p.lambda))
                - p.gamma;
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain + 1e-12 * b.gain.abs().max(1.0),
            };
            if gain > 0.0 && better {
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: t,
                    gain,
                    left_grad: gl,
                    left_hess: hl,
                    right_grad: gr,
                    right_hess: hr,
                });
            }
        }
    }
    best
}

/// Same feature, threshold and gain within `tol`, or both absent.
pub fn same_split(
    a: &Option<SplitCandidate>,
    b: &Option<SplitCandidate>,
    tol: f64,
) -> Result<(), String> {
    match (a, b) {
        (None, None) => Ok(()),
        (Some(x), Some(y))
            if x.feature == y.feature
                && (x.threshold - y.threshold).abs() <= tol
                && (x.gain - y.gain).abs() <= tol =>
        {
            Ok(())
        }
        _ => Err(format!("{a:?} vs {b:?}")),
    }
}

/// Inverts every activation of a parsed interface vector. Softmax only fixes
/// logits up to a constant, so each head's read modes take their first entry
/// from `raw`.
pub fn unparse_interface(iv: &InterfaceVector, raw: &[f64]) -> Vec<f64> {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let inv_oneplus = |s: f64| (s - 1.0).exp_m1().ln();
    let mut back: Vec<f64> = iv.read_keys.concat();
    back.extend(iv.read_strengths.iter().map(|&s| inv_oneplus(s)));
    back.extend(&iv.write_key);
    back.push(inv_oneplus(iv.write_strength));
    back.extend(iv.erase.iter().map(|&p| logit(p)));
    back.extend(&iv.write_vector);
    back.extend(iv.free_gates.iter().map(|&p| logit(p)));
    back.push(logit(iv.allocation_gate));
    back.push(logit(iv.write_gate));
    for m in &iv.read_modes {
        let anchor = raw[back.len()];
        back.extend(m.iter().map(|x| (x / m[0]).ln() + anchor));
    }
    back
}
