//! Batched, differentiable versions of the memory kernels.

use super::addressing;
use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Graph, Var};

fn expect_shape(g: &Graph, op: &'static str, v: Var, shape: &[usize]) -> Result<()> {
    if g.shape(v) != shape {
        return Err(Error::Shape {
            op,
            lhs: shape.to_vec(),
            rhs: g.shape(v).to_vec(),
        });
    }
    Ok(())
}

struct UsageUpdate {
    batch: usize,
    n: usize,
    r: usize,
}

/// Usage update; `usage`, `write_weights` are `[B, N]`, `read_weights`
/// `[B, R, N]` and `free_gates` `[B, R]`.
pub fn usage_update(
    g: &mut Graph,
    usage: Var,
    write_weights: Var,
    read_weights: Var,
    free_gates: Var,
) -> Result<Var> {
    let s = g.shape(usage).to_vec();
    if s.len() != 2 {
        return Err(Error::Shape {
            op: "usage_update",
            lhs: vec![0, 0],
            rhs: s,
        });
    }
    let (batch, n) = (s[0], s[1]);
    let r = g.shape(free_gates).get(1).copied().unwrap_or(0);
    expect_shape(g, "usage_update", write_weights, &[batch, n])?;
    expect_shape(g, "usage_update", read_weights, &[batch, r, n])?;
    expect_shape(g, "usage_update", free_gates, &[batch, r])?;
    let mut out = Vec::with_capacity(batch * n);
    for b in 0..batch {
        out.extend(addressing::update_usage(
            &g.value(usage)[b * n..(b + 1) * n],
            &g.value(write_weights)[b * n..(b + 1) * n],
            &g.value(read_weights)[b * r * n..(b + 1) * r * n],
            &g.value(free_gates)[b * r..(b + 1) * r],
        ));
    }
    g.custom(
        &[usage, write_weights, read_weights, free_gates],
        vec![batch, n],
        out,
        Box::new(UsageUpdate { batch, n, r }),
    )
}

impl CustomOp for UsageUpdate {
    fn name(&self) -> &'static str {
        "usage_update"
    }

    fn backward(
        &self,
        k: usize,
        inputs: &[&[f64]],
        _out: &[f64],
        grad: &[f64],
        grad_in: &mut [f64],
    ) {
        let (n, r) = (self.n, self.r);
        for b in 0..self.batch {
            let u = &inputs[0][b * n..(b + 1) * n];
            let ww = &inputs[1][b * n..(b + 1) * n];
            let wr = &inputs[2][b * r * n..(b + 1) * r * n];
            let f = &inputs[3][b * r..(b + 1) * r];
            let gb = &grad[b * n..(b + 1) * n];
            for i in 0..n {
                let factors: Vec<f64> = (0..r).map(|h| 1.0 - f[h] * wr[h * n + i]).collect();
                let psi: f64 = factors.iter().product();
                let pre = u[i] + ww[i] - u[i] * ww[i];
                match k {
                    0 => grad_in[b * n + i] += gb[i] * psi * (1.0 - ww[i]),
                    1 => grad_in[b * n + i] += gb[i] * psi * (1.0 - u[i]),
                    _ => {
                        for h in 0..r {
                            let others: f64 =
                                (0..r).filter(|&o| o != h).map(|o| factors[o]).product();
                            let d_factor = gb[i] * pre * others;
                            if k == 2 {
                                grad_in[b * r * n + h * n + i] -= d_factor * f[h];
                            } else {
                                grad_in[b * r + h] -= d_factor * wr[h * n + i];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Allocation {
    batch: usize,
    n: usize,
}

/// Allocation weighting of `usage` `[B, N]`. The sort is treated as constant.
pub fn allocation(g: &mut Graph, usage: Var) -> Result<Var> {
    let s = g.shape(usage).to_vec();
    if s.len() != 2 {
        return Err(Error::Shape {
            op: "allocation",
            lhs: vec![0, 0],
            rhs: s,
        });
    }
    let (batch, n) = (s[0], s[1]);
    let mut out = Vec::with_capacity(batch * n);
    for b in 0..batch {
        out.extend(addressing::allocation_weighting(
            &g.value(usage)[b * n..(b + 1) * n],
        ));
    }
    g.custom(
        &[usage],
        vec![batch, n],
        out,
        Box::new(Allocation { batch, n }),
    )
}

impl CustomOp for Allocation {
    fn name(&self) -> &'static str {
        "allocation"
    }

    fn backward(
        &self,
        _k: usize,
        inputs: &[&[f64]],
        _out: &[f64],
        grad: &[f64],
        grad_in: &mut [f64],
    ) {
        let n = self.n;
        for b in 0..self.batch {
            let u = &inputs[0][b * n..(b + 1) * n];
            let gb = &grad[b * n..(b + 1) * n];
            let order = addressing::usage_order(u);
            // prefix[j] = product of the j smallest usages
            let mut prefix = vec![1.0; n];
            for j in 1..n {
                prefix[j] = prefix[j - 1] * u[order[j - 1]];
            }
            // tail = Σ_{j>k} g_j (1 - u_j) Π_{k<i<j} u_i, accumulated from the back
            let mut tail = 0.0;
            for kk in (0..n).rev() {
                let idx = order[kk];
                grad_in[b * n + idx] += prefix[kk] * (tail - gb[idx]);
                tail = gb[idx] * (1.0 - u[idx]) + u[idx] * tail;
            }
        }
    }
}

struct LinkUpdate {
    batch: usize,
    n: usize,
}

/// Temporal link update; `link` is `[B, N, N]`, `precedence` and
/// `write_weights` `[B, N]`.
pub fn link_update(g: &mut Graph, link: Var, precedence: Var, write_weights: Var) -> Result<Var> {
    let s = g.shape(precedence).to_vec();
    if s.len() != 2 {
        return Err(Error::Shape {
            op: "link_update",
            lhs: vec![0, 0],
            rhs: s,
        });
    }
    let (batch, n) = (s[0], s[1]);
    expect_shape(g, "link_update", link, &[batch, n, n])?;
    expect_shape(g, "link_update", write_weights, &[batch, n])?;
    let mut out = Vec::with_capacity(batch * n * n);
    for b in 0..batch {
        let (l, _) = addressing::update_temporal_links(
            &g.value(link)[b * n * n..(b + 1) * n * n],
            &g.value(precedence)[b * n..(b + 1) * n],
            &g.value(write_weights)[b * n..(b + 1) * n],
        );
        out.extend(l);
    }
    g.custom(
        &[link, precedence, write_weights],
        vec![batch, n, n],
        out,
        Box::new(LinkUpdate { batch, n }),
    )
}

impl CustomOp for LinkUpdate {
    fn name(&self) -> &'static str {
        "link_update"
    }

    fn backward(
        &self,
        k: usize,
        inputs: &[&[f64]],
        _out: &[f64],
        grad: &[f64],
        grad_in: &mut [f64],
    ) {
        let n = self.n;
        for b in 0..self.batch {
            let l = &inputs[0][b * n * n..(b + 1) * n * n];
            let p = &inputs[1][b * n..(b + 1) * n];
            let w = &inputs[2][b * n..(b + 1) * n];
            let gb = &grad[b * n * n..(b + 1) * n * n];
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let gij = gb[i * n + j];
                    match k {
                        0 => grad_in[b * n * n + i * n + j] += gij * (1.0 - w[i] - w[j]),
                        1 => grad_in[b * n + j] += gij * w[i],
                        _ => {
                            grad_in[b * n + i] += gij * (p[j] - l[i * n + j]);
                            grad_in[b * n + j] -= gij * l[i * n + j];
                        }
                    }
                }
            }
        }
    }
}

struct MemoryWrite {
    batch: usize,
    n: usize,
    w: usize,
}

/// Erase-then-add write; `memory` `[B, N, W]`, `write_weights` `[B, N]`,
/// `erase` and `write_vector` `[B, W]`.
pub fn memory_write(
    g: &mut Graph,
    memory: Var,
    write_weights: Var,
    erase: Var,
    write_vector: Var,
) -> Result<Var> {
    let s = g.shape(memory).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape {
            op: "memory_write",
            lhs: vec![0, 0, 0],
            rhs: s,
        });
    }
    let (batch, n, w) = (s[0], s[1], s[2]);
    expect_shape(g, "memory_write", write_weights, &[batch, n])?;
    expect_shape(g, "memory_write", erase, &[batch, w])?;
    expect_shape(g, "memory_write", write_vector, &[batch, w])?;
    let mut out = Vec::with_capacity(batch * n * w);
    for b in 0..batch {
        out.extend(addressing::write_memory(
            &g.value(memory)[b * n * w..(b + 1) * n * w],
            w,
            &g.value(write_weights)[b * n..(b + 1) * n],
            &g.value(erase)[b * w..(b + 1) * w],
            &g.value(write_vector)[b * w..(b + 1) * w],
        ));
    }
    g.custom(
        &[memory, write_weights, erase, write_vector],
        vec![batch, n, w],
        out,
        Box::new(MemoryWrite { batch, n, w }),
    )
}

impl CustomOp for MemoryWrite {
    fn name(&self) -> &'static str {
        "memory_write"
    }

    fn backward(
        &self,
        k: usize,
        inputs: &[&[f64]],
        _out: &[f64],
        grad: &[f64],
        grad_in: &mut [f64],
    ) {
        let (n, w) = (self.n, self.w);
        for b in 0..self.batch {
            let m = &inputs[0][b * n * w..(b + 1) * n * w];
            let ww = &inputs[1][b * n..(b + 1) * n];
            let e = &inputs[2][b * w..(b + 1) * w];
            let v = &inputs[3][b * w..(b + 1) * w];
            let gb = &grad[b * n * w..(b + 1) * n * w];
            for i in 0..n {
                for j in 0..w {
                    let gij = gb[i * w + j];
                    match k {
                        0 => grad_in[b * n * w + i * w + j] += gij * (1.0 - ww[i] * e[j]),
                        1 => grad_in[b * n + i] += gij * (v[j] - m[i * w + j] * e[j]),
                        2 => grad_in[b * w + j] -= gij * m[i * w + j] * ww[i],
                        _ => grad_in[b * w + j] += gij * ww[i],
                    }
                }
            }
        }
    }
}
