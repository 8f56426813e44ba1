//! Memory addressing kernels for a single example.
//!
//! Matrices are row-major slices: memory is `N x W`, the link matrix `N x N`.
//! The batched graph ops in [`super::ops`] call these for their forward pass.

use crate::tensor::{cosine_forward, softmax_rows, CosineDims};

/// `softmax_i(strength * cosine(memory[i], key))`.
pub fn content_weighting(memory: &[f64], word_size: usize, key: &[f64], strength: f64) -> Vec<f64> {
    let n = memory.len() / word_size;
    let dims = CosineDims {
        batch: 1,
        heads: 1,
        rows: n,
        width: word_size,
    };
    let mut out = vec![0.0; n];
    cosine_forward(&dims, memory, key, &mut out);
    out.iter_mut().for_each(|c| *c *= strength);
    softmax_rows(&mut out, n);
    out
}

/// Locations sorted by ascending usage; ties keep index order.
pub fn usage_order(usage: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..usage.len()).collect();
    order.sort_by(|&a, &b| usage[a].total_cmp(&usage[b]));
    order
}

/// `a[φ_j] = (1 - u[φ_j]) * Π_{i<j} u[φ_i]` over the ascending-usage order φ.
pub fn allocation_weighting(usage: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; usage.len()];
    let mut prod = 1.0;
    for idx in usage_order(usage) {
        out[idx] = (1.0 - usage[idx]) * prod;
        prod *= usage[idx];
    }
    out
}

/// `u' = (u + w_w - u ∘ w_w) ∘ ψ` with retention `ψ = Π_r (1 - f_r w_r)`.
///
/// `read_weights` holds `R` rows of length `N`; `write_weights` and
/// `read_weights` are the previous step's.
pub fn update_usage(
    usage: &[f64],
    write_weights: &[f64],
    read_weights: &[f64],
    free_gates: &[f64],
) -> Vec<f64> {
    let n = usage.len();
    (0..n)
        .map(|i| {
            let psi: f64 = free_gates
                .iter()
                .enumerate()
                .map(|(r, f)| 1.0 - f * read_weights[r * n + i])
                .product();
            (usage[i] + write_weights[i] - usage[i] * write_weights[i]) * psi
        })
        .collect()
}

/// Returns `(L', p')` with
/// `L'[i,j] = (1 - w[i] - w[j]) L[i,j] + w[i] p[j]` off the diagonal, zero on it,
/// and `p' = (1 - Σ w) p + w`.
pub fn update_temporal_links(
    link: &[f64],
    precedence: &[f64],
    write_weights: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = precedence.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let wi = write_weights[i];
        for j in 0..n {
            if i != j {
                out[i * n + j] =
                    (1.0 - wi - write_weights[j]) * link[i * n + j] + wi * precedence[j];
            }
        }
    }
    let total: f64 = write_weights.iter().sum();
    let prec = precedence
        .iter()
        .zip(write_weights)
        .map(|(p, w)| (1.0 - total) * p + w)
        .collect();
    (out, prec)
}

/// `M' = M ∘ (E - w eᵀ) + w vᵀ`. Rows with zero write weight are copied unchanged.
pub fn write_memory(
    memory: &[f64],
    word_size: usize,
    write_weights: &[f64],
    erase: &[f64],
    write_vector: &[f64],
) -> Vec<f64> {
    let mut out = memory.to_vec();
    for (i, &w) in write_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let row = &mut out[i * word_size..(i + 1) * word_size];
        for j in 0..word_size {
            row[j] = row[j] * (1.0 - w * erase[j]) + w * write_vector[j];
        }
    }
    out
}

/// `r[j] = Σ_i M[i,j] w[i]`.
pub fn read_memory(memory: &[f64], word_size: usize, read_weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; word_size];
    for (i, &w) in read_weights.iter().enumerate() {
        for (o, m) in out
            .iter_mut()
            .zip(&memory[i * word_size..(i + 1) * word_size])
        {
            *o += w * m;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_give_uniform_content_weighting() {
        let m = [0.3, -1.0, 2.0].repeat(5);
        let w = content_weighting(&m, 3, &[1.0, 0.5, -0.2], 7.0);
        assert!(w.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn sharp_key_selects_its_row() {
        let m = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let w = content_weighting(&m, 3, &[0.0, 1.0, 0.0], 200.0);
        assert!(w[1] > 1.0 - 1e-12);
    }

    #[test]
    fn allocation_edge_cases() {
        assert!(allocation_weighting(&[1.0; 4]).iter().all(|&a| a == 0.0));
        assert_eq!(allocation_weighting(&[0.0; 4]), vec![1.0, 0.0, 0.0, 0.0]);
        // order: 1 (0.1), 0 (0.5), 2 (0.9)
        let a = allocation_weighting(&[0.5, 0.1, 0.9]);
        let expected = [0.5 * 0.1, 0.9, 0.1 * 0.1 * 0.5];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn no_write_leaves_links() {
        let link = [0.0, 0.2, 0.3, 0.0];
        let prec = [0.4, 0.1];
        let (l, p) = update_temporal_links(&link, &prec, &[0.0, 0.0]);
        assert_eq!(l, link);
        assert_eq!(p, prec);
    }

    #[test]
    fn first_write_sets_precedence() {
        let (l, p) = update_temporal_links(&[0.0; 9], &[0.0; 3], &[0.0, 1.0, 0.0]);
        assert!(l.iter().all(|&x| x == 0.0));
        assert_eq!(p, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn full_erase_then_write() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let out = write_memory(&m, 2, &[0.0, 1.0, 0.0], &[1.0, 1.0], &[9.0, -9.0]);
        assert_eq!(out, vec![1.0, 2.0, 9.0, -9.0, 5.0, 6.0]);
        assert_eq!(
            write_memory(&m, 2, &[0.0; 3], &[0.3, 0.2], &[1.0, 1.0]),
            m.to_vec()
        );
    }

    #[test]
    fn reads() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(read_memory(&m, 2, &[0.0, 0.0, 1.0]), vec![5.0, 6.0]);
        let avg = read_memory(&m, 2, &[1.0 / 3.0; 3]);
        assert!((avg[0] - 3.0).abs() < 1e-15 && (avg[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn usage_with_no_reads_or_writes_is_unchanged() {
        let u = [0.2, 0.7];
        assert_eq!(update_usage(&u, &[0.0, 0.0], &[0.0; 2], &[1.0]), u.to_vec());
    }
}
