//! Dense row-major kernels for the hand-written forward/backward passes.
//!
//! Matrices are `&[f64]` slices with explicit dimensions; `acc` selects
//! accumulate vs overwrite so the same kernels serve gradient accumulation.

/// C[m×n] = A[m×k] · B[k×n]
pub fn mm_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !acc {
        out.fill(0.0);
    }
    for i in 0..m {
        for p in 0..k {
            let a_ip = a[i * k + p];
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
}

/// C[m×n] = A[m×k] · B[n×k]ᵀ
pub fn mm_nt(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            let slot = &mut out[i * n + j];
            *slot = if acc { *slot + dot } else { dot };
        }
    }
}

/// C[m×n] = A[k×m]ᵀ · B[k×n]
pub fn mm_tn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize, acc: bool) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if !acc {
        out.fill(0.0);
    }
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_pi = a_row[i];
            if a_pi == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += a_pi * b_row[j];
            }
        }
    }
}

/// Add a bias row to every row of x[rows×cols].
pub fn add_bias(x: &mut [f64], bias: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(bias.len(), cols);
    for r in 0..rows {
        for c in 0..cols {
            x[r * cols + c] += bias[c];
        }
    }
}

/// db += column sums of dy[rows×cols].
pub fn bias_grad(db: &mut [f64], dy: &[f64], rows: usize, cols: usize) {
    debug_assert_eq!(db.len(), cols);
    for r in 0..rows {
        for c in 0..cols {
            db[c] += dy[r * cols + c];
        }
    }
}

/// In-place stable softmax over a row; -inf entries get probability 0.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Stable log-softmax of a row; -inf entries stay -inf.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return row.to_vec();
    }
    // exp(-inf - max) contributes exactly 0, so masked entries drop out.
    let log_sum = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter()
        .map(|&v| {
            if v == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                v - log_sum
            }
        })
        .collect()
}

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Exact derivative of the tanh-form GELU.
pub fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-row layer normalization cache: normalized values and 1/std per row.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub const LN_EPS: f64 = 1e-5;

/// y[rows×cols] = gain ∘ (x - mean)/std + bias, per row.
pub fn layernorm(
    out: &mut [f64],
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    rows: usize,
    cols: usize,
) -> LnCache {
    let mut xhat = vec![0.0; rows * cols];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean: f64 = row.iter().sum::<f64>() / cols as f64;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = s;
        for c in 0..cols {
            let h = (row[c] - mean) * s;
            xhat[r * cols + c] = h;
            out[r * cols + c] = gain[c] * h + bias[c];
        }
    }
    LnCache { xhat, inv_std }
}

/// dx += backward of layernorm; accumulates dgain/dbias.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    dx: &mut [f64],
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    rows: usize,
    cols: usize,
) {
    for r in 0..rows {
        let dy_row = &dy[r * cols..(r + 1) * cols];
        let xhat_row = &cache.xhat[r * cols..(r + 1) * cols];
        let s = cache.inv_std[r];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..cols {
            let dxhat = dy_row[c] * gain[c];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat_row[c];
            dgain[c] += dy_row[c] * xhat_row[c];
            dbias[c] += dy_row[c];
        }
        mean_dxhat /= cols as f64;
        mean_dxhat_xhat /= cols as f64;
        for c in 0..cols {
            let dxhat = dy_row[c] * gain[c];
            dx[r * cols + c] += s * (dxhat - mean_dxhat - xhat_row[c] * mean_dxhat_xhat);
        }
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_agrees_with_hand_product() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        mm_nn(&mut c, &a, &b, 2, 2, 2, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);

        let mut c_nt = [0.0; 4];
        // A · Bᵀ
        mm_nt(&mut c_nt, &a, &b, 2, 2, 2, false);
        assert_eq!(c_nt, [17.0, 23.0, 39.0, 53.0]);

        let mut c_tn = [0.0; 4];
        // Aᵀ · B
        mm_tn(&mut c_tn, &a, &b, 2, 2, 2, false);
        assert_eq!(c_tn, [26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn softmax_row_handles_neg_inf_mask() {
        let mut row = [f64::NEG_INFINITY, 0.0, 0.0, 0.0];
        softmax_row(&mut row);
        assert_eq!(row[0], 0.0);
        assert!((row[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_matches_softmax_log() {
        let row = [0.3, -1.2, 2.0, 0.0];
        let ls = log_softmax_row(&row);
        let mut sm = row;
        softmax_row(&mut sm);
        for (a, b) in ls.iter().zip(sm.iter()) {
            assert!((a.exp() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_prime_matches_finite_difference() {
        for &x in &[-2.0, -0.5, 0.0, 0.1, 1.7] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_prime(x) - fd).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn layernorm_rows_are_standardized() {
        let x = [1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 1.0, 2.0];
        let gain = [1.0; 4];
        let bias = [0.0; 4];
        let mut y = [0.0; 8];
        layernorm(&mut y, &x, &gain, &bias, 2, 4);
        for r in 0..2 {
            let row = &y[r * 4..(r + 1) * 4];
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }
}
