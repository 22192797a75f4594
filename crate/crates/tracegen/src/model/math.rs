//! Dense f64 kernels used by the transformer: three matmul orientations,
//! layer normalization, GELU, and a stable row softmax.
//!
//! All kernels are single-threaded and accumulate in a fixed order, so every
//! result is bit-reproducible; parallelism happens one level up (across the
//! sequences of a training step), where outputs are reduced in a fixed order.

/// C += A * B with A (m x k), B (k x n), C (m x n), all row-major.
pub fn mm_ab(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// C += A^T * B with A (m x k), B (m x n), C (k x n).
pub fn mm_atb(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// C += A * B^T with A (m x k), B (n x k), C (m x n).
///
/// The dot product runs in four independent accumulator lanes so the
/// floating-point adds pipeline; lane order is fixed, so results stay
/// bit-reproducible.
pub fn mm_abt(c: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    let k4 = k - k % 4;
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, c_v) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = [0.0f64; 4];
            let mut p = 0;
            while p < k4 {
                acc[0] += a_row[p] * b_row[p];
                acc[1] += a_row[p + 1] * b_row[p + 1];
                acc[2] += a_row[p + 2] * b_row[p + 2];
                acc[3] += a_row[p + 3] * b_row[p + 3];
                p += 4;
            }
            let mut tail = 0.0;
            while p < k {
                tail += a_row[p] * b_row[p];
                p += 1;
            }
            *c_v += ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail;
        }
    }
}

/// y += x (elementwise).
pub fn add_assign(y: &mut [f64], x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (a, &b) in y.iter_mut().zip(x) {
        *a += b;
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row mean and reciprocal standard deviation for layer normalization.
#[derive(Debug, Clone, Default)]
pub struct LnStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// y = gamma * (x - mean) / std + beta, row-wise over (rows x d).
pub fn layernorm_fwd(
    y: &mut [f64],
    stats: &mut LnStats,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    rows: usize,
    d: usize,
) {
    stats.mean.clear();
    stats.rstd.clear();
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        let yr = &mut y[r * d..(r + 1) * d];
        for i in 0..d {
            yr[i] = gamma[i] * (xr[i] - mean) * rstd + beta[i];
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
}

/// Backward of layernorm_fwd. Accumulates into dx, dgamma, dbeta.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_bwd(
    dx: &mut [f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
    dy: &[f64],
    x: &[f64],
    stats: &LnStats,
    gamma: &[f64],
    rows: usize,
    d: usize,
) {
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mean = stats.mean[r];
        let rstd = stats.rstd[r];
        // dnorm = dy * gamma; reduce its mean and its xhat-weighted mean.
        let mut dnorm_mean = 0.0;
        let mut dnorm_xhat_mean = 0.0;
        for i in 0..d {
            let xhat = (xr[i] - mean) * rstd;
            let dnorm = dyr[i] * gamma[i];
            dnorm_mean += dnorm;
            dnorm_xhat_mean += dnorm * xhat;
        }
        dnorm_mean /= d as f64;
        dnorm_xhat_mean /= d as f64;
        let dxr = &mut dx[r * d..(r + 1) * d];
        for i in 0..d {
            let xhat = (xr[i] - mean) * rstd;
            let dnorm = dyr[i] * gamma[i];
            dxr[i] += (dnorm - dnorm_mean - xhat * dnorm_xhat_mean) * rstd;
            dgamma[i] += dyr[i] * xhat;
            dbeta[i] += dyr[i];
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

/// d(gelu)/dx at x.
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// In-place stable softmax over one row. -inf entries get probability 0.
/// Returns false if every entry is -inf (or any is NaN).
pub fn softmax_row(row: &mut [f64]) -> bool {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v.is_nan() {
            return false;
        }
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_ab(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn seq(len: usize) -> Vec<f64> {
        (0..len).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect()
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (5, 7, 4);
        let a = seq(m * k);
        let b = seq(k * n);
        let want = naive_ab(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        mm_ab(&mut c, &a, &b, m, k, n);
        assert_eq!(c, want);

        // A^T path: feed A transposed so the product is the same.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c = vec![0.0; m * n];
        mm_atb(&mut c, &at, &b, k, m, n);
        assert_eq!(c, want);

        // B^T path.
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        mm_abt(&mut c, &a, &bt, m, k, n);
        assert_eq!(c, want);
    }

    #[test]
    fn layernorm_normalizes_rows() {
        let d = 8;
        let x = seq(2 * d);
        let gamma = vec![1.0; d];
        let beta = vec![0.0; d];
        let mut y = vec![0.0; 2 * d];
        let mut stats = LnStats::default();
        layernorm_fwd(&mut y, &mut stats, &x, &gamma, &beta, 2, d);
        for r in 0..2 {
            let row = &y[r * d..(r + 1) * d];
            let mean: f64 = row.iter().sum::<f64>() / d as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3); // eps shifts it slightly
        }
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0, -0.7, 0.0, 0.3, 1.9, 4.0] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!(
                (gelu_grad(x) - num).abs() < 1e-8,
                "gelu'({x}) = {} vs {num}",
                gelu_grad(x)
            );
        }
    }

    #[test]
    fn softmax_handles_neg_inf() {
        let mut row = vec![1.0, f64::NEG_INFINITY, 0.0];
        assert!(softmax_row(&mut row));
        assert_eq!(row[1], 0.0);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut dead = vec![f64::NEG_INFINITY; 3];
        assert!(!softmax_row(&mut dead));
    }
}
