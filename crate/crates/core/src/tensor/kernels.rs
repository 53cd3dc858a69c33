//! Plain slice kernels used by the forward and backward passes.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `c += a · b` over row-major operands given as `(ptr, row stride,
/// column stride)`, so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(
    n: usize,
    k: usize,
    m: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= n * k && b.len() >= k * m && c.len() >= n * m);
    if n == 0 || m == 0 {
        return;
    }
    // SAFETY: the asserted lengths cover every element addressed by the
    // strides of an n×k, k×m and n×m row-major matrix (or its transpose).
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}

/// `c[n×m] = a[n×k] · b[k×m]`
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    gemm_acc(n, k, m, a, (k as isize, 1), b, (m as isize, 1), 0.0, &mut c);
    c
}

/// `out[k×m] += aᵀ · g` with `a[n×k]`, `g[n×m]`.
pub(crate) fn matmul_at_b_acc(a: &[f64], g: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    gemm_acc(k, n, m, a, (1, k as isize), g, (m as isize, 1), 1.0, out);
}

/// `out[n×k] += g · bᵀ` with `g[n×m]`, `b[k×m]`.
pub(crate) fn matmul_a_bt_acc(g: &[f64], b: &[f64], n: usize, k: usize, m: usize, out: &mut [f64]) {
    gemm_acc(n, m, k, g, (m as isize, 1), b, (1, m as isize), 1.0, out);
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn add_into(x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += xv;
    }
}

/// Numerically stable `log Σ exp(x_j)` over entries with a nonzero mask.
/// Returns `-inf` when every entry is masked out.
pub(crate) fn masked_log_sum_exp(row: &[f64], mask: Option<&[f64]>) -> f64 {
    let keep = |j: usize| mask.is_none_or(|m| m[j] != 0.0);
    let max = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = row
        .iter()
        .enumerate()
        .filter(|(j, _)| keep(*j))
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + sum.ln()
}
