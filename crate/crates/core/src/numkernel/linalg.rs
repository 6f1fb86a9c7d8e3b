//! Thin wrappers over the GEMM kernel plus a few dense helpers.

use nalgebra::DMatrix;

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// `a` and `b` are stored row-major in their *untransposed* layout.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `A^T A` for row-major `A` (`rows x cols`), returned as `cols x cols`.
pub fn gram_cols(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols * cols];
    gemm(cols, rows, cols, 1.0, a, true, a, false, 0.0, &mut out);
    out
}

/// `A A^T` for row-major `A` (`rows x cols`), returned as `rows x rows`.
pub fn gram_rows(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * rows];
    gemm(rows, cols, rows, 1.0, a, false, a, true, 0.0, &mut out);
    out
}

/// Symmetric eigendecomposition of a row-major `n x n` matrix.
/// Returns (eigenvalues, eigenvectors as columns of a row-major matrix).
pub fn sym_eigen(values: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(n, n, values);
    let eig = m.symmetric_eigen();
    let mut vecs = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vecs[i * n + j] = eig.eigenvectors[(i, j)];
        }
    }
    (eig.eigenvalues.iter().copied().collect(), vecs)
}

/// Power of a PSD matrix via eigendecomposition; negative eigenvalues clamp to 0.
pub fn psd_power(values: &[f64], n: usize, alpha: f64) -> Vec<f64> {
    let (evals, evecs) = sym_eigen(values, n);
    let powered: Vec<f64> = evals.iter().map(|&l| l.max(0.0).powf(alpha)).collect();
    let mut scaled = evecs.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[i * n + j] *= powered[j];
        }
    }
    let mut out = vec![0.0; n * n];
    gemm(n, n, n, 1.0, &scaled, false, &evecs, true, 0.0, &mut out);
    out
}
