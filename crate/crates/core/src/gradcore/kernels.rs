//! Dense row-major matrix kernels shared by forward and backward passes.

/// `out[m×n] += a[m×k] · b[k×n]`
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(a, b, out, m, k, n, (k as isize, 1), (n as isize, 1));
}

/// `out[m×k] += a[m×n] · b[k×n]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    gemm(a, b, out, m, n, k, (n as isize, 1), (1, n as isize));
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm(a, b, out, k, m, n, (1, k as isize), (n as isize, 1));
}

/// `out[r×c] += A[r×inner] · B[inner×c]` with explicit (row, col) strides
/// for the operands; `out` is dense row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], r: usize, inner: usize, c: usize, sa: (isize, isize), sb: (isize, isize)) {
    assert!(a.len() >= r * inner && b.len() >= inner * c && out.len() >= r * c);
    if r == 0 || c == 0 || inner == 0 {
        return;
    }
    // SAFETY: the strides address only elements inside the asserted extents.
    unsafe {
        matrixmultiply::dgemm(
            r,
            inner,
            c,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            1.0,
            out.as_mut_ptr(),
            c as isize,
            1,
        );
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
