//! Row-major single-precision GEMM wrappers over `matrixmultiply`.

/// `c = alpha * a(m×k) · b(k×n) + beta * c`, all row-major and contiguous.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (n as isize, 1), c, beta);
}

/// `c = aᵀ · b + beta * c` where `a` is stored `k×m`.
pub fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    gemm_strided(m, k, n, a, (1, m as isize), b, (n as isize, 1), c, beta);
}

/// `c = a · bᵀ + beta * c` where `b` is stored `n×k`.
pub fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], beta: f32) {
    gemm_strided(m, k, n, a, (k as isize, 1), b, (1, k as isize), c, beta);
}

#[allow(clippy::too_many_arguments)]
fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserted slice lengths cover every index reachable from the
    // given extents and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
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
