//! Allocation-free kernels for small dense symmetric matrices stored
//! row-major in flat slices.

/// In-place Cholesky `A = L Lᵀ`; the lower triangle of `a` becomes `L`.
/// Returns `log|A|`, or `None` if `A` is not positive definite.
pub(crate) fn cholesky(a: &mut [f64], n: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        logdet += 2.0 * d.ln();
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    Some(logdet)
}

/// Solves `L Lᵀ x = b` in place.
pub(crate) fn solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Writes `(L Lᵀ)⁻¹` (full, symmetric) into `out`.
pub(crate) fn inverse(l: &[f64], n: usize, out: &mut [f64]) {
    // columns of L⁻¹ by forward substitution, then L⁻ᵀ L⁻¹
    let mut linv = [0.0; 64];
    let mut heap;
    let li: &mut [f64] = if n * n <= 64 {
        &mut linv[..n * n]
    } else {
        heap = vec![0.0; n * n];
        &mut heap
    };
    for j in 0..n {
        li[j * n + j] = 1.0 / l[j * n + j];
        for i in (j + 1)..n {
            let mut v = 0.0;
            for k in j..i {
                v -= l[i * n + k] * li[k * n + j];
            }
            li[i * n + j] = v / l[i * n + i];
        }
    }
    for i in 0..n {
        for j in 0..=i {
            let mut v = 0.0;
            for k in i..n {
                v += li[k * n + i] * li[k * n + j];
            }
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
}
