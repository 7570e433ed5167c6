//! Dense matrix kernels shared by forward and backward passes.
//!
//! All matrices are row-major slices; every routine accumulates into `c`.

/// `c[n,m] += a[n,k] * b[k,m]`
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * m);
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n,k] += g[n,m] * b[k,m]^T`
pub fn gemm_nt(g: &[f64], b: &[f64], c: &mut [f64], n: usize, m: usize, k: usize) {
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(b.len(), k * m);
    debug_assert_eq!(c.len(), n * k);
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        let crow = &mut c[i * k..(i + 1) * k];
        for (p, cv) in crow.iter_mut().enumerate() {
            *cv += dot(grow, &b[p * m..(p + 1) * m]);
        }
    }
}

/// `c[k,m] += a[n,k]^T * g[n,m]`
pub fn gemm_tn(a: &[f64], g: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(g.len(), n * m);
    debug_assert_eq!(c.len(), k * m);
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..a.len() {
        s += a[j] * b[j];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> alloc::vec::Vec<f64> {
        let mut c = alloc::vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                for p in 0..k {
                    c[i * m + j] += a[i * k + p] * b[p * m + j];
                }
            }
        }
        c
    }

    #[test]
    fn three_layouts_agree_with_triple_loop() {
        let (n, k, m) = (3, 5, 4);
        let a: alloc::vec::Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: alloc::vec::Vec<f64> = (0..k * m).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(&a, &b, n, k, m);
        let mut c = alloc::vec![0.0; n * m];
        gemm_nn(&a, &b, &mut c, n, k, m);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // a^T stored as [k, n]
        let mut at = alloc::vec![0.0; k * n];
        for i in 0..n {
            for p in 0..k {
                at[p * n + i] = a[i * k + p];
            }
        }
        let mut bt = alloc::vec![0.0; m * k];
        for p in 0..k {
            for j in 0..m {
                bt[j * k + p] = b[p * m + j];
            }
        }
        let mut c2 = alloc::vec![0.0; n * m];
        gemm_nt(&a, &bt, &mut c2, n, k, m);
        let mut c3 = alloc::vec![0.0; n * m];
        gemm_tn(&at, &b, &mut c3, k, n, m);
        for i in 0..n * m {
            assert!((c2[i] - expect[i]).abs() < 1e-12);
            assert!((c3[i] - expect[i]).abs() < 1e-12);
        }
    }
}
