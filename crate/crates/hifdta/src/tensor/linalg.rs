//! Dense f64 matrix kernels.
//!
//! Everything here is single-threaded and allocation-light. The layouts are
//! row-major. `nn` transposes the right operand into a scratch buffer so the
//! inner loops always run contiguous dot products / axpys, which is what the
//! auto-vectorizer wants.

/// Dot product with eight independent accumulators for ILP.
#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f64; 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        let xo = &x[c * 8..c * 8 + 8];
        let yo = &y[c * 8..c * 8 + 8];
        acc[0] += xo[0] * yo[0];
        acc[1] += xo[1] * yo[1];
        acc[2] += xo[2] * yo[2];
        acc[3] += xo[3] * yo[3];
        acc[4] += xo[4] * yo[4];
        acc[5] += xo[5] * yo[5];
        acc[6] += xo[6] * yo[6];
        acc[7] += xo[7] * yo[7];
    }
    let mut tail = 0.0;
    for i in chunks * 8..x.len() {
        tail += x[i] * y[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// out += a * x
#[inline]
pub fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, &v) in out.iter_mut().zip(x.iter()) {
        *o += a * v;
    }
}

pub fn transpose(src: &[f64], rows: usize, cols: usize, dst: &mut Vec<f64>) {
    dst.clear();
    dst.resize(rows * cols, 0.0);
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        for (c, &v) in row.iter().enumerate() {
            dst[c * rows + r] = v;
        }
    }
}

/// C = A(m,k) . B(k,n), overwriting C.
pub fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut bt = Vec::new();
    transpose(b, k, n, &mut bt);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cv) in cr.iter_mut().enumerate() {
            *cv = dot(ar, &bt[j * k..(j + 1) * k]);
        }
    }
}

/// C = A(m,k) . B^T where B is (n,k). Both operands stream contiguously.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cv) in cr.iter_mut().enumerate() {
            *cv = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// C += A(m,k) . B^T where B is (n,k).
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (j, cv) in cr.iter_mut().enumerate() {
            *cv += dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// C += A^T . B where A is (m,k), B is (m,n), C is (k,n).
/// Accumulating form because it backs gradient updates.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for p in 0..m {
        let ar = &a[p * k..(p + 1) * k];
        let br = &b[p * n..(p + 1) * n];
        for (i, &av) in ar.iter().enumerate() {
            if av != 0.0 {
                axpy(&mut c[i * n..(i + 1) * n], av, br);
            }
        }
    }
}

/// C += A(m,k) . B(k,n) without overwriting.
pub fn matmul_nn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        let cr = &mut c[i * n..(i + 1) * n];
        for (p, &av) in ar.iter().enumerate() {
            if av != 0.0 {
                axpy(cr, av, &b[p * n..(p + 1) * n]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
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

    fn filled(len: usize, salt: u64) -> Vec<f64> {
        let rng = crate::tensor::rng::StreamRng::new(99);
        (0..len).map(|i| rng.normal(salt, i as u64)).collect()
    }

    #[test]
    fn kernels_match_naive() {
        for &(m, k, n) in &[(1, 1, 1), (3, 4, 5), (7, 13, 2), (16, 16, 16), (5, 32, 9)] {
            let a = filled(m * k, 1);
            let b = filled(k * n, 2);
            let want = naive(&a, &b, m, k, n);

            let mut c = vec![0.0; m * n];
            matmul_nn(&a, &b, m, k, n, &mut c);
            for (x, y) in c.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }

            // nt: feed B already transposed
            let mut bt = Vec::new();
            transpose(&b, k, n, &mut bt);
            let mut c2 = vec![0.0; m * n];
            matmul_nt(&a, &bt, m, k, n, &mut c2);
            for (x, y) in c2.iter().zip(want.iter()) {
                assert!((x - y).abs() < 1e-12);
            }

            // tn: A^T.B via accumulate, against naive on transposed input
            let mut at = Vec::new();
            transpose(&a, m, k, &mut at); // (k,m)
            let d = filled(m * n, 3);
            let mut c3 = vec![0.0; k * n];
            matmul_tn_acc(&a, &d, m, k, n, &mut c3);
            let want3 = naive(&at, &d, k, m, n);
            for (x, y) in c3.iter().zip(want3.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn acc_variant_accumulates() {
        let a = filled(6, 4);
        let b = filled(6, 5);
        let mut c = vec![1.0; 4];
        matmul_nn_acc(&a, &b, 2, 3, 2, &mut c);
        let want = naive(&a, &b, 2, 3, 2);
        for (x, y) in c.iter().zip(want.iter()) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }
}

#[cfg(test)]
mod bench {
    use super::*;

    /// Throughput smoke check, not a correctness test. Run explicitly with
    /// `cargo test -p hifdta --release -- --ignored matmul_throughput --nocapture`.
    #[test]
    #[ignore]
    fn matmul_throughput() {
        let n = 256;
        let a: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.001).sin()).collect();
        let b: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.002).cos()).collect();
        let mut c = vec![0.0; n * n];
        let reps = 40;
        // Warm up.
        matmul_nn(&a, &b, n, n, n, &mut c);
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            matmul_nn(&a, &b, n, n, n, &mut c);
        }
        let dt = t0.elapsed().as_secs_f64();
        let flops = 2.0 * (n * n * n) as f64 * reps as f64;
        println!("matmul {n}x{n}: {:.2} GFlop/s", flops / dt / 1e9);
        assert!(c[0].is_finite());
    }
}
