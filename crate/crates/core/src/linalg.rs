//! Dense row-major matrix helpers for the toy network.

use rayon::prelude::*;

use crate::scalar::Scalar;

const MR: usize = 4;
const NR: usize = 16;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major with the given leading dims.
///
/// Each output sums its `k` products in ascending order before being added
/// to `c`, on both the register-tiled path and the edge path, so results do
/// not depend on where a row or column falls relative to the tiling.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc<T: Scalar>(
    m: usize,
    n: usize,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    let full_rows = m - m % MR;
    let full_cols = n - n % NR;
    for j in (0..full_cols).step_by(NR) {
        for i in (0..full_rows).step_by(MR) {
            let mut tile = [[T::zero(); NR]; MR];
            for p in 0..k {
                let brow: &[T; NR] = b[p * ldb + j..p * ldb + j + NR].try_into().unwrap();
                for (r, row) in tile.iter_mut().enumerate() {
                    let av = a[(i + r) * lda + p];
                    for (t, &bv) in row.iter_mut().zip(brow) {
                        *t = av.mul_add(bv, *t);
                    }
                }
            }
            for (r, row) in tile.iter().enumerate() {
                let out = &mut c[(i + r) * ldc + j..(i + r) * ldc + j + NR];
                for (o, &t) in out.iter_mut().zip(row) {
                    *o += t;
                }
            }
        }
    }
    edge(0..full_rows, full_cols..n, k, a, lda, b, ldb, c, ldc);
    edge(full_rows..m, 0..n, k, a, lda, b, ldb, c, ldc);
}

#[allow(clippy::too_many_arguments)]
fn edge<T: Scalar>(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    k: usize,
    a: &[T],
    lda: usize,
    b: &[T],
    ldb: usize,
    c: &mut [T],
    ldc: usize,
) {
    for i in rows {
        for j in cols.clone() {
            let mut t = T::zero();
            for p in 0..k {
                t = a[i * lda + p].mul_add(b[p * ldb + j], t);
            }
            c[i * ldc + j] += t;
        }
    }
}

const ROW_CHUNK: usize = 256;

/// `x[rows×k] · w[k×n] + bias`, returning `rows × n`.
///
/// Rows are split across threads in fixed chunks; every output row is
/// produced by exactly one task with the same arithmetic as a serial call.
pub fn affine<T: Scalar>(x: &[T], rows: usize, k: usize, w: &[T], bias: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(x.len(), rows * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(bias.len(), n);
    let mut out = vec![T::zero(); rows * n];
    out.par_chunks_mut(ROW_CHUNK * n)
        .zip(x.par_chunks(ROW_CHUNK * k))
        .for_each(|(o, xi)| {
            gemm_acc(xi.len() / k, n, k, xi, k, w, n, o, n);
            for row in o.chunks_exact_mut(n) {
                for (v, &b) in row.iter_mut().zip(bias) {
                    *v += b;
                }
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_on_ragged_shapes() {
        for (m, n, k) in [(1, 1, 1), (4, 16, 3), (5, 17, 7), (9, 33, 2), (16, 256, 64)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 13) % 7) as f64 * 0.5).collect();
            let mut c = vec![1.0f64; m * n];
            gemm_acc(m, n, k, &a, k, &b, n, &mut c, n);
            for i in 0..m {
                for j in 0..n {
                    // small integers and halves: every partial sum is exact
                    let t: f64 = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
                    assert_eq!(c[i * n + j], 1.0 + t);
                }
            }
        }
    }

    #[test]
    fn tile_position_does_not_change_a_row() {
        let k = 9;
        let n = 20;
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let row: Vec<f64> = (0..k).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut alone = vec![0.0; n];
        gemm_acc(1, n, k, &row, k, &b, n, &mut alone, n);
        let mut a = vec![0.0; 6 * k];
        a[2 * k..3 * k].copy_from_slice(&row);
        let mut many = vec![0.0; 6 * n];
        gemm_acc(6, n, k, &a, k, &b, n, &mut many, n);
        assert_eq!(&many[2 * n..3 * n], &alone[..]);
    }
}
