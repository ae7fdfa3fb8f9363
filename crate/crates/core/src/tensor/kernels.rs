//! Low-level dense kernels behind the graph ops.
//!
//! The parallel variants split work over independent output rows, so
//! they produce bit-identical results to the sequential ones: the
//! per-element summation order never changes.

use super::Real;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many multiply-adds the rayon dispatch overhead outweighs
/// the gain and the sequential kernel is used.
pub const PARALLEL_WORK_THRESHOLD: usize = 128 * 1024;

/// out[m x n] = a[m x k] . b[k x n]
pub fn matmul_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    #[cfg(feature = "parallel")]
    {
        if m * k * n >= PARALLEL_WORK_THRESHOLD && m > 1 {
            matmul_into_par(a, b, m, k, n, out);
            return;
        }
    }
    matmul_into_seq(a, b, m, k, n, out);
}

pub fn matmul_into_seq<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (i, out_row) in out.chunks_mut(n).enumerate().take(m) {
        matmul_row(&a[i * k..(i + 1) * k], b, k, n, out_row);
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_into_par<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| matmul_row(&a[i * k..(i + 1) * k], b, k, n, out_row));
}

#[inline]
fn matmul_row<T: Real>(a_row: &[T], b: &[T], k: usize, n: usize, out_row: &mut [T]) {
    for o in out_row.iter_mut() {
        *o = T::zero();
    }
    for (p, &av) in a_row.iter().enumerate().take(k) {
        let b_row = &b[p * n..(p + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
            *o += av * bv;
        }
    }
}

/// out[m] = a[m x k] . v[k]
pub fn matvec_into<T: Real>(a: &[T], v: &[T], m: usize, k: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(v.len(), k);
    debug_assert_eq!(out.len(), m);
    for (i, o) in out.iter_mut().enumerate().take(m) {
        let row = &a[i * k..(i + 1) * k];
        let mut acc = T::zero();
        for (&av, &vv) in row.iter().zip(v.iter()) {
            acc += av * vv;
        }
        *o = acc;
    }
}

/// out[n] = v[k] . a[k x n]
pub fn vecmat_into<T: Real>(v: &[T], a: &[T], k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * n);
    debug_assert_eq!(v.len(), k);
    debug_assert_eq!(out.len(), n);
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for (p, &vv) in v.iter().enumerate().take(k) {
        let row = &a[p * n..(p + 1) * n];
        for (o, &av) in out.iter_mut().zip(row.iter()) {
            *o += vv * av;
        }
    }
}

/// out[m x n] += u[m] outer v[n]
pub fn outer_add_into<T: Real>(u: &[T], v: &[T], out: &mut [T]) {
    debug_assert_eq!(out.len(), u.len() * v.len());
    for (i, &uv) in u.iter().enumerate() {
        let row = &mut out[i * v.len()..(i + 1) * v.len()];
        for (o, &vv) in row.iter_mut().zip(v.iter()) {
            *o += uv * vv;
        }
    }
}
