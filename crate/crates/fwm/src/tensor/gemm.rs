//! Matrix-multiply kernels with a source-fixed accumulation order.
//!
//! Each output element is accumulated over `k` in strictly ascending index
//! order (the dot kernel uses eight explicit lanes combined in a fixed
//! tree), so a given output value does not depend on how many other rows
//! are computed alongside it. Scoring one action or ten thousand in a
//! batch yields bit-identical floats, which the planner relies on.
//!
//! Kernels are generic over `f32`/`f64`; the f64 instantiation backs the
//! finite-difference replay in [`crate::autodiff`].

use num_traits::Float;

/// `C[m,n] += A[m,k] · B[k,n]`, all row-major.
pub fn gemm_nn<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj = aik.mul_add(bj, *cj);
            }
        }
    }
}

/// `C[m,n] += Aᵀ · B` with `A` stored `[k,m]`, `B` stored `[k,n]`.
pub fn gemm_tn<T: Float>(k: usize, m: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let aki = a[kk * m + i];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj = aki.mul_add(bj, *cj);
            }
        }
    }
}

/// `C[m,n] += A · Bᵀ` with `A` stored `[m,k]`, `B` stored `[n,k]`.
pub fn gemm_nt<T: Float>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cj) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *cj = *cj + dot(a_row, b_row);
        }
    }
}

/// Dot product with eight fixed lanes and a fixed combination tree.
pub fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let ao = &a[c * 8..c * 8 + 8];
        let bo = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] = ao[l].mul_add(bo[l], lanes[l]);
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}
