//! Small dense matrix product used by the Winograd convolution.
//!
//! `C (+)= A·B` with `C` and `B` row-major and `A` addressed through
//! arbitrary row and column strides, so both `A` and `Aᵀ` products share one
//! kernel. The register tile is `MR × NR` with `NR` along SIMD lanes.
//! Caller-provided `A` is read in place; there is no packing, which is fine
//! for the skinny products of a 48-channel network.

use super::real::Real;

use super::simd::{level, Level};

const KC: usize = 256;

/// Operand descriptions; all offsets are in elements.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    /// Stride between rows of `A`.
    pub rsa: usize,
    /// Stride between columns of `A`.
    pub csa: usize,
    pub ldb: usize,
    pub ldc: usize,
}

/// `c[i·ldc + j] = (accumulate ? c : 0) + Σ_p a[i·rsa + p·csa] · b[p·ldb + j]`.
pub fn gemm<T: Real>(d: Dims, a: &[T], b: &[T], c: &mut [T], accumulate: bool) {
    if d.m == 0 || d.n == 0 {
        return;
    }
    if d.k == 0 {
        if !accumulate {
            for i in 0..d.m {
                c[i * d.ldc..i * d.ldc + d.n].iter_mut().for_each(|v| *v = T::zero());
            }
        }
        return;
    }
    assert!((d.m - 1) * d.rsa + (d.k - 1) * d.csa < a.len(), "A too short");
    assert!((d.k - 1) * d.ldb + d.n <= b.len(), "B too short");
    assert!((d.m - 1) * d.ldc + d.n <= c.len(), "C too short");
    assert!(d.n <= d.ldb && d.n <= d.ldc, "leading dimension smaller than n");

    #[cfg(target_arch = "x86_64")]
    {
        // Three 16-lane registers per row when the f32 width allows it.
        let wide = std::mem::size_of::<T>() == 4 && d.n % 48 == 0;
        // SAFETY: the features were detected and the extents checked above.
        match (level(), wide) {
            (Level::Avx512, true) => return unsafe { gemm_avx512::<T, 6, 48>(d, a, b, c, accumulate) },
            (Level::Avx512, false) => return unsafe { gemm_avx512::<T, 6, 16>(d, a, b, c, accumulate) },
            (Level::Avx2, _) => return unsafe { gemm_avx2::<T, 6, 16>(d, a, b, c, accumulate) },
            (Level::Scalar, _) => {}
        }
    }
    // SAFETY: extents were checked above.
    unsafe { gemm_body::<T, 4, 8, false>(d, a, b, c, accumulate) }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512vl,fma")]
unsafe fn gemm_avx512<T: Real, const MR: usize, const NR: usize>(
    d: Dims,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    gemm_body::<T, MR, NR, true>(d, a, b, c, accumulate)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn gemm_avx2<T: Real, const MR: usize, const NR: usize>(
    d: Dims,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    gemm_body::<T, MR, NR, true>(d, a, b, c, accumulate)
}

#[inline(always)]
unsafe fn gemm_body<T: Real, const MR: usize, const NR: usize, const FMA: bool>(
    d: Dims,
    a: &[T],
    b: &[T],
    c: &mut [T],
    accumulate: bool,
) {
    let (ap, bp, cp) = (a.as_ptr(), b.as_ptr(), c.as_mut_ptr());
    let n_main = d.n - d.n % NR;
    let m_main = d.m - d.m % MR;
    let mut p0 = 0;
    while p0 < d.k {
        let kc = KC.min(d.k - p0);
        let load = accumulate || p0 > 0;
        let a_blk = ap.add(p0 * d.csa);
        let b_blk = bp.add(p0 * d.ldb);
        let mut i = 0;
        while i < m_main {
            let mut j = 0;
            while j < n_main {
                micro::<T, MR, NR, FMA>(kc, a_blk.add(i * d.rsa), d, b_blk.add(j), cp.add(i * d.ldc + j), load);
                j += NR;
            }
            i += MR;
        }
        while i < d.m {
            let mut j = 0;
            while j < n_main {
                micro::<T, 1, NR, FMA>(kc, a_blk.add(i * d.rsa), d, b_blk.add(j), cp.add(i * d.ldc + j), load);
                j += NR;
            }
            i += 1;
        }
        if n_main < d.n {
            edge::<T>(kc, a_blk, d, b_blk, cp, n_main, load);
        }
        p0 += kc;
    }
}

#[inline(always)]
unsafe fn micro<T: Real, const R: usize, const NR: usize, const FMA: bool>(
    kc: usize,
    a: *const T,
    d: Dims,
    b: *const T,
    c: *mut T,
    load: bool,
) {
    let mut acc = [[T::zero(); NR]; R];
    if load {
        for (r, row) in acc.iter_mut().enumerate() {
            for (l, v) in row.iter_mut().enumerate() {
                *v = *c.add(r * d.ldc + l);
            }
        }
    }
    for p in 0..kc {
        let brow = b.add(p * d.ldb);
        let mut bv = [T::zero(); NR];
        for (l, v) in bv.iter_mut().enumerate() {
            *v = *brow.add(l);
        }
        for (r, row) in acc.iter_mut().enumerate() {
            let av = *a.add(r * d.rsa + p * d.csa);
            for l in 0..NR {
                row[l] = if FMA {
                    av.mul_add(bv[l], row[l])
                } else {
                    row[l] + av * bv[l]
                };
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            *c.add(r * d.ldc + l) = *v;
        }
    }
}

/// Columns past the last full lane group.
#[inline(always)]
unsafe fn edge<T: Real>(kc: usize, a: *const T, d: Dims, b: *const T, c: *mut T, j0: usize, load: bool) {
    for i in 0..d.m {
        for j in j0..d.n {
            let mut s = if load { *c.add(i * d.ldc + j) } else { T::zero() };
            for p in 0..kc {
                s += *a.add(i * d.rsa + p * d.csa) * *b.add(p * d.ldb + j);
            }
            *c.add(i * d.ldc + j) = s;
        }
    }
}
