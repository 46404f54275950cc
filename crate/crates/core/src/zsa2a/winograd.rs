//! 3×3 same-padded convolution (cross-correlation) over channels-last
//! images using the F(2×2, 3×3) Winograd transform, with the exact adjoints
//! needed for reverse mode.
//!
//! Transformed data is laid out `[ξ][tile][channel]` for the 16 transform
//! points `ξ`, so each point is one dense product over channels. Every
//! transform works on a contiguous range of tiles, numbered row-major, so a
//! caller can stream an image through in blocks that stay in cache.

use std::ops::Range;

use super::gemm::{gemm, Dims};
use super::real::Real;
use super::simd::simd_fn;

/// Tile bookkeeping for an `h × w` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plan {
    pub h: usize,
    pub w: usize,
    pub th: usize,
    pub tw: usize,
}

impl Plan {
    pub fn new(h: usize, w: usize) -> Plan {
        Plan {
            h,
            w,
            th: h.div_ceil(2),
            tw: w.div_ceil(2),
        }
    }

    pub fn tiles(&self) -> usize {
        self.th * self.tw
    }

    /// Length of a transformed buffer with `c` channels.
    pub fn transformed_len(&self, c: usize) -> usize {
        16 * self.tiles() * c
    }

    /// Pixel index for tile-local input offset, or `None` in the padding.
    #[inline]
    fn input_pixel(&self, ty: usize, tx: usize, i: usize, j: usize) -> Option<usize> {
        let y = (2 * ty + i).checked_sub(1)?;
        let x = (2 * tx + j).checked_sub(1)?;
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }

    #[inline]
    fn output_pixel(&self, ty: usize, tx: usize, a: usize, b: usize) -> Option<usize> {
        let (y, x) = (2 * ty + a, 2 * tx + b);
        (y < self.h && x < self.w).then_some(y * self.w + x)
    }
}

/// `o[i] = f(a[i], b[i])` over one channel vector.
#[inline(always)]
fn lanes2<T: Real>(o: &mut [T], a: &[T], b: &[T], f: impl Fn(T, T) -> T) {
    for ((o, &a), &b) in o.iter_mut().zip(a).zip(b) {
        *o = f(a, b);
    }
}

#[inline(always)]
fn lanes3<T: Real>(o: &mut [T], a: &[T], b: &[T], c: &[T], f: impl Fn(T, T, T) -> T) {
    for (((o, &a), &b), &c) in o.iter_mut().zip(a).zip(b).zip(c) {
        *o = f(a, b, c);
    }
}

simd_fn! {
    /// `V = Bᵀ d B` for each tile in `tiles` and channel of `input`
    /// (`h·w × c`); `v` holds just those tiles.
    pub fn transform_input<T: Real>(plan: &Plan, c: usize, input: &[T], tiles: Range<usize>, v: &mut [T]) {
        let nb = tiles.len();
        let zero = vec![T::zero(); c];
        let mut r = vec![T::zero(); 16 * c];
        for (t, tile) in tiles.clone().enumerate() {
            let (ty, tx) = (tile / plan.tw, tile % plan.tw);
            let d: [&[T]; 16] = std::array::from_fn(|q| match plan.input_pixel(ty, tx, q / 4, q % 4) {
                Some(p) => &input[p * c..(p + 1) * c],
                None => &zero[..],
            });
            {
                let mut rs = r.chunks_exact_mut(c);
                for j in 0..4 {
                    lanes2(rs.next().unwrap(), d[j], d[8 + j], |a, b| a - b);
                }
                for j in 0..4 {
                    lanes2(rs.next().unwrap(), d[4 + j], d[8 + j], |a, b| a + b);
                }
                for j in 0..4 {
                    lanes2(rs.next().unwrap(), d[8 + j], d[4 + j], |a, b| a - b);
                }
                for j in 0..4 {
                    lanes2(rs.next().unwrap(), d[4 + j], d[12 + j], |a, b| a - b);
                }
            }
            let rr: [&[T]; 16] = std::array::from_fn(|q| &r[q * c..(q + 1) * c]);
            let at = |q: usize| (q * nb + t) * c..(q * nb + t + 1) * c;
            for i in 0..4 {
                let o = 4 * i;
                lanes2(&mut v[at(o)], rr[o], rr[o + 2], |a, b| a - b);
                lanes2(&mut v[at(o + 1)], rr[o + 1], rr[o + 2], |a, b| a + b);
                lanes2(&mut v[at(o + 2)], rr[o + 2], rr[o + 1], |a, b| a - b);
                lanes2(&mut v[at(o + 3)], rr[o + 1], rr[o + 3], |a, b| a - b);
            }
        }
    }
}

simd_fn! {
    /// Adjoint of [`transform_input`]: scatter-add `B dV Bᵀ` into `grad`.
    pub fn transform_input_adjoint<T: Real>(plan: &Plan, c: usize, dv: &[T], tiles: Range<usize>, grad: &mut [T]) {
        let nb = tiles.len();
        let mut e = vec![T::zero(); 16 * c];
        for (t, tile) in tiles.clone().enumerate() {
            let (ty, tx) = (tile / plan.tw, tile % plan.tw);
            let x: [&[T]; 16] = std::array::from_fn(|q| &dv[(q * nb + t) * c..(q * nb + t + 1) * c]);
            {
                let mut es = e.chunks_exact_mut(c);
                for j in 0..4 {
                    es.next().unwrap().copy_from_slice(x[j]);
                }
                for j in 0..4 {
                    lanes3(es.next().unwrap(), x[4 + j], x[8 + j], x[12 + j], |a, b, c| a - b + c);
                }
                for j in 0..4 {
                    lanes3(es.next().unwrap(), x[4 + j], x[8 + j], x[j], |a, b, c| a + b - c);
                }
                for j in 0..4 {
                    lanes2(es.next().unwrap(), x[12 + j], x[12 + j], |a, _| -a);
                }
            }
            let ee: [&[T]; 16] = std::array::from_fn(|q| &e[q * c..(q + 1) * c]);
            for q in 0..16 {
                let Some(p) = plan.input_pixel(ty, tx, q / 4, q % 4) else { continue };
                let g = &mut grad[p * c..(p + 1) * c];
                let o = q & !3;
                match q % 4 {
                    0 => {
                        for (g, &a) in g.iter_mut().zip(ee[o]) {
                            *g += a;
                        }
                    }
                    1 => {
                        for (((g, &a), &b), &d) in g.iter_mut().zip(ee[o + 1]).zip(ee[o + 2]).zip(ee[o + 3]) {
                            *g += a - b + d;
                        }
                    }
                    2 => {
                        for (((g, &a), &b), &d) in g.iter_mut().zip(ee[o + 1]).zip(ee[o + 2]).zip(ee[o]) {
                            *g += a + b - d;
                        }
                    }
                    _ => {
                        for (g, &a) in g.iter_mut().zip(ee[o + 3]) {
                            *g -= a;
                        }
                    }
                }
            }
        }
    }
}

/// `U = G g Gᵀ` for weights `[c_out][c_in][3][3]`. Writes both
/// `uf[ξ][c_in][c_out]` (forward) and `ub[ξ][c_out][c_in]` (input adjoint).
pub fn transform_kernel<T: Real>(c_in: usize, c_out: usize, w: &[T], uf: &mut [T], ub: &mut [T]) {
    let half = T::lit(0.5);
    let plane = c_in * c_out;
    for co in 0..c_out {
        for ci in 0..c_in {
            let g = &w[(co * c_in + ci) * 9..][..9];
            let mut t = [T::zero(); 12];
            for j in 0..3 {
                t[j] = g[j];
                t[3 + j] = (g[j] + g[3 + j] + g[6 + j]) * half;
                t[6 + j] = (g[j] - g[3 + j] + g[6 + j]) * half;
                t[9 + j] = g[6 + j];
            }
            for i in 0..4 {
                let r = &t[3 * i..3 * i + 3];
                let u = [r[0], (r[0] + r[1] + r[2]) * half, (r[0] - r[1] + r[2]) * half, r[2]];
                for (j, &uj) in u.iter().enumerate() {
                    let xi = 4 * i + j;
                    uf[xi * plane + ci * c_out + co] = uj;
                    ub[xi * plane + co * c_in + ci] = uj;
                }
            }
        }
    }
}

/// Adjoint of [`transform_kernel`] for `du[ξ][c_in][c_out]`: accumulates
/// `Gᵀ dU G` into `dw` (`[c_out][c_in][3][3]`).
pub fn transform_kernel_adjoint<T: Real>(c_in: usize, c_out: usize, du: &[T], dw: &mut [T]) {
    let half = T::lit(0.5);
    let plane = c_in * c_out;
    for co in 0..c_out {
        for ci in 0..c_in {
            let x: [T; 16] = std::array::from_fn(|xi| du[xi * plane + ci * c_out + co]);
            let mut s = [T::zero(); 12];
            for j in 0..4 {
                s[j] = x[j] + (x[4 + j] + x[8 + j]) * half;
                s[4 + j] = (x[4 + j] - x[8 + j]) * half;
                s[8 + j] = (x[4 + j] + x[8 + j]) * half + x[12 + j];
            }
            let g = &mut dw[(co * c_in + ci) * 9..][..9];
            for i in 0..3 {
                let r = &s[4 * i..4 * i + 4];
                g[3 * i] += r[0] + (r[1] + r[2]) * half;
                g[3 * i + 1] += (r[1] - r[2]) * half;
                g[3 * i + 2] += (r[1] + r[2]) * half + r[3];
            }
        }
    }
}

simd_fn! {
    /// `Y = Aᵀ M A` plus bias for each tile in `tiles`, written to the
    /// pixels of `out` (`h·w × c`) the tiles cover.
    pub fn transform_output<T: Real>(plan: &Plan, c: usize, m: &[T], bias: &[T], tiles: Range<usize>, out: &mut [T]) {
        let nb = tiles.len();
        let bias = &bias[..c];
        let mut s = vec![T::zero(); 8 * c];
        for (t, tile) in tiles.clone().enumerate() {
            let (ty, tx) = (tile / plan.tw, tile % plan.tw);
            let x: [&[T]; 16] = std::array::from_fn(|q| &m[(q * nb + t) * c..(q * nb + t + 1) * c]);
            {
                let mut ss = s.chunks_exact_mut(c);
                for j in 0..4 {
                    lanes3(ss.next().unwrap(), x[j], x[4 + j], x[8 + j], |a, b, c| a + b + c);
                }
                for j in 0..4 {
                    lanes3(ss.next().unwrap(), x[4 + j], x[8 + j], x[12 + j], |a, b, c| a - b - c);
                }
            }
            for a in 0..2 {
                let r: [&[T]; 4] = std::array::from_fn(|j| &s[(4 * a + j) * c..(4 * a + j + 1) * c]);
                if let Some(p) = plan.output_pixel(ty, tx, a, 0) {
                    for ((((o, &r0), &r1), &r2), &b) in out[p * c..(p + 1) * c].iter_mut().zip(r[0]).zip(r[1]).zip(r[2]).zip(bias) {
                        *o = r0 + r1 + r2 + b;
                    }
                }
                if let Some(p) = plan.output_pixel(ty, tx, a, 1) {
                    for ((((o, &r1), &r2), &r3), &b) in out[p * c..(p + 1) * c].iter_mut().zip(r[1]).zip(r[2]).zip(r[3]).zip(bias) {
                        *o = r1 - r2 - r3 + b;
                    }
                }
            }
        }
    }
}

simd_fn! {
    /// Adjoint of [`transform_output`] (without the bias): `dM = A dY Aᵀ`.
    pub fn transform_output_adjoint<T: Real>(plan: &Plan, c: usize, dy: &[T], tiles: Range<usize>, dm: &mut [T]) {
        let nb = tiles.len();
        let zero = vec![T::zero(); c];
        let mut q = vec![T::zero(); 8 * c];
        for (t, tile) in tiles.clone().enumerate() {
            let (ty, tx) = (tile / plan.tw, tile % plan.tw);
            let y: [&[T]; 4] = std::array::from_fn(|k| match plan.output_pixel(ty, tx, k / 2, k % 2) {
                Some(p) => &dy[p * c..(p + 1) * c],
                None => &zero[..],
            });
            {
                let mut qs = q.chunks_exact_mut(c);
                for b in 0..2 {
                    qs.next().unwrap().copy_from_slice(y[b]);
                }
                for b in 0..2 {
                    lanes2(qs.next().unwrap(), y[b], y[2 + b], |a, b| a + b);
                }
                for b in 0..2 {
                    lanes2(qs.next().unwrap(), y[b], y[2 + b], |a, b| a - b);
                }
                for b in 0..2 {
                    lanes2(qs.next().unwrap(), y[2 + b], y[2 + b], |a, _| -a);
                }
            }
            let qq: [&[T]; 8] = std::array::from_fn(|k| &q[k * c..(k + 1) * c]);
            let at = |q: usize| (q * nb + t) * c..(q * nb + t + 1) * c;
            for i in 0..4 {
                let (q0, q1) = (qq[2 * i], qq[2 * i + 1]);
                dm[at(4 * i)].copy_from_slice(q0);
                lanes2(&mut dm[at(4 * i + 1)], q0, q1, |a, b| a + b);
                lanes2(&mut dm[at(4 * i + 2)], q0, q1, |a, b| a - b);
                lanes2(&mut dm[at(4 * i + 3)], q1, q1, |a, _| -a);
            }
        }
    }
}

/// Per-point products `M[ξ] = V[ξ] · U[ξ]` (`nb × c_in` by `c_in × c_out`)
/// for a block of `nb` tiles.
pub fn products<T: Real>(nb: usize, c_in: usize, c_out: usize, v: &[T], uf: &[T], m: &mut [T]) {
    let d = Dims {
        m: nb,
        n: c_out,
        k: c_in,
        rsa: c_in,
        csa: 1,
        ldb: c_out,
        ldc: c_out,
    };
    for xi in 0..16 {
        gemm(
            d,
            &v[xi * nb * c_in..(xi + 1) * nb * c_in],
            &uf[xi * c_in * c_out..(xi + 1) * c_in * c_out],
            &mut m[xi * nb * c_out..(xi + 1) * nb * c_out],
            false,
        );
    }
}

/// `dU[ξ] += V[ξ]ᵀ · dM[ξ]`.
pub fn kernel_products<T: Real>(nb: usize, c_in: usize, c_out: usize, v: &[T], dm: &[T], du: &mut [T]) {
    let d = Dims {
        m: c_in,
        n: c_out,
        k: nb,
        rsa: 1,
        csa: c_in,
        ldb: c_out,
        ldc: c_out,
    };
    for xi in 0..16 {
        gemm(
            d,
            &v[xi * nb * c_in..(xi + 1) * nb * c_in],
            &dm[xi * nb * c_out..(xi + 1) * nb * c_out],
            &mut du[xi * c_in * c_out..(xi + 1) * c_in * c_out],
            true,
        );
    }
}

/// `dV[ξ] = dM[ξ] · U[ξ]ᵀ`.
pub fn input_products<T: Real>(nb: usize, c_in: usize, c_out: usize, dm: &[T], ub: &[T], dv: &mut [T]) {
    let d = Dims {
        m: nb,
        n: c_in,
        k: c_out,
        rsa: c_out,
        csa: 1,
        ldb: c_in,
        ldc: c_in,
    };
    for xi in 0..16 {
        gemm(
            d,
            &dm[xi * nb * c_out..(xi + 1) * nb * c_out],
            &ub[xi * c_in * c_out..(xi + 1) * c_in * c_out],
            &mut dv[xi * nb * c_in..(xi + 1) * nb * c_in],
            false,
        );
    }
}
