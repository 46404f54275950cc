//! The artifact-estimation network and its hand-written reverse pass.
//!
//! `conv3×3(1→C) → ReLU → conv3×3(C→C) → ReLU → conv1×1(C→1)`, all
//! zero-padded to keep the image size. Activations are channels-last.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::simd::simd_fn;
use super::winograd::{self, Plan};

/// Parameters stored in one flat buffer: `w1 [C,1,3,3]`, `b1 [C]`,
/// `w2 [C,C,3,3]`, `b2 [C]`, `w3 [1,C,1,1]`, `b3 [1]`. Also used for
/// gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub channels: usize,
    pub data: Vec<T>,
}

/// Name and shape of each parameter tensor, in storage order.
pub fn layer_shapes(c: usize) -> [(&'static str, Vec<usize>); 6] {
    [
        ("w1", vec![c, 1, 3, 3]),
        ("b1", vec![c]),
        ("w2", vec![c, c, 3, 3]),
        ("b2", vec![c]),
        ("w3", vec![1, c, 1, 1]),
        ("b3", vec![1]),
    ]
}

pub fn parameter_count(c: usize) -> usize {
    layer_shapes(c).iter().map(|(_, s)| s.iter().product::<usize>()).sum()
}

macro_rules! views {
    ($($name:ident, $name_mut:ident, $idx:expr;)*) => {
        $(
            pub fn $name(&self) -> &[T] {
                let r = self.range($idx);
                &self.data[r]
            }
            pub fn $name_mut(&mut self) -> &mut [T] {
                let r = self.range($idx);
                &mut self.data[r]
            }
        )*
    };
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(channels: usize) -> Self {
        NetworkParams {
            channels,
            data: vec![T::zero(); parameter_count(channels)],
        }
    }

    fn range(&self, which: usize) -> std::ops::Range<usize> {
        let shapes = layer_shapes(self.channels);
        let start: usize = shapes[..which].iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        start..start + shapes[which].1.iter().product::<usize>()
    }

    views! {
        w1, w1_mut, 0;
        b1, b1_mut, 1;
        w2, w2_mut, 2;
        b2, b2_mut, 3;
        w3, w3_mut, 4;
        b3, b3_mut, 5;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            channels: self.channels,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Weights uniform in `±sqrt(6 / fan_in)`, biases zero. Draws are made in
/// `f64` in storage order, so `f32` and `f64` networks from the same seed
/// agree up to rounding.
pub fn init_network<T: Real>(channels: usize, seed: u64) -> NetworkParams<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::zeros(channels);
    let fans = [9, 9 * channels, channels];
    let layers: [fn(&mut NetworkParams<T>) -> &mut [T]; 3] =
        [NetworkParams::w1_mut, NetworkParams::w2_mut, NetworkParams::w3_mut];
    for (get, fan) in layers.iter().zip(fans) {
        let bound = (6.0 / fan as f64).sqrt();
        for w in get(&mut p) {
            *w = T::lit(rng.random_range(-bound..bound));
        }
    }
    p
}

/// Tiles per Winograd block; sized so one block of transformed data stays
/// in L2.
const BLOCK_TILES: usize = 128;

/// Activations kept from a forward pass for the reverse pass.
struct Cache<T> {
    x: Vec<T>,
    a1: Vec<T>,
    a2: Vec<T>,
}

/// Forward/backward evaluator for a fixed image size and width. Holds every
/// buffer so that training allocates nothing per iteration.
pub struct Engine<T> {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    plan: Plan,
    caches: Vec<Cache<T>>,
    w1t: Vec<T>,
    uf: Vec<T>,
    ub: Vec<T>,
    v: Vec<T>,
    m: Vec<T>,
    dv: Vec<T>,
    du: Vec<T>,
    dz: Vec<T>,
    da1: Vec<T>,
}

impl<T: Real> Engine<T> {
    /// Engine for `slots` images of `h × w` each.
    pub fn new(h: usize, w: usize, channels: usize, slots: usize) -> Self {
        let plan = Plan::new(h, w);
        let p = h * w;
        let tl = 16 * BLOCK_TILES.min(plan.tiles()) * channels;
        let cache = || Cache {
            x: vec![T::zero(); p],
            a1: vec![T::zero(); p * channels],
            a2: vec![T::zero(); p * channels],
        };
        Engine {
            h,
            w,
            channels,
            plan,
            caches: (0..slots).map(|_| cache()).collect(),
            w1t: vec![T::zero(); 9 * channels],
            uf: vec![T::zero(); 16 * channels * channels],
            ub: vec![T::zero(); 16 * channels * channels],
            v: vec![T::zero(); tl],
            m: vec![T::zero(); tl],
            dv: vec![T::zero(); tl],
            du: vec![T::zero(); 16 * channels * channels],
            dz: vec![T::zero(); p * channels],
            da1: vec![T::zero(); p * channels],
        }
    }

    /// Refresh the weight transforms; call after every parameter update.
    pub fn load(&mut self, params: &NetworkParams<T>) {
        assert_eq!(params.channels, self.channels, "network width mismatch");
        let c = self.channels;
        for (co, taps) in params.w1().chunks_exact(9).enumerate() {
            for (tap, &wt) in taps.iter().enumerate() {
                self.w1t[tap * c + co] = wt;
            }
        }
        winograd::transform_kernel(c, c, params.w2(), &mut self.uf, &mut self.ub);
    }

    /// Forward pass for `x` (`h·w`), caching activations in `slot`.
    pub fn forward(&mut self, params: &NetworkParams<T>, slot: usize, x: &[T], out: &mut [T]) {
        forward_pass(self, params, slot, x, out)
    }

    /// Reset the accumulated gradient before a round of [`Engine::backward`].
    pub fn begin_backward(&mut self, grad: &mut NetworkParams<T>) {
        grad.fill_zero();
        self.du.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Accumulate the gradient for the image in `slot` given `dy = ∂L/∂out`.
    pub fn backward(&mut self, params: &NetworkParams<T>, slot: usize, dy: &[T], grad: &mut NetworkParams<T>) {
        backward_pass(self, params, slot, dy, grad)
    }

    /// Fold the accumulated transformed-kernel gradient into `grad.w2`.
    pub fn end_backward(&mut self, grad: &mut NetworkParams<T>) {
        let c = self.channels;
        winograd::transform_kernel_adjoint(c, c, &self.du, grad.w2_mut());
    }
}

simd_fn! {
    fn forward_pass<T: Real>(e: &mut Engine<T>, params: &NetworkParams<T>, slot: usize, x: &[T], out: &mut [T]) {
        let (h, w, c) = (e.h, e.w, e.channels);
        assert_eq!(x.len(), h * w, "input size mismatch");
        let cache = &mut e.caches[slot];
        cache.x.copy_from_slice(x);

        // Layer 1, direct: one input channel, so each tap is a scaled copy.
        let b1 = params.b1();
        for py in 0..h {
            for px in 0..w {
                let p = py * w + px;
                let a = &mut cache.a1[p * c..(p + 1) * c];
                a.copy_from_slice(b1);
                for ky in 0..3 {
                    let Some(yy) = (py + ky).checked_sub(1).filter(|&y| y < h) else { continue };
                    for kx in 0..3 {
                        let Some(xx) = (px + kx).checked_sub(1).filter(|&x| x < w) else { continue };
                        let xv = x[yy * w + xx];
                        let wt = &e.w1t[(ky * 3 + kx) * c..][..c];
                        for (ai, &wi) in a.iter_mut().zip(wt) {
                            *ai += wi * xv;
                        }
                    }
                }
                for ai in a.iter_mut() {
                    *ai = ai.max(T::zero());
                }
            }
        }

        // Layer 2, Winograd, one block of tiles at a time.
        let nt = e.plan.tiles();
        for t0 in (0..nt).step_by(BLOCK_TILES) {
            let tiles = t0..(t0 + BLOCK_TILES).min(nt);
            let nb = tiles.len();
            let (v, m) = (&mut e.v[..16 * nb * c], &mut e.m[..16 * nb * c]);
            winograd::transform_input(&e.plan, c, &cache.a1, tiles.clone(), v);
            winograd::products(nb, c, c, v, &e.uf, m);
            winograd::transform_output(&e.plan, c, m, params.b2(), tiles, &mut cache.a2);
        }
        for v in cache.a2.iter_mut() {
            *v = v.max(T::zero());
        }

        // Layer 3, 1×1.
        let (w3, b3) = (params.w3(), params.b3()[0]);
        for (o, a) in out.iter_mut().zip(cache.a2.chunks_exact(c)) {
            *o = b3 + dot_lanes(a, w3);
        }
    }
}

simd_fn! {
    fn backward_pass<T: Real>(e: &mut Engine<T>, params: &NetworkParams<T>, slot: usize, dy: &[T], grad: &mut NetworkParams<T>) {
        let (h, w, c) = (e.h, e.w, e.channels);
        let cache = &e.caches[slot];

        // Layer 3.
        let w3 = params.w3().to_vec();
        let mut db3 = T::zero();
        {
            let dw3 = grad.w3_mut();
            for ((&g, a), dz) in dy.iter().zip(cache.a2.chunks_exact(c)).zip(e.dz.chunks_exact_mut(c)) {
                db3 += g;
                for (((dw, &ai), dzi), &wi) in dw3.iter_mut().zip(a).zip(dz.iter_mut()).zip(&w3) {
                    *dw += g * ai;
                    *dzi = if ai > T::zero() { g * wi } else { T::zero() };
                }
            }
        }
        grad.b3_mut()[0] += db3;

        // Layer 2.
        {
            let db2 = grad.b2_mut();
            for dz in e.dz.chunks_exact(c) {
                for (b, &d) in db2.iter_mut().zip(dz) {
                    *b += d;
                }
            }
        }
        // The transformed input is recomputed per block rather than cached.
        e.da1.iter_mut().for_each(|v| *v = T::zero());
        let nt = e.plan.tiles();
        for t0 in (0..nt).step_by(BLOCK_TILES) {
            let tiles = t0..(t0 + BLOCK_TILES).min(nt);
            let nb = tiles.len();
            let len = 16 * nb * c;
            let (v, m, dv) = (&mut e.v[..len], &mut e.m[..len], &mut e.dv[..len]);
            winograd::transform_output_adjoint(&e.plan, c, &e.dz, tiles.clone(), m);
            winograd::transform_input(&e.plan, c, &cache.a1, tiles.clone(), v);
            winograd::kernel_products(nb, c, c, v, m, &mut e.du);
            winograd::input_products(nb, c, c, m, &e.ub, dv);
            winograd::transform_input_adjoint(&e.plan, c, dv, tiles, &mut e.da1);
        }

        // Layer 1.
        for (d, &a) in e.da1.iter_mut().zip(&cache.a1) {
            if a <= T::zero() {
                *d = T::zero();
            }
        }
        {
            let db1 = grad.b1_mut();
            for dz in e.da1.chunks_exact(c) {
                for (b, &d) in db1.iter_mut().zip(dz) {
                    *b += d;
                }
            }
        }
        let mut dw1t = vec![T::zero(); 9 * c];
        for py in 0..h {
            for px in 0..w {
                let dz = &e.da1[(py * w + px) * c..][..c];
                for ky in 0..3 {
                    let Some(yy) = (py + ky).checked_sub(1).filter(|&y| y < h) else { continue };
                    for kx in 0..3 {
                        let Some(xx) = (px + kx).checked_sub(1).filter(|&x| x < w) else { continue };
                        let xv = cache.x[yy * w + xx];
                        for (g, &d) in dw1t[(ky * 3 + kx) * c..][..c].iter_mut().zip(dz) {
                            *g += d * xv;
                        }
                    }
                }
            }
        }
        let dw1 = grad.w1_mut();
        for co in 0..c {
            for tap in 0..9 {
                dw1[co * 9 + tap] += dw1t[tap * c + co];
            }
        }
    }
}

/// Dot product accumulated in 16 interleaved partial sums, so that it
/// vectorizes while keeping a fixed summation order.
#[inline(always)]
fn dot_lanes<T: Real>(a: &[T], b: &[T]) -> T {
    const L: usize = 16;
    let mut acc = [T::zero(); L];
    let (ha, ta) = a.split_at(a.len() / L * L);
    let (hb, tb) = b.split_at(ha.len());
    for (ca, cb) in ha.chunks_exact(L).zip(hb.chunks_exact(L)) {
        for l in 0..L {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut s = T::zero();
    for (&x, &y) in ta.iter().zip(tb) {
        s += x * y;
    }
    acc.iter().fold(s, |s, &v| s + v)
}

/// Convenience forward pass on a single image.
pub fn apply<T: Real>(params: &NetworkParams<T>, h: usize, w: usize, x: &[T]) -> Vec<T> {
    let mut engine = Engine::new(h, w, params.channels, 1);
    engine.load(params);
    let mut out = vec![T::zero(); h * w];
    engine.forward(params, 0, x, &mut out);
    out
}
