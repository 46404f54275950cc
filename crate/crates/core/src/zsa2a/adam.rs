//! Adam with a step-decay learning rate.

use serde::{Deserialize, Serialize};

use super::real::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Learning rate after `iteration` updates: `lr · γ^⌊iteration / step⌋`,
/// multiplied out one decay at a time.
pub fn step_lr(lr: f64, step_size: usize, gamma: f64, iteration: usize) -> f64 {
    let mut v = lr;
    for _ in 0..iteration / step_size.max(1) {
        v *= gamma;
    }
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize) -> Self {
        Adam {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` against `grad`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        self.t += 1;
        let b1 = T::lit(BETA1);
        let b2 = T::lit(BETA2);
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let step = T::lit(lr / bc1);
        let inv_sqrt_bc2 = T::lit(1.0 / bc2.sqrt());
        let eps = T::lit(EPSILON);
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            *p -= step * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
        }
    }
}
