//! Self-supervised objective over reconstructions from disjoint-in-spirit
//! random detector subsets.
//!
//! With `c_i = r_i − g(r_i)` the cleaned estimate of subset `i`, the
//! residual term asks each cleaned image to match the other raw
//! reconstructions and the consistency term asks the cleaned images to agree
//! with each other. Norms are mean squares.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub residual: f64,
    pub consistency: f64,
    pub total: f64,
}

fn mean_square(n: usize, e: impl Fn(usize) -> f64) -> f64 {
    let mut s = 0.0;
    for p in 0..n {
        let v = e(p);
        s += v * v;
    }
    s / n as f64
}

/// Two-subset loss: `½(‖c₁ − r₂‖² + ‖c₂ − r₁‖²) + ‖c₁ − c₂‖²`.
pub fn pair_loss(r1: &[f64], g1: &[f64], r2: &[f64], g2: &[f64]) -> LossTerms {
    let n = r1.len();
    assert!(g1.len() == n && r2.len() == n && g2.len() == n, "image sizes differ");
    let c1 = |p: usize| r1[p] - g1[p];
    let c2 = |p: usize| r2[p] - g2[p];
    let residual = 0.5 * (mean_square(n, |p| c1(p) - r2[p]) + mean_square(n, |p| c2(p) - r1[p]));
    let consistency = mean_square(n, |p| c1(p) - c2(p));
    LossTerms {
        residual,
        consistency,
        total: residual + consistency,
    }
}

/// Loss for `K ≥ 2` subsets: both terms averaged over ordered pairs
/// `i ≠ j`. For `K = 2` this is exactly [`pair_loss`].
pub fn generalized_loss(r: &[&[f64]], g: &[&[f64]]) -> LossTerms {
    let k = r.len();
    assert!(k >= 2 && g.len() == k, "need at least two subsets");
    let n = r[0].len();
    assert!(r.iter().chain(g).all(|x| x.len() == n), "image sizes differ");
    let c = |i: usize, p: usize| r[i][p] - g[i][p];
    let (mut res, mut cons) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                res += mean_square(n, |p| c(i, p) - r[j][p]);
                cons += mean_square(n, |p| c(i, p) - c(j, p));
            }
        }
    }
    let pairs = (k * (k - 1)) as f64;
    let (residual, consistency) = (res / pairs, cons / pairs);
    LossTerms {
        residual,
        consistency,
        total: residual + consistency,
    }
}

/// `∂L/∂g_i` for [`generalized_loss`], written into `dg[i]`.
pub fn loss_gradient(r: &[&[f64]], g: &[&[f64]], dg: &mut [Vec<f64>]) {
    let k = r.len();
    let n = r[0].len();
    let scale = 2.0 / ((k * (k - 1)) as f64 * n as f64);
    for i in 0..k {
        for p in 0..n {
            let ci = r[i][p] - g[i][p];
            let mut s = 0.0;
            for j in 0..k {
                if j != i {
                    let cj = r[j][p] - g[j][p];
                    // Residual (i, j), and consistency (i, j) and (j, i).
                    s += (ci - r[j][p]) + 2.0 * (ci - cj);
                }
            }
            dg[i][p] = -scale * s;
        }
    }
}
