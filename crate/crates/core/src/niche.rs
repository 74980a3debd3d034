//! Niching geometry and the proximity-weighted composite objective.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::bench::BaseFn;

/// Default kernel width as a multiple of the niching radius.
///
/// At twice the niching radius (the closest any two minima can be) the
/// unnormalized weight is `exp(-64)`, which keeps each optimum at the bias
/// value to well below 1e-15 relative.
pub const DEFAULT_SIGMA_W: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NicheError {
    #[error("niching radius needs at least two positions, got {0}")]
    TooFewPositions(usize),
    #[error("positions {0} and {1} coincide, niching radius would be zero")]
    DuplicatePositions(usize, usize),
    #[error("base function of minimum {0} returned a non-finite value")]
    NonFiniteBase(usize),
}

/// The set of global minima that defines one multimodal landscape.
#[derive(Debug, Clone, PartialEq)]
pub struct NicheSet {
    pub positions: Vec<DVector<f64>>,
    pub hardness: Vec<f64>,
    pub rotations: Vec<DMatrix<f64>>,
    pub base_fn: Vec<BaseFn>,
    pub niche_radius: f64,
    pub bias: f64,
    pub sigma_w: f64,
}

impl NicheSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, |p| p.len())
    }

    /// Objective value at `x`, using each minimum's own base function.
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<f64, NicheError> {
        composite_fitness(x, self, |i, z| self.base_fn[i].eval(z.as_slice()))
    }
}

/// Half of the smallest pairwise distance between `positions`.
pub fn niching_radius(positions: &[DVector<f64>]) -> Result<f64, NicheError> {
    if positions.len() < 2 {
        return Err(NicheError::TooFewPositions(positions.len()));
    }
    let mut best = f64::INFINITY;
    let mut pair = (0, 1);
    for i in 0..positions.len() {
        for j in (i + 1)..positions.len() {
            let d = (&positions[i] - &positions[j]).norm();
            if d < best {
                best = d;
                pair = (i, j);
            }
        }
    }
    if best == 0.0 {
        return Err(NicheError::DuplicatePositions(pair.0, pair.1));
    }
    Ok(best / 2.0)
}

/// Normalized proximity weights, one per minimum.
///
/// The kernel is `exp(-(d_i / (σ_w σ_nich))²)`. Normalization is done
/// relative to the nearest minimum so the weights never all underflow; far
/// from every minimum the nearest one takes the full weight.
pub fn niche_weights(x: &DVector<f64>, niche: &NicheSet) -> Vec<f64> {
    let width = niche.sigma_w * niche.niche_radius;
    let scaled: Vec<f64> = niche
        .positions
        .iter()
        .map(|p| {
            let d = (x - p).norm() / width;
            d * d
        })
        .collect();
    let nearest = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = scaled.iter().map(|s| (nearest - s).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// `bias + Σ w_i(x) H_i g_i(R_i (x - X_i))`.
///
/// `base_eval(i, z)` evaluates minimum `i`'s base function at the rotated,
/// shifted point. Terms whose weight underflowed to zero are skipped.
pub fn composite_fitness<F>(x: &DVector<f64>, niche: &NicheSet, base_eval: F) -> Result<f64, NicheError>
where
    F: Fn(usize, &DVector<f64>) -> f64,
{
    let weights = niche_weights(x, niche);
    let mut total = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let z = &niche.rotations[i] * (x - &niche.positions[i]);
        let g = base_eval(i, &z);
        if !g.is_finite() {
            return Err(NicheError::NonFiniteBase(i));
        }
        total += w * niche.hardness[i] * g;
    }
    Ok(niche.bias + total)
}

/// Hardness of the `index`-th minimum (1-based), interpolated linearly
/// from `min_h` to `max_h`. A single minimum gets `min_h`.
pub fn hardness(index: usize, n_minima: usize, min_h: f64, max_h: f64) -> f64 {
    if n_minima < 2 {
        return min_h;
    }
    (index as f64 - 1.0) / (n_minima as f64 - 1.0) * (max_h - min_h) + min_h
}
