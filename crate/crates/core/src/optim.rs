//! Adam for Euclidean parameters and Riemannian Adam for parameters that live
//! in the Poincaré ball.

use crate::error::{Error, Result};
use crate::hypgeo::{self, BallPoint, GeometryConfig, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// First/second moments and the step counter for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Moments updated with gradient `g`; returns the bias-corrected step
    /// direction `m̂ / (√v̂ + eps)` scaled by `lr`.
    fn advance(&mut self, g: &[f64], cfg: &AdamConfig) -> Vec<f64> {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        self.m
            .iter_mut()
            .zip(self.v.iter_mut())
            .zip(g)
            .map(|((m, v), &g)| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                cfg.lr * mhat / (vhat.sqrt() + cfg.eps)
            })
            .collect()
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let step = state.advance(grads, cfg);
    params.iter_mut().zip(step).for_each(|(p, s)| *p -= s);
    Ok(())
}

/// One Riemannian Adam step on a set of ball points.
///
/// The Euclidean gradient is rescaled by the inverse metric `1/λ_x²`, the
/// moments are kept in ambient coordinates (transport between steps is the
/// identity), and the point moves along the exponential map
/// `exp_x(u) = x ⊕ exp_0(λ_x u / 2)`.
pub fn riemannian_adam_step(
    points: &mut [BallPoint],
    euclid_grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
    geom: &GeometryConfig,
) -> Result<()> {
    let dim = points.first().map_or(0, BallPoint::dim);
    if points.len() != euclid_grads.len()
        || euclid_grads.iter().any(|g| g.len() != dim)
        || points.iter().any(|p| p.dim() != dim)
        || state.m.len() != points.len() * dim
    {
        return Err(Error::Shape("riemannian adam: points, grads and state disagree".into()));
    }
    let mut rgrad = Vec::with_capacity(points.len() * dim);
    for (p, g) in points.iter().zip(euclid_grads) {
        let lambda = hypgeo::conformal_factor(p);
        let inv = 1.0 / (lambda * lambda);
        rgrad.extend(g.iter().map(|g| g * inv));
    }
    let step = state.advance(&rgrad, cfg);
    for (i, p) in points.iter_mut().enumerate() {
        let lambda = hypgeo::conformal_factor(p);
        let u: Vec<f64> = step[i * dim..(i + 1) * dim]
            .iter()
            .map(|s| -s * lambda / 2.0)
            .collect();
        let moved = hypgeo::exp_map_0(&TangentVector(u), geom)?;
        *p = hypgeo::mobius_add(p, &moved, geom)?;
    }
    Ok(())
}
