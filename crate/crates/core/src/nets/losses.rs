//! Wasserstein critic/generator objectives and the cycle-consistency terms.

use rand::Rng;

use super::head::poincare_distance_rows;
use super::model::Critic;
use super::param::Binder;
use crate::error::Result;
use crate::hypgeo::GeometryConfig;
use crate::tensor::Tensor;

/// Finite-difference step for the critic slope along its gradient.
pub const PENALTY_FD_STEP: f64 = 1e-4;

/// `mean(D(fake)) − mean(D(real))`
pub fn wasserstein_critic_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    d_fake.mean().sub(&d_real.mean())
}

/// `−mean(D(fake))`
pub fn generator_adversarial_loss(d_fake: &Tensor) -> Tensor {
    d_fake.mean().neg()
}

/// `mean_i (‖∇ₓD(x̂ᵢ)‖ − 1)²` on random interpolates `x̂ = αx + (1−α)x̃`.
///
/// The gradient norm is the slope of the critic along its own normalized
/// input gradient, taken by a central difference whose two critic calls stay
/// on the graph. The direction comes from a frozen backward pass and is held
/// constant, so no second-order differentiation is needed. Rows with a zero
/// input gradient contribute `(0 − 1)²`.
pub fn gradient_penalty<C: Critic>(
    critic: &C,
    b: &Binder,
    real: &Tensor,
    fake: &Tensor,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let (rows, cols) = real.dims2()?;
    let (r, f) = (real.data(), fake.data());
    let mut interp = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let a: f64 = rng.gen();
        interp.extend((0..cols).map(|j| a * r[i * cols + j] + (1.0 - a) * f[i * cols + j]));
    }

    let probe = Tensor::variable(interp.clone(), &[rows, cols])?;
    critic.score(&Binder::frozen(), &probe)?.sum().backward()?;
    let g = probe.grad().unwrap_or_else(|| vec![0.0; rows * cols]);

    let mut plus = interp.clone();
    let mut minus = interp;
    for i in 0..rows {
        let row = &g[i * cols..(i + 1) * cols];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for j in 0..cols {
                let u = PENALTY_FD_STEP * row[j] / n;
                plus[i * cols + j] += u;
                minus[i * cols + j] -= u;
            }
        }
    }
    let up = critic.score(b, &Tensor::from_vec(plus, &[rows, cols])?)?;
    let down = critic.score(b, &Tensor::from_vec(minus, &[rows, cols])?)?;
    let slope = up.sub(&down)?.scale(1.0 / (2.0 * PENALTY_FD_STEP));
    Ok(slope.add_scalar(-1.0).square().mean())
}

/// Mean squared point-wise difference over the window.
pub fn euclidean_cycle_loss(x: &Tensor, recon: &Tensor) -> Result<Tensor> {
    Ok(x.sub(recon)?.square().mean())
}

/// Batch mean of the Poincaré distance between paired embeddings.
pub fn hyperbolic_cycle_loss(h: &Tensor, h2: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
    Ok(poincare_distance_rows(h, h2, geom)?.mean())
}

/// Scalar values of the adversarial terms for one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticLosses {
    pub critic_x_loss: f64,
    pub critic_z_loss: f64,
    /// `λ_gp`-weighted penalty of each critic.
    pub penalty_x: f64,
    pub penalty_z: f64,
    pub generator_x: f64,
    pub generator_z: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn critic_losses<X: Critic, Z: Critic>(
    dx: &X,
    dz: &Z,
    real_x: &Tensor,
    fake_x: &Tensor,
    real_z: &Tensor,
    fake_z: &Tensor,
    lambda_gp: f64,
    rng: &mut impl Rng,
) -> Result<CriticLosses> {
    let b = Binder::frozen();
    let (rx, fx) = (dx.score(&b, real_x)?, dx.score(&b, fake_x)?);
    let (rz, fz) = (dz.score(&b, real_z)?, dz.score(&b, fake_z)?);
    Ok(CriticLosses {
        critic_x_loss: wasserstein_critic_loss(&rx, &fx)?.item()?,
        critic_z_loss: wasserstein_critic_loss(&rz, &fz)?.item()?,
        penalty_x: lambda_gp * gradient_penalty(dx, &b, real_x, fake_x, rng)?.item()?,
        penalty_z: lambda_gp * gradient_penalty(dz, &b, real_z, fake_z, rng)?.item()?,
        generator_x: generator_adversarial_loss(&fx).item()?,
        generator_z: generator_adversarial_loss(&fz).item()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::head::exp_map_0_rows;
    use crate::nets::layers::Dense;
    use crate::nets::model::{CriticX, CriticZ};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn critics(rng: &mut ChaCha8Rng, w: usize, dz: usize) -> (CriticX, CriticZ) {
        (
            CriticX {
                hidden: Dense::new("critic_x.hidden", w, 5, rng),
                out: Dense::new("critic_x.out", 5, 1, rng),
            },
            CriticZ {
                out: Dense::new("critic_z.out", dz, 1, rng),
            },
        )
    }

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec((0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[r, c]).unwrap()
    }

    #[test]
    fn zero_critic_has_zero_loss_and_unit_penalty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut dx, mut dz) = critics(&mut rng, 6, 3);
        for p in dx.hidden.params_mut().into_iter().chain(dx.out.params_mut()).chain(dz.out.params_mut()) {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let (rx, fx) = (rand_t(&mut rng, 4, 6), rand_t(&mut rng, 4, 6));
        let (rz, fz) = (rand_t(&mut rng, 4, 3), rand_t(&mut rng, 4, 3));
        let l = critic_losses(&dx, &dz, &rx, &fx, &rz, &fz, 10.0, &mut rng).unwrap();
        assert_eq!(l.critic_x_loss, 0.0);
        assert_eq!(l.critic_z_loss, 0.0);
        assert_eq!(l.penalty_x, 10.0);
        assert_eq!(l.penalty_z, 10.0);
    }

    #[test]
    fn equal_real_and_fake_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (dx, dz) = critics(&mut rng, 6, 3);
        let x = rand_t(&mut rng, 8, 6);
        let z = rand_t(&mut rng, 8, 3);
        let l = critic_losses(&dx, &dz, &x, &x, &z, &z, 10.0, &mut rng).unwrap();
        assert!(l.critic_x_loss.abs() < 1e-12);
        assert!(l.critic_z_loss.abs() < 1e-12);
    }

    #[test]
    fn penalty_slope_matches_true_gradient_norm_for_linear_critic() {
        // D(z) = w·z + b has ‖∇D‖ = ‖w‖ everywhere
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, mut dz) = critics(&mut rng, 6, 3);
        dz.out.weight.data = vec![0.6, 0.0, 0.8];
        let real = rand_t(&mut rng, 5, 3);
        let fake = rand_t(&mut rng, 5, 3);
        let p = gradient_penalty(&dz, &Binder::frozen(), &real, &fake, &mut rng).unwrap();
        assert!(p.item().unwrap() < 1e-12);
        dz.out.weight.data = vec![2.0, 0.0, 0.0];
        let p = gradient_penalty(&dz, &Binder::frozen(), &real, &fake, &mut rng).unwrap();
        assert!((p.item().unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn euclidean_cycle_loss_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = rand_t(&mut rng, 2, 4);
        let p: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = grad_check(|x| euclidean_cycle_loss(&target, &x.tanh()), &p, &[2, 4]).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn hyperbolic_cycle_loss_properties() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = exp_map_0_rows(&rand_t(&mut rng, 3, 4), &geom).unwrap();
        assert_eq!(hyperbolic_cycle_loss(&h, &h, &geom).unwrap().item().unwrap(), 0.0);
        let h2 = exp_map_0_rows(&rand_t(&mut rng, 3, 4), &geom).unwrap();
        let err = grad_check(
            |x| hyperbolic_cycle_loss(&exp_map_0_rows(x, &geom)?, &h2, &geom),
            h.data(),
            &[3, 4],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
