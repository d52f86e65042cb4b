//! Differentiable Poincaré-ball operations over batches of row vectors and
//! the hyperbolic projection head.

use rand::Rng;

use super::param::{check_param_shape, Binder, Param};
use crate::error::{Error, Result};
use crate::hypgeo::{BallPoint, GeometryConfig};
use crate::tensor::Tensor;

const NORM_FLOOR: f64 = 1e-15;

/// Row-wise `tanh(‖v‖) v / ‖v‖`, clamped to the ball.
pub fn exp_map_0_rows(v: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
    let n = v.norm2()?.clamp_min(NORM_FLOOR);
    let s = n.tanh().div(&n)?;
    v.mul(&s)?.project_ball(geom.max_radius())
}

/// Row-wise `artanh(‖x‖) x / ‖x‖`.
pub fn log_map_0_rows(x: &Tensor) -> Result<Tensor> {
    let n = x.norm2()?.clamp_min(NORM_FLOOR);
    let s = n.artanh()?.div(&n)?;
    x.mul(&s)
}

fn row_dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.mul(b)?.sum_axis(1)
}

/// Row-wise gyro-addition; `b` may be a single row broadcast over the batch.
pub fn mobius_add_rows(a: &Tensor, b: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
    let ab = row_dot(a, b)?;
    let aa = row_dot(a, a)?;
    let bb = row_dot(b, b)?;
    let two_ab = ab.scale(2.0);
    let ca = two_ab.add(&bb)?.add_scalar(1.0);
    let cb = aa.neg().add_scalar(1.0);
    let den = two_ab.add(&aa.mul(&bb)?)?.add_scalar(1.0);
    let num = a.mul(&ca)?.add(&b.mul(&cb)?)?;
    num.div(&den)?.project_ball(geom.max_radius())
}

/// Row-wise geodesic distance, `[batch, 1]`.
pub fn poincare_distance_rows(h: &Tensor, h2: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
    let diff = h.sub(h2)?.square().sum_axis(1)?;
    let hn = h.square().sum_axis(1)?.neg().add_scalar(1.0);
    let h2n = h2.square().sum_axis(1)?.neg().add_scalar(1.0);
    let arg = diff.scale(2.0).div(&hn.mul(&h2n)?)?.add_scalar(1.0);
    Ok(arg.acosh_stable(geom.acosh_eps))
}

/// Exponential map at the origin followed by one hyperbolic feed-forward
/// layer `exp_0(M · log_0(x)) ⊕ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperbolicHead {
    /// `[d_h, input]`
    pub weight: Param,
    /// `[1, d_h]`, always a valid ball point.
    pub bias: Param,
}

pub const HEAD_BIAS: &str = "head.bias";

impl HyperbolicHead {
    pub fn new(input: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::uniform("head.weight", &[d_h, input], bound, rng),
            bias: Param::zeros(HEAD_BIAS, &[1, d_h]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn bias_point(&self, geom: &GeometryConfig) -> Result<BallPoint> {
        BallPoint::new(self.bias.data.clone(), geom)
    }

    pub fn validate(&self, geom: &GeometryConfig) -> Result<()> {
        check_param_shape(&self.bias, &[1, self.dim()])?;
        self.bias_point(geom).map(|_| ())
    }

    /// `[batch, input] → [batch, d_h]` ball rows.
    pub fn forward(&self, b: &Binder, x: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
        let (_, cols) = x.dims2()?;
        if cols != self.input_dim() {
            return Err(Error::Shape(format!(
                "hyperbolic head expects {} inputs, got {cols}",
                self.input_dim()
            )));
        }
        let w = b.bind(&self.weight)?;
        let bias = b.bind(&self.bias)?;
        let p = exp_map_0_rows(x, geom)?;
        let t = log_map_0_rows(&p)?;
        let m = t.matmul(&w.transpose()?)?;
        let y = exp_map_0_rows(&m, geom)?;
        mobius_add_rows(&y, &bias, geom)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypgeo::{self, TangentVector};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rows(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Vec<f64> {
        (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()
    }

    #[test]
    fn row_ops_agree_with_kernel() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v = rows(&mut rng, 1, 4, 2.0);
            let u = rows(&mut rng, 1, 4, 2.0);
            let tv = Tensor::from_vec(v.clone(), &[1, 4]).unwrap();
            let tu = Tensor::from_vec(u.clone(), &[1, 4]).unwrap();
            let a = exp_map_0_rows(&tv, &geom).unwrap();
            let b = exp_map_0_rows(&tu, &geom).unwrap();
            let ka = hypgeo::exp_map_0(&TangentVector(v), &geom).unwrap();
            let kb = hypgeo::exp_map_0(&TangentVector(u), &geom).unwrap();
            for (x, y) in a.data().iter().zip(ka.coords()) {
                assert!((x - y).abs() < 1e-12);
            }
            let s = mobius_add_rows(&a, &b, &geom).unwrap();
            let ks = hypgeo::mobius_add(&ka, &kb, &geom).unwrap();
            for (x, y) in s.data().iter().zip(ks.coords()) {
                assert!((x - y).abs() < 1e-12);
            }
            let d = poincare_distance_rows(&a, &b, &geom).unwrap().item().unwrap();
            assert!((d - hypgeo::poincare_distance(&ka, &kb, &geom)).abs() < 1e-12);
            let l = log_map_0_rows(&a).unwrap();
            for (x, y) in l.data().iter().zip(hypgeo::log_map_0(&ka).0) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn distance_through_exp_map_matches_finite_differences() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let other = Tensor::from_vec(vec![0.2, -0.4, 0.1], &[1, 3]).unwrap();
        for _ in 0..10 {
            let p = rows(&mut rng, 1, 3, 0.8);
            let err = grad_check(
                |x| Ok(poincare_distance_rows(&exp_map_0_rows(x, &geom)?, &other, &geom)?.sum()),
                &p,
                &[1, 3],
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn clamped_embedding_distance_gradient() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let a = rows(&mut rng, 2, 3, 0.5);
            let b = Tensor::from_vec(rows(&mut rng, 2, 3, 0.5), &[2, 3]).unwrap();
            let err = grad_check(
                |x| Ok(poincare_distance_rows(&x.project_ball(geom.max_radius())?, &b, &geom)?.sum()),
                &a,
                &[2, 3],
            )
            .unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn head_fixes_origin_and_is_deterministic() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = HyperbolicHead::new(6, 3, &mut rng);
        let zero = Tensor::zeros(&[1, 6]);
        let h = head.forward(&Binder::frozen(), &zero, &geom).unwrap();
        assert!(h.data().iter().all(|v| *v == 0.0));
        let x = Tensor::from_vec(rows(&mut rng, 1, 6, 1.0), &[1, 6]).unwrap();
        let h1 = head.forward(&Binder::frozen(), &x, &geom).unwrap();
        let h2 = head.forward(&Binder::frozen(), &x, &geom).unwrap();
        assert_eq!(h1.data(), h2.data());
        let d = poincare_distance_rows(&h1, &h2, &geom).unwrap().item().unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn head_output_stays_in_ball_under_fuzzing() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let mut head = HyperbolicHead::new(8, 4, &mut rng);
            head.weight.data.iter_mut().for_each(|w| *w *= rng.gen_range(0.0..50.0));
            let b = rows(&mut rng, 1, 4, 3.0);
            head.bias.data = hypgeo::clamp_to_ball(&b, &geom).unwrap().into_coords();
            let x = Tensor::from_vec(rows(&mut rng, 5, 8, 20.0), &[5, 8]).unwrap();
            let h = head.forward(&Binder::frozen(), &x, &geom).unwrap();
            let n = h.norm2().unwrap();
            assert!(n.data().iter().all(|v| *v <= geom.max_radius()));
        }
    }

    #[test]
    fn head_gradients() {
        let geom = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let head = HyperbolicHead::new(5, 3, &mut rng);
        let target = Tensor::from_vec(vec![0.1, 0.2, -0.3, 0.0, 0.4, 0.1], &[2, 3]).unwrap();
        let p = rows(&mut rng, 2, 5, 0.3);
        let err = grad_check(
            |x| Ok(poincare_distance_rows(&head.forward(&Binder::frozen(), x, &geom)?, &target, &geom)?.sum()),
            &p,
            &[2, 5],
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
