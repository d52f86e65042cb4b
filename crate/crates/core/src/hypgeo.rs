//! Poincaré-ball geometry with unit curvature.
//!
//! The ball is the open set `{x : ‖x‖ < 1}` with metric `λ_x² g_E`, where
//! `λ_x = 2 / (1 − ‖x‖²)`. Every constructor in this module returns points
//! whose norm is at most `1 − ball_margin`, which keeps the conformal factor
//! and the distance finite.
//!
//! These are plain `f64` kernels. The differentiable counterparts used during
//! training live in [`crate::nets::head`] and are checked against these.

use crate::error::{Error, Result};

/// Numeric guards for the ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConfig {
    /// Fixed at 1.0.
    pub curvature_c: f64,
    /// Points are kept at radius `≤ 1 − ball_margin`.
    pub ball_margin: f64,
    /// Offset used for the acosh derivative at the clamp.
    pub acosh_eps: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            curvature_c: 1.0,
            ball_margin: 1e-5,
            acosh_eps: 1e-7,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curvature_c != 1.0 {
            return Err(Error::Config("only unit curvature is supported".into()));
        }
        if !(self.ball_margin > 0.0 && self.ball_margin < 1e-2) {
            return Err(Error::Config(format!(
                "ball_margin must lie in (0, 1e-2), got {}",
                self.ball_margin
            )));
        }
        if !(self.acosh_eps > 0.0) {
            return Err(Error::Config("acosh_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn max_radius(&self) -> f64 {
        1.0 - self.ball_margin
    }
}

/// A point strictly inside the unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct BallPoint(Vec<f64>);

/// A tangent vector at the origin. Unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(pub Vec<f64>);

impl BallPoint {
    pub fn origin(dim: usize) -> Self {
        BallPoint(vec![0.0; dim])
    }

    /// Wraps coordinates that are already known to be inside the clamped
    /// ball. A norm over the radius by rounding only is pulled back onto it.
    pub fn new(coords: Vec<f64>, cfg: &GeometryConfig) -> Result<Self> {
        let n = norm(&coords);
        let r = cfg.max_radius();
        if !n.is_finite() || n > r * (1.0 + 1e-12) {
            return Err(Error::invalid(format!("norm {n} outside ball of radius {r}")));
        }
        if n > r {
            return clamp_to_ball(&coords, cfg);
        }
        Ok(BallPoint(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.0, &self.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Rescales `v` onto the sphere of radius `1 − margin` if it lies outside.
pub fn clamp_to_ball(v: &[f64], cfg: &GeometryConfig) -> Result<BallPoint> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite coordinate in clamp_to_ball"));
    }
    let n = norm(v);
    let r = cfg.max_radius();
    if n <= r {
        Ok(BallPoint(v.to_vec()))
    } else {
        // shave a few ulps so rounding cannot land outside the radius
        let s = r / n * (1.0 - 4.0 * f64::EPSILON);
        Ok(BallPoint(v.iter().map(|x| x * s).collect()))
    }
}

pub fn conformal_factor(x: &BallPoint) -> f64 {
    2.0 / (1.0 - x.norm_sq())
}

pub fn exp_map_0(v: &TangentVector, cfg: &GeometryConfig) -> Result<BallPoint> {
    let n = norm(&v.0);
    if !n.is_finite() {
        return Err(Error::invalid("non-finite tangent vector"));
    }
    if n == 0.0 {
        return Ok(BallPoint::origin(v.0.len()));
    }
    let s = n.tanh() / n;
    let mapped: Vec<f64> = v.0.iter().map(|x| x * s).collect();
    clamp_to_ball(&mapped, cfg)
}

pub fn log_map_0(x: &BallPoint) -> TangentVector {
    let n = x.norm();
    if n == 0.0 {
        return TangentVector(vec![0.0; x.dim()]);
    }
    let s = n.atanh() / n;
    TangentVector(x.0.iter().map(|c| c * s).collect())
}

/// Gyro-addition `a ⊕ b`.
pub fn mobius_add(a: &BallPoint, b: &BallPoint, cfg: &GeometryConfig) -> Result<BallPoint> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "mobius_add dimension mismatch {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let ab = dot(&a.0, &b.0);
    let aa = a.norm_sq();
    let bb = b.norm_sq();
    let ca = 1.0 + 2.0 * ab + bb;
    let cb = 1.0 - aa;
    let den = 1.0 + 2.0 * ab + aa * bb;
    let out: Vec<f64> = a
        .0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (ca * x + cb * y) / den)
        .collect();
    clamp_to_ball(&out, cfg)
}

/// Geodesic distance on the ball.
pub fn poincare_distance(h: &BallPoint, h2: &BallPoint, _cfg: &GeometryConfig) -> f64 {
    let diff: f64 = h.0.iter().zip(&h2.0).map(|(a, b)| (a - b) * (a - b)).sum();
    let arg = 1.0 + 2.0 * diff / ((1.0 - h.norm_sq()) * (1.0 - h2.norm_sq()));
    arg.max(1.0).acosh()
}

/// `1 − ‖h̃‖²`: one at the origin, vanishing toward the boundary.
pub fn uncertainty(h2: &BallPoint) -> f64 {
    (1.0 - h2.norm_sq()).clamp(0.0, 1.0)
}

/// Cosine distance `1 − cos∠(a, b)`; `None` when either vector has zero norm.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> GeometryConfig {
        GeometryConfig::default()
    }

    fn random_ball(rng: &mut ChaCha8Rng, dim: usize) -> BallPoint {
        // log-uniform-ish radii so that near-boundary points show up
        let dir: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = 1.0 - 10f64.powf(-rng.gen_range(0.0..4.5));
        let n = norm(&dir).max(1e-12);
        clamp_to_ball(&dir.iter().map(|x| x * r / n).collect::<Vec<_>>(), &cfg()).unwrap()
    }

    #[test]
    fn clamp_examples() {
        let c = cfg();
        assert_eq!(clamp_to_ball(&[0.0, 0.0], &c).unwrap().coords(), &[0.0, 0.0]);
        let p = clamp_to_ball(&[2.0, 0.0], &c).unwrap();
        assert!((p.coords()[0] - 0.99999).abs() < 1e-15);
        assert_eq!(p.coords()[1], 0.0);
        assert_eq!(clamp_to_ball(&[0.3, 0.4], &c).unwrap().coords(), &[0.3, 0.4]);
        assert!(matches!(
            clamp_to_ball(&[f64::NAN, 0.0], &c),
            Err(Error::InvalidValue(_))
        ));
    }

    #[test]
    fn conformal_factor_examples() {
        let c = cfg();
        assert_eq!(conformal_factor(&BallPoint::origin(3)), 2.0);
        let half = BallPoint::new(vec![0.5f64.sqrt(), 0.0], &c).unwrap();
        assert!((conformal_factor(&half) - 4.0).abs() < 1e-12);
        let p = BallPoint::new(vec![0.9, 0.0], &c).unwrap();
        // 2 / 0.19
        assert!((conformal_factor(&p) - 10.526_315_789_473_685).abs() < 1e-12);
    }

    #[test]
    fn exp_log_examples() {
        let c = cfg();
        let o = exp_map_0(&TangentVector(vec![0.0, 0.0]), &c).unwrap();
        assert_eq!(o.coords(), &[0.0, 0.0]);
        let p = exp_map_0(&TangentVector(vec![1.0, 0.0]), &c).unwrap();
        assert!((p.coords()[0] - 0.761_594_155_955_764_9).abs() < 1e-15);
        let sat = exp_map_0(&TangentVector(vec![10.0, 0.0]), &c).unwrap();
        assert!((sat.coords()[0] - 10f64.tanh().min(c.max_radius())).abs() < 1e-15);

        assert_eq!(log_map_0(&BallPoint::origin(2)).0, vec![0.0, 0.0]);
        let back = log_map_0(&BallPoint::new(vec![0.761594, 0.0], &c).unwrap());
        assert!((back.0[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exp_log_round_trip() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let dir: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = rng.gen_range(0.0..3.0);
            let n = norm(&dir);
            let v: Vec<f64> = dir.iter().map(|x| x * r / n).collect();
            let back = log_map_0(&exp_map_0(&TangentVector(v.clone()), &c).unwrap());
            for (a, b) in v.iter().zip(&back.0) {
                assert!((a - b).abs() < 1e-7, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn mobius_examples() {
        let c = cfg();
        let a = BallPoint::new(vec![0.3, -0.2], &c).unwrap();
        let r = mobius_add(&a, &BallPoint::origin(2), &c).unwrap();
        assert!(r.coords().iter().zip(a.coords()).all(|(x, y)| (x - y).abs() < 1e-15));

        let a = BallPoint::new(vec![0.5, 0.0], &c).unwrap();
        let na = BallPoint::new(vec![-0.5, 0.0], &c).unwrap();
        assert!(mobius_add(&a, &na, &c).unwrap().norm() < 1e-15);

        let b = BallPoint::new(vec![0.25, 0.0], &c).unwrap();
        let s = mobius_add(&a, &b, &c).unwrap();
        assert!((s.coords()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distance_examples() {
        let c = cfg();
        let p = BallPoint::new(vec![0.1, 0.7], &c).unwrap();
        assert_eq!(poincare_distance(&p, &p.clone(), &c), 0.0);
        let h = BallPoint::new(vec![0.5, 0.0], &c).unwrap();
        let d = poincare_distance(&h, &BallPoint::origin(2), &c);
        assert!((d - 3f64.ln()).abs() < 1e-12);
        assert!((d - 2.0 * 0.5f64.atanh()).abs() < 1e-12);
    }

    #[test]
    fn uncertainty_examples() {
        let c = cfg();
        assert_eq!(uncertainty(&BallPoint::origin(4)), 1.0);
        let p = BallPoint::new(vec![0.9, 0.0], &c).unwrap();
        assert!((uncertainty(&p) - 0.19).abs() < 1e-12);
        let edge = clamp_to_ball(&[5.0, 0.0], &c).unwrap();
        let expected = 1.0 - (1.0 - 1e-5f64).powi(2);
        assert!((uncertainty(&edge) - expected).abs() < 1e-14);
        assert!((expected - 2e-5).abs() < 1e-9);
    }

    #[test]
    fn metric_axioms() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let a = random_ball(&mut rng, 4);
            let b = random_ball(&mut rng, 4);
            let m = random_ball(&mut rng, 4);
            let dab = poincare_distance(&a, &b, &c);
            let dba = poincare_distance(&b, &a, &c);
            assert!(dab >= 0.0);
            assert!((dab - dba).abs() < 1e-9);
            assert!(poincare_distance(&a, &a, &c) < 1e-9);
            let via = poincare_distance(&a, &m, &c) + poincare_distance(&m, &b, &c);
            assert!(dab <= via + 1e-7, "{dab} > {via}");
            let origin_d = poincare_distance(&BallPoint::origin(4), &a, &c);
            assert!((origin_d - 2.0 * a.norm().atanh()).abs() < 1e-9);
        }
    }

    #[test]
    fn conformal_factor_minimum_at_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let p = random_ball(&mut rng, 3);
            let l = conformal_factor(&p);
            assert!(l >= 2.0);
            if p.norm() > 1e-6 {
                assert!(l > 2.0);
            }
        }
    }

    #[test]
    fn cosine_distance_orthogonal() {
        assert!((cosine_distance(&[0.5, 0.0], &[0.0, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_distance(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        let bad = GeometryConfig {
            ball_margin: 0.5,
            ..cfg()
        };
        assert!(bad.validate().is_err());
    }
}
