use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::from_vec(data.to_vec(), shape).unwrap()
}

fn random(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

#[test]
fn forward_examples() {
    let a = t(&[1.0, 2.0, 3.0, 4.0], &[2, 2]);
    let eye = t(&[1.0, 0.0, 0.0, 1.0], &[2, 2]);
    assert_eq!(a.matmul(&eye).unwrap().data(), a.data());
    assert_eq!(Tensor::scalar(0.0).tanh().item().unwrap(), 0.0);
    assert_eq!(Tensor::scalar(0.0).sigmoid().item().unwrap(), 0.5);
    assert_eq!(t(&[3.0, 4.0], &[2]).norm2().unwrap().item().unwrap(), 5.0);
}

#[test]
fn shape_and_domain_errors() {
    let a = t(&[1.0, 2.0, 3.0], &[1, 3]);
    let b = t(&[1.0, 2.0], &[1, 2]);
    assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    assert!(matches!(t(&[1.5], &[1]).artanh(), Err(Error::InvalidValue(_))));
    assert!(matches!(Tensor::from_vec(vec![1.0], &[2]), Err(Error::Shape(_))));
    assert!(matches!(a.backward(), Err(Error::Contract(_))));
}

#[test]
fn backward_sum_of_squares() {
    let x = Tensor::variable(vec![1.0, 2.0, 3.0], &[3]).unwrap();
    x.square().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    // accumulates on a second call
    x.square().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 8.0, 12.0]);
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn constants_get_no_grad() {
    let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
    let c = t(&[5.0, 6.0], &[2]);
    x.mul(&c).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![5.0, 6.0]);
    assert!(c.grad().is_none());
}

#[test]
fn diamond_accumulates_both_paths() {
    // y = x·x + 3x, both branches share x
    let x = Tensor::variable(vec![2.0], &[1]).unwrap();
    let a = x.mul(&x).unwrap();
    let b = x.scale(3.0);
    a.add(&b).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![7.0]);
}

#[test]
fn broadcast_bias_gradient() {
    let m = Tensor::variable(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[3, 2]).unwrap();
    let b = Tensor::variable(vec![0.5, -0.5], &[1, 2]).unwrap();
    m.add(&b).unwrap().sum().backward().unwrap();
    assert_eq!(b.grad().unwrap(), vec![3.0, 3.0]);
    assert_eq!(m.grad().unwrap(), vec![1.0; 6]);
}

type Prim = (&'static str, f64, f64, fn(&Tensor) -> Result<Tensor>);

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let prims: Vec<Prim> = vec![
        ("abs", 0.2, 2.0, |x| Ok(x.abs().sum())),
        ("square", -2.0, 2.0, |x| Ok(x.square().sum())),
        ("sqrt", 0.5, 3.0, |x| Ok(x.sqrt()?.sum())),
        ("exp", -1.0, 1.0, |x| Ok(x.exp().sum())),
        ("tanh", -2.0, 2.0, |x| Ok(x.tanh().sum())),
        ("sigmoid", -3.0, 3.0, |x| Ok(x.sigmoid().sum())),
        ("relu", 0.1, 2.0, |x| Ok(x.relu().sum())),
        ("artanh", -0.9, 0.9, |x| Ok(x.artanh()?.sum())),
        ("acosh", 1.1, 4.0, |x| Ok(x.acosh_stable(1e-7).sum())),
        ("norm2", -1.0, 1.0, |x| Ok(x.norm2()?.sum())),
        ("transpose", -1.0, 1.0, |x| {
            let w = Tensor::from_vec((0..x.numel()).map(|i| i as f64).collect(), &[x.shape()[1], x.shape()[0]])?;
            Ok(x.transpose()?.mul(&w)?.sum())
        }),
        ("matmul", -1.0, 1.0, |x| {
            let (r, c) = x.dims2()?;
            let w = Tensor::from_vec((0..c * 3).map(|i| (i as f64 * 0.37).sin()).collect(), &[c, 3])?;
            let v = Tensor::from_vec((0..r).map(|i| (i as f64 * 0.71).cos()).collect(), &[1, r])?;
            Ok(v.matmul(&x.matmul(&w)?.tanh())?.sum())
        }),
        ("slice_concat", -1.0, 1.0, |x| {
            let (_, c) = x.dims2()?;
            let left = x.slice(1, 0, c / 2)?;
            let right = x.slice(1, c / 2, c)?;
            let top = x.slice(0, 0, 1)?;
            let cat = Tensor::concat(&[&right.square(), &left.tanh()], 1)?;
            let rows = Tensor::concat(&[&top, &x.sigmoid()], 0)?;
            Ok(cat.sum().add(&rows.square().mean())?)
        }),
        ("sum_axis_div", 0.5, 2.0, |x| {
            let s = x.sum_axis(1)?;
            let s0 = x.sum_axis(0)?;
            Ok(x.div(&s)?.square().sum().add(&x.div(&s0)?.sum())?)
        }),
        ("project_ball", -1.0, 1.0, |x| Ok(x.project_ball(0.7)?.tanh().sum())),
        ("clamp_min", 0.2, 2.0, |x| Ok(x.clamp_min(0.1).square().sum())),
    ];
    for (name, lo, hi, f) in prims {
        for _ in 0..3 {
            let r = rng.gen_range(1..4);
            let c = 2 * rng.gen_range(1..4);
            let p = random(&mut rng, r * c, lo, hi);
            let err = grad_check(f, &p, &[r, c]).unwrap();
            assert!(err < 1e-4, "{name}: relative error {err}");
        }
    }
}

#[test]
fn grad_check_sum_of_squares_is_tight() {
    let err = grad_check(|x| Ok(x.square().sum()), &[0.3, -1.2, 2.5], &[3]).unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::variable(random(&mut rng, 12, -1.0, 1.0), &[4, 3]).unwrap();
        let x = t(&random(&mut rng, 8, -1.0, 1.0), &[2, 4]);
        let y = x.matmul(&w).unwrap().tanh().square().mean();
        y.backward().unwrap();
        (y.item().unwrap().to_bits(), w.grad().unwrap().iter().map(|g| g.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
