use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::head::HEAD_BIAS;
use super::losses::{
    euclidean_cycle_loss, generator_adversarial_loss, gradient_penalty, hyperbolic_cycle_loss,
    wasserstein_critic_loss,
};
use super::model::{Critic, ModelBundle, CRITIC_X, CRITIC_Z, DECODER, ENCODER, HEAD};
use super::param::Binder;
use crate::error::{Error, Result};
use crate::hypgeo::{BallPoint, GeometryConfig};
use crate::optim::{adam_step, riemannian_adam_step, AdamConfig, AdamState};
use crate::tensor::Tensor;

/// Which cycle-consistency term drives the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Mean squared point-wise error.
    Euclidean,
    /// Poincaré distance between projected input and reconstruction.
    Hyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub critic_iters: usize,
    pub batch: usize,
    pub lambda_gp: f64,
    pub lambda_cycle: f64,
    /// Update the head's matrix during training. Off by default: the
    /// distance loss is then minimized by shrinking the matrix on the
    /// directions the data spans, which drives every reconstruction
    /// embedding to the origin (U ≈ 1 everywhere).
    pub train_head_weight: bool,
    pub geom: GeometryConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Hyperbolic,
            lr: 5e-4,
            critic_iters: 5,
            batch: 64,
            lambda_gp: 10.0,
            lambda_cycle: 10.0,
            train_head_weight: false,
            geom: GeometryConfig::default(),
        }
    }
}

/// Per-step (or per-epoch averaged) loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub critic_x_loss: f64,
    pub critic_z_loss: f64,
    /// Adversarial part of the generator objective.
    pub generator_loss: f64,
    pub cycle_loss: f64,
    /// `λ_gp`-weighted penalty averaged over both critics.
    pub gradient_penalty: f64,
}

impl LossReport {
    fn values(&self) -> [f64; 5] {
        [
            self.critic_x_loss,
            self.critic_z_loss,
            self.generator_loss,
            self.cycle_loss,
            self.gradient_penalty,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut acc = [0.0; 5];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v;
            }
        }
        LossReport {
            critic_x_loss: acc[0] / n,
            critic_z_loss: acc[1] / n,
            generator_loss: acc[2] / n,
            cycle_loss: acc[3] / n,
            gradient_penalty: acc[4] / n,
        }
    }
}

/// Adam moments for every parameter, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub slots: BTreeMap<String, AdamState>,
}

impl OptimizerState {
    pub fn for_bundle(bundle: &ModelBundle) -> Self {
        Self {
            slots: bundle
                .params()
                .into_iter()
                .map(|p| (p.name.clone(), AdamState::new(p.numel())))
                .collect(),
        }
    }
}

/// Owns a bundle, its optimizer state and the training RNG.
pub struct Trainer {
    pub bundle: ModelBundle,
    pub state: OptimizerState,
    pub cfg: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
    epoch: usize,
}

impl Trainer {
    pub fn new(bundle: ModelBundle, cfg: TrainConfig, seed: u64) -> Result<Self> {
        cfg.geom.validate()?;
        bundle.head.validate(&cfg.geom)?;
        if cfg.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let state = OptimizerState::for_bundle(&bundle);
        Ok(Self {
            bundle,
            state,
            cfg,
            // offset keeps the stream distinct from parameter initialization
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9)),
            step: 0,
            epoch: 0,
        })
    }

    pub fn with_state(mut self, state: OptimizerState) -> Self {
        self.state = state;
        self
    }

    fn noise(&mut self, rows: usize) -> Result<Tensor> {
        let cols = self.bundle.arch.d_z;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut self.rng))
            .collect();
        Tensor::from_vec(data, &[rows, cols])
    }

    fn apply(&mut self, grads: BTreeMap<String, Vec<f64>>) -> Result<()> {
        let adam = AdamConfig::with_lr(self.cfg.lr);
        let geom = self.cfg.geom;
        for p in self.bundle.params_mut() {
            let Some(g) = grads.get(&p.name) else { continue };
            let slot = self
                .state
                .slots
                .entry(p.name.clone())
                .or_insert_with(|| AdamState::new(p.numel()));
            if p.name == HEAD_BIAS {
                let mut pts = vec![BallPoint::new(p.data.clone(), &geom)?];
                riemannian_adam_step(&mut pts, &[g.clone()], slot, &adam, &geom)?;
                p.data = pts.pop().expect("one point").into_coords();
            } else {
                adam_step(&mut p.data, g, slot, &adam)?;
            }
        }
        Ok(())
    }

    /// One update of each critic against the current (frozen) mappings.
    pub fn critic_update(&mut self, batch: &Tensor, fake_z: &Tensor) -> Result<(f64, f64, f64)> {
        let rows = batch.dims2()?.0;
        let frozen = Binder::frozen();

        let z = self.noise(rows)?;
        let fake_x = self.bundle.decode_batch(&frozen, &z)?;
        let bx = Binder::trainable(&[CRITIC_X]);
        let dxr = self.bundle.critic_x.score(&bx, batch)?;
        let dxf = self.bundle.critic_x.score(&bx, &fake_x)?;
        let wx = wasserstein_critic_loss(&dxr, &dxf)?;
        let gpx = gradient_penalty(&self.bundle.critic_x, &bx, batch, &fake_x, &mut self.rng)?;
        wx.add(&gpx.scale(self.cfg.lambda_gp))?.backward()?;
        let gx = bx.grads();

        let real_z = self.noise(rows)?;
        let bz = Binder::trainable(&[CRITIC_Z]);
        let dzr = self.bundle.critic_z.score(&bz, &real_z)?;
        let dzf = self.bundle.critic_z.score(&bz, fake_z)?;
        let wz = wasserstein_critic_loss(&dzr, &dzf)?;
        let gpz = gradient_penalty(&self.bundle.critic_z, &bz, &real_z, fake_z, &mut self.rng)?;
        wz.add(&gpz.scale(self.cfg.lambda_gp))?.backward()?;
        let gz = bz.grads();

        self.apply(gx)?;
        self.apply(gz)?;
        let penalty = 0.5 * self.cfg.lambda_gp * (gpx.item()? + gpz.item()?);
        Ok((wx.item()?, wz.item()?, penalty))
    }

    /// Generator objective on `batch` with prior samples `z`:
    /// returns `(adversarial, cycle, binder)` with the graph still attached.
    fn generator_objective(&self, batch: &Tensor, z: &Tensor, trainable: &[&str]) -> Result<(Tensor, Tensor, Binder)> {
        let b = Binder::trainable(trainable);
        let fake_x = self.bundle.decode_batch(&b, z)?;
        let gen_x = generator_adversarial_loss(&self.bundle.critic_x.score(&b, &fake_x)?);
        let ez = self.bundle.encode_batch(&b, batch)?;
        let gen_z = generator_adversarial_loss(&self.bundle.critic_z.score(&b, &ez)?);
        let recon = self.bundle.decode_batch(&b, &ez)?;
        let cycle = match self.cfg.mode {
            TrainMode::Euclidean => euclidean_cycle_loss(batch, &recon)?,
            TrainMode::Hyperbolic => {
                let geom = &self.cfg.geom;
                let h = self.bundle.head.forward(&b, batch, geom)?;
                let h2 = self.bundle.head.forward(&b, &recon, geom)?;
                check_in_ball(&h, geom)?;
                check_in_ball(&h2, geom)?;
                hyperbolic_cycle_loss(&h, &h2, geom)?
            }
        };
        Ok((gen_x.add(&gen_z)?, cycle, b))
    }

    fn generator_trainables(&self) -> Vec<&'static str> {
        match self.cfg.mode {
            TrainMode::Euclidean => vec![ENCODER, DECODER],
            TrainMode::Hyperbolic if self.cfg.train_head_weight => vec![ENCODER, DECODER, HEAD],
            TrainMode::Hyperbolic => vec![ENCODER, DECODER, HEAD_BIAS],
        }
    }

    /// Total generator loss `adv + λ_cycle · cycle` without updating anything.
    pub fn generator_loss(&self, batch: &Tensor, z: &Tensor) -> Result<f64> {
        let (adv, cycle, _) = self.generator_objective(batch, z, &[])?;
        Ok(adv.item()? + self.cfg.lambda_cycle * cycle.item()?)
    }

    /// Total generator loss and its gradient for each parameter the
    /// generator update would change, without changing anything.
    pub fn generator_gradients(&self, batch: &Tensor, z: &Tensor) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
        let (adv, cycle, b) = self.generator_objective(batch, z, &self.generator_trainables())?;
        let total = adv.add(&cycle.scale(self.cfg.lambda_cycle))?;
        total.backward()?;
        Ok((total.item()?, b.grads()))
    }

    /// One joint update of encoder, decoder and (in hyperbolic mode) head.
    pub fn generator_update(&mut self, batch: &Tensor, z: &Tensor) -> Result<(f64, f64)> {
        let trainable = self.generator_trainables();
        let (adv, cycle, b) = self.generator_objective(batch, z, &trainable)?;
        adv.add(&cycle.scale(self.cfg.lambda_cycle))?.backward()?;
        self.apply(b.grads())?;
        Ok((adv.item()?, cycle.item()?))
    }

    /// `critic_iters` critic updates followed by one generator update.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<LossReport> {
        let rows = batch.dims2()?.0;
        let fake_z = self.bundle.encode_batch(&Binder::frozen(), batch)?;
        let (mut cx, mut cz, mut gp) = (0.0, 0.0, 0.0);
        for _ in 0..self.cfg.critic_iters {
            let (a, b, c) = self.critic_update(batch, &fake_z)?;
            cx += a;
            cz += b;
            gp += c;
        }
        let k = self.cfg.critic_iters.max(1) as f64;
        let z = self.noise(rows)?;
        let (adv, cycle) = self.generator_update(batch, &z)?;
        self.step += 1;
        let report = LossReport {
            critic_x_loss: cx / k,
            critic_z_loss: cz / k,
            generator_loss: adv,
            cycle_loss: cycle,
            gradient_penalty: gp / k,
        };
        if !report.is_finite() {
            return Err(Error::TrainingDivergence {
                epoch: self.epoch,
                step: self.step,
                context: format!("{report:?}"),
            });
        }
        Ok(report)
    }

    /// One pass over `windows` (`[n, w·c]`) in shuffled batches.
    pub fn train_epoch(&mut self, windows: &Tensor) -> Result<LossReport> {
        let (n, cols) = windows.dims2()?;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut reports = Vec::new();
        for chunk in order.chunks(self.cfg.batch) {
            let mut data = Vec::with_capacity(chunk.len() * cols);
            for &i in chunk {
                data.extend_from_slice(&windows.data()[i * cols..(i + 1) * cols]);
            }
            let batch = Tensor::from_vec(data, &[chunk.len(), cols])?;
            reports.push(self.train_step(&batch)?);
        }
        self.epoch += 1;
        Ok(LossReport::mean(&reports))
    }
}

fn check_in_ball(h: &Tensor, geom: &GeometryConfig) -> Result<()> {
    let n = h.norm2()?;
    if let Some(bad) = n.data().iter().find(|v| !(**v <= geom.max_radius())) {
        return Err(Error::InvalidValue(format!("embedding norm {bad} left the ball")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::model::Architecture;

    fn arch() -> Architecture {
        Architecture {
            window: 8,
            channels: 1,
            d_z: 3,
            d_h: 3,
            encoder_hidden: 4,
            decoder_hidden: 3,
            critic_hidden: 5,
            lstm_steps: 2,
        }
    }

    fn sine_windows(n: usize, w: usize, phase: f64) -> Tensor {
        let data: Vec<f64> = (0..n)
            .flat_map(|i| (0..w).map(move |t| 0.8 * (((i + t) as f64 + phase) * std::f64::consts::TAU / 8.0).sin()))
            .collect();
        Tensor::from_vec(data, &[n, w]).unwrap()
    }

    fn cfg(mode: TrainMode, lr: f64) -> TrainConfig {
        TrainConfig {
            mode,
            lr,
            batch: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        for mode in [TrainMode::Euclidean, TrainMode::Hyperbolic] {
            let bundle = ModelBundle::new(arch(), 1).unwrap();
            let before = bundle.clone();
            let mut t = Trainer::new(bundle, cfg(mode, 0.0), 1).unwrap();
            t.train_step(&sine_windows(4, 8, 0.0)).unwrap();
            assert_eq!(t.bundle, before);
        }
    }

    #[test]
    fn generator_step_descends_with_frozen_critics() {
        for mode in [TrainMode::Euclidean, TrainMode::Hyperbolic] {
            let bundle = ModelBundle::new(arch(), 2).unwrap();
            let mut t = Trainer::new(bundle, cfg(mode, 1e-3), 2).unwrap();
            let batch = sine_windows(4, 8, 0.3);
            let z = t.noise(4).unwrap();
            let before = t.generator_loss(&batch, &z).unwrap();
            t.generator_update(&batch, &z).unwrap();
            let after = t.generator_loss(&batch, &z).unwrap();
            assert!(after < before, "{mode:?}: {after} >= {before}");
        }
    }

    #[test]
    fn report_sequence_is_deterministic() {
        let run = || {
            let bundle = ModelBundle::new(arch(), 3).unwrap();
            let mut t = Trainer::new(bundle, cfg(TrainMode::Hyperbolic, 1e-2), 3).unwrap();
            let w = sine_windows(10, 8, 0.0);
            (0..3).map(|_| t.train_epoch(&w).unwrap()).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.values().map(f64::to_bits), y.values().map(f64::to_bits));
        }
    }

    #[test]
    fn head_is_shared_between_branches() {
        let bundle = ModelBundle::new(arch(), 4).unwrap();
        let t = Trainer::new(bundle, cfg(TrainMode::Hyperbolic, 1e-3), 4).unwrap();
        let batch = sine_windows(4, 8, 0.0);
        let z = Tensor::zeros(&[4, 3]);
        let (_, _, b) = t.generator_objective(&batch, &z, &[HEAD]).unwrap();
        // one leaf per head parameter, used by both the x and x̃ branches
        let grads = b.grads();
        assert_eq!(grads.keys().filter(|k| k.starts_with(HEAD)).count(), 2);
    }

    #[test]
    fn training_keeps_bias_in_ball_and_losses_finite() {
        let bundle = ModelBundle::new(arch(), 5).unwrap();
        let mut t = Trainer::new(bundle, cfg(TrainMode::Hyperbolic, 5e-2), 5).unwrap();
        let w = sine_windows(16, 8, 0.1);
        for _ in 0..10 {
            let r = t.train_epoch(&w).unwrap();
            assert!(r.is_finite());
            assert!(r.cycle_loss >= 0.0);
            let b = BallPoint::new(t.bundle.head.bias.data.clone(), &t.cfg.geom);
            assert!(b.is_ok());
        }
    }

    /// Backprop gradients of the full generator objective against central
    /// differences of the loss in every trainable parameter entry.
    #[test]
    fn full_generator_loss_gradient() {
        for mode in [TrainMode::Euclidean, TrainMode::Hyperbolic] {
            let bundle = ModelBundle::new(arch(), 6).unwrap();
            let c = TrainConfig {
                train_head_weight: true,
                ..cfg(mode, 1e-3)
            };
            let mut t = Trainer::new(bundle, c, 6).unwrap();
            let batch = sine_windows(2, 8, 0.2);
            let z = t.noise(2).unwrap();
            let (total, grads) = t.generator_gradients(&batch, &z).unwrap();
            assert_eq!(total, t.generator_loss(&batch, &z).unwrap());
            let eps = 1e-5;
            let mut worst: f64 = 0.0;
            for (name, g) in &grads {
                for (k, analytic) in g.iter().enumerate() {
                    let probe = |delta: f64| {
                        let mut m = t.bundle.clone();
                        let p = m.params_mut().into_iter().find(|p| &p.name == name).unwrap();
                        p.data[k] += delta;
                        let tt = Trainer::new(m, t.cfg, 0).unwrap();
                        tt.generator_loss(&batch, &z).unwrap()
                    };
                    let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                    worst = worst.max((analytic - numeric).abs() / (numeric.abs() + 1e-8).max(1e-3));
                }
            }
            assert!(worst < 1e-3, "{mode:?}: {worst}");
        }
    }

    #[test]
    fn head_weight_frozen_unless_enabled() {
        let w = sine_windows(8, 8, 0.0);
        for train_head_weight in [false, true] {
            let bundle = ModelBundle::new(arch(), 7).unwrap();
            let before = bundle.head.weight.clone();
            let c = TrainConfig {
                train_head_weight,
                ..cfg(TrainMode::Hyperbolic, 1e-2)
            };
            let mut t = Trainer::new(bundle, c, 7).unwrap();
            t.train_epoch(&w).unwrap();
            assert_eq!(t.bundle.head.weight == before, !train_head_weight);
        }
    }
}
