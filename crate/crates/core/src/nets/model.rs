use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::head::HyperbolicHead;
use super::layers::{BiLstm, Dense};
use super::param::{Binder, Param};
use crate::error::{Error, Result};
use crate::hypgeo::GeometryConfig;
use crate::tensor::Tensor;

/// Sizes that fix the parameter shapes of a [`ModelBundle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub window: usize,
    pub channels: usize,
    pub d_z: usize,
    pub d_h: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub critic_hidden: usize,
    /// Number of recurrent steps a window is split into. With one step the
    /// whole flattened window is a single LSTM input.
    pub lstm_steps: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            window: 100,
            channels: 1,
            d_z: 20,
            d_h: 20,
            encoder_hidden: 100,
            decoder_hidden: 64,
            critic_hidden: 100,
            lstm_steps: 1,
        }
    }
}

impl Architecture {
    pub fn flat(&self) -> usize {
        self.window * self.channels
    }

    fn segment(&self) -> usize {
        self.flat() / self.lstm_steps
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.window,
            self.channels,
            self.d_z,
            self.d_h,
            self.encoder_hidden,
            self.decoder_hidden,
            self.critic_hidden,
            self.lstm_steps,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("architecture sizes must be positive".into()));
        }
        if self.window % self.lstm_steps != 0 {
            return Err(Error::Config(format!(
                "lstm_steps {} must divide the window width {}",
                self.lstm_steps, self.window
            )));
        }
        Ok(())
    }
}

/// Encoder `E`: one bidirectional LSTM layer and a dense map to the latent.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub lstm: BiLstm,
    pub dense: Dense,
}

/// Decoder `G`: two bidirectional LSTM layers and a per-step dense output
/// squashed by `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder {
    pub lstm: BiLstm,
    pub dense: Dense,
}

/// Critic over windows: two dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticX {
    pub hidden: Dense,
    pub out: Dense,
}

/// Critic over latents: one dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticZ {
    pub out: Dense,
}

/// Something that scores a batch of inputs `[batch, n] → [batch, 1]`.
pub trait Critic {
    fn score(&self, b: &Binder, x: &Tensor) -> Result<Tensor>;
}

impl Critic for CriticX {
    fn score(&self, b: &Binder, x: &Tensor) -> Result<Tensor> {
        let h = self.hidden.forward(b, x)?.tanh();
        self.out.forward(b, &h)
    }
}

impl Critic for CriticZ {
    fn score(&self, b: &Binder, z: &Tensor) -> Result<Tensor> {
        self.out.forward(b, z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub critic_x: CriticX,
    pub critic_z: CriticZ,
    pub head: HyperbolicHead,
}

pub const ENCODER: &str = "encoder.";
pub const DECODER: &str = "decoder.";
pub const CRITIC_X: &str = "critic_x.";
pub const CRITIC_Z: &str = "critic_z.";
pub const HEAD: &str = "head.";

impl ModelBundle {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seg = arch.segment();
        let encoder = Encoder {
            lstm: BiLstm::new("encoder.lstm", seg, arch.encoder_hidden, 1, &mut rng),
            dense: Dense::new("encoder.dense", 2 * arch.encoder_hidden, arch.d_z, &mut rng),
        };
        let decoder = Decoder {
            lstm: BiLstm::new("decoder.lstm", arch.d_z, arch.decoder_hidden, 2, &mut rng),
            dense: Dense::new("decoder.dense", 2 * arch.decoder_hidden, seg, &mut rng),
        };
        let critic_x = CriticX {
            hidden: Dense::new("critic_x.hidden", arch.flat(), arch.critic_hidden, &mut rng),
            out: Dense::new("critic_x.out", arch.critic_hidden, 1, &mut rng),
        };
        let critic_z = CriticZ {
            out: Dense::new("critic_z.out", arch.d_z, 1, &mut rng),
        };
        let head = HyperbolicHead::new(arch.flat(), arch.d_h, &mut rng);
        Ok(Self {
            arch,
            encoder,
            decoder,
            critic_x,
            critic_z,
            head,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.lstm.params();
        v.extend(self.encoder.dense.params());
        v.extend(self.decoder.lstm.params());
        v.extend(self.decoder.dense.params());
        v.extend(self.critic_x.hidden.params());
        v.extend(self.critic_x.out.params());
        v.extend(self.critic_z.out.params());
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.lstm.params_mut();
        v.extend(self.encoder.dense.params_mut());
        v.extend(self.decoder.lstm.params_mut());
        v.extend(self.decoder.dense.params_mut());
        v.extend(self.critic_x.hidden.params_mut());
        v.extend(self.critic_x.out.params_mut());
        v.extend(self.critic_z.out.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    fn check_batch(&self, x: &Tensor) -> Result<usize> {
        let (rows, cols) = x.dims2()?;
        if x.shape().len() != 2 || cols != self.arch.flat() {
            return Err(Error::Shape(format!(
                "expected windows of {}×{} flattened to {} columns, got shape {:?}",
                self.arch.window,
                self.arch.channels,
                self.arch.flat(),
                x.shape()
            )));
        }
        Ok(rows)
    }

    /// `[batch, w·c] → [batch, d_z]`
    pub fn encode_batch(&self, b: &Binder, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let seg = self.arch.segment();
        let seq: Vec<Tensor> = (0..self.arch.lstm_steps)
            .map(|s| x.slice(1, s * seg, (s + 1) * seg))
            .collect::<Result<_>>()?;
        let out = self.encoder.lstm.forward(b, &seq)?;
        let h = self.arch.encoder_hidden;
        let last_fwd = out[out.len() - 1].slice(1, 0, h)?;
        let first_bwd = out[0].slice(1, h, 2 * h)?;
        let summary = Tensor::concat(&[&last_fwd, &first_bwd], 1)?;
        self.encoder.dense.forward(b, &summary)
    }

    /// `[batch, d_z] → [batch, w·c]`
    pub fn decode_batch(&self, b: &Binder, z: &Tensor) -> Result<Tensor> {
        let (_, cols) = z.dims2()?;
        if z.shape().len() != 2 || cols != self.arch.d_z {
            return Err(Error::Shape(format!(
                "expected latents of width {}, got shape {:?}",
                self.arch.d_z,
                z.shape()
            )));
        }
        let seq = vec![z.clone(); self.arch.lstm_steps];
        let out = self.decoder.lstm.forward(b, &seq)?;
        let parts: Vec<Tensor> = out
            .iter()
            .map(|o| Ok(self.decoder.dense.forward(b, o)?.tanh()))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat(&refs, 1)
    }

    pub fn reconstruct_batch(&self, b: &Binder, x: &Tensor) -> Result<Tensor> {
        let z = self.encode_batch(b, x)?;
        self.decode_batch(b, &z)
    }

    pub fn critic_x_batch(&self, b: &Binder, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        self.critic_x.score(b, x)
    }

    pub fn project_batch(&self, b: &Binder, x: &Tensor, geom: &GeometryConfig) -> Result<Tensor> {
        self.check_batch(x)?;
        self.head.forward(b, x, geom)
    }

    fn flatten_window(&self, window: &Tensor) -> Result<Tensor> {
        let expected = [self.arch.window, self.arch.channels];
        if window.shape() != expected {
            return Err(Error::Shape(format!(
                "window shape {:?}, expected {:?}",
                window.shape(),
                expected
            )));
        }
        window.reshape(&[1, self.arch.flat()])
    }

    /// Latent code of one `[w, c]` window.
    pub fn encode(&self, window: &Tensor) -> Result<Tensor> {
        let x = self.flatten_window(window)?;
        self.encode_batch(&Binder::frozen(), &x)?.reshape(&[self.arch.d_z])
    }

    /// Window `[w, c]` decoded from a `[d_z]` latent.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.numel() != self.arch.d_z {
            return Err(Error::Shape(format!("latent of size {}, expected {}", z.numel(), self.arch.d_z)));
        }
        let z = z.reshape(&[1, self.arch.d_z])?;
        self.decode_batch(&Binder::frozen(), &z)?
            .reshape(&[self.arch.window, self.arch.channels])
    }
}
