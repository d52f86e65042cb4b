use rand::Rng;

use super::param::{Binder, Param};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Self {
            weight: Param::uniform(format!("{name}.weight"), &[input, output], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[1, output], bound, rng),
        }
    }

    pub fn forward(&self, b: &Binder, x: &Tensor) -> Result<Tensor> {
        x.matmul(&b.bind(&self.weight)?)?.add(&b.bind(&self.bias)?)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// One direction of an LSTM layer. Gate columns are ordered i, f, g, o.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            w_ih: Param::uniform(format!("{name}.w_ih"), &[input, 4 * hidden], bound, rng),
            w_hh: Param::uniform(format!("{name}.w_hh"), &[hidden, 4 * hidden], bound, rng),
            bias: Param::uniform(format!("{name}.bias"), &[1, 4 * hidden], bound, rng),
            hidden,
        }
    }

    /// Runs the cell over `seq` from zero state; returns hidden states in
    /// processing order.
    fn run<'a>(&self, b: &Binder, seq: impl Iterator<Item = &'a Tensor>) -> Result<Vec<Tensor>> {
        let w_ih = b.bind(&self.w_ih)?;
        let w_hh = b.bind(&self.w_hh)?;
        let bias = b.bind(&self.bias)?;
        let hs = self.hidden;
        let mut state: Option<(Tensor, Tensor)> = None;
        let mut out = Vec::new();
        for x in seq {
            let mut gates = x.matmul(&w_ih)?.add(&bias)?;
            if let Some((h, _)) = &state {
                gates = gates.add(&h.matmul(&w_hh)?)?;
            }
            let i = gates.slice(1, 0, hs)?.sigmoid();
            let f = gates.slice(1, hs, 2 * hs)?.sigmoid();
            let g = gates.slice(1, 2 * hs, 3 * hs)?.tanh();
            let o = gates.slice(1, 3 * hs, 4 * hs)?.sigmoid();
            let c = match &state {
                Some((_, c)) => f.mul(c)?.add(&i.mul(&g)?)?,
                None => i.mul(&g)?,
            };
            let h = o.mul(&c.tanh())?;
            out.push(h.clone());
            state = Some((h, c));
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.w_ih, &self.w_hh, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }
}

/// Stacked bidirectional LSTM. Each layer's output at step `t` is the
/// concatenation `[forward_t, backward_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<(LstmCell, LstmCell)>,
}

impl BiLstm {
    pub fn new(name: &str, input: usize, hidden: usize, num_layers: usize, rng: &mut impl Rng) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input } else { 2 * hidden };
                (
                    LstmCell::new(&format!("{name}.l{l}.fwd"), inp, hidden, rng),
                    LstmCell::new(&format!("{name}.l{l}.bwd"), inp, hidden, rng),
                )
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].0.hidden
    }

    /// Per-step outputs of the last layer, each `[batch, 2·hidden]`.
    pub fn forward(&self, b: &Binder, seq: &[Tensor]) -> Result<Vec<Tensor>> {
        if seq.is_empty() {
            return Err(Error::Shape("empty sequence".into()));
        }
        let mut cur: Vec<Tensor> = seq.to_vec();
        for (fwd, bwd) in &self.layers {
            let hf = fwd.run(b, cur.iter())?;
            let mut hb = bwd.run(b, cur.iter().rev())?;
            hb.reverse();
            cur = hf
                .iter()
                .zip(&hb)
                .map(|(f, r)| Tensor::concat(&[f, r], 1))
                .collect::<Result<_>>()?;
        }
        Ok(cur)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|(f, b)| f.params().into_iter().chain(b.params()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|(f, b)| f.params_mut().into_iter().chain(b.params_mut()))
            .collect()
    }
}
