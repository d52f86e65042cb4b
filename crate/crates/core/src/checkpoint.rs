//! Binary checkpoint: magic, format version, config digest, config text and
//! length-prefixed named `f64` arrays, all little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::config::{digest_bytes, RunConfig};
use crate::error::{Error, Result};
use crate::nets::{ModelBundle, OptimizerState};
use crate::optim::AdamState;
use crate::series::MinMaxScaler;

pub const MAGIC: &[u8; 8] = b"HYPADCK\0";
pub const FORMAT_VERSION: u32 = 1;

/// Named arrays with their shapes.
pub type ArrayMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub bundle: ModelBundle,
    pub optimizer: OptimizerState,
    pub scaler: MinMaxScaler,
    /// Completed epochs.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn digest(&self) -> String {
        self.config.digest()
    }

    fn arrays(&self) -> ArrayMap {
        let mut m = ArrayMap::new();
        for p in self.bundle.params() {
            m.insert(format!("param.{}", p.name), (p.shape.clone(), p.data.clone()));
        }
        for (name, st) in &self.optimizer.slots {
            m.insert(format!("adam_m.{name}"), (vec![st.m.len()], st.m.clone()));
            m.insert(format!("adam_v.{name}"), (vec![st.v.len()], st.v.clone()));
            m.insert(format!("adam_t.{name}"), (vec![1], vec![st.t as f64]));
        }
        let c = self.scaler.min.len();
        m.insert("scaler.min".into(), (vec![c], self.scaler.min.clone()));
        m.insert("scaler.max".into(), (vec![c], self.scaler.max.clone()));
        m.insert("meta.epoch".into(), (vec![1], vec![self.epoch as f64]));
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config.to_toml();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&digest_bytes(&text));
        write_bytes(&mut out, text.as_bytes());
        let arrays = self.arrays();
        out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
        for (name, (shape, data)) in &arrays {
            write_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let digest: [u8; 32] = read_array(&mut r)?;
        let text = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Checkpoint("config text is not UTF-8".into()))?;
        if digest_bytes(&text) != digest {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: header {}, content {}",
                hex::encode(digest),
                hex::encode(digest_bytes(&text))
            )));
        }
        let config = RunConfig::from_toml(&text)?;

        let count = read_u64(&mut r)? as usize;
        let mut arrays = ArrayMap::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let rank = read_u64(&mut r)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let len = read_u64(&mut r)? as usize;
            if len > r.len() / 8 {
                return Err(Error::Checkpoint(format!("array `{name}` truncated")));
            }
            let data = (0..len)
                .map(|_| read_array(&mut r).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            arrays.insert(name, (shape, data));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Self::from_arrays(config, arrays)
    }

    fn from_arrays(config: RunConfig, mut arrays: ArrayMap) -> Result<Self> {
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
        };
        let scaler = MinMaxScaler {
            min: take("scaler.min")?.1,
            max: take("scaler.max")?.1,
        };
        let epoch = take("meta.epoch")?.1.first().copied().unwrap_or(0.0) as usize;
        let arch = config.architecture(scaler.min.len());
        let mut bundle = ModelBundle::new(arch, 0)?;
        let mut optimizer = OptimizerState::default();
        for p in bundle.params_mut() {
            let (shape, data) = take(&format!("param.{}", p.name))?;
            if shape != p.shape || data.len() != p.data.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                )));
            }
            p.data = data;
            if let (Ok(m), Ok(v), Ok(t)) = (
                take(&format!("adam_m.{}", p.name)),
                take(&format!("adam_v.{}", p.name)),
                take(&format!("adam_t.{}", p.name)),
            ) {
                if m.1.len() != p.data.len() || v.1.len() != p.data.len() {
                    return Err(Error::Checkpoint(format!("optimizer state of `{}` has wrong size", p.name)));
                }
                let t = t.1.first().copied().unwrap_or(0.0) as u64;
                optimizer.slots.insert(p.name.clone(), AdamState { m: m.1, v: v.1, t });
            }
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected array `{extra}`")));
        }
        bundle.head.validate(&config.geometry())?;
        Ok(Self {
            config,
            bundle,
            optimizer,
            scaler,
            epoch,
        })
    }

    /// Writes through a temporary sibling so a crash never leaves a torn file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
    out.extend_from_slice(b);
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    if r.len() < buf.len() {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let (head, tail) = r.split_at(buf.len());
    buf.copy_from_slice(head);
    *r = tail;
    Ok(())
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn read_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_bytes(r: &mut &[u8]) -> Result<Vec<u8>> {
    let n = read_u64(r)? as usize;
    if n > r.len() {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let mut b = vec![0u8; n];
    read_exact(r, &mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Binder;
    use crate::tensor::Tensor;

    fn small_config() -> RunConfig {
        RunConfig {
            window: 8,
            d_z: 3,
            d_h: 3,
            encoder_hidden: 4,
            decoder_hidden: 3,
            critic_hidden: 5,
            lstm_steps: 2,
            ..RunConfig::default()
        }
    }

    fn sample() -> Checkpoint {
        let config = small_config();
        let bundle = ModelBundle::new(config.architecture(1), 3).unwrap();
        let mut optimizer = OptimizerState::for_bundle(&bundle);
        for (i, st) in optimizer.slots.values_mut().enumerate() {
            st.t = i as u64;
            st.m.iter_mut().for_each(|m| *m = 0.1 * i as f64);
        }
        Checkpoint {
            config,
            bundle,
            optimizer,
            scaler: MinMaxScaler {
                min: vec![-1.5],
                max: vec![2.25],
            },
            epoch: 7,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        let x = Tensor::from_vec((0..16).map(|i| (i as f64 * 0.37).sin()).collect(), &[2, 8]).unwrap();
        let a = c.bundle.reconstruct_batch(&Binder::frozen(), &x).unwrap();
        let b = back.bundle.reconstruct_batch(&Binder::frozen(), &x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn file_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.ckpt");
        let c = sample();
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }

    #[test]
    fn tampered_config_fails_digest() {
        let c = sample();
        let mut bytes = c.to_bytes();
        // flip a byte inside the config text that follows the header
        let pos = 8 + 4 + 32 + 8 + 3;
        bytes[pos] ^= 0x01;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Checkpoint(m)) => assert!(m.contains("digest"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupt_headers_rejected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Checkpoint(_))
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint(_))));
    }
}
