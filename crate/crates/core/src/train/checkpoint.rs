//! Versioned little-endian checkpoint format.
//!
//! ```text
//! magic "DCSSRCKP" | version u32 | epoch u32 | step u64
//! rng: seed [u8; 32] | stream u64 | word_pos u128
//! model: channels u32 | img_channels u32 | scale u32 | leaky_slope f64 | global_residual u8
//! adam: beta1 f64 | beta2 f64 | epsilon f64 | t u64
//! records u32, then per record:
//!   name_len u32 | name utf-8 | rank u32 | extents u32 × rank | payload f32 × Π extents
//! ```
//!
//! Records hold the parameters in registration order, followed by
//! `adam.m.<name>` and `adam.v.<name>` for each of them.

use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::optim::{Adam, AdamConfig};

pub const MAGIC: &[u8; 8] = b"DCSSRCKP";
pub const VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: u32,
    /// Completed optimiser steps.
    pub step: u64,
    /// Data-order RNG after `epoch` epochs.
    pub rng: RngState,
    pub model: Model<f32>,
    pub adam: Adam<f32>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn len(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("extent fits in u32"));
    }
    fn record(&mut self, name: &str, t: &Tensor<f32>) {
        self.len(name.len());
        self.bytes(name.as_bytes());
        self.len(t.rank());
        for &e in t.shape() {
            self.len(e);
        }
        for v in t.data() {
            self.bytes(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> std::result::Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn record(&mut self) -> std::result::Result<(String, Tensor<f32>), String> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "record name is not utf-8".to_string())?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|v| v as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let count: usize = shape.iter().product();
        let raw = self.take(count.checked_mul(4).ok_or("record too large")?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        Ok((name, t))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.epoch);
        w.u64(self.step);
        w.bytes(&self.rng.seed);
        w.u64(self.rng.stream);
        w.bytes(&self.rng.word_pos.to_le_bytes());
        let c = self.model.config();
        w.len(c.channels);
        w.len(c.img_channels);
        w.len(c.scale);
        w.f64(c.leaky_slope);
        w.bytes(&[c.global_residual as u8]);
        w.f64(self.adam.config.beta1);
        w.f64(self.adam.config.beta2);
        w.f64(self.adam.config.epsilon);
        w.u64(self.adam.t);
        let p = &self.model.params;
        w.len(p.len() * 3);
        for (_, name, t) in p.iter() {
            w.record(name, t);
        }
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for (name, t) in p.names().iter().zip(moments) {
                w.record(&format!("{prefix}{name}"), t);
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let epoch = r.u32()?;
        let step = r.u64()?;
        let rng = RngState {
            seed: r.array()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.array()?),
        };
        let config = ModelConfig {
            channels: r.u32()? as usize,
            img_channels: r.u32()? as usize,
            scale: r.u32()? as usize,
            leaky_slope: r.f64()?,
            global_residual: match r.take(1)?[0] {
                0 => false,
                1 => true,
                b => return Err(format!("bad residual flag {b}")),
            },
        };
        let adam_config = AdamConfig {
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let t = r.u64()?;
        let mut model = Model::<f32>::new(config);
        let mut adam = Adam::new(adam_config, &model.params);
        adam.t = t;
        let n = r.u32()? as usize;
        if n != model.params.len() * 3 {
            return Err(format!("expected {} records, found {n}", model.params.len() * 3));
        }
        let names = model.params.names().to_vec();
        for i in 0..n {
            let (name, tensor) = r.record()?;
            let (slot, want) = match i / names.len() {
                0 => (model.params.values_mut().get_mut(i).unwrap(), names[i].clone()),
                1 => (&mut adam.m[i % names.len()], format!("adam.m.{}", names[i % names.len()])),
                _ => (&mut adam.v[i % names.len()], format!("adam.v.{}", names[i % names.len()])),
            };
            if name != want {
                return Err(format!("record {i}: expected '{want}', found '{name}'"));
            }
            if tensor.shape() != slot.shape() {
                return Err(format!("record '{name}': shape {:?}, expected {:?}", tensor.shape(), slot.shape()));
            }
            *slot = tensor;
        }
        if r.pos != buf.len() {
            return Err(format!("{} trailing bytes", buf.len() - r.pos));
        }
        Ok(Checkpoint {
            epoch,
            step,
            rng,
            model,
            adam,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf).map_err(|reason| Error::format(path, reason))
    }
}
