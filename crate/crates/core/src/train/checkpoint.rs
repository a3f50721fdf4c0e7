//! Binary training checkpoints.
//!
//! Layout: magic `EEGCKPT1`, little-endian `u32` header length, a TOML
//! header (configs, step, epoch, rng state, optimizer step), then tensor
//! records in a fixed order. Each record is a `u32` name length, the UTF-8
//! name, a `u32` rank, `u64` extents and little-endian `f32` values.
//! Parameters are stored as `param/<name>` and moments as
//! `adam.m/<name>` / `adam.v/<name>`.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{AdamW, Moments, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::model::{JepaConfig, JepaModel};
use crate::nn::Module;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EEGCKPT1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    step: u64,
    epoch: usize,
    optimizer_step: u64,
    /// Hex-encoded 32-byte rng seed.
    rng_seed: String,
    rng_stream: String,
    rng_word_pos: String,
    model: JepaConfig,
    train: TrainConfig,
}

fn parse_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.pos, format!("need {n} bytes, {} remain", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let at = self.pos;
        let n = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|_| parse_err(at + 4, "tensor name is not UTF-8"))?
            .to_string();
        let rank = self.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<_>>()?;
        let count: usize = shape.iter().product();
        let data = self
            .take(count * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| parse_err(at, format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// Serialize the full trainer state.
pub fn encode_checkpoint(trainer: &Trainer) -> Result<Vec<u8>> {
    let rng = trainer.rng();
    let header = toml::to_string(&Header {
        step: trainer.step,
        epoch: trainer.epoch,
        optimizer_step: trainer.optimizer.step,
        rng_seed: hex(&rng.get_seed()),
        rng_stream: rng.get_stream().to_string(),
        rng_word_pos: rng.get_word_pos().to_string(),
        model: trainer.model.config.clone(),
        train: trainer.config.clone(),
    })
    .map_err(|e| Error::Contract(format!("checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for (name, p) in trainer.model.named_params() {
        put_tensor(&mut out, &format!("param/{name}"), &p.value);
    }
    for (name, st) in &trainer.optimizer.state {
        put_tensor(&mut out, &format!("adam.m/{name}"), &st.m);
        put_tensor(&mut out, &format!("adam.v/{name}"), &st.v);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Trainer> {
    if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(parse_err(0, "not a checkpoint (bad magic)"));
    }
    let mut cur = Cursor { bytes, pos: 8 };
    let hlen = cur.u32()? as usize;
    let text = std::str::from_utf8(cur.take(hlen)?).map_err(|_| parse_err(12, "header is not UTF-8"))?;
    let h: Header = toml::from_str(text).map_err(|e| {
        parse_err(12 + e.span().map_or(0, |s| s.start), format!("malformed header: {}", e.message()))
    })?;

    let mut tensors = std::collections::BTreeMap::new();
    while cur.pos < bytes.len() {
        let at = cur.pos;
        let (name, t) = cur.tensor()?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(parse_err(at, format!("duplicate tensor {name}")));
        }
    }

    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let mut model = JepaModel::<f32>::new(h.model, &mut scratch)?;
    let mut missing = None;
    model.visit_mut("", &mut |name, p| match tensors.remove(&format!("param/{name}")) {
        Some(t) if t.shape() == p.value.shape() => p.value = t,
        _ => {
            missing.get_or_insert(name);
        }
    });
    if let Some(name) = missing {
        return Err(parse_err(12 + hlen, format!("parameter {name} missing or misshapen")));
    }

    let mut optimizer = AdamW {
        decay_1d: h.train.decay_1d,
        step: h.optimizer_step,
        ..AdamW::default()
    };
    let moment_names: Vec<String> = tensors
        .keys()
        .filter_map(|k| k.strip_prefix("adam.m/").map(str::to_string))
        .collect();
    for name in moment_names {
        let m = tensors.remove(&format!("adam.m/{name}"));
        let v = tensors.remove(&format!("adam.v/{name}"));
        match (m, v) {
            (Some(m), Some(v)) if m.shape() == v.shape() => {
                optimizer.state.insert(name, Moments { m, v });
            }
            _ => return Err(parse_err(12 + hlen, format!("incomplete moments for {name}"))),
        }
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(parse_err(12 + hlen, format!("unexpected tensor {extra}")));
    }

    let seed = unhex(&h.rng_seed).ok_or_else(|| parse_err(12, "rng_seed must be 64 hex digits"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(h.rng_stream.parse().map_err(|_| parse_err(12, "bad rng_stream"))?);
    rng.set_word_pos(h.rng_word_pos.parse().map_err(|_| parse_err(12, "bad rng_word_pos"))?);

    Ok(Trainer::from_parts(model, optimizer, h.train, rng, h.step, h.epoch))
}

pub fn save_checkpoint(path: &Path, trainer: &Trainer) -> Result<()> {
    Ok(fs::write(path, encode_checkpoint(trainer)?)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    decode_checkpoint(&fs::read(path)?)
}
