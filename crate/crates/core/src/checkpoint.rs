//! Model checkpoints.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic            8 bytes  "ADSMCKPT"
//! version          u32
//! fingerprint      32 bytes sha256 of the canonical config text
//! config text      u32 length + bytes (flat key=value lines)
//! epoch            u32
//! seed             u64
//! loss history     u32 count + f64 per-epoch means
//! tensor table     u32 count, then per tensor:
//!                    u16 name length + name bytes
//!                    u32 rank + u32 extents
//!                    f32 payload
//! optimizer flag   u8 (0 absent, 1 present)
//!   step           u64
//!   m, u tensors   f32 payloads in parameter order (shapes implied)
//! checksum         32 bytes sha256 of everything above
//! ```
//!
//! A version change refuses with `Incompatible`; any byte damage surfaces as
//! `Corrupt` via the trailing checksum. Loading against a required config
//! compares fingerprints, so a checkpoint can never silently deserialize
//! into a differently-shaped model.

use crate::error::{Error, Result};
use crate::model::{NcstConfig, NcstParams};
use crate::tensor::{Real, Tensor};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ADSMCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub epoch: u32,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

/// Adamax state carried across resumes.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<Tensor<Real>>,
    pub u: Vec<Tensor<Real>>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub cfg: NcstConfig,
    pub params: NcstParams,
    pub meta: CheckpointMeta,
    pub opt: Option<OptState>,
}

pub fn config_fingerprint(cfg: &NcstConfig) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(cfg.to_kv().as_bytes());
    h.finalize().into()
}

fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}
fn put_tensor_payload(buf: &mut Vec<u8>, t: &Tensor<Real>) {
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn tensor_payload(&mut self, shape: Vec<usize>) -> Result<Tensor<Real>> {
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data)
    }
}

fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    ckpt.cfg.validate()?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, VERSION);
    buf.extend_from_slice(&config_fingerprint(&ckpt.cfg));
    let cfg_text = ckpt.cfg.to_kv();
    put_u32(&mut buf, cfg_text.len() as u32);
    buf.extend_from_slice(cfg_text.as_bytes());
    put_u32(&mut buf, ckpt.meta.epoch);
    put_u64(&mut buf, ckpt.meta.seed);
    put_u32(&mut buf, ckpt.meta.loss_history.len() as u32);
    for &v in &ckpt.meta.loss_history {
        put_f64(&mut buf, v);
    }
    let named = ckpt.params.named_tensors();
    put_u32(&mut buf, named.len() as u32);
    for (name, t) in &named {
        put_u16(&mut buf, name.len() as u16);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.rank() as u32);
        for &e in t.shape() {
            put_u32(&mut buf, e as u32);
        }
        put_tensor_payload(&mut buf, t);
    }
    match &ckpt.opt {
        None => buf.push(0),
        Some(opt) => {
            if opt.m.len() != named.len() || opt.u.len() != named.len() {
                return Err(Error::Contract(format!(
                    "optimizer state covers {} tensors, model has {}",
                    opt.m.len(),
                    named.len()
                )));
            }
            buf.push(1);
            put_u64(&mut buf, opt.step);
            for t in &opt.m {
                put_tensor_payload(&mut buf, t);
            }
            for t in &opt.u {
                put_tensor_payload(&mut buf, t);
            }
        }
    }
    let checksum: [u8; 32] = {
        let mut h = Sha256::new();
        h.update(&buf);
        h.finalize().into()
    };
    buf.extend_from_slice(&checksum);
    Ok(buf)
}

fn decode(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < MAGIC.len() + 4 + 32 + 32 {
        return Err(Error::Corrupt("checkpoint shorter than its header".into()));
    }
    if &buf[..8] != MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic".into()));
    }
    let (body, stored_checksum) = buf.split_at(buf.len() - 32);
    let computed: [u8; 32] = {
        let mut h = Sha256::new();
        h.update(body);
        h.finalize().into()
    };
    if stored_checksum != computed {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }
    let mut cur = Cursor { buf: body, pos: 8 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Incompatible(format!(
            "checkpoint format version {version}, this build reads {VERSION}"
        )));
    }
    let fingerprint: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let cfg_len = cur.u32()? as usize;
    let cfg_text = std::str::from_utf8(cur.take(cfg_len)?)
        .map_err(|_| Error::Corrupt("config text is not UTF-8".into()))?
        .to_string();
    let cfg = NcstConfig::from_kv(&cfg_text)?;
    if config_fingerprint(&cfg) != fingerprint {
        return Err(Error::Corrupt(
            "config fingerprint does not match stored config".into(),
        ));
    }
    let epoch = cur.u32()?;
    let seed = cur.u64()?;
    let hist_len = cur.u32()? as usize;
    let mut loss_history = Vec::with_capacity(hist_len);
    for _ in 0..hist_len {
        loss_history.push(cur.f64()?);
    }

    // read the named table, then place by name into a structurally-correct
    // parameter set
    let count = cur.u32()? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u16()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Corrupt("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let t = cur.tensor_payload(shape)?;
        table.push((name, t));
    }
    let mut params = NcstParams::init(&cfg, 0)?;
    let expected = params.named_tensors().len();
    if count != expected {
        return Err(Error::Incompatible(format!(
            "checkpoint stores {count} tensors, model wants {expected}"
        )));
    }
    {
        let mut slots = params.named_tensors_mut();
        for (i, (name, t)) in table.into_iter().enumerate() {
            let (want_name, slot) = &mut slots[i];
            if &name != want_name {
                return Err(Error::Incompatible(format!(
                    "tensor {i} named `{name}`, expected `{want_name}`"
                )));
            }
            if t.shape() != slot.shape() {
                return Err(Error::Incompatible(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
    }

    let opt = match cur.take(1)?[0] {
        0 => None,
        1 => {
            let step = cur.u64()?;
            let shapes: Vec<Vec<usize>> = params
                .named_tensors()
                .iter()
                .map(|(_, t)| t.shape().to_vec())
                .collect();
            let mut m = Vec::with_capacity(shapes.len());
            for s in &shapes {
                m.push(cur.tensor_payload(s.clone())?);
            }
            let mut u = Vec::with_capacity(shapes.len());
            for s in &shapes {
                u.push(cur.tensor_payload(s.clone())?);
            }
            Some(OptState { step, m, u })
        }
        other => {
            return Err(Error::Corrupt(format!(
                "optimizer flag must be 0 or 1, got {other}"
            )))
        }
    };
    if cur.pos != body.len() {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checkpoint payload",
            body.len() - cur.pos
        )));
    }
    Ok(Checkpoint {
        cfg,
        params,
        meta: CheckpointMeta {
            epoch,
            seed,
            loss_history,
        },
        opt,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = encode(ckpt)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Load and refuse anything whose config differs from `want`.
pub fn load_expecting(path: &Path, want: &NcstConfig) -> Result<Checkpoint> {
    let ckpt = load(path)?;
    if config_fingerprint(&ckpt.cfg) != config_fingerprint(want) {
        return Err(Error::Incompatible(format!(
            "checkpoint was trained with a different configuration\nstored:\n{}wanted:\n{}",
            ckpt.cfg.to_kv(),
            want.to_kv()
        )));
    }
    Ok(ckpt)
}
