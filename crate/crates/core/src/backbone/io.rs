//! Tensor-record container shared by checkpoints and learner states.
//!
//! Little-endian layout: magic `HIDEPET1`, `u32` version, `u32` tensor count,
//! then per tensor `u16` name length, UTF-8 name, `u8` rank, `u64` dims and a
//! row-major `f32` payload.

use std::path::Path;

use super::{Arch, AttnLayer, BackboneCheckpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const MAGIC: &[u8; 8] = b"HIDEPET1";
pub const VERSION: u32 = 1;

pub fn write_tensors(named: &[(String, &Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        t.ensure_finite(name)?;
        let nb = name.as_bytes();
        let nlen = u16::try_from(nb.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Config(format!("rank of {name} too large")))?;
        out.extend_from_slice(&nlen.to_le_bytes());
        out.extend_from_slice(nb);
        out.push(rank);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn read_tensors(buf: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(magic), "HIDEPET1"),
        });
    }
    let version = r.u32("version")?;
    if version > VERSION || version == 0 {
        return Err(Error::UnsupportedVersion { found: version, supported: VERSION });
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for i in 0..count {
        let start = r.pos as u64;
        let nlen = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(nlen, "name")?)
            .map_err(|_| Error::Format { offset: start + 2, msg: format!("tensor {i} name is not UTF-8") })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dims")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(Error::Format {
            offset: start,
            msg: format!("tensor {name} has overflowing shape {shape:?}"),
        })?;
        let payload_at = r.pos as u64;
        let bytes = r.take(n.saturating_mul(4), &format!("payload of {name}"))?;
        let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format { offset: payload_at, msg: format!("tensor {name} holds NaN or Inf") });
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Format { offset: r.pos as u64, msg: format!("{} trailing bytes", buf.len() - r.pos) });
    }
    Ok(out)
}

fn u16_chunks(x: u64) -> [f32; 4] {
    [(x & 0xffff) as f32, ((x >> 16) & 0xffff) as f32, ((x >> 32) & 0xffff) as f32, (x >> 48) as f32]
}

fn from_u16_chunks(c: &[f32]) -> u64 {
    c.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i)))
}

pub fn write_checkpoint(ck: &BackboneCheckpoint<f32>) -> Result<Vec<u8>> {
    let a = &ck.arch;
    let arch = Tensor::new(
        &[6],
        vec![a.layers as f32, a.dim as f32, a.heads as f32, a.tokens as f32, a.feat as f32, a.pre_ln_residual as u8 as f32],
    )?;
    let mut meta = u16_chunks(ck.meta.seed).to_vec();
    meta.push(ck.meta.pretrain_task_count as f32);
    meta.push(ck.meta.frozen as u8 as f32);
    let meta = Tensor::new(&[6], meta)?;
    let mut named = vec![("arch".to_string(), &arch), ("meta".to_string(), &meta)];
    named.extend(ck.named());
    write_tensors(&named)
}

pub fn read_checkpoint(buf: &[u8]) -> Result<BackboneCheckpoint<f32>> {
    let tensors = read_tensors(buf)?;
    let get = |name: &str| -> Result<Tensor<f32>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Format { offset: 16, msg: format!("checkpoint lacks tensor {name}") })
    };
    let a = get("arch")?;
    let a = a.data();
    if a.len() != 6 {
        return Err(Error::Format { offset: 16, msg: "arch record must hold 6 values".into() });
    }
    let arch = Arch {
        layers: a[0] as usize,
        dim: a[1] as usize,
        heads: a[2] as usize,
        tokens: a[3] as usize,
        feat: a[4] as usize,
        pre_ln_residual: a[5] != 0.0,
    };
    arch.validate()?;
    let m = get("meta")?;
    let m = m.data();
    if m.len() != 6 {
        return Err(Error::Format { offset: 16, msg: "meta record must hold 6 values".into() });
    }
    let meta =
        CheckpointMeta { seed: from_u16_chunks(&m[..4]), pretrain_task_count: m[4] as u32, version: VERSION, frozen: m[5] != 0.0 };
    let mut layers = Vec::with_capacity(arch.layers);
    for i in 1..=arch.layers {
        layers.push(AttnLayer {
            wq: get(&format!("layer{i}.wq"))?,
            wk: get(&format!("layer{i}.wk"))?,
            wv: get(&format!("layer{i}.wv"))?,
            wo: get(&format!("layer{i}.wo"))?,
        });
    }
    let ck = BackboneCheckpoint { input_embed: get("input_embed")?, cls: get("cls")?, layers, meta, arch };
    let d = ck.arch.dim;
    let bad = ck.input_embed.shape() != [ck.arch.feat, d]
        || ck.cls.shape() != [1, d]
        || ck.layers.iter().any(|l| [&l.wq, &l.wk, &l.wv, &l.wo].iter().any(|w| w.shape() != [d, d]));
    if bad {
        return Err(Error::Format { offset: 16, msg: "weight shapes disagree with the arch record".into() });
    }
    Ok(ck)
}

pub fn save_checkpoint(ck: &BackboneCheckpoint<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<BackboneCheckpoint<f32>> {
    read_checkpoint(&std::fs::read(path)?)
}
