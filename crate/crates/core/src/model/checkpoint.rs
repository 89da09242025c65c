use std::path::Path;

use mhg_autodiff::Tensor;

use super::{ModelConfig, ModelError, ModelParams, Result};
use crate::grammar::{grammar_hash, Grammar};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MHGG";

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len());
    out.extend_from_slice(b);
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_bytes(out, name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        put_u32(out, d);
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn running_names(k: usize) -> (String, String) {
    (
        format!("enc.layer{k}.bn.running_mean"),
        format!("enc.layer{k}.bn.running_var"),
    )
}

/// Little-endian binary: magic, version, grammar hash, config text, then
/// named `f32` tensors including batch-norm running statistics.
pub fn write_checkpoint(p: &ModelParams, grammar_hash: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    put_bytes(&mut out, grammar_hash.as_bytes());
    put_bytes(&mut out, p.config.to_text().as_bytes());
    put_u32(&mut out, p.names().len() + 2 * p.running.len());
    for (name, t) in p.names().iter().zip(p.tensors()) {
        put_tensor(&mut out, name, t.shape(), t.data());
    }
    for (k, s) in p.running.iter().enumerate() {
        let (m, v) = running_names(k);
        put_tensor(&mut out, &m, &[s.mean.len()], &s.mean);
        put_tensor(&mut out, &v, &[s.var.len()], &s.var);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("invalid utf-8".into()))
    }
}

/// Parses a checkpoint, returning the parameters and the grammar hash
/// they were trained against.
pub fn read_checkpoint(bytes: &[u8]) -> Result<(ModelParams, String)> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(bad(format!("unsupported version {version}")));
    }
    let hash = r.string()?;
    let config = ModelConfig::from_text(&r.string()?)?;
    let mut p = ModelParams::init(config, 0)?;
    let count = r.u32()?;
    let expected = p.names().len() + 2 * p.running.len();
    if count != expected {
        return Err(bad(format!("expected {expected} tensors, found {count}")));
    }
    let mut seen = vec![false; expected];
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(
            len.checked_mul(4)
                .ok_or_else(|| bad("tensor too large".into()))?,
        )?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let slot = if let Some(i) = p.names().iter().position(|n| *n == name) {
            if p.tensors()[i].shape() != shape.as_slice() {
                return Err(bad(format!("shape mismatch for {name}")));
            }
            p.tensors_mut()[i] = Tensor::from_vec(shape, data)?;
            i
        } else {
            let k = (0..p.running.len())
                .find(|&k| {
                    let (m, v) = running_names(k);
                    name == m || name == v
                })
                .ok_or_else(|| bad(format!("unknown tensor {name}")))?;
            if shape != [p.config.node_dim] {
                return Err(bad(format!("shape mismatch for {name}")));
            }
            let is_mean = name.ends_with("running_mean");
            if is_mean {
                p.running[k].mean = data;
            } else {
                p.running[k].var = data;
            }
            p.names().len() + 2 * k + usize::from(!is_mean)
        };
        if std::mem::replace(&mut seen[slot], true) {
            return Err(bad(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok((p, hash))
}

pub fn save_checkpoint(p: &ModelParams, g: &Grammar, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(p, &grammar_hash(g)))?;
    Ok(())
}

/// Loads a checkpoint and checks that it was trained against `g`.
pub fn load_checkpoint(path: impl AsRef<Path>, g: &Grammar) -> Result<ModelParams> {
    let (p, hash) = read_checkpoint(&std::fs::read(path)?)?;
    let expected = grammar_hash(g);
    if hash != expected {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint grammar hash {hash} does not match {expected}"
        )));
    }
    if p.config.n_rules != g.len() {
        return Err(ModelError::Checkpoint(
            "rule count differs from grammar".into(),
        ));
    }
    Ok(p)
}
