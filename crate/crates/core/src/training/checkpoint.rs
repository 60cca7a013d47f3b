//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `BAYRELCK`, a version byte, then records of the
//! form `kind: u8, length: u64 LE, payload`. One config record (kind 1) comes
//! first, followed by one record per parameter (kind 2) in registration
//! order. Floats are little-endian IEEE-754 bit patterns, so values round-trip
//! exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BayRel, LinkKind, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"BAYRELCK";
pub const VERSION: u8 = 1;

const KIND_CONFIG: u8 = 1;
const KIND_PARAM: u8 = 2;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn record(out: &mut Vec<u8>, kind: u8, payload: &[u8]) {
    out.push(kind);
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

pub fn encode(model: &BayRel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);

    let c = &model.config;
    let mut cfg = Vec::new();
    for v in [c.n_views, c.input_dim, c.hidden_dim, c.latent_dim] {
        put_u64(&mut cfg, v as u64);
    }
    cfg.push(c.link.code());
    put_f64(&mut cfg, c.temperature);
    put_f64(&mut cfg, c.sigma_x);
    put_u64(&mut cfg, c.seed);
    record(&mut out, KIND_CONFIG, &cfg);

    for (name, t) in model.params.iter() {
        let mut p = Vec::new();
        put_u64(&mut p, name.len() as u64);
        p.extend_from_slice(name.as_bytes());
        put_u64(&mut p, t.rank() as u64);
        for &d in t.shape() {
            put_u64(&mut p, d as u64);
        }
        for &v in t.data() {
            put_f64(&mut p, v);
        }
        record(&mut out, KIND_PARAM, &p);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn record(&mut self) -> Result<(u8, Reader<'a>)> {
        let kind = self.u8()?;
        let len = self.usize()?;
        Ok((kind, Reader { buf: self.take(len)?, pos: 0 }))
    }
}

pub fn decode(bytes: &[u8]) -> Result<BayRel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let (kind, mut c) = r.record()?;
    if kind != KIND_CONFIG {
        return Err(Error::Checkpoint(format!("expected config record, found kind {kind}")));
    }
    let config = ModelConfig {
        n_views: c.usize()?,
        input_dim: c.usize()?,
        hidden_dim: c.usize()?,
        latent_dim: c.usize()?,
        link: {
            let code = c.u8()?;
            LinkKind::from_code(code)
                .ok_or_else(|| Error::Checkpoint(format!("unknown link code {code}")))?
        },
        temperature: c.f64()?,
        sigma_x: c.f64()?,
        seed: c.u64()?,
    };
    if !c.done() {
        return Err(Error::Checkpoint("trailing bytes in config record".into()));
    }
    let mut model = BayRel::new(config).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let expected: Vec<(String, Vec<usize>)> = model
        .params
        .iter()
        .map(|(n, t)| (n.to_owned(), t.shape().to_vec()))
        .collect();
    for (i, (name, shape)) in expected.iter().enumerate() {
        let (kind, mut p) = r.record()?;
        if kind != KIND_PARAM {
            return Err(Error::Checkpoint(format!("expected parameter record, found kind {kind}")));
        }
        let len = p.usize()?;
        let got_name = std::str::from_utf8(p.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if got_name != name {
            return Err(Error::Checkpoint(format!(
                "parameter {i}: expected {name:?}, found {got_name:?}"
            )));
        }
        let rank = p.usize()?;
        let dims = (0..rank).map(|_| p.usize()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: shape {dims:?}, expected {shape:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| p.f64()).collect::<Result<Vec<_>>>()?;
        if !p.done() {
            return Err(Error::Checkpoint(format!("trailing bytes in parameter {name}")));
        }
        model.params.values_mut()[i] = Tensor::new(dims, data)?;
    }
    if !r.done() {
        return Err(Error::Checkpoint("unexpected data after last parameter".into()));
    }
    Ok(model)
}

pub fn save(model: &BayRel, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<BayRel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
