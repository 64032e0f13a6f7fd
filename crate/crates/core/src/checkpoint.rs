//! Binary model checkpoints.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "RKGNCKPT"
//! version  u32
//! kind     u32 length + UTF-8
//! seed     u64
//! blocks   u32 count, then per block:
//!          u32 name length, name, u32 ndim, u64 dims[ndim], f64 data[prod(dims)]
//! ```
//!
//! Model hyperparameters travel as ordinary blocks under a `meta.` prefix.
//! A sidecar `<file>.manifest` lists each block's shape and SHA-256.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::encoder::{ConvEncoder, EncoderConfig};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{GeneratorDims, GeneratorModel};
use crate::oracle_eval::Oracle;
use crate::optim::{Adam, Optimizer, Parameterized};
use crate::ranker::RankerModel;
use crate::tensor::{Activation, Tensor};

pub const MAGIC: &[u8; 8] = b"RKGNCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub const KIND_GENERATOR: &str = "generator";
pub const KIND_ORACLE: &str = "oracle";
pub const KIND_RANKER: &str = "ranker";
pub const KIND_DISCRIMINATOR: &str = "discriminator";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub seed: u64,
    pub blocks: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64) -> Self {
        Checkpoint { kind: kind.to_string(), seed, blocks: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.blocks.push((name.into(), t));
    }

    pub fn block(&self, name: &str) -> Result<&Tensor> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no block '{name}'")))
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Format(format!("checkpoint holds a {}, expected a {kind}", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut b, &self.kind);
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, t) in &self.blocks {
            put_str(&mut b, name);
            b.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = get_u32(&mut r)?;
        if version > FORMAT_VERSION {
            return Err(Error::Version { found: version, supported: FORMAT_VERSION });
        }
        let kind = get_str(&mut r)?;
        let seed = get_u64(&mut r)?;
        let n = get_u32(&mut r)? as usize;
        let mut blocks = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = get_str(&mut r)?;
            let ndim = get_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(get_u64(&mut r)? as usize);
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel
                .filter(|&m| m.checked_mul(8).is_some_and(|bytes| bytes <= r.len()))
                .ok_or_else(|| Error::Format(format!("block '{name}' is truncated")))?;
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(take::<8>(&mut r)?));
            }
            blocks.push((name, Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after last block", r.len())));
        }
        Ok(Checkpoint { kind, seed, blocks })
    }

    /// Writes the checkpoint and its manifest; returns the file's SHA-256.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let bytes = self.to_bytes();
        std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        let mpath = manifest_path(path);
        std::fs::write(&mpath, self.manifest()).map_err(|e| Error::io(&mpath, e))?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// One line per block: name, shape, SHA-256 of the block's data bytes.
    pub fn manifest(&self) -> String {
        let mut s = format!("# {} v{FORMAT_VERSION} seed={}\n", self.kind, self.seed);
        for (name, t) in &self.blocks {
            let mut h = Sha256::new();
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
            let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{name} [{}] {}\n", shape.join(","), hex::encode(h.finalize())));
        }
        s
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    b.extend_from_slice(&(s.len() as u32).to_le_bytes());
    b.write_all(s.as_bytes()).expect("writing to a Vec cannot fail");
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Format("checkpoint is truncated".into()))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn get_u32(r: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take::<4>(r)?))
}

fn get_u64(r: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take::<8>(r)?))
}

fn get_str(r: &mut &[u8]) -> Result<String> {
    let n = get_u32(r)? as usize;
    if n > r.len() {
        return Err(Error::Format("checkpoint is truncated".into()));
    }
    let (s, rest) = r.split_at(n);
    *r = rest;
    String::from_utf8(s.to_vec()).map_err(|_| Error::Format("block name is not UTF-8".into()))
}

fn meta_usize(t: &Tensor, i: usize, what: &str) -> Result<usize> {
    let v = *t
        .data()
        .get(i)
        .ok_or_else(|| Error::Format(format!("missing {what} in checkpoint metadata")))?;
    if !(v >= 0.0 && v.fract() == 0.0 && v < 1e15) {
        return Err(Error::Format(format!("bad {what} {v} in checkpoint metadata")));
    }
    Ok(v as usize)
}

fn generator_blocks(ck: &mut Checkpoint, g: &GeneratorModel) {
    let d = g.dims();
    ck.push("meta.generator", Tensor::vector(vec![d.vocab_size as f64, d.embed_dim as f64, d.hidden_dim as f64]));
    for (name, t) in g.named_params() {
        ck.push(name, t.clone());
    }
}

fn generator_from(ck: &Checkpoint) -> Result<GeneratorModel> {
    let m = ck.block("meta.generator")?;
    let dims = GeneratorDims::new(meta_usize(m, 0, "vocab size")?, meta_usize(m, 1, "embed dim")?, meta_usize(m, 2, "hidden dim")?);
    let template = GeneratorModel::zeros(dims)?;
    let tensors = template
        .named_params()
        .iter()
        .map(|(name, _)| ck.block(name).cloned())
        .collect::<Result<Vec<_>>>()?;
    GeneratorModel::from_tensors(dims, tensors)
}

fn encoder_blocks(ck: &mut Checkpoint, prefix: &str, enc: &ConvEncoder) {
    let c = enc.config();
    ck.push(
        format!("meta.{prefix}"),
        Tensor::vector(vec![
            c.vocab_size as f64,
            c.embed_dim as f64,
            c.filters_per_width as f64,
            c.activation.code() as f64,
            c.fixed_len as f64,
        ]),
    );
    ck.push(format!("meta.{prefix}.widths"), Tensor::vector(c.widths.iter().map(|&w| w as f64).collect()));
}

fn encoder_from(ck: &Checkpoint, prefix: &str, named: impl Fn(&ConvEncoder) -> Vec<String>) -> Result<ConvEncoder> {
    let m = ck.block(&format!("meta.{prefix}"))?;
    let widths_t = ck.block(&format!("meta.{prefix}.widths"))?;
    let widths = (0..widths_t.numel()).map(|i| meta_usize(widths_t, i, "filter width")).collect::<Result<_>>()?;
    let code = meta_usize(m, 3, "activation")?;
    let activation = u8::try_from(code)
        .ok()
        .and_then(Activation::from_code)
        .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
    let cfg = EncoderConfig {
        vocab_size: meta_usize(m, 0, "vocab size")?,
        embed_dim: meta_usize(m, 1, "embed dim")?,
        filters_per_width: meta_usize(m, 2, "filters per width")?,
        activation,
        fixed_len: meta_usize(m, 4, "fixed length")?,
        widths,
    };
    let mut enc = ConvEncoder::zeros(cfg)?;
    let names = named(&enc);
    for (slot, name) in enc.params_mut().into_iter().zip(names) {
        let t = ck.block(&name)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!("block '{name}' has shape {:?}, expected {:?}", t.shape(), slot.shape())));
        }
        *slot = t.clone();
    }
    Ok(enc)
}

pub fn generator_checkpoint(g: &GeneratorModel, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::new(KIND_GENERATOR, seed);
    generator_blocks(&mut ck, g);
    ck
}

pub fn oracle_checkpoint(o: &Oracle) -> Checkpoint {
    let mut ck = Checkpoint::new(KIND_ORACLE, o.seed());
    generator_blocks(&mut ck, o.model());
    ck
}

pub fn ranker_checkpoint(r: &RankerModel, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::new(KIND_RANKER, seed);
    encoder_blocks(&mut ck, "ranker", &r.encoder);
    ck.push("meta.ranker.gamma", Tensor::vector(vec![r.gamma()]));
    for (name, t) in r.named_params() {
        ck.push(name, t.clone());
    }
    ck
}

pub fn discriminator_checkpoint(d: &Discriminator, seed: u64) -> Checkpoint {
    let mut ck = Checkpoint::new(KIND_DISCRIMINATOR, seed);
    encoder_blocks(&mut ck, "discriminator", &d.encoder);
    for (name, t) in d.named_params() {
        ck.push(name, t.clone());
    }
    ck
}

/// Appends Adam moments under `opt.*`; plain SGD has no state to store.
pub fn push_optimizer(ck: &mut Checkpoint, opt: &Optimizer) {
    let Optimizer::Adam(a) = opt else { return };
    ck.push("opt.adam.t", Tensor::vector(vec![a.t as f64]));
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        ck.push(format!("opt.adam.m.{i}"), m.clone());
        ck.push(format!("opt.adam.v.{i}"), v.clone());
    }
}

impl Checkpoint {
    /// Restores the state written by [`push_optimizer`] into `opt`.
    pub fn restore_optimizer(&self, opt: &mut Optimizer) -> Result<()> {
        let Optimizer::Adam(a) = opt else { return Ok(()) };
        let Ok(t) = self.block("opt.adam.t") else {
            *a = Adam::new(a.lr);
            return Ok(());
        };
        a.t = t.data().first().copied().unwrap_or(0.0) as u64;
        a.m.clear();
        a.v.clear();
        for i in 0.. {
            let Ok(m) = self.block(&format!("opt.adam.m.{i}")) else { break };
            a.m.push(m.clone());
            a.v.push(self.block(&format!("opt.adam.v.{i}"))?.clone());
        }
        Ok(())
    }

    /// Generator weights from a generator or oracle checkpoint.
    pub fn generator(&self) -> Result<GeneratorModel> {
        if self.kind != KIND_GENERATOR && self.kind != KIND_ORACLE {
            return Err(Error::Format(format!("checkpoint holds a {}, expected a generator", self.kind)));
        }
        generator_from(self)
    }

    pub fn oracle(&self) -> Result<Oracle> {
        self.expect_kind(KIND_ORACLE)?;
        Ok(Oracle::from_model(generator_from(self)?, self.seed))
    }

    pub fn ranker(&self) -> Result<RankerModel> {
        self.expect_kind(KIND_RANKER)?;
        let enc = encoder_from(self, "ranker", |e| {
            crate::ranker::encoder_named(e, "ranker").into_iter().map(|(n, _)| n).collect()
        })?;
        let gamma = self.block("meta.ranker.gamma")?.data().first().copied().unwrap_or(f64::NAN);
        RankerModel::new(enc, gamma)
    }

    pub fn discriminator(&self) -> Result<Discriminator> {
        self.expect_kind(KIND_DISCRIMINATOR)?;
        let enc = encoder_from(self, "discriminator", |e| {
            crate::ranker::encoder_named(e, "discriminator").into_iter().map(|(n, _)| n).collect()
        })?;
        Discriminator::from_parts(
            enc,
            self.block("discriminator.w_cls")?.clone(),
            self.block("discriminator.b_cls")?.clone(),
        )
    }
}
