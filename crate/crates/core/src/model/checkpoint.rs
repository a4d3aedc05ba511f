//! Binary checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "LSVAECKP"
//! version    u32
//! d, hidden, n_z, epoch, seed   5 × u64
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (ndim × u64)
//!   data     product(dims) × f64, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, DenseLayer, VaeParams};
use crate::numerics::Matrix;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"LSVAECKP";
const MAX_NAME: u32 = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub d: u64,
    pub hidden: u64,
    pub n_z: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl CheckpointHeader {
    pub fn for_model(params: &VaeParams, epoch: u64, seed: u64) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            d: params.data_dim() as u64,
            hidden: params.hidden_dim() as u64,
            n_z: params.latent_dim() as u64,
            epoch,
            seed,
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, header: &CheckpointHeader, params: &VaeParams) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&header.format_version.to_le_bytes())?;
    for v in [header.d, header.hidden, header.n_z, header.epoch, header.seed] {
        w.write_all(&v.to_le_bytes())?;
    }
    let tensors = params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &dim in &t.shape {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for v in t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("checkpoint truncated while reading {what}: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }
}

struct RawTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<(CheckpointHeader, VaeParams)> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>("magic")? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let format_version = r.u32("version")?;
    if format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {format_version}"
        )));
    }
    let header = CheckpointHeader {
        format_version,
        d: r.u64("d")?,
        hidden: r.u64("hidden")?,
        n_z: r.u64("n_z")?,
        epoch: r.u64("epoch")?,
        seed: r.u64("seed")?,
    };
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32("name length")?;
        if len > MAX_NAME {
            return Err(Error::Format(format!("tensor name of {len} bytes")));
        }
        let mut name = vec![0u8; len as usize];
        r.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Format(format!("checkpoint truncated in tensor name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let ndim = r.u32("ndim")?;
        if !(1..=2).contains(&ndim) {
            return Err(Error::Format(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        for _ in 0..ndim {
            shape.push(r.u64("dim")? as usize);
        }
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(Error::Format(format!("{name}: implausible size {n}")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.f64(&name)?);
        }
        tensors.push(RawTensor { name, shape, data });
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    let params = assemble(tensors)?;
    if params.data_dim() as u64 != header.d
        || params.hidden_dim() as u64 != header.hidden
        || params.latent_dim() as u64 != header.n_z
    {
        return Err(Error::Format("header dimensions disagree with tensors".into()));
    }
    Ok((header, params))
}

fn assemble(tensors: Vec<RawTensor>) -> Result<VaeParams> {
    if !tensors.len().is_multiple_of(2) {
        return Err(Error::Format("odd number of tensors".into()));
    }
    let mut encoder_hidden = Vec::new();
    let mut decoder_hidden = Vec::new();
    let mut heads: [Option<DenseLayer>; 4] = Default::default();
    let mut iter = tensors.into_iter();
    while let (Some(w), Some(b)) = (iter.next(), iter.next()) {
        let prefix = w
            .name
            .strip_suffix(".weight")
            .ok_or_else(|| Error::Format(format!("expected a weight tensor, found {}", w.name)))?
            .to_string();
        if b.name != format!("{prefix}.bias") {
            return Err(Error::Format(format!("{} does not follow {}", b.name, w.name)));
        }
        if w.shape.len() != 2 || b.shape.len() != 1 {
            return Err(Error::Format(format!("{prefix}: bad tensor rank")));
        }
        let layer = |act| DenseLayer::new(Matrix::new(w.shape[0], w.shape[1], w.data.clone())?, b.data.clone(), act);
        let slot = match prefix.as_str() {
            "mu_head" => Some(0),
            "logvar_head" => Some(1),
            "decoder_input" => Some(2),
            "output_layer" => Some(3),
            _ => None,
        };
        if let Some(slot) = slot {
            let act = match slot {
                2 => Activation::Relu,
                3 => Activation::Sigmoid,
                _ => Activation::Identity,
            };
            if heads[slot].replace(layer(act)?).is_some() {
                return Err(Error::Format(format!("duplicate {prefix}")));
            }
        } else if let Some(i) = prefix.strip_prefix("encoder_hidden.") {
            check_index(i, encoder_hidden.len(), &prefix)?;
            encoder_hidden.push(layer(Activation::Relu)?);
        } else if let Some(i) = prefix.strip_prefix("decoder_hidden.") {
            check_index(i, decoder_hidden.len(), &prefix)?;
            decoder_hidden.push(layer(Activation::Relu)?);
        } else {
            return Err(Error::Format(format!("unknown tensor {prefix}")));
        }
    }
    let [mu, logvar, dec_in, out] = heads;
    let missing = |n: &str| Error::Format(format!("missing {n}"));
    VaeParams::from_layers(
        encoder_hidden,
        mu.ok_or_else(|| missing("mu_head"))?,
        logvar.ok_or_else(|| missing("logvar_head"))?,
        dec_in.ok_or_else(|| missing("decoder_input"))?,
        decoder_hidden,
        out.ok_or_else(|| missing("output_layer"))?,
    )
    .map_err(|e| Error::Format(format!("inconsistent tensors: {e}")))
}

fn check_index(text: &str, expected: usize, prefix: &str) -> Result<()> {
    match text.parse::<usize>() {
        Ok(i) if i == expected => Ok(()),
        _ => Err(Error::Format(format!("{prefix} out of order"))),
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &VaeParams) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io("creating checkpoint", path, e))?;
    write_checkpoint(BufWriter::new(file), header, params).map_err(|e| Error::io("writing checkpoint", path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, VaeParams)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io("opening checkpoint", path, e))?;
    read_checkpoint(BufReader::new(file))
}
