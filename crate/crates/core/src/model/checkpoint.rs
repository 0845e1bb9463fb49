//! Self-describing model checkpoint.
//!
//! Layout: the magic line `JOINSCOPE-CKPT\n`, a little-endian `u64` header
//! length, a JSON header (configuration, `k`, tensor names and shapes), then
//! every tensor in header order followed by the normalizer mean and std, all
//! as little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, Parameters, RgcnModel};
use crate::error::{Error, Result};
use crate::profile::FeatureNormalizer;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

const MAGIC: &[u8] = b"JOINSCOPE-CKPT\n";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    k: usize,
    normalizer_dim: usize,
    tensors: Vec<TensorInfo>,
}

fn tensor_names(cfg: &ModelConfig, has_projection: bool) -> Vec<String> {
    let mut names = Vec::new();
    let mut linear = |base: String| {
        names.push(format!("{base}.weight"));
        names.push(format!("{base}.bias"));
    };
    if has_projection {
        linear("projection".into());
    }
    for l in 0..cfg.layers {
        for r in 0..crate::similarity::N_SIGNALS {
            linear(format!("layer{l}.relation{r}"));
        }
        linear(format!("layer{l}.self"));
    }
    if cfg.loss_mode == super::LossMode::CrossEntropy {
        linear("head.hidden".into());
        linear("head.output".into());
    }
    names
}

pub fn to_bytes<T: Scalar>(model: &RgcnModel<T>) -> Result<Vec<u8>> {
    let tensors = model.params.tensors();
    let names = tensor_names(&model.config, model.params.projection.is_some());
    let normalizer_dim = model.normalizer.as_ref().map_or(0, FeatureNormalizer::dim);
    let header = Header {
        version: VERSION,
        config: model.config,
        k: model.k,
        normalizer_dim,
        tensors: names
            .into_iter()
            .zip(&tensors)
            .map(|(name, m)| TensorInfo {
                name,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for m in tensors {
        for &v in m.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    if let Some(norm) = &model.normalizer {
        for &v in norm.mean.iter().chain(&norm.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<RgcnModel<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    let header: Header =
        serde_json::from_slice(cur.take(len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", header.version)));
    }
    header.config.validate()?;
    let mut params = Parameters::<T>::zeros(&header.config);
    let expected = tensor_names(&header.config, params.projection.is_some());
    if expected.len() != header.tensors.len() {
        return Err(Error::Checkpoint("tensor list does not match configuration".into()));
    }
    for ((slot, info), name) in params.tensors_mut().into_iter().zip(&header.tensors).zip(&expected) {
        if info.name != *name || (info.rows, info.cols) != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {} has shape {}x{}, expected {name} {:?}",
                info.name,
                info.rows,
                info.cols,
                slot.shape()
            )));
        }
        let mut data = Vec::with_capacity(info.rows * info.cols);
        for _ in 0..info.rows * info.cols {
            data.push(T::of(cur.f64()?));
        }
        *slot = Matrix::from_vec(info.rows, info.cols, data)?;
    }
    let normalizer = if header.normalizer_dim > 0 {
        let mean = (0..header.normalizer_dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let std = (0..header.normalizer_dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        Some(FeatureNormalizer { mean, std })
    } else {
        None
    };
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(RgcnModel {
        config: header.config,
        params,
        normalizer,
        k: header.k,
    })
}

pub fn save<T: Scalar>(model: &RgcnModel<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<RgcnModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
