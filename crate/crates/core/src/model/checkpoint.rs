//! Model checkpoint file: magic "TV2M", version, config block, then a
//! name-offset index and float32 little-endian parameter payloads.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{JointModel, ModelConfig, ModelError, Result};
use crate::io::CorpusError;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TV2M";
const VERSION: u32 = 1;

const FLAG_FINAL_LN: u32 = 1 << 0;
const FLAG_STRICT_MLP: u32 = 1 << 1;

pub fn write_checkpoint(path: &Path, model: &JointModel) -> Result<()> {
    let cfg = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.dim as u32,
        cfg.layers as u32,
        cfg.heads as u32,
        cfg.speech_vocab as u32,
        cfg.text_vocab as u32,
        cfg.max_len as u32,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&cfg.tau.to_le_bytes());
    let mut flags = 0u32;
    if cfg.final_ln {
        flags |= FLAG_FINAL_LN;
    }
    if cfg.strict_equation_mlp {
        flags |= FLAG_STRICT_MLP;
    }
    buf.extend_from_slice(&flags.to_le_bytes());

    let params: Vec<(&str, &Tensor)> = model.params().collect();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    // index: name, dims, byte offset into the payload
    let mut offset = 0u64;
    for (name, tensor) in &params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += tensor.numel() as u64 * 4;
    }
    for (_, tensor) in &params {
        for &v in tensor.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(CorpusError::Io)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CorpusError::Truncated {
                path: self.path.clone(),
                offset: self.bytes.len(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }
}

pub fn read_checkpoint(path: &Path) -> Result<JointModel> {
    let bytes = std::fs::read(path).map_err(CorpusError::Io)?;
    let p = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(CorpusError::BadMagic {
            path: p,
            expected: "TV2M",
        }
        .into());
    }
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 4,
        path: p.clone(),
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ModelError::Config(format!(
            "{p}: unsupported checkpoint version {version}"
        )));
    }
    let dim = cur.u32()? as usize;
    let layers = cur.u32()? as usize;
    let heads = cur.u32()? as usize;
    let speech_vocab = cur.u32()? as usize;
    let text_vocab = cur.u32()? as usize;
    let max_len = cur.u32()? as usize;
    let tau = cur.f64()?;
    let flags = cur.u32()?;
    let config = ModelConfig {
        dim,
        layers,
        heads,
        max_len,
        speech_vocab,
        text_vocab,
        tau,
        final_ln: flags & FLAG_FINAL_LN != 0,
        strict_equation_mlp: flags & FLAG_STRICT_MLP != 0,
    };
    let count = cur.u32()? as usize;
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| {
            ModelError::Config(format!("{p}: parameter name is not valid UTF-8"))
        })?;
        let ndim = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32()? as usize);
        }
        let offset = cur.u64()? as usize;
        index.push((name, shape, offset));
    }
    let payload_start = cur.pos;
    let mut params = Vec::with_capacity(count);
    for (name, shape, offset) in index {
        let numel: usize = shape.iter().product();
        let start = payload_start + offset;
        let end = start + numel * 4;
        if end > bytes.len() {
            return Err(CorpusError::Truncated {
                path: p,
                offset: bytes.len(),
            }
            .into());
        }
        let data: Vec<f64> = bytes[start..end]
            .chunks_exact(4)
            .map(|c| LittleEndian::read_f32(c) as f64)
            .collect();
        let tensor = Tensor::from_vec(shape, data)
            .map_err(|e| ModelError::Config(format!("{p}: parameter {name}: {e}")))?
            .with_grad();
        params.push((name, tensor));
    }
    JointModel::from_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy() -> JointModel {
        JointModel::init(
            ModelConfig {
                dim: 8,
                layers: 1,
                heads: 2,
                max_len: 12,
                speech_vocab: 6,
                text_vocab: 4,
                tau: 0.1,
                final_ln: true,
                strict_equation_mlp: false,
            },
            21,
        )
        .unwrap()
    }

    #[test]
    fn checkpoint_round_trip_is_stable() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.tv2m");
        let p2 = dir.path().join("b.tv2m");
        write_checkpoint(&p1, &model).unwrap();
        let back = read_checkpoint(&p1).unwrap();
        assert_eq!(back.config, model.config);
        // save -> load -> save produces byte-identical files
        write_checkpoint(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        // values round-trip through f32 exactly once
        for ((n1, t1), (n2, t2)) in model.params().zip(back.params()) {
            assert_eq!(n1, n2);
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.tv2m");
        std::fs::write(&p, b"XXXX rest").unwrap();
        assert!(read_checkpoint(&p).is_err());
    }

    #[test]
    fn truncation_is_rejected() {
        let model = toy();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.tv2m");
        write_checkpoint(&p, &model).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(read_checkpoint(&p).is_err());
    }
}
