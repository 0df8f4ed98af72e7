//! Frame-feature container: magic "TV2F", version, num_frames, feat_dim,
//! then float32 values, all little-endian.

use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::{CorpusError, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"TV2F";
const VERSION: u32 = 1;

/// Per-utterance frame-by-dimension feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub utt_id: String,
    /// `num_frames x feat_dim`, every value finite.
    pub frames: Tensor,
}

impl FeatureMatrix {
    pub fn new(utt_id: impl Into<String>, frames: Tensor) -> Self {
        FeatureMatrix {
            utt_id: utt_id.into(),
            frames,
        }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn feat_dim(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        let d = self.feat_dim();
        &self.frames.data()[i * d..(i + 1) * d]
    }
}

pub fn write_feature_file(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let [num_frames, feat_dim] = matrix.frames.shape() else {
        return Err(CorpusError::Config(format!(
            "feature matrix must be rank 2, got shape {:?}",
            matrix.frames.shape()
        )));
    };
    let mut buf = Vec::with_capacity(16 + matrix.frames.numel() * 4);
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(*num_frames as u32).to_le_bytes());
    buf.extend_from_slice(&(*feat_dim as u32).to_le_bytes());
    for &v in matrix.frames.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path)?;
    let p = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
        return Err(CorpusError::BadMagic {
            path: p,
            expected: "TV2F",
        });
    }
    if bytes.len() < 16 {
        return Err(CorpusError::Truncated {
            path: p,
            offset: bytes.len(),
        });
    }
    let version = LittleEndian::read_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(CorpusError::Format {
            path: p,
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let num_frames = LittleEndian::read_u32(&bytes[8..12]) as usize;
    let feat_dim = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let expected = 16 + num_frames * feat_dim * 4;
    if bytes.len() < expected {
        return Err(CorpusError::Truncated {
            path: p,
            offset: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CorpusError::Format {
            path: p,
            offset: expected,
            msg: format!("{} trailing bytes after payload", bytes.len() - expected),
        });
    }
    let mut data = Vec::with_capacity(num_frames * feat_dim);
    for (i, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = LittleEndian::read_f32(chunk) as f64;
        if !v.is_finite() {
            return Err(CorpusError::Format {
                path: p,
                offset: 16 + i * 4,
                msg: "non-finite feature value".into(),
            });
        }
        data.push(v);
    }
    let frames = Tensor::from_vec(vec![num_frames, feat_dim], data)
        .expect("shape and payload verified above");
    let utt_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMatrix { utt_id, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // keep the dir alive by leaking; tests are short-lived
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let path = tmpfile("a.tv2f");
        let m = FeatureMatrix::new(
            "a",
            Tensor::from_vec(vec![2, 3], vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125]).unwrap(),
        );
        write_feature_file(&path, &m).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.frames.shape(), &[2, 3]);
        assert_eq!(back.frames.data(), m.frames.data());
        write_feature_file(&path, &back).unwrap();
        let bytes2 = std::fs::read(&path).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn zero_frame_file_is_valid() {
        let path = tmpfile("z.tv2f");
        let m = FeatureMatrix::new("z", Tensor::zeros(vec![0, 8]));
        write_feature_file(&path, &m).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.num_frames(), 0);
        assert_eq!(back.feat_dim(), 8);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let path = tmpfile("t.tv2f");
        let m = FeatureMatrix::new(
            "t",
            Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        write_feature_file(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 5);
        std::fs::write(&path, bytes).unwrap();
        match read_feature_file(&path) {
            Err(CorpusError::Truncated { offset, .. }) => assert_eq!(offset, 16 + 16 - 5),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let path = tmpfile("m.tv2f");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(CorpusError::BadMagic { .. })
        ));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let path = tmpfile("x.tv2f");
        let m = FeatureMatrix::new("x", Tensor::from_vec(vec![1, 1], vec![2.0]).unwrap());
        write_feature_file(&path, &m).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(CorpusError::Format { .. })
        ));
    }
}
