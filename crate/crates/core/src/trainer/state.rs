//! Optimizer-state file "TV2S": step counters, stream cursors, running
//! metrics, Adam moments, and full-precision master parameters so an
//! interrupted run resumes bit-identically (the model checkpoint itself
//! stores float32).

use std::collections::BTreeMap;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::adam::AdamState;
use super::{TrainError, TrainResult};
use crate::io::CorpusError;
use crate::model::JointModel;
use crate::tensor::Tensor;

pub const STATE_MAGIC: &[u8; 4] = b"TV2S";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamCursor {
    pub epoch: u64,
    /// Index of the next unconsumed batch within the epoch.
    pub batch: u64,
}

/// Cumulative per-modality training metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ModalityAgg {
    pub loss_sum: f64,
    pub acc_sum: f64,
    pub steps: u64,
}

impl ModalityAgg {
    pub fn mean_loss(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.loss_sum / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainState {
    pub step: u64,
    pub adam: AdamState,
    pub speech_cursor: StreamCursor,
    pub text_cursor: StreamCursor,
    pub speech_agg: ModalityAgg,
    pub text_agg: ModalityAgg,
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

pub fn write_train_state(path: &Path, model: &JointModel, state: &TrainState) -> TrainResult<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STATE_MAGIC);
    put_u32(&mut buf, VERSION);
    put_u64(&mut buf, state.step);
    put_u64(&mut buf, state.adam.t);
    for cursor in [state.speech_cursor, state.text_cursor] {
        put_u64(&mut buf, cursor.epoch);
        put_u64(&mut buf, cursor.batch);
    }
    for agg in [state.speech_agg, state.text_agg] {
        put_f64(&mut buf, agg.loss_sum);
        put_f64(&mut buf, agg.acc_sum);
        put_u64(&mut buf, agg.steps);
    }
    let params: Vec<(&str, &Tensor)> = model.params().collect();
    put_u32(&mut buf, params.len() as u32);
    for (name, tensor) in &params {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, tensor.shape().len() as u32);
        for &d in tensor.shape() {
            put_u32(&mut buf, d as u32);
        }
        let (m, v) = state
            .adam
            .moments
            .get(*name)
            .ok_or_else(|| TrainError::Contract(format!("no moments for parameter {name}")))?;
        for source in [tensor.data(), m.data(), v.data()] {
            for &x in source {
                put_f64(&mut buf, x);
            }
        }
    }
    std::fs::write(path, buf).map_err(CorpusError::Io)?;
    Ok(())
}

/// Read a state file. Returns the state plus the full-precision master
/// parameters to overwrite a checkpoint-loaded model with.
pub fn read_train_state(path: &Path) -> TrainResult<(TrainState, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path).map_err(CorpusError::Io)?;
    let p = path.display().to_string();
    if bytes.len() < 4 || &bytes[..4] != STATE_MAGIC {
        return Err(CorpusError::BadMagic {
            path: p,
            expected: "TV2S",
        }
        .into());
    }
    let mut pos = 4usize;
    let truncated = |pos: usize| -> TrainError {
        CorpusError::Truncated {
            path: path.display().to_string(),
            offset: pos,
        }
        .into()
    };
    let take = |pos: &mut usize, n: usize| -> TrainResult<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(truncated(bytes.len()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    macro_rules! u32v {
        () => {
            LittleEndian::read_u32(take(&mut pos, 4)?)
        };
    }
    macro_rules! u64v {
        () => {
            LittleEndian::read_u64(take(&mut pos, 8)?)
        };
    }
    macro_rules! f64v {
        () => {
            LittleEndian::read_f64(take(&mut pos, 8)?)
        };
    }
    let version = u32v!();
    if version != VERSION {
        return Err(TrainError::Config(format!(
            "{p}: unsupported state version {version}"
        )));
    }
    let step = u64v!();
    let adam_t = u64v!();
    let speech_cursor = StreamCursor {
        epoch: u64v!(),
        batch: u64v!(),
    };
    let text_cursor = StreamCursor {
        epoch: u64v!(),
        batch: u64v!(),
    };
    let mut aggs = [ModalityAgg::default(); 2];
    for agg in aggs.iter_mut() {
        agg.loss_sum = f64v!();
        agg.acc_sum = f64v!();
        agg.steps = u64v!();
    }
    let count = u32v!() as usize;
    let mut masters = Vec::with_capacity(count);
    let mut moments = BTreeMap::new();
    for _ in 0..count {
        let name_len = u32v!() as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| TrainError::Config(format!("{p}: bad parameter name")))?;
        let ndim = u32v!() as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32v!() as usize);
        }
        let numel: usize = shape.iter().product();
        let read_tensor = |pos: &mut usize| -> TrainResult<Tensor> {
            let raw = take(pos, numel * 8)?;
            let data: Vec<f64> = raw.chunks_exact(8).map(LittleEndian::read_f64).collect();
            Tensor::from_vec(shape.clone(), data)
                .map_err(|e| TrainError::Config(format!("{p}: parameter {name}: {e}")))
        };
        let master = read_tensor(&mut pos)?.with_grad();
        let m = read_tensor(&mut pos)?;
        let v = read_tensor(&mut pos)?;
        moments.insert(name.clone(), (m, v));
        masters.push((name, master));
    }
    Ok((
        TrainState {
            step,
            adam: AdamState {
                t: adam_t,
                moments,
            },
            speech_cursor,
            text_cursor,
            speech_agg: aggs[0],
            text_agg: aggs[1],
        },
        masters,
    ))
}
