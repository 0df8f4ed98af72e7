//! Bias-corrected Adam with decoupled weight decay.
//!
//! Embedding tables and every rank-1 parameter (layer-norm gains/biases,
//! linear biases) are excluded from decay.

use std::collections::BTreeMap;

use crate::model::JointModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm gradient clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
        }
    }
}

/// First/second moments per parameter plus the applied-update counter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub t: u64,
    pub moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn for_model(model: &JointModel) -> Self {
        let moments = model
            .params()
            .map(|(name, t)| {
                let shape = t.shape().to_vec();
                (
                    name.to_owned(),
                    (Tensor::zeros(shape.clone()), Tensor::zeros(shape)),
                )
            })
            .collect();
        AdamState { t: 0, moments }
    }
}

/// Whether a parameter receives weight decay.
pub fn param_decays(name: &str, rank: usize) -> bool {
    rank >= 2 && !name.starts_with("emb.")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// Update applied; carries the pre-clip global gradient norm.
    Applied { grad_norm: f64 },
    /// A non-finite gradient was seen; parameters and state untouched.
    SkippedNonFinite,
}

/// One optimizer step over named gradients. Gradients must cover parameters
/// by name; parameters without an entry are treated as zero-gradient (they
/// still receive moment updates and, if eligible, weight decay).
pub fn adam_step(
    model: &mut JointModel,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    hyper: &AdamHyper,
) -> StepOutcome {
    for g in grads.values() {
        if !g.all_finite() {
            return StepOutcome::SkippedNonFinite;
        }
    }
    let mut sq_sum = 0.0;
    for g in grads.values() {
        sq_sum += g.sq_norm();
    }
    let grad_norm = sq_sum.sqrt();
    let clip_scale = match hyper.clip_norm {
        Some(max) if grad_norm > max && grad_norm > 0.0 => max / grad_norm,
        _ => 1.0,
    };

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let zero = Tensor::scalar(0.0);

    let names = model.param_names();
    for name in &names {
        let param = model.param_mut(name);
        let rank = param.shape().len();
        let decay = param_decays(name, rank);
        let g_tensor = grads.get(name).unwrap_or(&zero);
        let g_is_zero = g_tensor.numel() != param.numel();
        let (m, v) = state
            .moments
            .get_mut(name)
            .expect("moments initialized for every parameter");
        let pd = param.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let g = if g_is_zero {
                0.0
            } else {
                g_tensor.data()[i] * clip_scale
            };
            md[i] = hyper.beta1 * md[i] + (1.0 - hyper.beta1) * g;
            vd[i] = hyper.beta2 * vd[i] + (1.0 - hyper.beta2) * g * g;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            let mut update = lr * m_hat / (v_hat.sqrt() + hyper.eps);
            if decay {
                update += lr * hyper.weight_decay * pd[i];
            }
            pd[i] -= update;
        }
    }
    StepOutcome::Applied { grad_norm }
}
