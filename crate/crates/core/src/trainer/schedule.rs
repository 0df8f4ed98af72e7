//! Linear warmup followed by linear decay to zero.

use super::{TrainError, TrainResult};

/// Learning rate at a (0-based) step: ramps linearly to `peak_lr` over
/// `warmup_steps`, then decays linearly to 0 at `total_steps`.
pub fn lr_at(step: u64, peak_lr: f64, warmup_steps: u64, total_steps: u64) -> TrainResult<f64> {
    if step > total_steps {
        return Err(TrainError::Contract(format!(
            "step {step} beyond total_steps {total_steps}"
        )));
    }
    if warmup_steps > 0 && step <= warmup_steps {
        Ok(peak_lr * step as f64 / warmup_steps as f64)
    } else {
        let denom = (total_steps - warmup_steps) as f64;
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok(peak_lr * (total_steps - step) as f64 / denom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_apex() {
        assert_eq!(lr_at(0, 5e-4, 32_000, 400_000).unwrap(), 0.0);
        assert_eq!(lr_at(32_000, 5e-4, 32_000, 400_000).unwrap(), 5e-4);
        assert_eq!(lr_at(400_000, 5e-4, 32_000, 400_000).unwrap(), 0.0);
    }

    #[test]
    fn decay_hand_value() {
        // 5e-4 * (400000-216000)/368000 = 2.5e-4
        let lr = lr_at(216_000, 5e-4, 32_000, 400_000).unwrap();
        assert!((lr - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn piecewise_linear_and_peak_is_the_maximum() {
        let (peak, warmup, total) = (3e-3, 50u64, 500u64);
        let mut max = (0u64, 0.0f64);
        let mut prev = 0.0;
        for step in 0..=total {
            let lr = lr_at(step, peak, warmup, total).unwrap();
            assert!(lr >= 0.0);
            if lr > max.1 {
                max = (step, lr);
            }
            // slope changes sign exactly once, at the apex
            if step <= warmup {
                assert!(lr >= prev);
            } else {
                assert!(lr <= prev + 1e-15);
            }
            prev = lr;
        }
        assert_eq!(max.0, warmup);
        assert_eq!(max.1, peak);
    }

    #[test]
    fn beyond_total_is_a_contract_error() {
        assert!(lr_at(501, 1e-3, 50, 500).is_err());
    }
}
