//! Learning-rate schedule: linear warmup followed by cosine decay to zero.

use core::f64::consts::PI;

use num_traits::Float;

use crate::error::{Error, Result};

/// Number of warmup steps for a run of `total` steps.
pub fn warmup_steps(total: usize, warmup_ratio: f64) -> usize {
    Float::ceil(warmup_ratio * total as f64) as usize
}

/// Learning rate at `step` of a schedule spanning `0..=total`: zero at step 0,
/// `base` at the end of warmup, zero again at `total`.
pub fn lr_at(step: usize, total: usize, base: f64, warmup_ratio: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::InvalidSchedule("schedule needs at least one step"));
    }
    if step > total {
        return Err(Error::InvalidSchedule("step past the end of the schedule"));
    }
    if !(0.0..1.0).contains(&warmup_ratio) {
        return Err(Error::InvalidSchedule("warmup ratio must lie in [0, 1)"));
    }
    if !(base > 0.0) || !base.is_finite() {
        return Err(Error::InvalidSchedule("base learning rate must be positive"));
    }
    let warm = warmup_steps(total, warmup_ratio);
    if step <= warm {
        return Ok(if warm == 0 { base } else { base * step as f64 / warm as f64 });
    }
    let t = (step - warm) as f64 / (total - warm) as f64;
    Ok(base * 0.5 * (1.0 + libm::cos(PI * t)))
}

/// Learning rate for update `update` (0-based) out of `updates`. Updates
/// sit at the interior points `1..=updates` of a schedule over `updates + 1`
/// steps, so no update is spent at either zero endpoint.
pub fn update_lr(update: usize, updates: usize, base: f64, warmup_ratio: f64) -> Result<f64> {
    lr_at(update + 1, updates + 1, base, warmup_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let (total, base) = (100, 1e-3);
        let warm = warmup_steps(total, 0.03);
        assert_eq!(warm, 3);
        assert_eq!(lr_at(0, total, base, 0.03).unwrap(), 0.0);
        assert!((lr_at(warm, total, base, 0.03).unwrap() - base).abs() < 1e-18);
        assert!(lr_at(total, total, base, 0.03).unwrap().abs() < 1e-18);
        // decay span is 97 steps; use an even span for an exact midpoint
        let (total, warm) = (102, 4);
        assert_eq!(warmup_steps(total, 0.03), warm);
        let mid = warm + (total - warm) / 2;
        assert!((lr_at(mid, total, base, 0.03).unwrap() - base / 2.0).abs() < 1e-15);
    }

    #[test]
    fn monotone_decay_after_warmup() {
        let mut prev = f64::INFINITY;
        for s in 3..=100 {
            let lr = lr_at(s, 100, 1.0, 0.03).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn single_update_uses_full_rate() {
        assert_eq!(update_lr(0, 1, 0.5, 0.03).unwrap(), 0.5);
        assert!(update_lr(9, 10, 0.5, 0.03).unwrap() > 0.0);
    }

    #[test]
    fn rejects_degenerate_schedules() {
        assert!(matches!(lr_at(0, 0, 1e-3, 0.03), Err(Error::InvalidSchedule(_))));
        assert!(matches!(lr_at(0, 10, 1e-3, 1.0), Err(Error::InvalidSchedule(_))));
        assert!(matches!(lr_at(0, 10, 0.0, 0.0), Err(Error::InvalidSchedule(_))));
        assert!(matches!(lr_at(11, 10, 1.0, 0.0), Err(Error::InvalidSchedule(_))));
    }

    #[test]
    fn no_warmup_starts_at_base() {
        assert_eq!(lr_at(0, 10, 0.5, 0.0).unwrap(), 0.5);
    }
}
