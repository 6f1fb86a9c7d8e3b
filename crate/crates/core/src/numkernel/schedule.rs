use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup to `peak`, then cosine decay to zero at `total`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup: u64,
    pub total: u64,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup: u64, total: u64) -> Result<Self> {
        if warmup > total {
            return Err(Error::InvalidArgument(format!("warmup {warmup} exceeds total {total}")));
        }
        if !(peak >= 0.0) {
            return Err(Error::InvalidArgument(format!("peak lr {peak}")));
        }
        Ok(LrSchedule { peak, warmup, total })
    }

    /// Warmup over a fraction of the run.
    pub fn with_warmup_fraction(peak: f64, fraction: f64, total: u64) -> Result<Self> {
        let warmup = (fraction * total as f64).round() as u64;
        LrSchedule::new(peak, warmup.min(total), total)
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    let step = step.min(schedule.total);
    if step < schedule.warmup {
        return schedule.peak * step as f64 / schedule.warmup as f64;
    }
    let decay_len = schedule.total - schedule.warmup;
    if decay_len == 0 {
        return schedule.peak;
    }
    let progress = (step - schedule.warmup) as f64 / decay_len as f64;
    0.5 * schedule.peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_and_cosine_points() {
        let s = LrSchedule::new(3e-4, 300, 1300).unwrap();
        assert!((lr_at(&s, 150) - 1.5e-4).abs() < 1e-18);
        assert!((lr_at(&s, 300) - 3e-4).abs() < 1e-18);
        assert!((lr_at(&s, 800) - 1.5e-4).abs() < 1e-15);
        assert_eq!(lr_at(&s, 0), 0.0);
        assert!(lr_at(&s, 1300).abs() < 1e-18);
        assert_eq!(lr_at(&s, 5000), lr_at(&s, 1300));
    }

    #[test]
    fn continuous_at_warmup_boundary() {
        let s = LrSchedule::new(5e-3, 750, 3000).unwrap();
        let jump = (lr_at(&s, 749) - lr_at(&s, 750)).abs();
        assert!(jump <= s.peak / s.warmup as f64 + 1e-18);
    }

    #[test]
    fn rejects_warmup_past_total() {
        assert!(LrSchedule::new(1.0, 10, 5).is_err());
    }
}
