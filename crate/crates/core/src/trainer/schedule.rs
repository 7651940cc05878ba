use crate::error::{Error, Result};

/// Full-length run: decays at 80k and 100k of 120k iterations.
pub const REFERENCE_TOTAL: usize = 120_000;
pub const REFERENCE_MILESTONES: [usize; 2] = [80_000, 100_000];

/// Step decay with an optional linear warm-up.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
    pub total: usize,
    /// Iterations of linear ramp from `base_lr / warmup` up to `base_lr`.
    pub warmup: usize,
}

impl Schedule {
    pub fn reference(base_lr: f64) -> Self {
        Schedule {
            base_lr,
            milestones: REFERENCE_MILESTONES.to_vec(),
            factor: 0.1,
            total: REFERENCE_TOTAL,
            warmup: 0,
        }
    }

    /// The reference milestones scaled by `total / 120000`.
    pub fn scaled(base_lr: f64, total: usize) -> Result<Self> {
        let mut milestones: Vec<usize> = REFERENCE_MILESTONES
            .iter()
            .map(|&m| (m as f64 * total as f64 / REFERENCE_TOTAL as f64).round() as usize)
            .filter(|&m| m > 0 && m < total)
            .collect();
        milestones.dedup();
        let s = Schedule {
            base_lr,
            milestones,
            factor: 0.1,
            total,
            warmup: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_warmup(mut self, warmup: usize) -> Result<Self> {
        self.warmup = warmup;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(
                "schedule",
                format!("learning rate {} must be finite and ≥ 0", self.base_lr),
            ));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("schedule", "milestones must be strictly increasing"));
        }
        if self.milestones.first() == Some(&0) || self.milestones.last().is_some_and(|&m| m >= self.total) {
            return Err(Error::invalid(
                "schedule",
                format!("milestones {:?} must lie in (0, {})", self.milestones, self.total),
            ));
        }
        if self.warmup >= self.total.max(1) {
            return Err(Error::invalid("schedule", "warm-up longer than the run"));
        }
        Ok(())
    }
}

/// Learning rate for the update that starts at `iteration` (0-based).
pub fn schedule_lr(schedule: &Schedule, iteration: usize) -> f64 {
    let passed = schedule.milestones.iter().filter(|&&m| iteration >= m).count();
    let lr = schedule.base_lr * schedule.factor.powi(passed as i32);
    if iteration < schedule.warmup {
        lr * (iteration + 1) as f64 / schedule.warmup as f64
    } else {
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_points() {
        let s = Schedule::reference(1e-3);
        assert_eq!(schedule_lr(&s, 0), 1e-3);
        assert_eq!(schedule_lr(&s, 79_999), 1e-3);
        assert!((schedule_lr(&s, 80_000) - 1e-4).abs() < 1e-18);
        assert!((schedule_lr(&s, 100_001) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn scaled_milestones() {
        let s = Schedule::scaled(0.01, 3000).unwrap();
        assert_eq!(s.milestones, vec![2000, 2500]);
    }

    #[test]
    fn warmup_ramps() {
        let s = Schedule::scaled(0.01, 3000).unwrap().with_warmup(10).unwrap();
        assert!((schedule_lr(&s, 0) - 0.001).abs() < 1e-15);
        assert_eq!(schedule_lr(&s, 10), 0.01);
    }

    #[test]
    fn invalid_milestones() {
        let mut s = Schedule::reference(0.1);
        s.milestones = vec![100_000, 80_000];
        assert!(s.validate().is_err());
        s.milestones = vec![130_000];
        assert!(s.validate().is_err());
    }
}
