use super::PretrainError;

/// Linear warmup to `peak` at `warmup`, then linear decay to 0 at `total`.
pub fn lr_schedule(step: usize, warmup: usize, total: usize, peak: f64) -> Result<f64, PretrainError> {
    if total <= warmup {
        return Err(PretrainError::Config(format!("total steps ({total}) must exceed warmup steps ({warmup})")));
    }
    if step > total {
        return Err(PretrainError::Config(format!("step {step} beyond total {total}")));
    }
    Ok(if step < warmup {
        peak * (step as f64 / warmup as f64)
    } else {
        peak * ((total - step) as f64 / (total - warmup) as f64)
    })
}

/// Step boundaries and peaks of the two pretraining phases. Each phase runs
/// its own warmup and linear decay; phase 1 may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseSchedule {
    pub phase1_steps: usize,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr_phase1: f64,
    pub peak_lr_phase2: f64,
}

impl TwoPhaseSchedule {
    pub fn new(total: usize, phase1_fraction: f64, warmup: usize, peak1: f64, peak2: f64) -> Result<Self, PretrainError> {
        if !(0.0..1.0).contains(&phase1_fraction) {
            return Err(PretrainError::Config(format!("phase1_fraction ({phase1_fraction}) must be in [0, 1)")));
        }
        let phase1_steps = (total as f64 * phase1_fraction).round() as usize;
        let s = Self { phase1_steps, total_steps: total, warmup_steps: warmup, peak_lr_phase1: peak1, peak_lr_phase2: peak2 };
        if phase1_steps > 0 && phase1_steps <= warmup {
            return Err(PretrainError::Config(format!(
                "phase 1 length ({phase1_steps}) must exceed warmup steps ({warmup})"
            )));
        }
        if total - phase1_steps <= warmup {
            return Err(PretrainError::Config(format!(
                "phase 2 length ({}) must exceed warmup steps ({warmup})",
                total - phase1_steps
            )));
        }
        Ok(s)
    }

    pub fn in_phase1(&self, step: usize) -> bool {
        step < self.phase1_steps
    }

    /// Learning rate for the update that takes the model from `step` to
    /// `step + 1` (0-based).
    pub fn lr(&self, step: usize) -> f64 {
        let (local, len, peak) = if self.in_phase1(step) {
            (step + 1, self.phase1_steps, self.peak_lr_phase1)
        } else {
            (step + 1 - self.phase1_steps, self.total_steps - self.phase1_steps, self.peak_lr_phase2)
        };
        lr_schedule(local.min(len), self.warmup_steps, len, peak).expect("validated in new")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_peak_and_midpoint() {
        assert_eq!(lr_schedule(2500, 2500, 200_000, 5e-4).unwrap(), 5e-4);
        let mid = 2500 + (200_000 - 2500) / 2;
        assert!((lr_schedule(mid, 2500, 200_000, 5e-4).unwrap() - 2.5e-4).abs() < 1e-18);
        assert_eq!(lr_schedule(0, 10, 100, 1.0).unwrap(), 0.0);
        assert_eq!(lr_schedule(100, 10, 100, 1.0).unwrap(), 0.0);
        assert!(lr_schedule(5, 10, 10, 1.0).is_err());
    }

    #[test]
    fn paper_two_phase_values_accepted() {
        let s = TwoPhaseSchedule::new(200_000, 0.5, 2500, 5e-4, 1e-5).unwrap();
        assert_eq!(s.phase1_steps, 100_000);
        assert!((s.lr(2499) - 5e-4).abs() < 1e-18);
        assert!((s.lr(100_000 + 2499) - 1e-5).abs() < 1e-20);
        assert!(s.in_phase1(99_999) && !s.in_phase1(100_000));
    }

    #[test]
    fn empty_first_phase() {
        let s = TwoPhaseSchedule::new(100, 0.0, 10, 1.0, 2.0).unwrap();
        assert_eq!(s.phase1_steps, 0);
        assert!((s.lr(9) - 2.0).abs() < 1e-15);
        assert!(TwoPhaseSchedule::new(100, 0.5, 60, 1.0, 1.0).is_err());
    }
}
