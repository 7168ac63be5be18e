//! Learning-rate schedules.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear warm-up from `peak / div_factor` to the peak over the first `warmup_fraction`
    /// of steps, then cosine decay back to `peak / div_factor`.
    OneCycle { warmup_fraction: f32, div_factor: f32 },
}

impl Schedule {
    pub const fn one_cycle() -> Self {
        Schedule::OneCycle {
            warmup_fraction: 0.3,
            div_factor: 25.0,
        }
    }

    /// Learning rate for 0-based `step` of `total_steps`, given the peak rate.
    pub fn lr(&self, peak: f32, step: usize, total_steps: usize) -> f32 {
        match *self {
            Schedule::Constant => peak,
            Schedule::OneCycle {
                warmup_fraction,
                div_factor,
            } => {
                let floor = peak / div_factor;
                let warm = Self::warmup_steps(warmup_fraction, total_steps);
                if step == warm {
                    peak
                } else if step < warm {
                    floor + (peak - floor) * step as f32 / warm as f32
                } else {
                    let decay = (total_steps - 1).saturating_sub(warm).max(1);
                    let t = ((step - warm) as f32 / decay as f32).min(1.0);
                    floor + (peak - floor) * 0.5 * (1.0 + libm::cosf(core::f32::consts::PI * t))
                }
            }
        }
    }

    /// Step at which the one-cycle peak is reached.
    pub fn peak_step(&self, total_steps: usize) -> usize {
        match *self {
            Schedule::Constant => 0,
            Schedule::OneCycle { warmup_fraction, .. } => Self::warmup_steps(warmup_fraction, total_steps),
        }
    }

    fn warmup_steps(fraction: f32, total_steps: usize) -> usize {
        let w = libm::roundf(fraction * total_steps as f32) as usize;
        w.clamp(1, total_steps.saturating_sub(1).max(1))
    }

    /// First-moment decay cycled against the learning rate, 0.95 at the ends and 0.85 at
    /// the peak; `None` for schedules that leave momentum alone.
    pub fn momentum(&self, step: usize, total_steps: usize) -> Option<f32> {
        const HIGH: f32 = 0.95;
        const LOW: f32 = 0.85;
        match self {
            Schedule::Constant => None,
            Schedule::OneCycle { .. } => {
                // reuse the lr shape on a unit peak: 1/div .. 1
                let s = self.lr(1.0, step, total_steps);
                let Schedule::OneCycle { div_factor, .. } = *self else { unreachable!() };
                let floor = 1.0 / div_factor;
                let frac = (s - floor) / (1.0 - floor);
                Some(HIGH - (HIGH - LOW) * frac)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_cycle_peaks_at_thirty_percent() {
        let s = Schedule::one_cycle();
        let total = 100;
        assert_eq!(s.peak_step(total), 30);
        assert_eq!(s.lr(2e-5, 30, total), 2e-5);
        assert!((s.lr(2e-5, 0, total) - 2e-5 / 25.0).abs() < 1e-12);
        assert!((s.lr(2e-5, 99, total) - 2e-5 / 25.0).abs() < 1e-12);
        assert_eq!(s.momentum(30, total), Some(0.85));
        assert_eq!(s.momentum(0, total), Some(0.95));
    }

    #[test]
    fn constant_ignores_step() {
        assert_eq!(Schedule::Constant.lr(1e-3, 17, 20), 1e-3);
        assert_eq!(Schedule::Constant.momentum(3, 20), None);
    }

    proptest! {
        #[test]
        fn one_cycle_rises_then_falls(total in 2usize..400) {
            let s = Schedule::one_cycle();
            let peak = 2e-5f32;
            let p = s.peak_step(total);
            prop_assert!(s.lr(peak, 0, total) < s.lr(peak, p, total));
            prop_assert_eq!(s.lr(peak, p, total), peak);
            for step in 1..total {
                let (a, b) = (s.lr(peak, step - 1, total), s.lr(peak, step, total));
                if step <= p {
                    prop_assert!(b >= a);
                } else {
                    prop_assert!(b <= a);
                }
            }
        }
    }
}
