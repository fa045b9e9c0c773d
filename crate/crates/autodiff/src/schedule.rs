use serde::{Deserialize, Serialize};

/// Cosine annealing with warm restarts.
///
/// Within a cycle of length `T_i` the rate follows
/// `eta_min + (base - eta_min) * (1 + cos(pi * t_cur / T_i)) / 2`, then jumps
/// back to `base`. Cycle lengths grow by `t_mult` after each restart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineWarmRestarts {
    pub base_lr: f64,
    pub t0: u64,
    pub t_mult: u64,
    pub eta_min: f64,
}

impl Default for CosineWarmRestarts {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            t0: 200,
            t_mult: 1,
            eta_min: 1e-6,
        }
    }
}

impl CosineWarmRestarts {
    /// Position inside the current cycle and that cycle's length.
    pub fn cycle_position(&self, step: u64) -> (u64, u64) {
        let t0 = self.t0.max(1);
        if self.t_mult <= 1 {
            return (step % t0, t0);
        }
        let mut t_i = t0;
        let mut t_cur = step;
        while t_cur >= t_i {
            t_cur -= t_i;
            t_i = t_i.saturating_mul(self.t_mult);
        }
        (t_cur, t_i)
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let (t_cur, t_i) = self.cycle_position(step);
        let phase = std::f64::consts::PI * t_cur as f64 / t_i as f64;
        self.eta_min + (self.base_lr - self.eta_min) * (1.0 + phase.cos()) / 2.0
    }
}
