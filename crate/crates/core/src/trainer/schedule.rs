use crate::config::{LossWeights, ScheduleConfig};
use crate::losses::LossTerm;

/// Loss weights as a function of the epoch.
///
/// The energy-minimization weight falls linearly from its base value to
/// exactly zero at `energy_decay_fraction · max_epochs`. The PDE weight
/// rises linearly to `pde_ramp_factor` times its base value at
/// `pde_ramp_fraction · max_epochs` and then stays there. All other
/// weights are constant.
#[derive(Clone, Debug)]
pub struct WeightSchedule {
    pub base: LossWeights,
    pub shape: ScheduleConfig,
    pub max_epochs: u64,
}

impl WeightSchedule {
    pub fn new(base: LossWeights, shape: ScheduleConfig, max_epochs: u64) -> Self {
        WeightSchedule { base, shape, max_epochs }
    }

    pub fn weight(&self, term: LossTerm, epoch: u64) -> f64 {
        let base = self.base.base(term);
        let progress = |fraction: f64| epoch as f64 / (fraction * self.max_epochs as f64);
        match term {
            LossTerm::EnergyMin => {
                let p = progress(self.shape.energy_decay_fraction);
                if p >= 1.0 {
                    0.0
                } else {
                    base * (1.0 - p)
                }
            }
            LossTerm::Pde => {
                let p = progress(self.shape.pde_ramp_fraction).min(1.0);
                base * (1.0 + (self.shape.pde_ramp_factor - 1.0) * p)
            }
            _ => base,
        }
    }

    /// All nine weights at `epoch`, in [`LossTerm::ALL`] order.
    pub fn weights_at(&self, epoch: u64) -> [f64; 9] {
        LossTerm::ALL.map(|t| self.weight(t, epoch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SolveConfig;

    fn schedule() -> WeightSchedule {
        let mut cfg = SolveConfig::well();
        cfg.schedule.energy_decay_fraction = 0.7;
        WeightSchedule::new(cfg.weights, cfg.schedule, 1000)
    }

    #[test]
    fn energy_weight_decays_to_exact_zero() {
        let s = schedule();
        assert_eq!(s.weight(LossTerm::EnergyMin, 0), 10.0);
        assert!((s.weight(LossTerm::EnergyMin, 350) - 5.0).abs() < 1e-12);
        for epoch in 700..=1000 {
            assert_eq!(s.weight(LossTerm::EnergyMin, epoch), 0.0);
        }
    }

    #[test]
    fn pde_weight_ramps_then_holds() {
        let s = schedule();
        assert_eq!(s.weight(LossTerm::Pde, 0), 1.0);
        assert!((s.weight(LossTerm::Pde, 250) - 5.5).abs() < 1e-12);
        assert_eq!(s.weight(LossTerm::Pde, 500), 10.0);
        assert_eq!(s.weight(LossTerm::Pde, 999), 10.0);
    }

    #[test]
    fn weights_never_negative() {
        let s = schedule();
        for epoch in (0..2000).step_by(7) {
            assert!(s.weights_at(epoch).iter().all(|&w| w >= 0.0));
        }
    }
}
