use serde::{Deserialize, Serialize};

use crate::devices::OpCountReport;
use crate::network::BusId;

/// An hour in which at least one bus left the voltage band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolatingHour {
    pub hour: usize,
    pub buses: Vec<BusId>,
    /// The voltage furthest outside the band during this hour, p.u.
    pub extreme_v: f64,
}

/// Voltage outcome of one simulated day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSummary {
    pub v_min_hourly: Vec<f64>,
    pub v_max_hourly: Vec<f64>,
    /// Mean |V - 1| over all converged bus-steps, p.u.
    pub deviation: f64,
    /// Fraction of bus-steps outside the band; unconverged cases count every
    /// bus as violating.
    pub violation_rate: f64,
    pub violating_hours: Vec<ViolatingHour>,
    pub op_counts: OpCountReport,
    pub unconverged_cases: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Weight per unit of 1000 * deviation.
    pub w_dev: f64,
    /// Weight per percentage point of violation rate.
    pub w_vio: f64,
    /// Penalty per unconverged case.
    pub w_unconv: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w_dev: 1.0,
            w_vio: 1.0,
            w_unconv: 10.0,
            v_lo: 0.95,
            v_hi: 1.05,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if [self.w_dev, self.w_vio, self.w_unconv]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err("reward weights must be finite and >= 0".into());
        }
        if !(self.v_lo < self.v_hi) {
            return Err(format!("v_lo {} must be below v_hi {}", self.v_lo, self.v_hi));
        }
        Ok(())
    }
}

/// Linear penalty on deviation, violations and unconverged cases; zero is
/// the best achievable value.
pub fn reward(summary: &DispatchSummary, cfg: &RewardConfig) -> f64 {
    -(cfg.w_dev * 1000.0 * summary.deviation
        + cfg.w_vio * 100.0 * summary.violation_rate
        + cfg.w_unconv * summary.unconverged_cases as f64)
}

/// Per-step bus voltages kept when detail retention is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct DayVoltages {
    /// `None` for cases that did not converge.
    pub steps: Vec<Option<Vec<f64>>>,
    pub bus_count: usize,
}

impl DayVoltages {
    pub fn violation_rate(&self, v_lo: f64, v_hi: f64) -> f64 {
        let total = self.steps.len() * self.bus_count;
        if total == 0 {
            return 0.0;
        }
        let violating: usize = self
            .steps
            .iter()
            .map(|s| match s {
                Some(v) => v.iter().filter(|&&x| x < v_lo || x > v_hi).count(),
                None => self.bus_count,
            })
            .sum();
        violating as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(deviation: f64, violation_rate: f64, unconverged: usize) -> DispatchSummary {
        DispatchSummary {
            v_min_hourly: vec![1.0; 24],
            v_max_hourly: vec![1.0; 24],
            deviation,
            violation_rate,
            violating_hours: vec![],
            op_counts: OpCountReport {
                oltc_ops: 0,
                sc_ops: vec![],
            },
            unconverged_cases: unconverged,
        }
    }

    #[test]
    fn perfect_day_scores_zero() {
        assert_eq!(reward(&summary(0.0, 0.0, 0), &RewardConfig::default()), 0.0);
    }

    #[test]
    fn worked_example() {
        let r = reward(&summary(1.08e-2, 0.00139, 0), &RewardConfig::default());
        assert!((r - -10.939).abs() < 1e-9, "{r}");
    }

    #[test]
    fn reward_is_strictly_monotone() {
        let cfg = RewardConfig::default();
        let base = reward(&summary(0.01, 0.02, 0), &cfg);
        assert!(reward(&summary(0.009, 0.02, 0), &cfg) > base);
        assert!(reward(&summary(0.01, 0.019, 0), &cfg) > base);
        assert!(reward(&summary(0.01, 0.02, 1), &cfg) < base);
    }
}
