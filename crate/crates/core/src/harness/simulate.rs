use thiserror::Error;

use crate::devices::{count_operations, validate_schedule, ActionSchedule, DeviceSpecs, HOURS};
use crate::network::solver::{solve_power_flow_with, PowerFlowError, SolverOptions};
use crate::network::{build_case_injection, CapacitorPlacement, Network, NetworkError};
use crate::scenario::{disaggregate, BusAllocation, DayProfile, ScenarioError, STEPS_PER_HOUR};

use super::metrics::{DayVoltages, DispatchSummary, RewardConfig, ViolatingHour};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("schedule rejected: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
}

/// Everything an episode is evaluated against. Shared read-only between
/// episodes.
#[derive(Debug, Clone)]
pub struct Environment {
    pub network: Network,
    pub devices: DeviceSpecs,
    pub alloc: BusAllocation,
    pub reward: RewardConfig,
    pub solver: SolverOptions,
    capacitors: Vec<CapacitorPlacement>,
}

impl Environment {
    pub fn new(
        network: Network,
        devices: DeviceSpecs,
        alloc: BusAllocation,
        reward: RewardConfig,
    ) -> Result<Self, SimulationError> {
        alloc.validate(&network)?;
        devices
            .validate()
            .map_err(|e| SimulationError::InvalidSchedule(e.to_string()))?;
        for sc in &devices.scs {
            network
                .bus_index(sc.bus)
                .ok_or(NetworkError::UnknownBus(sc.bus))?;
        }
        reward.validate().map_err(SimulationError::InvalidSchedule)?;
        let capacitors = devices.capacitor_placements();
        Ok(Self {
            network,
            devices,
            alloc,
            reward,
            solver: SolverOptions::default(),
            capacitors,
        })
    }

    /// The bundled 141-bus feeder with default devices, allocation and reward.
    pub fn feeder_141() -> Self {
        let network = Network::feeder_141();
        let devices = DeviceSpecs::from_network(&network);
        let alloc = BusAllocation::proportional(&network);
        Self::new(network, devices, alloc, RewardConfig::default()).expect("bundled feeder is valid")
    }

    pub fn reward_of(&self, summary: &DispatchSummary) -> f64 {
        super::metrics::reward(summary, &self.reward)
    }
}

/// Runs the 96 quarter-hour cases of one day and summarizes the voltages.
pub fn simulate_day(
    env: &Environment,
    day: &DayProfile,
    schedule: &ActionSchedule,
) -> Result<DispatchSummary, SimulationError> {
    simulate(env, day, schedule, false).map(|(s, _)| s)
}

/// As [`simulate_day`], also returning every per-step bus voltage.
pub fn simulate_day_detailed(
    env: &Environment,
    day: &DayProfile,
    schedule: &ActionSchedule,
) -> Result<(DispatchSummary, DayVoltages), SimulationError> {
    simulate(env, day, schedule, true).map(|(s, d)| (s, d.expect("detail requested")))
}

fn simulate(
    env: &Environment,
    day: &DayProfile,
    schedule: &ActionSchedule,
    keep_detail: bool,
) -> Result<(DispatchSummary, Option<DayVoltages>), SimulationError> {
    let verdict = validate_schedule(schedule, &env.devices);
    if !verdict.is_valid() {
        return Err(SimulationError::InvalidSchedule(verdict.describe()));
    }
    let net = &env.network;
    let n = net.bus_count();
    let (v_lo, v_hi) = (env.reward.v_lo, env.reward.v_hi);

    let mut v_min_hourly = vec![f64::INFINITY; HOURS];
    let mut v_max_hourly = vec![f64::NEG_INFINITY; HOURS];
    let mut hour_buses: Vec<Vec<bool>> = vec![vec![false; n]; HOURS];
    let mut hour_extreme: Vec<Option<f64>> = vec![None; HOURS];
    let mut dev_sum = 0.0;
    let mut dev_count = 0usize;
    let mut violating = 0usize;
    let mut unconverged = 0usize;
    let mut detail = keep_detail.then(|| Vec::with_capacity(HOURS * STEPS_PER_HOUR));

    for step in 0..HOURS * STEPS_PER_HOUR {
        let hour = step / STEPS_PER_HOUR;
        let sc_on: Vec<bool> = schedule.sc_state.iter().map(|row| row[hour]).collect();
        let q = disaggregate(day.load_mw[step], day.pv_mw[step], &env.alloc, net)?;
        let inj = build_case_injection(net, &q.loads, &q.pv_mw, &sc_on, &env.capacitors)?;
        let root = env
            .devices
            .oltc
            .tap_ratio(schedule.oltc_tap[hour])
            .expect("validated tap");

        let solved = match solve_power_flow_with(net, &inj, root, &env.solver) {
            Ok(sol) if sol.converged => Some(sol.v_mag),
            Ok(_) | Err(PowerFlowError::Diverged { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        match &solved {
            Some(v) => {
                for (bus, &x) in v.iter().enumerate() {
                    dev_sum += (x - 1.0).abs();
                    v_min_hourly[hour] = v_min_hourly[hour].min(x);
                    v_max_hourly[hour] = v_max_hourly[hour].max(x);
                    if x < v_lo || x > v_hi {
                        violating += 1;
                        hour_buses[hour][bus] = true;
                        let excess = (v_lo - x).max(x - v_hi);
                        let worse = hour_extreme[hour]
                            .is_none_or(|e: f64| excess > (v_lo - e).max(e - v_hi));
                        if worse {
                            hour_extreme[hour] = Some(x);
                        }
                    }
                }
                dev_count += n;
            }
            None => {
                unconverged += 1;
                violating += n;
                hour_buses[hour].iter_mut().for_each(|b| *b = true);
            }
        }
        if let Some(d) = detail.as_mut() {
            d.push(solved);
        }
    }

    let violating_hours = (0..HOURS)
        .filter(|&h| hour_buses[h].iter().any(|&b| b))
        .map(|h| ViolatingHour {
            hour: h,
            buses: (0..n)
                .filter(|&i| hour_buses[h][i])
                .map(|i| net.buses()[i].id)
                .collect(),
            // Hours in which nothing converged have no voltage to report.
            extreme_v: hour_extreme[h].unwrap_or(0.0),
        })
        .collect();
    for h in 0..HOURS {
        if !v_min_hourly[h].is_finite() {
            v_min_hourly[h] = 0.0;
            v_max_hourly[h] = 0.0;
        }
    }

    let total = HOURS * STEPS_PER_HOUR * n;
    let summary = DispatchSummary {
        v_min_hourly,
        v_max_hourly,
        deviation: if dev_count > 0 { dev_sum / dev_count as f64 } else { 0.0 },
        violation_rate: violating as f64 / total as f64,
        violating_hours,
        op_counts: count_operations(schedule, &env.devices),
        unconverged_cases: unconverged,
    };
    let detail = detail.map(|steps| DayVoltages { steps, bus_count: n });
    Ok((summary, detail))
}
