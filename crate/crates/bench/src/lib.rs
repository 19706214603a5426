//! Fixtures shared by the benchmarks.

use expvolt::harness::{rule_bootstrap, simulate_day, test_forecast};
use expvolt::network::{build_case_injection, BusLoad};
use expvolt::scenario::generate_dataset;
use expvolt::{CaseInjection, DayProfile, Environment, ExperienceStore, Forecast};

pub struct Fixture {
    pub env: Environment,
    pub days: Vec<DayProfile>,
    pub store: ExperienceStore,
    pub query: Forecast,
    /// Peak-load case with every bus at its nominal demand.
    pub peak_case: CaseInjection,
}

impl Fixture {
    pub fn new() -> Self {
        let env = Environment::feeder_141();
        let days = generate_dataset(42, 40, &env.network);
        let store = rule_bootstrap(&env, &days[..32], 16, 0, 0.05).expect("bootstrap");
        let query = test_forecast(&days[35], 1, 0.05);
        let net = &env.network;
        let loads: Vec<BusLoad> = net
            .buses()
            .iter()
            .map(|b| BusLoad {
                p_mw: b.p_load_nom,
                q_mvar: b.q_load_nom,
            })
            .collect();
        let pv = vec![0.0; net.bus_count()];
        let peak_case = build_case_injection(net, &loads, &pv, &[], &[]).expect("case");
        Self {
            env,
            days,
            store,
            query,
            peak_case,
        }
    }

    /// Simulates the first day with devices held at their initial state.
    pub fn simulate_static(&self) -> f64 {
        let schedule = self.env.devices.static_schedule();
        let s = simulate_day(&self.env, &self.days[0], &schedule).expect("simulates");
        self.env.reward_of(&s)
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
