//! Deterministic rule-based operator used for store bootstrap, as the
//! fallback when a backend fails, and inside the scripted backend.

use crate::devices::{enforce_limits, ActionSchedule, DeviceSpecs, HOURS};
use crate::network::Network;
use crate::scenario::Forecast;

use super::AgentResponse;

/// Feeder-level figures the rules compare the forecast against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeederRatings {
    pub peak_load_mw: f64,
    pub pv_capacity_mw: f64,
}

impl FeederRatings {
    pub fn of(net: &Network) -> Self {
        Self {
            peak_load_mw: net.total_load_mw(),
            pv_capacity_mw: net.total_pv_mw(),
        }
    }
}

/// PV peak over load trough above which midday taps are lowered.
const PV_RATIO_THRESHOLD: f64 = 1.0;
/// Hours with PV at or above this share of the PV peak count as PV hours.
const PV_HOUR_SHARE: f64 = 0.5;
/// Load peak, as a share of the feeder rating, that triggers the load rule.
const LOAD_PEAK_SHARE: f64 = 0.75;
/// Hours with load at or above this share of the day's peak count as peak hours.
const LOAD_HOUR_SHARE: f64 = 0.9;
const EVENING_START: usize = 17;
const MAX_RULE_STEPS: i64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RulePlan {
    pub schedule: ActionSchedule,
    /// One line per rule that fired, or a note that none did.
    pub trace: Vec<String>,
}

/// Rounds a forecast to the precision it is shown with in prompts, so that
/// rules evaluated on either side agree.
pub(crate) fn quantize(f: &Forecast) -> Forecast {
    let q = |v: &[f64]| v.iter().map(|x| format!("{x:.3}").parse().unwrap_or(0.0)).collect();
    Forecast::new(q(&f.load), q(&f.pv)).expect("rounding keeps a valid forecast")
}

pub fn rule_plan(f: &Forecast, specs: &DeviceSpecs, ratings: &FeederRatings) -> RulePlan {
    let horizon = f.horizon().min(HOURS);
    let mut offset = [0i64; HOURS];
    let mut sc_on = [false; HOURS];
    let mut trace = Vec::new();

    let max_pv = f.pv.iter().copied().fold(0.0, f64::max);
    let trough = f.load.iter().copied().fold(f64::INFINITY, f64::min);
    let peak = f.load.iter().copied().fold(0.0, f64::max);

    let pv_ratio = if trough > 0.0 { max_pv / trough } else if max_pv > 0.0 { f64::INFINITY } else { 0.0 };
    if pv_ratio > PV_RATIO_THRESHOLD {
        let steps = (pv_ratio.floor() as i64).clamp(1, MAX_RULE_STEPS);
        let hours: Vec<usize> = (0..horizon)
            .filter(|&t| f.pv[t] >= PV_HOUR_SHARE * max_pv)
            .collect();
        for &t in &hours {
            offset[t] -= steps;
        }
        trace.push(format!(
            "PV rule: PV peak {max_pv:.2} MW is {pv_ratio:.2}x the load trough {trough:.2} MW; \
             lower the tap by {steps} in hours {}",
            hour_list(&hours)
        ));
    }

    if ratings.peak_load_mw > 0.0 && peak >= LOAD_PEAK_SHARE * ratings.peak_load_mw {
        let level = peak / ratings.peak_load_mw;
        let steps = (((level - 0.6) / 0.15).round() as i64).clamp(1, MAX_RULE_STEPS);
        let hours: Vec<usize> = (0..horizon)
            .filter(|&t| f.load[t] >= LOAD_HOUR_SHARE * peak)
            .collect();
        for &t in &hours {
            offset[t] += steps;
        }
        trace.push(format!(
            "Load rule: load peak {peak:.2} MW is {:.0}% of the feeder rating; raise the tap by \
             {steps} in hours {}",
            level * 100.0,
            hour_list(&hours)
        ));
        let evening: Vec<usize> = hours.iter().copied().filter(|&t| t >= EVENING_START).collect();
        if let (Some(&first), Some(&last)) = (evening.first(), evening.last()) {
            sc_on[first..=last].iter_mut().for_each(|s| *s = true);
            trace.push(format!(
                "SC rule: evening peak; switch all capacitors on from {first:02}:00 to {last:02}:59"
            ));
        }
    }
    if trace.is_empty() {
        trace.push("No rule fired: keep every device at its initial state.".into());
    }

    let base = specs.oltc.initial_tap as i64;
    let max_tap = specs.oltc.max_tap() as i64;
    let mut schedule = ActionSchedule {
        oltc_tap: offset.iter().map(|o| (base + o).clamp(0, max_tap) as usize).collect(),
        sc_state: specs
            .scs
            .iter()
            .map(|sc| sc_on.iter().map(|&on| on || sc.initial_state).collect())
            .collect(),
    };
    enforce_limits(&mut schedule, specs);
    RulePlan { schedule, trace }
}

fn hour_list(hours: &[usize]) -> String {
    if hours.is_empty() {
        return "(none)".into();
    }
    hours.iter().map(|h| format!("{h:02}")).collect::<Vec<_>>().join(",")
}

/// The rule plan as a complete response with its rule trace as reasoning.
pub fn scripted_policy(f: &Forecast, specs: &DeviceSpecs, ratings: &FeederRatings) -> AgentResponse {
    let plan = rule_plan(&quantize(f), specs, ratings);
    AgentResponse {
        reasoning: plan.trace.join("\n"),
        actions: plan.schedule,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::validate_schedule;
    use proptest::prelude::*;

    fn setup() -> (DeviceSpecs, FeederRatings) {
        let net = Network::feeder_141();
        (DeviceSpecs::from_network(&net), FeederRatings::of(&net))
    }

    #[test]
    fn quiet_day_is_neutral() {
        let (specs, ratings) = setup();
        let f = Forecast::new(vec![3.0; 24], vec![0.0; 24]).unwrap();
        let r = scripted_policy(&f, &specs, &ratings);
        assert_eq!(r.actions, specs.static_schedule());
        assert!(r.reasoning.contains("No rule fired"));
    }

    #[test]
    fn strong_pv_lowers_midday_taps() {
        let (specs, ratings) = setup();
        let pv: Vec<f64> = (0..24)
            .map(|t| if (10..=14).contains(&t) { 8.0 } else { 0.0 })
            .collect();
        let f = Forecast::new(vec![4.0; 24], pv).unwrap();
        let r = scripted_policy(&f, &specs, &ratings);
        for t in 10..=14 {
            assert!(r.actions.oltc_tap[t] < 5, "hour {t}");
        }
        assert_eq!(r.actions.oltc_tap[3], 5);
        assert!(r.reasoning.contains("PV rule"));
    }

    #[test]
    fn evening_peak_raises_taps_and_switches_capacitors() {
        let (specs, ratings) = setup();
        let load: Vec<f64> = (0..24).map(|t| if (18..=21).contains(&t) { 11.0 } else { 6.0 }).collect();
        let f = Forecast::new(load, vec![0.0; 24]).unwrap();
        let r = scripted_policy(&f, &specs, &ratings);
        assert!(r.actions.oltc_tap[19] > 5);
        assert!(r.actions.sc_state.iter().all(|row| row[19] && !row[10]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn always_valid(
            load in prop::collection::vec(0.0..14.0f64, 24),
            pv in prop::collection::vec(0.0..30.0f64, 24),
        ) {
            let (specs, ratings) = setup();
            let f = Forecast::new(load, pv).unwrap();
            let r = scripted_policy(&f, &specs, &ratings);
            prop_assert!(validate_schedule(&r.actions, &specs).is_valid());
        }
    }
}
