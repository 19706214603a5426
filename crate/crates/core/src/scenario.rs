//! Synthetic load/PV days at 15-minute resolution, hourly day-ahead
//! forecasts, and region-to-bus disaggregation.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devices::HOURS;
use crate::network::{BusLoad, Network};

pub const STEPS_PER_HOUR: usize = 4;
pub const STEPS_PER_DAY: usize = HOURS * STEPS_PER_HOUR;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid forecast: {0}")]
    InvalidForecast(String),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed dataset: {0}")]
    Parse(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

fn check_series(name: &str, v: &[f64], len: Option<usize>) -> Result<(), String> {
    if let Some(len) = len {
        if v.len() != len {
            return Err(format!("{name} has {} entries, expected {len}", v.len()));
        }
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(format!("{name} contains {bad}; entries must be finite and >= 0"));
    }
    Ok(())
}

/// Region totals for one day at 15-minute resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDayProfile")]
pub struct DayProfile {
    pub day_id: u32,
    pub load_mw: Vec<f64>,
    pub load_q_mvar: Vec<f64>,
    pub pv_mw: Vec<f64>,
}

#[derive(Deserialize)]
struct RawDayProfile {
    day_id: u32,
    load_mw: Vec<f64>,
    load_q_mvar: Vec<f64>,
    pv_mw: Vec<f64>,
}

impl TryFrom<RawDayProfile> for DayProfile {
    type Error = ScenarioError;

    fn try_from(raw: RawDayProfile) -> Result<Self, Self::Error> {
        DayProfile::new(raw.day_id, raw.load_mw, raw.load_q_mvar, raw.pv_mw)
    }
}

impl DayProfile {
    pub fn new(
        day_id: u32,
        load_mw: Vec<f64>,
        load_q_mvar: Vec<f64>,
        pv_mw: Vec<f64>,
    ) -> Result<Self, ScenarioError> {
        for (name, v) in [("load_mw", &load_mw), ("load_q_mvar", &load_q_mvar), ("pv_mw", &pv_mw)] {
            check_series(name, v, Some(STEPS_PER_DAY)).map_err(ScenarioError::InvalidProfile)?;
        }
        Ok(Self {
            day_id,
            load_mw,
            load_q_mvar,
            pv_mw,
        })
    }

    pub fn peak_load(&self) -> f64 {
        self.load_mw.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_load(&self) -> f64 {
        self.load_mw.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn peak_pv(&self) -> f64 {
        self.pv_mw.iter().copied().fold(0.0, f64::max)
    }
}

/// Hourly region load and PV forecast: the context an agent decides on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawForecast")]
pub struct Forecast {
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
}

#[derive(Deserialize)]
struct RawForecast {
    load: Vec<f64>,
    pv: Vec<f64>,
}

impl TryFrom<RawForecast> for Forecast {
    type Error = ScenarioError;

    fn try_from(raw: RawForecast) -> Result<Self, Self::Error> {
        Forecast::new(raw.load, raw.pv)
    }
}

impl Forecast {
    /// Builds a forecast of any horizon; both series must share a length and
    /// be non-negative. Day-ahead forecasts have `HOURS` entries.
    pub fn new(load: Vec<f64>, pv: Vec<f64>) -> Result<Self, ScenarioError> {
        check_series("load", &load, None).map_err(ScenarioError::InvalidForecast)?;
        check_series("pv", &pv, Some(load.len())).map_err(ScenarioError::InvalidForecast)?;
        if load.is_empty() {
            return Err(ScenarioError::InvalidForecast("empty forecast".into()));
        }
        Ok(Self { load, pv })
    }

    pub fn horizon(&self) -> usize {
        self.load.len()
    }
}

/// Knobs of the synthetic generator. Defaults are frozen: the bundled stress
/// dataset and the acceptance suite depend on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Night-time floor of the daily load shape, fraction of its peak.
    pub load_floor: f64,
    pub morning_peak_hour: f64,
    pub morning_peak_height: f64,
    pub evening_peak_hour: f64,
    pub evening_peak_height: f64,
    /// Day-to-day load level, uniform in this range (fraction of nominal).
    pub load_level: (f64, f64),
    pub seasonal_load_amplitude: f64,
    /// Per-step multiplicative lognormal noise on load.
    pub load_noise_sigma: f64,
    /// Fraction of installed PV reachable at clear-sky noon.
    pub pv_derate: f64,
    pub seasonal_pv_amplitude: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Probabilities of clear and partly cloudy days; the rest are overcast.
    pub p_clear: f64,
    pub p_partly: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            load_floor: 0.45,
            morning_peak_hour: 8.0,
            morning_peak_height: 0.28,
            evening_peak_hour: 19.5,
            evening_peak_height: 0.55,
            load_level: (0.72, 1.05),
            seasonal_load_amplitude: 0.08,
            load_noise_sigma: 0.04,
            pv_derate: 0.75,
            seasonal_pv_amplitude: 0.12,
            sunrise_hour: 6.0,
            sunset_hour: 20.0,
            p_clear: 0.35,
            p_partly: 0.35,
        }
    }
}

impl GeneratorConfig {
    fn load_shape(&self, hour: f64) -> f64 {
        let bump = |center: f64, width: f64| (-0.5 * ((hour - center) / width).powi(2)).exp();
        let raw = self.load_floor
            + self.morning_peak_height * bump(self.morning_peak_hour, 1.6)
            + self.evening_peak_height * bump(self.evening_peak_hour, 2.2);
        let peak = self.load_floor + self.evening_peak_height;
        raw / peak
    }

    fn clear_sky(&self, hour: f64) -> f64 {
        if hour < self.sunrise_hour || hour >= self.sunset_hour {
            return 0.0;
        }
        let x = (hour - self.sunrise_hour) / (self.sunset_hour - self.sunrise_hour);
        (PI * x).sin().powf(1.3)
    }
}

/// Deterministic synthetic dataset for `net`; a pure function of its inputs.
pub fn generate_dataset(seed: u64, num_days: usize, net: &Network) -> Vec<DayProfile> {
    generate_dataset_with(seed, num_days, net, &GeneratorConfig::default())
}

pub fn generate_dataset_with(
    seed: u64,
    num_days: usize,
    net: &Network,
    cfg: &GeneratorConfig,
) -> Vec<DayProfile> {
    let nominal_load = net.total_load_mw();
    let pv_capacity = net.total_pv_mw();
    let q_per_p = if nominal_load > 0.0 {
        net.buses().iter().map(|b| b.q_load_nom).sum::<f64>() / nominal_load
    } else {
        0.0
    };
    let step_noise = Normal::new(0.0, cfg.load_noise_sigma).expect("finite sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    (0..num_days)
        .map(|d| {
            let doy = d as f64;
            let season_load = 1.0 + cfg.seasonal_load_amplitude * (2.0 * PI * doy / 365.0).cos();
            let season_pv =
                1.0 + cfg.seasonal_pv_amplitude * (2.0 * PI * (doy - 172.0) / 365.0).cos();
            let level = rng.random_range(cfg.load_level.0..cfg.load_level.1);

            let kind: f64 = rng.random();
            let (cloud_lo, cloud_hi, variability) = if kind < cfg.p_clear {
                (0.85, 1.0, 0.02)
            } else if kind < cfg.p_clear + cfg.p_partly {
                (0.45, 0.85, 0.12)
            } else {
                (0.05, 0.3, 0.05)
            };
            let cloud_mean = rng.random_range(cloud_lo..cloud_hi);
            let cloud_noise = Normal::new(0.0, variability).expect("finite sigma");
            let mut cloud_dev: f64 = 0.0;

            let mut load_mw = Vec::with_capacity(STEPS_PER_DAY);
            let mut pv_mw = Vec::with_capacity(STEPS_PER_DAY);
            for k in 0..STEPS_PER_DAY {
                let hour = k as f64 / STEPS_PER_HOUR as f64;
                let noise = step_noise.sample(&mut rng).exp();
                load_mw.push(nominal_load * level * season_load * cfg.load_shape(hour) * noise);

                cloud_dev = 0.8 * cloud_dev + cloud_noise.sample(&mut rng);
                let cloud = (cloud_mean + cloud_dev).clamp(0.0, 1.0);
                let pv = pv_capacity * cfg.pv_derate * season_pv * cfg.clear_sky(hour) * cloud;
                pv_mw.push(pv.min(pv_capacity));
            }
            let load_q_mvar = load_mw.iter().map(|p| p * q_per_p).collect();
            DayProfile::new(d as u32, load_mw, load_q_mvar, pv_mw)
                .expect("generator emits non-negative series")
        })
        .collect()
}

/// Hourly means of the 15-minute profile times `exp(eps)`,
/// `eps ~ Normal(0, noise_sigma)`, drawn for all load hours then all PV hours.
pub fn make_forecast(profile: &DayProfile, noise_seed: u64, noise_sigma: f64) -> Forecast {
    let hourly = |v: &[f64]| -> Vec<f64> {
        v.chunks(STEPS_PER_HOUR)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    };
    let mut load = hourly(&profile.load_mw);
    let mut pv = hourly(&profile.pv_mw);
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, noise_sigma).expect("finite sigma");
        for v in load.iter_mut().chain(pv.iter_mut()) {
            *v *= normal.sample(&mut rng).exp();
        }
    }
    Forecast::new(load, pv).expect("hourly means of a valid profile")
}

/// Weights spreading region totals over buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusAllocation {
    /// One weight per bus (network order).
    pub load_share: Vec<f64>,
    /// Bus indices carrying PV.
    pub pv_buses: Vec<usize>,
    /// One weight per entry of `pv_buses`.
    pub pv_share: Vec<f64>,
    /// Reactive-to-active load ratio per bus.
    pub q_per_p: Vec<f64>,
}

impl BusAllocation {
    /// Load weights proportional to nominal bus loads, PV weights
    /// proportional to installed capacity.
    pub fn proportional(net: &Network) -> Self {
        let total_load = net.total_load_mw();
        let total_pv = net.total_pv_mw();
        let buses = net.buses();
        let load_share = buses
            .iter()
            .map(|b| if total_load > 0.0 { b.p_load_nom / total_load } else { 0.0 })
            .collect();
        let pv_buses: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.pv_capacity > 0.0)
            .map(|(i, _)| i)
            .collect();
        let pv_share = pv_buses
            .iter()
            .map(|&i| buses[i].pv_capacity / total_pv)
            .collect();
        let q_per_p = buses
            .iter()
            .map(|b| if b.p_load_nom > 0.0 { b.q_load_nom / b.p_load_nom } else { 0.0 })
            .collect();
        Self {
            load_share,
            pv_buses,
            pv_share,
            q_per_p,
        }
    }

    pub fn validate(&self, net: &Network) -> Result<(), ScenarioError> {
        let n = net.bus_count();
        if self.load_share.len() != n || self.q_per_p.len() != n {
            return Err(ScenarioError::DimensionMismatch(format!(
                "allocation covers {} buses, network has {n}",
                self.load_share.len()
            )));
        }
        if self.pv_share.len() != self.pv_buses.len() {
            return Err(ScenarioError::DimensionMismatch(
                "pv_share and pv_buses differ in length".into(),
            ));
        }
        if let Some(&i) = self.pv_buses.iter().find(|&&i| i >= n) {
            return Err(ScenarioError::DimensionMismatch(format!("pv bus index {i} out of range")));
        }
        for (name, w) in [("load_share", &self.load_share), ("pv_share", &self.pv_share)] {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(ScenarioError::InvalidAllocation(format!("{name} has a negative weight")));
            }
            if !w.is_empty() && (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(ScenarioError::InvalidAllocation(format!("{name} does not sum to 1")));
            }
        }
        Ok(())
    }
}

/// Per-bus demand and PV for one 15-minute case.
#[derive(Debug, Clone, PartialEq)]
pub struct BusQuantities {
    pub loads: Vec<BusLoad>,
    pub pv_mw: Vec<f64>,
}

pub fn disaggregate(
    region_load_mw: f64,
    region_pv_mw: f64,
    alloc: &BusAllocation,
    net: &Network,
) -> Result<BusQuantities, ScenarioError> {
    let n = net.bus_count();
    if alloc.load_share.len() != n || alloc.q_per_p.len() != n {
        return Err(ScenarioError::DimensionMismatch(format!(
            "allocation covers {} buses, network has {n}",
            alloc.load_share.len()
        )));
    }
    if alloc.pv_share.len() != alloc.pv_buses.len() {
        return Err(ScenarioError::DimensionMismatch(
            "pv_share and pv_buses differ in length".into(),
        ));
    }
    if alloc.pv_buses.is_empty() && region_pv_mw > 0.0 {
        return Err(ScenarioError::DimensionMismatch(
            "region PV is positive but no bus carries PV".into(),
        ));
    }
    let loads = alloc
        .load_share
        .iter()
        .zip(&alloc.q_per_p)
        .map(|(&w, &qp)| {
            let p = region_load_mw * w;
            BusLoad {
                p_mw: p,
                q_mvar: p * qp,
            }
        })
        .collect();
    let mut pv_mw = vec![0.0; n];
    for (&bus, &w) in alloc.pv_buses.iter().zip(&alloc.pv_share) {
        if bus >= n {
            return Err(ScenarioError::DimensionMismatch(format!("pv bus index {bus} out of range")));
        }
        pv_mw[bus] += region_pv_mw * w;
    }
    Ok(BusQuantities { loads, pv_mw })
}

/// Dataset file: `{"days": [DayProfile, ..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub days: Vec<DayProfile>,
}

impl Dataset {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn day(&self, day_id: u32) -> Option<&DayProfile> {
        self.days.iter().find(|d| d.day_id == day_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn constant_day(c: f64) -> DayProfile {
        DayProfile::new(0, vec![c; 96], vec![0.0; 96], vec![c; 96]).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let net = Network::feeder_141();
        assert_eq!(generate_dataset(7, 5, &net), generate_dataset(7, 5, &net));
        assert_ne!(generate_dataset(7, 5, &net), generate_dataset(8, 5, &net));
    }

    #[test]
    fn no_pv_outside_daylight() {
        let net = Network::feeder_141();
        for day in generate_dataset(3, 20, &net) {
            for (k, &pv) in day.pv_mw.iter().enumerate() {
                if !(6 * STEPS_PER_HOUR..20 * STEPS_PER_HOUR).contains(&k) {
                    assert_eq!(pv, 0.0, "day {} step {k}", day.day_id);
                }
            }
        }
    }

    #[test]
    fn seed_42_contains_stress_and_calm_days() {
        let net = Network::feeder_141();
        let days = generate_dataset(42, 30, &net);
        assert!(days.iter().any(|d| d.peak_pv() > d.min_load()));
        assert!(days.iter().any(|d| d.peak_pv() / d.peak_load() < 0.3));
    }

    #[test]
    fn noiseless_forecast_is_hourly_mean() {
        let f = make_forecast(&constant_day(3.5), 1, 0.0);
        assert_eq!(f.load, vec![3.5; 24]);

        let mut load = vec![0.0; 96];
        load[..4].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        let day = DayProfile::new(1, load, vec![0.0; 96], vec![0.0; 96]).unwrap();
        assert_eq!(make_forecast(&day, 9, 0.0).load[0], 2.5);
    }

    #[test]
    fn forecast_noise_matches_sigma() {
        let day = constant_day(2.0);
        assert_eq!(make_forecast(&day, 5, 0.05), make_forecast(&day, 5, 0.05));
        // 10^4 log-ratio samples across seeds.
        let mut samples = Vec::new();
        let mut seed = 0;
        while samples.len() < 10_000 {
            let f = make_forecast(&day, seed, 0.05);
            samples.extend(f.load.iter().chain(&f.pv).map(|v| (v / 2.0).ln()));
            seed += 1;
        }
        samples.truncate(10_000);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
        assert!((var.sqrt() - 0.05).abs() < 0.005, "std {}", var.sqrt());
    }

    #[test]
    fn uniform_disaggregation() {
        let net = Network::feeder_141();
        let n = net.bus_count();
        let mut alloc = BusAllocation::proportional(&net);
        alloc.load_share = vec![0.0; n];
        for i in 1..5 {
            alloc.load_share[i] = 0.25;
        }
        alloc.validate(&net).unwrap();
        let q = disaggregate(10.0, 0.0, &alloc, &net).unwrap();
        assert!(q.loads[1..5].iter().all(|l| l.p_mw == 2.5));
    }

    #[test]
    fn proportional_allocation_is_valid() {
        let net = Network::feeder_141();
        let alloc = BusAllocation::proportional(&net);
        alloc.validate(&net).unwrap();
        assert_eq!(alloc.pv_buses.len(), 22);
        let q = disaggregate(11.0, 7.0, &alloc, &net).unwrap();
        assert!((q.loads.iter().map(|l| l.p_mw).sum::<f64>() - 11.0).abs() < 1e-9);
        assert!((q.pv_mw.iter().sum::<f64>() - 7.0).abs() < 1e-9);
    }

    #[test]
    fn profile_validation() {
        assert!(DayProfile::new(0, vec![1.0; 95], vec![0.0; 96], vec![0.0; 96]).is_err());
        assert!(DayProfile::new(0, vec![-1.0; 96], vec![0.0; 96], vec![0.0; 96]).is_err());
        assert!(Forecast::new(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(serde_json::from_str::<Forecast>(r#"{"load":[1.0],"pv":[-2.0]}"#).is_err());
    }

    #[test]
    fn dataset_round_trip_is_lossless() {
        let net = Network::feeder_141();
        let ds = Dataset {
            days: generate_dataset(11, 3, &net),
        };
        assert_eq!(Dataset::from_json(&ds.to_json()).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn disaggregation_conserves_totals(
            weights in prop::collection::vec(0.0f64..1.0, 141),
            load in 0.0f64..30.0,
            pv in 0.0f64..30.0,
        ) {
            let net = Network::feeder_141();
            let mut alloc = BusAllocation::proportional(&net);
            let total: f64 = weights.iter().sum();
            prop_assume!(total > 0.0);
            alloc.load_share = weights.iter().map(|w| w / total).collect();
            let q = disaggregate(load, pv, &alloc, &net).unwrap();
            prop_assert!((q.loads.iter().map(|l| l.p_mw).sum::<f64>() - load).abs() < 1e-9);
            prop_assert!((q.pv_mw.iter().sum::<f64>() - pv).abs() < 1e-9);
            prop_assert!(q.loads.iter().all(|l| l.p_mw >= 0.0 && l.q_mvar >= 0.0));
            prop_assert!(q.pv_mw.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn noiseless_forecast_equals_hourly_means(values in prop::collection::vec(0.0f64..20.0, 96)) {
            let day = DayProfile::new(0, values.clone(), vec![0.0; 96], values.clone()).unwrap();
            let f = make_forecast(&day, 0, 0.0);
            for h in 0..24 {
                let mean = values[4 * h..4 * h + 4].iter().sum::<f64>() / 4.0;
                prop_assert!((f.load[h] - mean).abs() < 1e-12);
            }
        }
    }
}
