use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{scripted_policy, FeederRatings};
use crate::experience::{bootstrap_store, ExperienceStore, StoreError};
use crate::scenario::{make_forecast, DayProfile, Forecast};

use super::episode::{apply_update, Episode, EpisodeError, Mode, RunRecord, Runner, StoreView, Variant};

/// splitmix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the forecast noise of one day.
pub fn forecast_seed(seed: u64, salt: u64, day_id: u32) -> u64 {
    mix64(mix64(mix64(seed) ^ salt) ^ day_id as u64)
}

const TEST_SALT: u64 = 0x7e57;

/// Forecast used for a test day. It depends only on the seed and the day,
/// so every variant and iteration sees the same inputs.
pub fn test_forecast(day: &DayProfile, seed: u64, sigma: f64) -> Forecast {
    make_forecast(day, forecast_seed(seed, TEST_SALT, day.day_id), sigma)
}

const BOOTSTRAP_SALT: u64 = 0xb007;

/// Seeds a store of `k` entries from `days`, each decided by the rule
/// policy on a noisy forecast.
pub fn rule_bootstrap(
    env: &super::Environment,
    days: &[DayProfile],
    k: usize,
    seed: u64,
    sigma: f64,
) -> Result<ExperienceStore, StoreError> {
    let forecasts: Vec<Forecast> = days
        .iter()
        .map(|d| make_forecast(d, forecast_seed(seed, BOOTSTRAP_SALT, d.day_id), sigma))
        .collect();
    let ratings = FeederRatings::of(&env.network);
    bootstrap_store(k, days, &forecasts, env, |f| {
        let r = scripted_policy(f, &env.devices, &ratings);
        (r.reasoning, r.actions)
    })
}

/// Splits days into (train, test) by a seeded shuffle; both halves keep
/// their original order.
pub fn split_days(days: &[DayProfile], test_count: usize, seed: u64) -> (Vec<DayProfile>, Vec<DayProfile>) {
    let test_count = test_count.min(days.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; days.len()];
    for i in sample(&mut rng, days.len(), test_count) {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (d, t) in days.iter().zip(is_test) {
        if t { test.push(d.clone()) } else { train.push(d.clone()) }
    }
    (train, test)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    /// Training days sampled per iteration.
    pub episodes_per_iteration: usize,
    pub noise_sigma: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            seeds: vec![1, 2, 3],
            iterations: 50,
            episodes_per_iteration: 8,
            noise_sigma: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub iteration: usize,
    /// Mean test reward.
    pub reward: f64,
    pub deviation: f64,
    pub violation_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    /// Point 0 is the untrained store.
    pub curve: Vec<CurvePoint>,
    pub store: ExperienceStore,
    /// Store minimum reward after each iteration, starting at 0.
    pub min_rewards: Vec<f64>,
    pub sizes: Vec<usize>,
    pub replacements: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    pub runs: Vec<SeedRun>,
    pub records: Vec<RunRecord>,
}

impl TrainingReport {
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.runs.iter().flat_map(|r| r.curve.iter().copied()).collect()
    }
}

fn mean_point(seed: u64, iteration: usize, records: &[RunRecord]) -> CurvePoint {
    let n = records.len().max(1) as f64;
    CurvePoint {
        seed,
        iteration,
        reward: records.iter().map(|r| r.reward).sum::<f64>() / n,
        deviation: records.iter().map(|r| r.deviation).sum::<f64>() / n,
        violation_rate: records.iter().map(|r| r.violation_rate).sum::<f64>() / n,
    }
}

/// Runs every test day in test mode against `store`, in parallel.
pub fn evaluate(
    runner: &Runner<'_>,
    variant: Variant,
    days: &[DayProfile],
    store: Option<&ExperienceStore>,
    seed: u64,
    iteration: Option<usize>,
    sigma: f64,
) -> Result<Vec<RunRecord>, EpisodeError> {
    let digest = store.map(|s| s.digest());
    let view = store.zip(digest.as_deref()).map(|(store, digest)| StoreView { store, digest });
    let tag = iteration.map_or(String::new(), |i| format!("-i{i:03}"));
    days.par_iter()
        .map(|day| {
            let ep = Episode {
                id: format!("{variant}-test-s{seed}{tag}-d{:04}", day.day_id),
                day,
                forecast: test_forecast(day, seed, sigma),
                seed,
                iteration,
            };
            Ok(runner.plan_episode(variant, Mode::Test, &ep, view)?.record)
        })
        .collect()
}

fn train_seed(
    runner: &Runner<'_>,
    cfg: &TrainingConfig,
    seed: u64,
    train: &[DayProfile],
    test: &[DayProfile],
    bootstrap: &ExperienceStore,
) -> Result<(SeedRun, Vec<RunRecord>), EpisodeError> {
    let variant = cfg.variant;
    let mut store = bootstrap.clone();
    let mut records = Vec::new();
    let eval0 = evaluate(runner, variant, test, Some(&store), seed, Some(0), cfg.noise_sigma)?;
    let mut curve = vec![mean_point(seed, 0, &eval0)];
    records.extend(eval0);
    let mut min_rewards = vec![store.min_reward()];
    let mut sizes = vec![store.len()];
    let mut replacements = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ 0x7a11));

    for it in 1..=cfg.iterations {
        let batch = cfg.episodes_per_iteration.min(train.len());
        let picks = sample(&mut rng, train.len(), batch).into_vec();
        let salt: u64 = rng.random();
        let digest = store.digest();
        let view = StoreView {
            store: &store,
            digest: &digest,
        };
        let plans = picks
            .par_iter()
            .map(|&i| {
                let day = &train[i];
                let ep = Episode {
                    id: format!("{variant}-train-s{seed}-i{it:03}-d{:04}", day.day_id),
                    day,
                    forecast: make_forecast(day, forecast_seed(seed, salt, day.day_id), cfg.noise_sigma),
                    seed,
                    iteration: Some(it),
                };
                runner.plan_episode(variant, Mode::Train, &ep, Some(view))
            })
            .collect::<Result<Vec<_>, _>>()?;
        for plan in plans {
            let record = apply_update(&mut store, plan)?;
            replacements += record.replaced.is_some() as usize;
            records.push(record);
        }
        let eval = evaluate(runner, variant, test, Some(&store), seed, Some(it), cfg.noise_sigma)?;
        let point = mean_point(seed, it, &eval);
        log::info!(
            "{variant} seed {seed} iteration {it}: test reward {:.4}, store min {:.4}",
            point.reward,
            store.min_reward()
        );
        curve.push(point);
        records.extend(eval);
        min_rewards.push(store.min_reward());
        sizes.push(store.len());
    }
    Ok((
        SeedRun {
            seed,
            curve,
            store,
            min_rewards,
            sizes,
            replacements,
        },
        records,
    ))
}

/// Trains one store per seed from a shared bootstrap store. Within an
/// iteration episodes are planned in parallel against a snapshot, then
/// their updates are applied in sampling order.
pub fn run_training(
    runner: &Runner<'_>,
    cfg: &TrainingConfig,
    train: &[DayProfile],
    test: &[DayProfile],
    bootstrap: &ExperienceStore,
) -> Result<TrainingReport, EpisodeError> {
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| train_seed(runner, cfg, seed, train, test, bootstrap))
        .collect::<Result<Vec<_>, _>>()?;
    let mut runs = Vec::new();
    let mut records = Vec::new();
    for (run, recs) in results {
        runs.push(run);
        records.extend(recs);
    }
    Ok(TrainingReport { runs, records })
}

/// Stores used by each variant in an ablation.
#[derive(Debug, Clone, Copy)]
pub struct AblationStores<'a> {
    pub full: &'a ExperienceStore,
    pub nor: &'a ExperienceStore,
    pub bootstrap: &'a ExperienceStore,
}

impl<'a> AblationStores<'a> {
    pub fn for_variant(&self, v: Variant) -> Option<&'a ExperienceStore> {
        match v {
            Variant::Full => Some(self.full),
            Variant::NoR => Some(self.nor),
            Variant::NoM => Some(self.bootstrap),
            Variant::NoE | Variant::NoC => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub reward: f64,
    pub deviation: f64,
    pub violation_rate: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub records: Vec<RunRecord>,
}

impl AblationReport {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }
}

/// Evaluates all five variants on the same test days and forecasts.
pub fn run_ablation(
    runner: &Runner<'_>,
    test: &[DayProfile],
    stores: AblationStores<'_>,
    seed: u64,
    sigma: f64,
) -> Result<AblationReport, EpisodeError> {
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for v in Variant::ALL {
        let recs = evaluate(runner, v, test, stores.for_variant(v), seed, None, sigma)?;
        let p = mean_point(seed, 0, &recs);
        rows.push(AblationRow {
            variant: v,
            reward: p.reward,
            deviation: p.deviation,
            violation_rate: p.violation_rate,
            episodes: recs.len(),
        });
        records.extend(recs);
    }
    Ok(AblationReport { rows, records })
}
