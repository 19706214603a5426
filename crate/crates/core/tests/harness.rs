mod common;

use std::collections::{HashMap, HashSet};

use common::{standard_setup, Setup, SIGMA};
use expvolt::agent::{ScriptedBackend, Templates, TranscriptLog};
use expvolt::harness::{
    reward, run_ablation, run_training, simulate_day, simulate_day_detailed, split_days,
    AblationStores, AgentSettings, Mode, Runner, TrainingConfig, TrainingReport, Variant,
};
use expvolt::scenario::generate_dataset;
use expvolt::{ActionSchedule, Environment};
use proptest::prelude::*;

fn taps(env: &Environment, tap: usize) -> ActionSchedule {
    let mut s = env.devices.static_schedule();
    s.oltc_tap = vec![tap; 24];
    s
}

fn short_training(s: &Setup, threads: usize) -> TrainingReport {
    let backend = ScriptedBackend::new();
    let templates = Templates::builtin();
    let log = TranscriptLog::disabled();
    let runner = Runner::new(&s.env, &backend, &templates, &log, AgentSettings::default());
    let cfg = TrainingConfig {
        seeds: vec![1, 2],
        iterations: 3,
        ..TrainingConfig::default()
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(|| run_training(&runner, &cfg, &s.train, &s.test[..6], &s.bootstrap).unwrap())
}

#[test]
fn summary_agrees_with_per_step_voltages() {
    let env = Environment::feeder_141();
    let days = generate_dataset(5, 4, &env.network);
    for (i, day) in days.iter().enumerate() {
        let schedule = taps(&env, 3 + i);
        let (summary, detail) = simulate_day_detailed(&env, day, &schedule).unwrap();
        assert_eq!(summary, simulate_day(&env, day, &schedule).unwrap());
        assert_eq!(detail.steps.len(), 96);
        let rate = detail.violation_rate(env.reward.v_lo, env.reward.v_hi);
        assert!((rate - summary.violation_rate).abs() < 1e-12);

        let all: Vec<f64> = detail.steps.iter().flatten().flatten().copied().collect();
        let dev = all.iter().map(|v| (v - 1.0).abs()).sum::<f64>() / all.len() as f64;
        assert!((dev - summary.deviation).abs() < 1e-12);
        for h in 0..24 {
            let hour: Vec<f64> = detail.steps[4 * h..4 * h + 4].iter().flatten().flatten().copied().collect();
            let lo = hour.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = hour.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, summary.v_min_hourly[h]);
            assert_eq!(hi, summary.v_max_hourly[h]);
        }
        assert_eq!(env.reward_of(&summary), reward(&summary, &env.reward));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn higher_taps_raise_every_hour(seed in 0u64..1000, tap in 0usize..10) {
        let env = Environment::feeder_141();
        let day = &generate_dataset(seed, 1, &env.network)[0];
        let lo = simulate_day(&env, day, &taps(&env, tap)).unwrap();
        let hi = simulate_day(&env, day, &taps(&env, tap + 1)).unwrap();
        for h in 0..24 {
            prop_assert!(hi.v_min_hourly[h] > lo.v_min_hourly[h]);
            prop_assert!(hi.v_max_hourly[h] > lo.v_max_hourly[h]);
        }
    }

    #[test]
    fn split_is_a_partition(n in 1usize..200, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let env = Environment::feeder_141();
        let days = generate_dataset(1, n, &env.network);
        let test_count = (n as f64 * frac) as usize;
        let (train, test) = split_days(&days, test_count, seed);
        prop_assert_eq!(test.len(), test_count);
        prop_assert_eq!(train.len() + test.len(), n);
        let a: HashSet<u32> = train.iter().map(|d| d.day_id).collect();
        let b: HashSet<u32> = test.iter().map(|d| d.day_id).collect();
        prop_assert!(a.is_disjoint(&b));
        let again = split_days(&days, test_count, seed);
        prop_assert_eq!(&again.1, &test);
    }
}

#[test]
fn training_never_touches_held_out_days() {
    let s = standard_setup();
    let report = short_training(&s, 2);
    let train: HashSet<u32> = s.train.iter().map(|d| d.day_id).collect();
    let test: HashSet<u32> = s.test.iter().map(|d| d.day_id).collect();
    assert!(s.bootstrap.entries().iter().all(|e| train.contains(&e.source_day)));
    for r in &report.records {
        match r.mode {
            Mode::Train => assert!(train.contains(&r.day_id), "{}", r.episode_id),
            Mode::Test => {
                assert!(test.contains(&r.day_id));
                assert!(r.replaced.is_none());
            }
        }
    }
    for run in &report.runs {
        assert!(run.store.entries().iter().all(|e| train.contains(&e.source_day)));
        assert_eq!(run.store.len(), s.bootstrap.len());
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let s = standard_setup();
    let a = short_training(&s, 1);
    let b = short_training(&s, 3);
    assert_eq!(a.records, b.records);
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.store.digest(), y.store.digest());
        assert_eq!(x.curve, y.curve);
    }
}

#[test]
fn ablation_variants_see_identical_inputs() {
    let s = standard_setup();
    let backend = ScriptedBackend::new();
    let templates = Templates::builtin();
    let log = TranscriptLog::disabled();
    let runner = Runner::new(&s.env, &backend, &templates, &log, AgentSettings::default());
    let stores = AblationStores {
        full: &s.bootstrap,
        nor: &s.bootstrap,
        bootstrap: &s.bootstrap,
    };
    let report = run_ablation(&runner, &s.test[..5], stores, 1, SIGMA).unwrap();
    assert_eq!(report.rows.len(), 5);
    let mut hashes: HashMap<u32, HashSet<&str>> = HashMap::new();
    let mut variants: HashMap<u32, HashSet<Variant>> = HashMap::new();
    for r in &report.records {
        hashes.entry(r.day_id).or_default().insert(&r.input_hash);
        variants.entry(r.day_id).or_default().insert(r.variant);
        assert_eq!(r.mode, Mode::Test);
        assert_eq!(r.best_round, 0);
    }
    assert_eq!(hashes.len(), 5);
    assert!(hashes.values().all(|h| h.len() == 1));
    assert!(variants.values().all(|v| v.len() == 5));
    let noc = report.row(Variant::NoC).unwrap();
    assert_eq!(noc.episodes, 5);
}
