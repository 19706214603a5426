use std::collections::HashSet;
use std::fs;
use std::path::Path;

use expvolt::agent::prompt::render_forecast_table;
use expvolt::agent::transcript::read_transcript;
use expvolt::agent::{
    render_digest, AgentBackend, BackendError, RemoteBackend, ReplayBackend, ScriptedBackend,
    Templates, TranscriptLog,
};
use expvolt::harness::output::{ablation_csv, ablation_table, curves_csv, write_records};
use expvolt::harness::{
    evaluate, rule_bootstrap, run_ablation, run_training, split_days, AblationStores, CurvePoint,
    EpisodeError, Runner, TrainingConfig,
};
use expvolt::scenario::generate_dataset;
use expvolt::{
    BusAllocation, Dataset, DayProfile, DeviceSpecs, Environment, ExperienceId, ExperienceStore,
    Network,
};

use crate::config::{BackendKind, RunConfig};
use crate::error::CliError;

fn load_network(path: Option<&Path>) -> Result<Network, CliError> {
    match path {
        Some(p) => Network::load(p).map_err(CliError::runtime),
        None => Ok(Network::feeder_141()),
    }
}

fn environment(cfg: &RunConfig) -> Result<Environment, CliError> {
    let network = load_network(cfg.network.as_deref())?;
    let devices = DeviceSpecs::from_network(&network);
    let alloc = BusAllocation::proportional(&network);
    Environment::new(network, devices, alloc, cfg.reward.clone()).map_err(CliError::runtime)
}

fn load_days(cfg: &RunConfig) -> Result<Vec<DayProfile>, CliError> {
    let path = RunConfig::require(&cfg.dataset, "--dataset")?;
    Ok(Dataset::load(path).map_err(CliError::runtime)?.days)
}

fn load_store(path: Option<&Path>, flag: &str) -> Result<ExperienceStore, CliError> {
    let path = path.ok_or_else(|| CliError::Usage(format!("{flag} is required")))?;
    ExperienceStore::load(path).map_err(CliError::runtime)
}

fn templates(cfg: &RunConfig) -> Result<Templates, CliError> {
    match &cfg.templates {
        Some(dir) => Templates::load_dir(dir).map_err(CliError::runtime),
        None => Ok(Templates::builtin()),
    }
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn AgentBackend>, CliError> {
    Ok(match cfg.backend {
        BackendKind::Scripted => Box::new(ScriptedBackend::new()),
        BackendKind::Replay => {
            let path = RunConfig::require(&cfg.transcript, "--transcript")?;
            let records = read_transcript(path).map_err(CliError::runtime)?;
            Box::new(ReplayBackend::new(&records).map_err(CliError::runtime)?)
        }
        BackendKind::Remote => Box::new(RemoteBackend::from_env().map_err(|e| match e {
            BackendError::MissingCredentials(m) => CliError::Credentials(m),
            other => CliError::runtime(other),
        })?),
    })
}

/// Replay runs answer from a transcript, so they do not record one.
fn transcript_log(cfg: &RunConfig) -> TranscriptLog {
    if cfg.backend == BackendKind::Replay {
        TranscriptLog::disabled()
    } else {
        TranscriptLog::new()
    }
}

fn out_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.out.as_deref().unwrap_or(Path::new("results"));
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn finish(dir: &Path, cfg: &RunConfig, log: &TranscriptLog) -> Result<(), CliError> {
    let echo = serde_json::to_string_pretty(cfg).expect("config serializes");
    write(&dir.join("config.json"), &echo)?;
    if !log.is_empty() {
        log.write_to(dir.join("transcript.jsonl")).map_err(CliError::runtime)?;
    }
    Ok(())
}

fn episode_error(e: EpisodeError) -> CliError {
    CliError::runtime(e)
}

fn warn_on_leakage(store: &ExperienceStore, test: &[DayProfile]) {
    let test_ids: HashSet<u32> = test.iter().map(|d| d.day_id).collect();
    let leaked = store
        .entries()
        .iter()
        .filter(|e| test_ids.contains(&e.source_day))
        .count();
    if leaked > 0 {
        log::warn!("{leaked} stored experiences come from held-out test days");
    }
}

pub fn gen_data(seed: u64, days: usize, network: Option<&Path>, out: &Path) -> Result<(), CliError> {
    if let Some(p) = network {
        if !p.exists() {
            return Err(CliError::Usage(format!("{} does not exist", p.display())));
        }
    }
    let net = load_network(network)?;
    let dataset = Dataset {
        days: generate_dataset(seed, days, &net),
    };
    dataset.save(out).map_err(CliError::runtime)?;
    let stat = |f: fn(&DayProfile) -> f64| {
        let v: Vec<f64> = dataset.days.iter().map(f).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        format!("min {lo:.2}, mean {mean:.2}, max {hi:.2}")
    };
    println!("wrote {} days to {}", days, out.display());
    println!("peak load MW: {}", stat(DayProfile::peak_load));
    println!("peak PV MW:   {}", stat(DayProfile::peak_pv));
    Ok(())
}

pub fn bootstrap(cfg: &RunConfig) -> Result<(), CliError> {
    let env = environment(cfg)?;
    let days = load_days(cfg)?;
    // A dataset no larger than the test split is taken to be bootstrap-only data.
    let train = if days.len() > cfg.test_days {
        split_days(&days, cfg.test_days, cfg.split_seed).0
    } else {
        log::info!("dataset has {} days, not holding out a test split", days.len());
        days
    };
    let dir = RunConfig::require(&cfg.store, "--store")?;
    let store = rule_bootstrap(&env, &train, cfg.k, cfg.bootstrap_seed, cfg.noise_sigma)
        .map_err(CliError::runtime)?;
    store.save(dir).map_err(CliError::runtime)?;
    let rewards = store.rewards();
    println!(
        "wrote {} experiences to {} (reward min {:.3}, mean {:.3})",
        store.len(),
        dir.display(),
        store.min_reward(),
        rewards.iter().sum::<f64>() / rewards.len() as f64
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let env = environment(cfg)?;
    let days = load_days(cfg)?;
    let (train, test) = split_days(&days, cfg.test_days, cfg.split_seed);
    let store = load_store(cfg.store.as_deref(), "--store")?;
    warn_on_leakage(&store, &test);
    let backend = backend(cfg)?;
    let templates = templates(cfg)?;
    let log = transcript_log(cfg);
    let runner = Runner::new(&env, backend.as_ref(), &templates, &log, cfg.agent_settings());
    let tcfg = TrainingConfig {
        variant: cfg.variant,
        seeds: cfg.seeds.clone(),
        iterations: cfg.iterations,
        episodes_per_iteration: cfg.episodes_per_iteration,
        noise_sigma: cfg.noise_sigma,
    };
    let report = run_training(&runner, &tcfg, &train, &test, &store).map_err(episode_error)?;

    let dir = out_dir(cfg)?;
    write_records(&dir.join("records.jsonl"), &report.records).map_err(CliError::runtime)?;
    write(&dir.join("curves.csv"), &curves_csv(&report.curve()))?;
    for run in &report.runs {
        run.store
            .save(dir.join("stores").join(format!("seed-{}", run.seed)))
            .map_err(CliError::runtime)?;
        let first = run.curve.first().map_or(f64::NAN, |p| p.reward);
        let last = run.curve.last().map_or(f64::NAN, |p| p.reward);
        println!(
            "{} seed {}: test reward {first:.4} -> {last:.4}, {} replacements",
            cfg.variant, run.seed, run.replacements
        );
    }
    finish(dir, cfg, &log)
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let env = environment(cfg)?;
    let days = load_days(cfg)?;
    let (_, test) = split_days(&days, cfg.test_days, cfg.split_seed);
    let store = match cfg.variant.uses_experiences() {
        true => Some(load_store(cfg.store.as_deref(), "--store")?),
        false => None,
    };
    if let Some(s) = &store {
        warn_on_leakage(s, &test);
    }
    let backend = backend(cfg)?;
    let templates = templates(cfg)?;
    let log = transcript_log(cfg);
    let runner = Runner::new(&env, backend.as_ref(), &templates, &log, cfg.agent_settings());
    let mut records = Vec::new();
    let mut points = Vec::new();
    for &seed in &cfg.seeds {
        let recs = evaluate(&runner, cfg.variant, &test, store.as_ref(), seed, None, cfg.noise_sigma)
            .map_err(episode_error)?;
        let n = recs.len().max(1) as f64;
        let point = CurvePoint {
            seed,
            iteration: 0,
            reward: recs.iter().map(|r| r.reward).sum::<f64>() / n,
            deviation: recs.iter().map(|r| r.deviation).sum::<f64>() / n,
            violation_rate: recs.iter().map(|r| r.violation_rate).sum::<f64>() / n,
        };
        println!(
            "{} seed {seed}: reward {:.4}, deviation {:.6}, violation rate {:.3}%",
            cfg.variant,
            point.reward,
            point.deviation,
            100.0 * point.violation_rate
        );
        points.push(point);
        records.extend(recs);
    }
    let dir = out_dir(cfg)?;
    write_records(&dir.join("records.jsonl"), &records).map_err(CliError::runtime)?;
    write(&dir.join("eval.csv"), &curves_csv(&points))?;
    finish(dir, cfg, &log)
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let env = environment(cfg)?;
    let days = load_days(cfg)?;
    let (_, test) = split_days(&days, cfg.test_days, cfg.split_seed);
    let bootstrap = load_store(cfg.store.as_deref(), "--store")?;
    let full = load_store(cfg.full_store.as_deref(), "--full-store")?;
    let nor = load_store(cfg.nor_store.as_deref(), "--nor-store")?;
    for s in [&bootstrap, &full, &nor] {
        warn_on_leakage(s, &test);
    }
    let backend = backend(cfg)?;
    let templates = templates(cfg)?;
    let log = transcript_log(cfg);
    let runner = Runner::new(&env, backend.as_ref(), &templates, &log, cfg.agent_settings());
    let stores = AblationStores {
        full: &full,
        nor: &nor,
        bootstrap: &bootstrap,
    };
    let report = run_ablation(&runner, &test, stores, cfg.seeds[0], cfg.noise_sigma).map_err(episode_error)?;

    let dir = out_dir(cfg)?;
    let table = ablation_table(&report.rows);
    write_records(&dir.join("records.jsonl"), &report.records).map_err(CliError::runtime)?;
    write(&dir.join("ablation.csv"), &ablation_csv(&report.rows))?;
    write(&dir.join("ablation.txt"), &table)?;
    print!("{table}");
    finish(dir, cfg, &log)
}

fn parse_id(text: &str) -> Result<ExperienceId, CliError> {
    match text.parse::<u64>() {
        Ok(n) => Ok(ExperienceId(n)),
        Err(_) => text.parse().map_err(CliError::Usage),
    }
}

pub fn inspect(dir: &Path, id: &str, json: bool) -> Result<(), CliError> {
    let id = parse_id(id)?;
    let store = ExperienceStore::load(dir).map_err(CliError::runtime)?;
    let e = store
        .get(id)
        .ok_or_else(|| CliError::runtime(expvolt::experience::StoreError::NotFound(id)))?;
    if json {
        print!("{}", e.to_json());
        return Ok(());
    }
    println!("experience {} (source day {}, reward {:.4})", e.id, e.source_day, e.reward);
    println!("\n## Context\n{}", render_forecast_table(&e.context));
    let reasoning = if e.reasoning.trim().is_empty() { "(none)" } else { e.reasoning.trim() };
    println!("\n## Reasoning\n{reasoning}");
    println!("\n## Actions\n{}", e.actions.to_json());
    println!(
        "\n## Results\n{}",
        render_digest(&e.actions, &e.results, e.reward, store.device_specs())
    );
    println!("\n## Reward\n{:.6}", e.reward);
    Ok(())
}
