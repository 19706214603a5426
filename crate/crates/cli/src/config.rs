use std::path::{Path, PathBuf};

use expvolt::harness::{AgentSettings, RewardConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Replay,
    Remote,
}

/// Everything a run depends on. Written next to the results of every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Network document; the bundled 141-bus feeder when absent.
    pub network: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Store read by the run (for ablations, the untrained store).
    pub store: Option<PathBuf>,
    /// Trained stores used by `ablate`.
    pub full_store: Option<PathBuf>,
    pub nor_store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Prompt template directory; the built-in templates when absent.
    pub templates: Option<PathBuf>,
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub k: usize,
    pub k_p: usize,
    pub k_s: usize,
    pub rounds: usize,
    pub retry_budget: usize,
    pub reward: RewardConfig,
    pub backend: BackendKind,
    pub transcript: Option<PathBuf>,
    pub noise_sigma: f64,
    pub test_days: usize,
    pub split_seed: u64,
    pub bootstrap_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentSettings::default();
        Self {
            network: None,
            dataset: None,
            store: None,
            full_store: None,
            nor_store: None,
            out: None,
            templates: None,
            variant: Variant::Full,
            seeds: vec![1, 2, 3],
            iterations: 50,
            episodes_per_iteration: 8,
            k: 16,
            k_p: agent.k_p,
            k_s: agent.k_s,
            rounds: agent.rounds,
            retry_budget: agent.retry_budget,
            reward: RewardConfig::default(),
            backend: BackendKind::Scripted,
            transcript: None,
            noise_sigma: 0.05,
            test_days: 30,
            split_seed: 42,
            bootstrap_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn agent_settings(&self) -> AgentSettings {
        AgentSettings {
            k_p: self.k_p,
            k_s: self.k_s,
            rounds: self.rounds,
            retry_budget: self.retry_budget,
            allow_fallback: self.backend != BackendKind::Replay,
        }
    }

    /// Checks counts and that every referenced input exists.
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("k", self.k),
            ("k_p", self.k_p),
            ("k_s", self.k_s),
            ("episodes_per_iteration", self.episodes_per_iteration),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CliError::Usage(format!("{name} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(CliError::Usage("at least one seed is required".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(CliError::Usage("noise_sigma must be finite and >= 0".into()));
        }
        self.reward.validate().map_err(CliError::Usage)?;
        for path in [&self.network, &self.dataset, &self.templates].into_iter().flatten() {
            if !path.exists() {
                return Err(CliError::Usage(format!("{} does not exist", path.display())));
            }
        }
        if self.backend == BackendKind::Replay {
            match &self.transcript {
                Some(p) if p.exists() => {}
                Some(p) => return Err(CliError::Usage(format!("{} does not exist", p.display()))),
                None => return Err(CliError::Usage("--backend replay needs --transcript".into())),
            }
        }
        Ok(())
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("{flag} is required")))
    }
}
