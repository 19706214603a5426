use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::prompt::PromptContext;
use crate::agent::{
    build_generation_prompt, decide, modification_loop, scripted_policy, update_store,
    AgentBackend, AgentFailure, CallContext, FeederRatings, PromptOptions, Templates,
    TranscriptLog,
};
use crate::devices::ActionSchedule;
use crate::experience::{hex, Experience, ExperienceId, ExperienceStore, StoreError};
use crate::retrieval::{retrieve, RetrievalError, RetrievalResult};
use crate::scenario::{DayProfile, Forecast};

use super::metrics::DispatchSummary;
use super::simulate::{simulate_day, Environment, SimulationError};

/// The full method and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Devices held at their initial state.
    NoC,
    /// No retrieved experiences in the prompt.
    NoE,
    /// No modification dialogue and no store update.
    NoM,
    /// No reasoning guidance; experiences stored without reasoning.
    NoR,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoC,
        Variant::NoE,
        Variant::NoM,
        Variant::NoR,
    ];

    pub fn uses_agent(self) -> bool {
        self != Variant::NoC
    }

    pub fn uses_experiences(self) -> bool {
        matches!(self, Variant::Full | Variant::NoM | Variant::NoR)
    }

    pub fn modifies(self) -> bool {
        matches!(self, Variant::Full | Variant::NoE | Variant::NoR)
    }

    pub fn updates_store(self) -> bool {
        matches!(self, Variant::Full | Variant::NoR)
    }

    pub fn prompt_options(self) -> PromptOptions {
        PromptOptions {
            experiences: self.uses_experiences(),
            reasoning: self != Variant::NoR,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Full => "Full",
            Variant::NoC => "NoC",
            Variant::NoE => "NoE",
            Variant::NoM => "NoM",
            Variant::NoR => "NoR",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected Full, NoC, NoE, NoM or NoR)"))
    }
}

/// Training episodes may modify and update the store; test episodes only
/// generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSettings {
    pub k_p: usize,
    pub k_s: usize,
    /// Modification rounds per training episode.
    pub rounds: usize,
    pub retry_budget: usize,
    /// Fall back to the rule policy when the backend keeps failing.
    pub allow_fallback: bool,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            k_p: 2,
            k_s: 2,
            rounds: 3,
            retry_budget: 2,
            allow_fallback: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("episode {episode_id}: {failure}")]
    Agent {
        episode_id: String,
        failure: AgentFailure,
    },
}

/// One day to decide and evaluate.
#[derive(Debug, Clone)]
pub struct Episode<'a> {
    pub id: String,
    pub day: &'a DayProfile,
    pub forecast: Forecast,
    pub seed: u64,
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub episode_id: String,
    pub variant: Variant,
    pub mode: Mode,
    pub seed: u64,
    pub iteration: Option<usize>,
    pub day_id: u32,
    pub reward: f64,
    pub deviation: f64,
    pub violation_rate: f64,
    pub unconverged_cases: usize,
    /// The backend failed and the rule policy decided instead.
    pub degraded: bool,
    /// Round whose candidate was kept (0 = initial decision).
    pub best_round: usize,
    /// SHA-256 of the day profile, forecast and bus allocation.
    pub input_hash: String,
    /// Digest of the store the episode read from, if any.
    pub store_digest: Option<String>,
    pub replaced: Option<(ExperienceId, ExperienceId)>,
}

/// A store together with its digest, shared by the episodes that read it.
#[derive(Debug, Clone, Copy)]
pub struct StoreView<'a> {
    pub store: &'a ExperienceStore,
    pub digest: &'a str,
}

/// The outcome of an episode before any store update is applied.
#[derive(Debug, Clone)]
pub struct EpisodePlan {
    pub record: RunRecord,
    pub actions: ActionSchedule,
    pub summary: DispatchSummary,
    pub candidate: Option<Experience>,
    pub retrieved: Option<RetrievalResult>,
}

/// Shared, read-only machinery for running episodes.
pub struct Runner<'a> {
    pub env: &'a Environment,
    pub backend: &'a dyn AgentBackend,
    pub templates: &'a Templates,
    pub log: &'a TranscriptLog,
    pub settings: AgentSettings,
    prompt_ctx: PromptContext,
    ratings: FeederRatings,
    alloc_json: String,
}

impl<'a> Runner<'a> {
    pub fn new(
        env: &'a Environment,
        backend: &'a dyn AgentBackend,
        templates: &'a Templates,
        log: &'a TranscriptLog,
        settings: AgentSettings,
    ) -> Self {
        Self {
            env,
            backend,
            templates,
            log,
            settings,
            prompt_ctx: PromptContext::of(env),
            ratings: FeederRatings::of(&env.network),
            alloc_json: serde_json::to_string(&env.alloc).expect("allocation serializes"),
        }
    }

    pub fn ratings(&self) -> &FeederRatings {
        &self.ratings
    }

    pub fn input_hash(&self, day: &DayProfile, forecast: &Forecast) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(day).expect("day serializes"));
        h.update(serde_json::to_string(forecast).expect("forecast serializes"));
        h.update(&self.alloc_json);
        hex(&h.finalize())
    }

    /// Decides and evaluates one day without touching the store.
    pub fn plan_episode(
        &self,
        variant: Variant,
        mode: Mode,
        ep: &Episode<'_>,
        store: Option<StoreView<'_>>,
    ) -> Result<EpisodePlan, EpisodeError> {
        let env = self.env;
        let mut degraded = false;
        let mut best_round = 0;
        let mut candidate = None;
        let mut retrieved = None;

        let (response, summary) = if !variant.uses_agent() {
            let actions = env.devices.static_schedule();
            let summary = simulate_day(env, ep.day, &actions)?;
            (None, summary)
        } else {
            let source = match store {
                Some(view) if variant.uses_experiences() => {
                    let r = retrieve(view.store, &ep.forecast, self.settings.k_p, self.settings.k_s)?;
                    retrieved = Some(r);
                    Some(view.store)
                }
                _ => None,
            };
            let prompt = build_generation_prompt(
                self.templates,
                &self.prompt_ctx,
                &ep.forecast,
                source.zip(retrieved.as_ref()),
                variant.prompt_options(),
            );
            let mut transcript = prompt.messages();
            let ctx = CallContext {
                episode_id: ep.id.clone(),
                round: 0,
            };
            let decided = decide(
                self.backend,
                &ctx,
                &mut transcript,
                &env.devices,
                self.templates,
                self.settings.retry_budget,
                self.log,
            );
            let initial = match decided {
                Ok(r) => r,
                Err(failure) if self.settings.allow_fallback => {
                    log::warn!("{}: {failure}; falling back to the rule policy", ep.id);
                    degraded = true;
                    scripted_policy(&ep.forecast, &env.devices, &self.ratings)
                }
                Err(failure) => {
                    return Err(EpisodeError::Agent {
                        episode_id: ep.id.clone(),
                        failure,
                    })
                }
            };
            let rounds = if mode == Mode::Train && variant.modifies() && !degraded {
                self.settings.rounds
            } else {
                0
            };
            let outcome = modification_loop(
                self.backend,
                &ep.id,
                env,
                ep.day,
                initial,
                transcript,
                rounds,
                self.templates,
                self.settings.retry_budget,
                self.log,
            )?;
            best_round = outcome.best.round;
            let best = outcome.best;
            if mode == Mode::Train && variant.updates_store() && !degraded && retrieved.is_some() {
                let reasoning = if variant == Variant::NoR {
                    String::new()
                } else {
                    best.response.reasoning.clone()
                };
                candidate = Some(Experience {
                    id: ExperienceId(0),
                    source_day: ep.day.day_id,
                    context: ep.forecast.clone(),
                    reasoning,
                    actions: best.response.actions.clone(),
                    results: best.summary.clone(),
                    reward: best.reward,
                });
            }
            (Some(best.response), best.summary)
        };

        let actions = response.map_or_else(|| env.devices.static_schedule(), |r| r.actions);
        let record = RunRecord {
            episode_id: ep.id.clone(),
            variant,
            mode,
            seed: ep.seed,
            iteration: ep.iteration,
            day_id: ep.day.day_id,
            reward: env.reward_of(&summary),
            deviation: summary.deviation,
            violation_rate: summary.violation_rate,
            unconverged_cases: summary.unconverged_cases,
            degraded,
            best_round,
            input_hash: self.input_hash(ep.day, &ep.forecast),
            store_digest: store.map(|v| v.digest.to_string()),
            replaced: None,
        };
        Ok(EpisodePlan {
            record,
            actions,
            summary,
            candidate,
            retrieved,
        })
    }

    /// Plans the episode and applies its store update.
    pub fn run_episode(
        &self,
        variant: Variant,
        mode: Mode,
        ep: &Episode<'_>,
        store: Option<&mut ExperienceStore>,
    ) -> Result<RunRecord, EpisodeError> {
        match store {
            None => Ok(self.plan_episode(variant, mode, ep, None)?.record),
            Some(store) => {
                let digest = store.digest();
                let plan = self.plan_episode(
                    variant,
                    mode,
                    ep,
                    Some(StoreView {
                        store,
                        digest: &digest,
                    }),
                )?;
                apply_update(store, plan)
            }
        }
    }
}

/// Applies the plan's candidate to the store, if it has one.
pub fn apply_update(store: &mut ExperienceStore, plan: EpisodePlan) -> Result<RunRecord, EpisodeError> {
    let mut record = plan.record;
    if let (Some(candidate), Some(retrieved)) = (plan.candidate, plan.retrieved.as_ref()) {
        record.replaced = update_store(store, candidate, retrieved)?.replaced;
    }
    Ok(record)
}
