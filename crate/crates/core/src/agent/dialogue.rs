use serde::{Deserialize, Serialize};

use crate::devices::DeviceSpecs;
use crate::experience::{Experience, ExperienceId, ExperienceStore, StoreError};
use crate::harness::{simulate_day, DispatchSummary, Environment, SimulationError};
use crate::retrieval::RetrievalResult;
use crate::scenario::DayProfile;

use super::backend::{new_messages, AgentBackend};
use super::parse::parse_with_reasoning;
use super::prompt::{modification_message, render_digest, repair_message, Templates};
use super::transcript::{Direction, TranscriptLog};
use super::{AgentResponse, CallContext, Message};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("agent failed after {attempts} attempt(s): {last_error}")]
pub struct AgentFailure {
    pub attempts: usize,
    pub last_error: String,
}

/// Queries the backend until it returns a valid schedule. After a rejected
/// answer a repair message quoting the problem is appended, up to
/// `retry_budget` times. `messages` keeps the whole exchange.
pub fn decide(
    backend: &dyn AgentBackend,
    ctx: &CallContext,
    messages: &mut Vec<Message>,
    specs: &DeviceSpecs,
    templates: &Templates,
    retry_budget: usize,
    log: &TranscriptLog,
) -> Result<AgentResponse, AgentFailure> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        for m in new_messages(messages) {
            log.record(&ctx.episode_id, ctx.round, Direction::Sent, &m.content);
        }
        let text = backend.complete(ctx, messages).map_err(|e| AgentFailure {
            attempts,
            last_error: e.to_string(),
        })?;
        log.record(&ctx.episode_id, ctx.round, Direction::Received, &text);
        messages.push(Message::assistant(text.clone()));
        match parse_with_reasoning(&text, specs) {
            Ok((reasoning, actions)) => return Ok(AgentResponse { reasoning, actions }),
            Err(e) if attempts <= retry_budget => {
                log::debug!("{} round {}: rejected answer: {e}", ctx.episode_id, ctx.round);
                messages.push(Message::user(repair_message(templates, &e.to_string(), &e.hint(specs))));
            }
            Err(e) => {
                return Err(AgentFailure {
                    attempts,
                    last_error: e.to_string(),
                })
            }
        }
    }
}

/// A simulated decision from one dialogue round.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub round: usize,
    pub response: AgentResponse,
    pub summary: DispatchSummary,
    pub reward: f64,
}

/// Progress of one modification dialogue.
#[derive(Debug, Clone, Default)]
pub struct DialogueState {
    pub round: usize,
    pub candidates: Vec<Candidate>,
    pub transcript: Vec<Message>,
}

#[derive(Debug, Clone)]
pub struct ModificationOutcome {
    pub best: Candidate,
    pub state: DialogueState,
    pub failed_rounds: Vec<usize>,
}

/// Simulates the initial decision, then runs `rounds` feedback rounds, each
/// refining the latest successful candidate. Returns the best candidate
/// over all rounds; ties go to the earliest.
#[allow(clippy::too_many_arguments)]
pub fn modification_loop(
    backend: &dyn AgentBackend,
    episode_id: &str,
    env: &Environment,
    day: &DayProfile,
    initial: AgentResponse,
    transcript: Vec<Message>,
    rounds: usize,
    templates: &Templates,
    retry_budget: usize,
    log: &TranscriptLog,
) -> Result<ModificationOutcome, SimulationError> {
    let summary = simulate_day(env, day, &initial.actions)?;
    let mut state = DialogueState {
        round: 0,
        candidates: vec![Candidate {
            round: 0,
            reward: env.reward_of(&summary),
            response: initial,
            summary,
        }],
        transcript,
    };
    let mut failed_rounds = Vec::new();
    for round in 1..=rounds {
        state.round = round;
        let current = state.candidates.last().expect("initial candidate");
        let digest = render_digest(
            &current.response.actions,
            &current.summary,
            current.reward,
            &env.devices,
        );
        let checkpoint = state.transcript.len();
        state
            .transcript
            .push(Message::user(modification_message(templates, round, &digest)));
        let ctx = CallContext {
            episode_id: episode_id.to_string(),
            round,
        };
        match decide(backend, &ctx, &mut state.transcript, &env.devices, templates, retry_budget, log) {
            Ok(response) => {
                let summary = simulate_day(env, day, &response.actions)?;
                state.candidates.push(Candidate {
                    round,
                    reward: env.reward_of(&summary),
                    response,
                    summary,
                });
            }
            Err(e) => {
                log::warn!("{episode_id}: modification round {round} failed: {e}");
                state.transcript.truncate(checkpoint);
                failed_rounds.push(round);
            }
        }
    }
    let best = state
        .candidates
        .iter()
        .fold(None::<&Candidate>, |best, c| match best {
            Some(b) if c.reward <= b.reward => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate")
        .clone();
    Ok(ModificationOutcome {
        best,
        state,
        failed_rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateDecision {
    /// `(replaced, inserted)` ids, if a replacement happened.
    pub replaced: Option<(ExperienceId, ExperienceId)>,
}

/// Replaces the lowest-reward retrieved experience that `candidate`
/// strictly beats, if any. At most one entry changes.
pub fn update_store(
    store: &mut ExperienceStore,
    candidate: Experience,
    retrieved: &RetrievalResult,
) -> Result<UpdateDecision, StoreError> {
    let target = retrieved
        .distinct_ids()
        .into_iter()
        .filter_map(|id| store.get(id))
        .filter(|e| e.reward < candidate.reward)
        .min_by(|a, b| a.reward.total_cmp(&b.reward).then(a.id.cmp(&b.id)))
        .map(|e| e.id);
    match target {
        None => {
            log::debug!("candidate reward {:.4} beats no retrieved experience", candidate.reward);
            Ok(UpdateDecision { replaced: None })
        }
        Some(old) => {
            let reward = candidate.reward;
            let new = store.replace(old, candidate)?;
            log::info!("replaced {old} with {new} (reward {reward:.4})");
            Ok(UpdateDecision {
                replaced: Some((old, new)),
            })
        }
    }
}
