//! Prompting, decision backends, response parsing, the modification
//! dialogue and the store-update rule.

pub mod backend;
mod dialogue;
mod parse;
mod lessons;
mod policy;
pub mod prompt;
mod scripted;
pub mod transcript;

use serde::{Deserialize, Serialize};

use crate::devices::ActionSchedule;

pub use backend::{
    AgentBackend, BackendError, RemoteBackend, RemoteConfig, ReplayBackend, SequenceBackend,
};
pub use dialogue::{
    decide, modification_loop, update_store, AgentFailure, Candidate, DialogueState,
    ModificationOutcome, UpdateDecision,
};
pub use parse::{parse_actions, split_response, ParseError};
pub use policy::{rule_plan, scripted_policy, FeederRatings, RulePlan};
pub use prompt::{
    build_generation_prompt, render_digest, PromptBundle, PromptContext, PromptOptions, Templates,
};
pub use scripted::ScriptedBackend;
pub use transcript::{Direction, TranscriptLog, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Identifies one backend call within a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallContext {
    pub episode_id: String,
    /// 0 for generation, r for modification round r.
    pub round: usize,
}

/// A parsed, validated decision and the reasoning that came with it.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub reasoning: String,
    pub actions: ActionSchedule,
}
