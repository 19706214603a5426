//! Prompt templates and the rendering of forecasts, experiences and
//! dispatch results into prompt text.
//!
//! Templates are plain text with `{name}` placeholders. The built-in set is
//! compiled in; a directory with the same file names can replace it.

use std::path::Path;

use serde::Serialize;

use crate::devices::{ActionSchedule, DeviceSpecs, HOURS};
use crate::experience::ExperienceStore;
use crate::harness::{DispatchSummary, Environment};
use crate::retrieval::{RetrievalResult, ScoredMatch};
use crate::scenario::Forecast;

use super::policy::FeederRatings;
use super::Message;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub role_task: String,
    pub environment: String,
    pub output_format: String,
    pub past_experiences: String,
    pub cot_guidance: String,
    pub modification: String,
    pub repair: String,
}

const NAMES: [&str; 7] = [
    "role_task",
    "environment",
    "output_format",
    "past_experiences",
    "cot_guidance",
    "modification",
    "repair",
];

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            role_task: include_str!("../../templates/v1/role_task.txt").into(),
            environment: include_str!("../../templates/v1/environment.txt").into(),
            output_format: include_str!("../../templates/v1/output_format.txt").into(),
            past_experiences: include_str!("../../templates/v1/past_experiences.txt").into(),
            cot_guidance: include_str!("../../templates/v1/cot_guidance.txt").into(),
            modification: include_str!("../../templates/v1/modification.txt").into(),
            repair: include_str!("../../templates/v1/repair.txt").into(),
        }
    }

    /// Reads `<name>.txt` for every template from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref();
        let mut texts = Vec::with_capacity(NAMES.len());
        for name in NAMES {
            texts.push(std::fs::read_to_string(dir.join(format!("{name}.txt")))?);
        }
        let mut it = texts.into_iter();
        let mut next = || it.next().expect("one text per name");
        Ok(Self {
            role_task: next(),
            environment: next(),
            output_format: next(),
            past_experiences: next(),
            cot_guidance: next(),
            modification: next(),
            repair: next(),
        })
    }
}

/// Replaces each `{key}` with its value; other braces are left alone.
pub fn fill(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.trim_end().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

/// Which optional prompt sections to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    pub experiences: bool,
    pub reasoning: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            experiences: true,
            reasoning: true,
        }
    }
}

/// The rendered sections of a generation prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub role_task: String,
    pub environment: String,
    pub output_format: String,
    pub past_experiences: Option<String>,
    pub cot_guidance: Option<String>,
}

pub(crate) const ENV_HEADER: &str = "## Environment";
pub(crate) const FORMAT_HEADER: &str = "## Output format";
pub(crate) const EXPERIENCE_HEADER: &str = "## Past experiences";
pub(crate) const COT_HEADER: &str = "## Reasoning guidance";

impl PromptBundle {
    /// A system message with the role and task, then one user message with
    /// the remaining sections.
    pub fn messages(&self) -> Vec<Message> {
        let mut user = format!(
            "{ENV_HEADER}\n{}\n\n{FORMAT_HEADER}\n{}",
            self.environment, self.output_format
        );
        if let Some(p) = &self.past_experiences {
            user.push_str(&format!("\n\n{EXPERIENCE_HEADER}\n{p}"));
        }
        if let Some(c) = &self.cot_guidance {
            user.push_str(&format!("\n\n{COT_HEADER}\n{c}"));
        }
        vec![Message::system(self.role_task.clone()), Message::user(user)]
    }
}

/// Facts about the feeder that every prompt states.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub feeder_name: String,
    pub bus_count: usize,
    pub pv_bus_count: usize,
    pub ratings: FeederRatings,
    pub specs: DeviceSpecs,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl PromptContext {
    pub fn of(env: &Environment) -> Self {
        Self {
            feeder_name: env.network.name().to_string(),
            bus_count: env.network.bus_count(),
            pv_bus_count: env.network.pv_buses().len(),
            ratings: FeederRatings::of(&env.network),
            specs: env.devices.clone(),
            v_lo: env.reward.v_lo,
            v_hi: env.reward.v_hi,
        }
    }
}

#[derive(Serialize)]
struct ConstraintsDoc<'a> {
    #[serde(flatten)]
    specs: &'a DeviceSpecs,
    voltage_limits: [f64; 2],
}

pub(crate) const CONSTRAINTS_FENCE: &str = "```constraints";

fn render_constraints(ctx: &PromptContext) -> String {
    let doc = ConstraintsDoc {
        specs: &ctx.specs,
        voltage_limits: [ctx.v_lo, ctx.v_hi],
    };
    let json = serde_json::to_string_pretty(&doc).expect("constraints serialize");
    format!("{CONSTRAINTS_FENCE}\n{json}\n```")
}

pub(crate) fn render_feeder(ctx: &PromptContext) -> String {
    format!(
        "Feeder: {}, {} buses, nominal peak load {:.2} MW, installed PV {:.2} MW on {} buses, {} \
         switchable capacitors. Voltage limits: {:.2} to {:.2} p.u.",
        ctx.feeder_name,
        ctx.bus_count,
        ctx.ratings.peak_load_mw,
        ctx.ratings.pv_capacity_mw,
        ctx.pv_bus_count,
        ctx.specs.scs.len(),
        ctx.v_lo,
        ctx.v_hi
    )
}

pub(crate) const TABLE_HEADER: &str = "hour  | load_mw | pv_mw";

pub fn render_forecast_table(f: &Forecast) -> String {
    let mut out = String::from(TABLE_HEADER);
    for t in 0..f.horizon() {
        out.push_str(&format!("\n{t:02}:00 | {:.3} | {:.3}", f.load[t], f.pv[t]));
    }
    out
}

fn list(values: &[f64], decimals: usize) -> String {
    let items: Vec<String> = values.iter().map(|v| format!("{v:.decimals$}")).collect();
    format!("[{}]", items.join(", "))
}

pub(crate) const PROFILE_LABEL: &str = "profile-similar";
pub(crate) const STAT_LABEL: &str = "statistically-similar";

fn render_experience(store: &ExperienceStore, m: &ScoredMatch, label: &str) -> String {
    let e = store.get(m.id).expect("retrieved ids come from the store");
    let mut out = format!(
        "### Experience {} ({label}, score {:.4})\nContext (hourly forecast of that day):\nload_mw: {}\npv_mw: {}\n",
        e.id,
        m.score,
        list(&e.context.load, 3),
        list(&e.context.pv, 3)
    );
    if !e.reasoning.trim().is_empty() {
        out.push_str(&format!("Reasoning:\n{}\n", e.reasoning.trim()));
    }
    out.push_str(&format!(
        "Final actions:\n{}\nDispatch results: {}\nhourly v_min: {}\nhourly v_max: {}",
        e.actions.to_json(),
        result_line(&e.results, e.reward),
        list(&e.results.v_min_hourly, 4),
        list(&e.results.v_max_hourly, 4)
    ));
    out
}

fn result_line(s: &DispatchSummary, reward: f64) -> String {
    format!(
        "reward {reward:.4}, deviation {:.6} p.u., violation rate {:.3}%, unconverged cases {}",
        s.deviation,
        s.violation_rate * 100.0,
        s.unconverged_cases
    )
}

/// Renders one block per retrieved entry, profile list first.
pub fn render_experiences(store: &ExperienceStore, r: &RetrievalResult) -> String {
    r.profile_matches
        .iter()
        .map(|m| render_experience(store, m, PROFILE_LABEL))
        .chain(
            r.statistical_matches
                .iter()
                .map(|m| render_experience(store, m, STAT_LABEL)),
        )
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_generation_prompt(
    templates: &Templates,
    ctx: &PromptContext,
    forecast: &Forecast,
    retrieved: Option<(&ExperienceStore, &RetrievalResult)>,
    opts: PromptOptions,
) -> PromptBundle {
    let role_task = fill(
        &templates.role_task,
        &[("forecast_table", render_forecast_table(forecast))],
    );
    let environment = fill(
        &templates.environment,
        &[
            ("feeder_summary", render_feeder(ctx)),
            ("device_constraints", render_constraints(ctx)),
        ],
    );
    let output_format = fill(
        &templates.output_format,
        &[
            ("hours", HOURS.to_string()),
            ("max_tap", ctx.specs.oltc.max_tap().to_string()),
            ("num_sc", ctx.specs.scs.len().to_string()),
            ("initial_tap", ctx.specs.oltc.initial_tap.to_string()),
        ],
    );
    let past_experiences = match retrieved {
        Some((store, r)) if opts.experiences && !r.is_empty() => Some(fill(
            &templates.past_experiences,
            &[("experience_blocks", render_experiences(store, r))],
        )),
        _ => None,
    };
    let cot_guidance = opts.reasoning.then(|| fill(&templates.cot_guidance, &[]));
    PromptBundle {
        role_task,
        environment,
        output_format,
        past_experiences,
        cot_guidance,
    }
}

pub(crate) const ACTIONS_MARKER: &str = "Evaluated actions:";
pub(crate) const DIGEST_HEADER: &str = "hour  | v_min | v_max | violating buses";
const MAX_LISTED_BUSES: usize = 12;

/// Summary of one simulated day for the modification dialogue.
pub fn render_digest(
    actions: &ActionSchedule,
    summary: &DispatchSummary,
    reward: f64,
    specs: &DeviceSpecs,
) -> String {
    let sc_ops: Vec<String> = summary
        .op_counts
        .sc_ops
        .iter()
        .zip(&specs.scs)
        .map(|(n, sc)| format!("{n}/{}", sc.max_daily_ops))
        .collect();
    let mut out = format!(
        "{ACTIONS_MARKER}\n{}\nResult: {}\nOperations: OLTC {}/{}; SCs [{}]\n{DIGEST_HEADER}",
        actions.to_json(),
        result_line(summary, reward),
        summary.op_counts.oltc_ops,
        specs.oltc.max_daily_ops,
        sc_ops.join(", ")
    );
    for t in 0..summary.v_min_hourly.len() {
        let vio = match summary.violating_hours.iter().find(|h| h.hour == t) {
            None => "-".to_string(),
            Some(h) => {
                let mut ids: Vec<String> = h
                    .buses
                    .iter()
                    .take(MAX_LISTED_BUSES)
                    .map(ToString::to_string)
                    .collect();
                if h.buses.len() > MAX_LISTED_BUSES {
                    ids.push("...".into());
                }
                format!(
                    "{} buses, extreme {:.4} p.u.: {}",
                    h.buses.len(),
                    h.extreme_v,
                    ids.join(" ")
                )
            }
        };
        out.push_str(&format!(
            "\n{t:02}:00 | {:.4} | {:.4} | {vio}",
            summary.v_min_hourly[t], summary.v_max_hourly[t]
        ));
    }
    out
}

pub fn modification_message(templates: &Templates, round: usize, digest: &str) -> String {
    fill(
        &templates.modification,
        &[("round", round.to_string()), ("digest", digest.to_string())],
    )
}

pub fn repair_message(templates: &Templates, error: &str, hint: &str) -> String {
    fill(
        &templates.repair,
        &[("error", error.to_string()), ("hint", hint.to_string())],
    )
}
