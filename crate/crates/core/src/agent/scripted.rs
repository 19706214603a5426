//! A deterministic stand-in for a language model. It reads the same prompt
//! text a model would see and answers in the requested format, so the whole
//! pipeline runs offline.
//!
//! Its reasoning carries a table of tap lessons: for a cell of hourly load
//! and PV, the tap that centred the voltage band when last measured.
//! Generation sets taps from the lessons in the retrieved experiences and
//! falls back to the rule plan. When the prompt asks for no reasoning it
//! copies the actions of the top profile-similar experience instead.
//! Modification measures each evaluated schedule, re-centres every hour and
//! adds the new measurements to the table.

use serde::Deserialize;

use crate::devices::{enforce_limits, ActionSchedule, DeviceSpecs};
use crate::experience::ExperienceId;
use crate::scenario::Forecast;

use super::backend::{AgentBackend, BackendError};
use super::lessons::{self, Cell, Lesson};
use super::policy::{rule_plan, FeederRatings, RulePlan};
use super::prompt::{
    ACTIONS_MARKER, CONSTRAINTS_FENCE, COT_HEADER, DIGEST_HEADER, EXPERIENCE_HEADER,
    PROFILE_LABEL, TABLE_HEADER,
};
use super::{CallContext, Message, Role};

#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedBackend;

impl ScriptedBackend {
    pub fn new() -> Self {
        Self
    }
}

#[derive(Deserialize)]
struct ConstraintsDoc {
    #[serde(flatten)]
    specs: DeviceSpecs,
    voltage_limits: [f64; 2],
}

struct Setting {
    forecast: Forecast,
    specs: DeviceSpecs,
    v_lo: f64,
    v_hi: f64,
    ratings: FeederRatings,
    reasoning: bool,
}

struct RetrievedBlock {
    id: Option<ExperienceId>,
    text: String,
    label: String,
    actions: Option<ActionSchedule>,
}

fn bad(msg: impl Into<String>) -> BackendError {
    BackendError::BadResponse(format!("scripted backend cannot read the prompt: {}", msg.into()))
}

fn number_after(text: &str, key: &str) -> Option<f64> {
    let rest = &text[text.find(key)? + key.len()..];
    let token: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.' || *c == '-')
        .collect();
    token.parse().ok()
}

fn parse_forecast(text: &str) -> Option<Forecast> {
    let start = text.find(TABLE_HEADER)? + TABLE_HEADER.len();
    let (mut load, mut pv) = (Vec::new(), Vec::new());
    for line in text[start..].lines().skip(1) {
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        if cols.len() != 3 || !cols[0].ends_with(":00") {
            break;
        }
        load.push(cols[1].parse().ok()?);
        pv.push(cols[2].parse().ok()?);
    }
    Forecast::new(load, pv).ok()
}

fn parse_constraints(text: &str) -> Option<ConstraintsDoc> {
    let start = text.find(CONSTRAINTS_FENCE)? + CONSTRAINTS_FENCE.len();
    let end = start + text[start..].find("```")?;
    serde_json::from_str(text[start..end].trim()).ok()
}

fn section<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    let end = rest.find("\n## ").unwrap_or(rest.len());
    Some(&rest[..end])
}

fn parse_blocks(section: &str) -> Vec<RetrievedBlock> {
    section
        .split("### Experience ")
        .skip(1)
        .filter_map(|block| {
            let head = block.lines().next()?;
            let inner = &head[head.find('(')? + 1..head.rfind(')')?];
            let (label, score) = inner.split_once(", score ")?;
            score.trim().parse::<f64>().ok()?;
            let actions = block
                .lines()
                .skip_while(|l| l.trim() != "Final actions:")
                .nth(1)
                .and_then(|l| serde_json::from_str(l.trim()).ok());
            let id = head.split_whitespace().next().and_then(|t| t.parse().ok());
            Some(RetrievedBlock {
                id,
                text: block.to_string(),
                label: label.to_string(),
                actions,
            })
        })
        .collect()
}

fn read_setting(messages: &[Message]) -> Result<Setting, BackendError> {
    let system = messages
        .iter()
        .find(|m| m.role == Role::System)
        .ok_or_else(|| bad("no system message"))?;
    let forecast = parse_forecast(&system.content).ok_or_else(|| bad("forecast table"))?;
    let first_user = messages
        .iter()
        .find(|m| m.role == Role::User)
        .ok_or_else(|| bad("no user message"))?;
    let text = &first_user.content;
    let doc = parse_constraints(text).ok_or_else(|| bad("device constraints"))?;
    let ratings = FeederRatings {
        peak_load_mw: number_after(text, "nominal peak load").ok_or_else(|| bad("peak load"))?,
        pv_capacity_mw: number_after(text, "installed PV").ok_or_else(|| bad("PV capacity"))?,
    };
    Ok(Setting {
        forecast,
        specs: doc.specs,
        v_lo: doc.voltage_limits[0],
        v_hi: doc.voltage_limits[1],
        ratings,
        reasoning: text.contains(COT_HEADER),
    })
}

fn respond(reasoning: Option<String>, actions: &ActionSchedule) -> String {
    let block = format!("```json\n{}\n```", actions.to_json());
    match reasoning {
        Some(r) => format!("{r}\n\n{block}"),
        None => block,
    }
}

fn hour_set(hours: &[usize]) -> String {
    if hours.is_empty() {
        "none".into()
    } else {
        hours.iter().map(|h| format!("{h:02}")).collect::<Vec<_>>().join(",")
    }
}

fn trend(f: &Forecast) -> String {
    let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, t| if v[t] > v[b] { t } else { b });
    let (lp, pp) = (argmax(&f.load), argmax(&f.pv));
    let trough = f.load.iter().copied().fold(f64::INFINITY, f64::min);
    let surplus: Vec<usize> = (0..f.horizon()).filter(|&t| f.pv[t] > f.load[t]).collect();
    format!(
        "Trend and magnitude: load runs from {trough:.2} MW to a peak of {:.2} MW at {lp:02}:00; \
         PV peaks at {:.2} MW at {pp:02}:00; PV exceeds load in hours {}.",
        f.load[lp],
        f.pv[pp],
        hour_set(&surplus)
    )
}

fn first_user(messages: &[Message]) -> &str {
    messages
        .iter()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str())
}

fn retrieved_lessons(messages: &[Message]) -> (Vec<RetrievedBlock>, Vec<(Cell, Lesson)>) {
    let blocks = section(first_user(messages), EXPERIENCE_HEADER)
        .map(parse_blocks)
        .unwrap_or_default();
    let lessons = blocks.iter().flat_map(|b| lessons::parse(&b.text, b.id)).collect();
    (blocks, lessons)
}

fn generate(s: &Setting, messages: &[Message]) -> String {
    let RulePlan { schedule: rule, trace } = rule_plan(&s.forecast, &s.specs, &s.ratings);
    let (blocks, found) = retrieved_lessons(messages);
    let table = lessons::merge(found);
    let oltc = &s.specs.oltc;

    let mut schedule = rule.clone();
    let decision = if !table.is_empty() {
        let desired = lessons::desired_taps(&s.forecast, &table, &rule.oltc_tap);
        schedule.oltc_tap = lessons::fit_schedule(&desired, oltc.initial_tap, oltc.max_daily_ops, oltc.max_tap());
        format!(
            "Decision: set each hour's tap from the {} tap lessons of the retrieved experiences, \
             using the nearest lesson within {} cells and the rule plan elsewhere.",
            table.len(),
            lessons::REACH
        )
    } else if let Some(top) = blocks
        .iter()
        .filter(|_| !s.reasoning)
        .find(|b| b.label == PROFILE_LABEL && b.actions.is_some())
    {
        schedule = top.actions.clone().expect("filtered");
        "Decision: follow the actions of the most profile-similar experience.".into()
    } else {
        "Decision: apply the rule plan.".into()
    };
    enforce_limits(&mut schedule, &s.specs);

    let reasoning = s.reasoning.then(|| {
        [
            trend(&s.forecast),
            format!("Voltage issues: {}", trace.join(" ")),
            decision,
            lessons::render(&table),
        ]
        .join("\n")
    });
    respond(reasoning, &schedule)
}

fn parse_digest(text: &str) -> Option<(ActionSchedule, Vec<(f64, f64)>)> {
    let start = text.find(ACTIONS_MARKER)? + ACTIONS_MARKER.len();
    let actions: ActionSchedule = serde_json::from_str(text[start..].lines().nth(1)?.trim()).ok()?;
    let table = text.find(DIGEST_HEADER)? + DIGEST_HEADER.len();
    let mut rows = Vec::new();
    for line in text[table..].lines().skip(1) {
        let cols: Vec<&str> = line.split('|').map(str::trim).collect();
        if cols.len() < 3 || !cols[0].ends_with(":00") {
            break;
        }
        rows.push((cols[1].parse().ok()?, cols[2].parse().ok()?));
    }
    (rows.len() == actions.oltc_tap.len()).then_some((actions, rows))
}

fn measure_digest(s: &Setting, taps: &[usize], rows: &[(f64, f64)]) -> Vec<(Cell, Lesson)> {
    let v_min: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let v_max: Vec<f64> = rows.iter().map(|r| r.1).collect();
    lessons::measure(&s.forecast, taps, &v_min, &v_max, s.specs.oltc.step())
}

fn improve(s: &Setting, digest: &str, messages: &[Message]) -> Result<String, BackendError> {
    let (current, rows) = parse_digest(digest).ok_or_else(|| bad("dispatch digest"))?;
    let (_, mut found) = retrieved_lessons(messages);
    for m in messages.iter().filter(|m| m.role == Role::User) {
        if let Some((actions, rows)) = parse_digest(&m.content) {
            found.extend(measure_digest(s, &actions.oltc_tap, &rows));
        }
    }
    let table = lessons::merge(found);

    let measured = measure_digest(s, &current.oltc_tap, &rows);
    let oltc = &s.specs.oltc;
    let mut next = current.clone();
    if measured.len() == current.oltc_tap.len() {
        let desired: Vec<f64> = measured.iter().map(|(_, l)| l.target).collect();
        next.oltc_tap = lessons::fit_schedule(&desired, oltc.initial_tap, oltc.max_daily_ops, oltc.max_tap());
    }
    enforce_limits(&mut next, &s.specs);

    let reasoning = s.reasoning.then(|| {
        let high: Vec<usize> = (0..rows.len()).filter(|&t| rows[t].1 > s.v_hi).collect();
        let low: Vec<usize> = (0..rows.len()).filter(|&t| rows[t].0 < s.v_lo).collect();
        let round = messages.iter().filter(|m| m.role == Role::Assistant).count();
        [
            format!(
                "Round {round} feedback: overvoltage in hours {}; undervoltage in hours {}.",
                hour_set(&high),
                hour_set(&low)
            ),
            "Modification: re-centre each hour's measured voltage band, then fit the taps \
             to the operation limit."
                .to_string(),
            lessons::render(&table),
        ]
        .join("\n")
    });
    Ok(respond(reasoning, &next))
}

impl AgentBackend for ScriptedBackend {
    fn complete(&self, _ctx: &CallContext, messages: &[Message]) -> Result<String, BackendError> {
        let setting = read_setting(messages)?;
        let digest = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User && m.content.contains(ACTIONS_MARKER));
        match digest {
            Some(m) => improve(&setting, &m.content, messages),
            None => Ok(generate(&setting, messages)),
        }
    }
}
