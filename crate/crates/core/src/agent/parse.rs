use serde_json::Value;
use thiserror::Error;

use crate::devices::{validate_schedule, ActionSchedule, DeviceSpecs, HOURS};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no action block found")]
    NoSchemaBlock,
    #[error("action block is not valid JSON: {0}")]
    MalformedBlock(String),
    #[error("{0}")]
    SchemaViolation(String),
    #[error("{0}")]
    ConstraintViolation(String),
}

impl ParseError {
    /// A short instruction for the retry prompt.
    pub fn hint(&self, specs: &DeviceSpecs) -> String {
        match self {
            ParseError::NoSchemaBlock => "end the answer with a ```json block holding one object \
                with the keys \"oltc_tap\" and \"sc_state\""
                .into(),
            ParseError::MalformedBlock(_) => "the block must be plain JSON: check brackets and \
                commas, and do not put comments or trailing text inside it"
                .into(),
            ParseError::SchemaViolation(_) => format!(
                "\"oltc_tap\" needs {HOURS} integers in [0, {}] and \"sc_state\" needs {} lists of \
                 {HOURS} values that are 0 or 1",
                specs.oltc.max_tap(),
                specs.scs.len()
            ),
            ParseError::ConstraintViolation(_) => {
                let sc_max = specs.scs.iter().map(|s| s.max_daily_ops).max().unwrap_or(0);
                format!(
                    "change device states in fewer hours: the OLTC may operate at most {} times \
                     and each SC at most {sc_max} times per day, and the change from the initial \
                     state into hour 0 counts",
                    specs.oltc.max_daily_ops
                )
            }
        }
    }
}

struct Fence {
    start: usize,
    end: usize,
    info: String,
    body: String,
}

fn fenced_blocks(text: &str) -> Vec<Fence> {
    let mut blocks = Vec::new();
    let mut open: Option<(usize, String, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("```") {
            match open.take() {
                None => open = Some((offset, rest.trim().to_lowercase(), offset + line.len())),
                Some((start, info, body_start)) => blocks.push(Fence {
                    start,
                    end: offset + line.len(),
                    info,
                    body: text[body_start..offset].to_string(),
                }),
            }
        }
        offset += line.len();
    }
    blocks
}

/// Byte ranges of top-level `{...}` objects, respecting JSON strings.
fn bare_objects(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut depth, mut start) = (0usize, 0usize);
    let (mut in_str, mut escaped) = (false, false);
    for (i, c) in text.char_indices() {
        if in_str {
            match (escaped, c) {
                (true, _) => escaped = false,
                (false, '\\') => escaped = true,
                (false, '"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    out
}

/// Splits a completion into reasoning and the action block. The last fenced
/// JSON block wins; without one, the last bare object mentioning `oltc_tap`.
pub fn split_response(text: &str) -> Option<(String, String)> {
    let fence = fenced_blocks(text)
        .into_iter().rfind(|f| f.info == "json" || (f.info.is_empty() && f.body.trim_start().starts_with('{')));
    let (start, end, block) = match fence {
        Some(f) => (f.start, f.end, f.body),
        None => {
            let (s, e) = bare_objects(text)
                .into_iter().rfind(|&(s, e)| text[s..e].contains("\"oltc_tap\""))?;
            (s, e, text[s..e].to_string())
        }
    };
    let reasoning = format!("{}{}", &text[..start], &text[end..]).trim().to_string();
    Some((reasoning, block))
}

fn int_list(v: &Value, name: &str) -> Result<Vec<u64>, ParseError> {
    let arr = v
        .as_array()
        .ok_or_else(|| ParseError::SchemaViolation(format!("{name} must be a list")))?;
    arr.iter()
        .enumerate()
        .map(|(i, x)| {
            x.as_u64().ok_or_else(|| {
                ParseError::SchemaViolation(format!("{name}[{i}] is not a non-negative integer"))
            })
        })
        .collect()
}

fn schedule_from_value(v: &Value) -> Result<ActionSchedule, ParseError> {
    let obj = v
        .as_object()
        .ok_or_else(|| ParseError::SchemaViolation("action block must be a JSON object".into()))?;
    let taps = obj
        .get("oltc_tap")
        .ok_or_else(|| ParseError::SchemaViolation("missing key \"oltc_tap\"".into()))?;
    let rows = obj
        .get("sc_state")
        .ok_or_else(|| ParseError::SchemaViolation("missing key \"sc_state\"".into()))?;
    let oltc_tap = int_list(taps, "oltc_tap")?
        .into_iter()
        .map(|t| usize::try_from(t).unwrap_or(usize::MAX))
        .collect();
    let rows = rows
        .as_array()
        .ok_or_else(|| ParseError::SchemaViolation("sc_state must be a list of lists".into()))?;
    let mut sc_state = Vec::with_capacity(rows.len());
    for (m, row) in rows.iter().enumerate() {
        let states = int_list(row, &format!("sc_state[{m}]"))?
            .into_iter()
            .enumerate()
            .map(|(t, x)| match x {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(ParseError::SchemaViolation(format!("sc_state[{m}][{t}] must be 0 or 1"))),
            })
            .collect::<Result<Vec<bool>, _>>()?;
        sc_state.push(states);
    }
    Ok(ActionSchedule { oltc_tap, sc_state })
}

/// Extracts and validates the action block of a completion.
pub fn parse_actions(completion: &str, specs: &DeviceSpecs) -> Result<ActionSchedule, ParseError> {
    parse_with_reasoning(completion, specs).map(|(_, s)| s)
}

pub(crate) fn parse_with_reasoning(
    completion: &str,
    specs: &DeviceSpecs,
) -> Result<(String, ActionSchedule), ParseError> {
    let (reasoning, block) = split_response(completion).ok_or(ParseError::NoSchemaBlock)?;
    let value: Value =
        serde_json::from_str(block.trim()).map_err(|e| ParseError::MalformedBlock(e.to_string()))?;
    let schedule = schedule_from_value(&value)?;
    let verdict = validate_schedule(&schedule, specs);
    let (structural, limits): (Vec<_>, Vec<_>) =
        verdict.violations.iter().partition(|v| v.is_structural());
    let join = |vs: Vec<&crate::devices::Violation>| {
        vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
    };
    if !structural.is_empty() {
        return Err(ParseError::SchemaViolation(join(structural)));
    }
    if !limits.is_empty() {
        return Err(ParseError::ConstraintViolation(join(limits)));
    }
    Ok((reasoning, schedule))
}
