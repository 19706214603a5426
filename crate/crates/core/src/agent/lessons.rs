//! Hour-level tap lessons used by the scripted backend.
//!
//! A lesson says which (fractional) tap centres the voltage band for an hour
//! whose forecast load and PV fall in a given cell. Lessons come from
//! measured dispatch results and travel between experiences inside the
//! reasoning text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::experience::ExperienceId;
use crate::scenario::Forecast;

/// Width of a load cell, MW.
pub(crate) const LOAD_BIN_MW: f64 = 1.0;
/// Width of a PV cell, MW.
pub(crate) const PV_BIN_MW: f64 = 2.0;
/// Position in the hourly [v_min, v_max] band steered to 1.0 p.u.
pub(crate) const BAND_POINT: f64 = 0.4;
/// Lessons from neighbouring cells are used up to this many cells away.
pub(crate) const REACH: i32 = 2;

pub(crate) const LESSONS_HEADER: &str = "Tap lessons (load cell, pv cell: tap, extrapolation, origin):";

pub(crate) type Cell = (i32, i32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lesson {
    /// Tap that would put the band point at 1.0 p.u.
    pub target: f64,
    /// Distance in taps between the measured tap and `target`.
    pub extrapolation: f64,
    /// Experience the lesson was first stored in; `None` until stored.
    pub origin: Option<ExperienceId>,
}

impl Lesson {
    fn rank(&self) -> (u64, i64, i64) {
        (
            self.origin.map_or(u64::MAX, |id| id.0),
            (self.extrapolation * 100.0).round() as i64,
            (self.target * 100.0).round() as i64,
        )
    }
}

pub(crate) fn cell_of(load_mw: f64, pv_mw: f64) -> Cell {
    (
        (load_mw / LOAD_BIN_MW).floor() as i32,
        (pv_mw / PV_BIN_MW).floor() as i32,
    )
}

/// Lessons learnt from one evaluated schedule.
pub(crate) fn measure(
    forecast: &Forecast,
    taps: &[usize],
    v_min: &[f64],
    v_max: &[f64],
    step: f64,
) -> Vec<(Cell, Lesson)> {
    (0..taps.len())
        .filter(|&h| v_min[h] > 0.0)
        .map(|h| {
            let point = v_min[h] + BAND_POINT * (v_max[h] - v_min[h]);
            let shift = (1.0 - point) / step;
            let lesson = Lesson {
                target: quantize(taps[h] as f64 + shift),
                extrapolation: quantize(shift.abs()),
                origin: None,
            };
            (cell_of(forecast.load[h], forecast.pv[h]), lesson)
        })
        .collect()
}

fn quantize(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Keeps one lesson per cell. A stored lesson is never displaced by a later
/// one; among unstored lessons the least extrapolated wins.
pub(crate) fn merge(lessons: impl IntoIterator<Item = (Cell, Lesson)>) -> BTreeMap<Cell, Lesson> {
    let mut table: BTreeMap<Cell, Lesson> = BTreeMap::new();
    for (cell, lesson) in lessons {
        match table.get(&cell) {
            Some(kept) if kept.rank() <= lesson.rank() => {}
            _ => {
                table.insert(cell, lesson);
            }
        }
    }
    table
}

pub(crate) fn render(table: &BTreeMap<Cell, Lesson>) -> String {
    let mut out = String::from(LESSONS_HEADER);
    for (&(l, p), lesson) in table {
        let origin = lesson.origin.map_or_else(|| "new".to_string(), |id| id.to_string());
        let _ = write!(
            out,
            "\nL{l} P{p}: {:.2} {:.2} {origin}",
            lesson.target, lesson.extrapolation
        );
    }
    out
}

/// Reads the lesson table from a reasoning text. Lessons marked `new`
/// belong to `own`, the experience that carries the text.
pub(crate) fn parse(text: &str, own: Option<ExperienceId>) -> Vec<(Cell, Lesson)> {
    let Some(start) = text.find(LESSONS_HEADER) else {
        return Vec::new();
    };
    text[start + LESSONS_HEADER.len()..]
        .lines()
        .skip(1)
        .map_while(|line| {
            let (cell, rest) = line.trim().split_once(": ")?;
            let (l, p) = cell.split_once(' ')?;
            let cell = (l.strip_prefix('L')?.parse().ok()?, p.strip_prefix('P')?.parse().ok()?);
            let mut parts = rest.split_whitespace();
            let target = parts.next()?.parse().ok()?;
            let extrapolation = parts.next()?.parse().ok()?;
            let origin = match parts.next()? {
                "new" => own,
                id => Some(id.parse().ok()?),
            };
            Some((
                cell,
                Lesson {
                    target,
                    extrapolation,
                    origin,
                },
            ))
        })
        .collect()
}

/// Desired fractional tap per hour: the lesson of the hour's cell, else the
/// nearest lesson within reach, else `fallback`.
pub(crate) fn desired_taps(
    forecast: &Forecast,
    table: &BTreeMap<Cell, Lesson>,
    fallback: &[usize],
) -> Vec<f64> {
    (0..forecast.horizon())
        .map(|h| {
            let (l, p) = cell_of(forecast.load[h], forecast.pv[h]);
            table
                .iter()
                .map(|(&(cl, cp), lesson)| ((cl - l).abs().max((cp - p).abs()), (cl, cp), lesson))
                .filter(|(d, _, _)| *d <= REACH)
                .min_by_key(|(d, cell, _)| (*d, *cell))
                .map_or(fallback[h] as f64, |(_, _, lesson)| lesson.target)
        })
        .collect()
}

/// Integer taps closest (in squared distance) to `desired` using at most
/// `max_ops` changes, counting from `initial`. Exact dynamic programme;
/// ties go to the lower tap.
#[allow(clippy::needless_range_loop)]
pub(crate) fn fit_schedule(desired: &[f64], initial: usize, max_ops: usize, max_tap: usize) -> Vec<usize> {
    let n = desired.len();
    let m = max_tap + 1;
    if n == 0 {
        return Vec::new();
    }
    let cost = |h: usize, t: usize| (t as f64 - desired[h]).powi(2);
    // best[o * m + t]: minimal cost of hours 0..=h ending at tap t with o ops.
    let mut best = vec![f64::INFINITY; (max_ops + 1) * m];
    let mut back = vec![vec![usize::MAX; (max_ops + 1) * m]; n];
    for t in 0..m {
        let o = usize::from(t != initial);
        if o <= max_ops {
            best[o * m + t] = cost(0, t);
        }
    }
    for h in 1..n {
        let mut next = vec![f64::INFINITY; (max_ops + 1) * m];
        for o in 0..=max_ops {
            for p in 0..m {
                let base = best[o * m + p];
                if !base.is_finite() {
                    continue;
                }
                for t in 0..m {
                    let o2 = o + usize::from(t != p);
                    if o2 > max_ops {
                        continue;
                    }
                    let c = base + cost(h, t);
                    if c < next[o2 * m + t] {
                        next[o2 * m + t] = c;
                        back[h][o2 * m + t] = o * m + p;
                    }
                }
            }
        }
        best = next;
    }
    let mut state = (0..best.len())
        .filter(|&s| best[s].is_finite())
        .min_by(|&a, &b| best[a].total_cmp(&best[b]).then((a % m).cmp(&(b % m))).then(a.cmp(&b)))
        .expect("staying at the initial tap is always feasible");
    let mut taps = vec![0; n];
    for h in (0..n).rev() {
        taps[h] = state % m;
        if h > 0 {
            state = back[h][state];
        }
    }
    taps
}
