use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use super::episode::RunRecord;
use super::training::{AblationRow, CurvePoint};

pub fn write_records(path: &Path, records: &[RunRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_records(path: &Path) -> io::Result<Vec<RunRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        records.push(r);
    }
    Ok(records)
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("seed,iteration,reward,deviation,violation_rate\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            p.seed, p.iteration, p.reward, p.deviation, p.violation_rate
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,reward,deviation,violation_rate,episodes\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.variant, r.reward, r.deviation, r.violation_rate, r.episodes
        );
    }
    s
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<8} {:>10} {:>10} {:>14}\n", "variant", "reward", "deviation", "violation_rate");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<8} {:>10.4} {:>10.6} {:>13.2}%",
            r.variant.to_string(),
            r.reward,
            r.deviation,
            100.0 * r.violation_rate
        );
    }
    s
}
