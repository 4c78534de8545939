//! Line-delimited JSON run logs.
//!
//! Line 1 is the run header, then one event per line in time order, then a
//! footer line `{"footer": {...}}`. A log without a matching footer is
//! truncated.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::atomic_write;
use crate::simcore::{RunFooter, RunHeader, RunLog, SimEvent};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FooterLine {
    footer: RunFooter,
}

pub fn to_jsonl(log: &RunLog) -> String {
    let mut out = String::new();
    let mut line = |v: String| {
        out.push_str(&v);
        out.push('\n');
    };
    line(serde_json::to_string(&log.header).expect("header serializes"));
    for e in &log.events {
        line(serde_json::to_string(e).expect("event serializes"));
    }
    if let Some(footer) = &log.footer {
        line(
            serde_json::to_string(&FooterLine {
                footer: footer.clone(),
            })
            .expect("footer serializes"),
        );
    }
    out
}

/// Parse a log. Missing or inconsistent footers are kept as-is; use
/// [`RunLog::is_complete`] or [`require_complete`] to reject them.
pub fn parse_jsonl(text: &str) -> Result<RunLog> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty run log"))?;
    let header: RunHeader =
        serde_json::from_str(first).map_err(|e| Error::parse(1, e.to_string()))?;
    let mut events = Vec::new();
    let mut footer = None;
    let mut last_time = f64::NEG_INFINITY;
    for (i, l) in lines {
        let lineno = i + 1;
        if footer.is_some() {
            return Err(Error::parse(lineno, "record after footer"));
        }
        if l.trim_start().starts_with("{\"footer\"") {
            let f: FooterLine =
                serde_json::from_str(l).map_err(|e| Error::parse(lineno, e.to_string()))?;
            footer = Some(f.footer);
            continue;
        }
        let ev: SimEvent =
            serde_json::from_str(l).map_err(|e| Error::parse(lineno, e.to_string()))?;
        if ev.time < last_time {
            return Err(Error::parse(lineno, "events out of time order"));
        }
        last_time = ev.time;
        events.push(ev);
    }
    Ok(RunLog {
        header,
        events,
        footer,
    })
}

pub fn require_complete(log: &RunLog) -> Result<()> {
    if log.is_complete() {
        Ok(())
    } else {
        Err(Error::TruncatedLog(format!(
            "run {} has {} events and {}",
            log.header.scenario_id,
            log.events.len(),
            match &log.footer {
                None => "no footer".to_string(),
                Some(f) => format!("a footer claiming {}", f.event_count),
            }
        )))
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<RunLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

pub fn write_log(path: impl AsRef<Path>, log: &RunLog) -> Result<()> {
    atomic_write(path, to_jsonl(log).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::NullAgent;
    use crate::harness::generator::{generate_scenario, Pattern, PatternSpec};
    use crate::simcore::{run_scenario, SimConfig};

    fn sample_log() -> RunLog {
        let spec = PatternSpec {
            n_aircraft: 2,
            ..PatternSpec::new(Pattern::Crossing, 5)
        };
        let s = generate_scenario(&spec).unwrap().to_scenario().unwrap();
        run_scenario(&s, &mut NullAgent, &SimConfig::default(), 5).unwrap()
    }

    #[test]
    fn round_trip() {
        let log = sample_log();
        let text = to_jsonl(&log);
        let back = parse_jsonl(&text).unwrap();
        assert_eq!(back, log);
        assert_eq!(to_jsonl(&back), text);
        assert!(back.is_complete());
    }

    #[test]
    fn truncation_is_detected() {
        let text = to_jsonl(&sample_log());
        let cut: Vec<&str> = text.lines().collect();
        let truncated = cut[..cut.len() - 5].join("\n");
        let log = parse_jsonl(&truncated).unwrap();
        assert!(matches!(
            require_complete(&log),
            Err(Error::TruncatedLog(_))
        ));
    }

    #[test]
    fn corrupt_line_reports_its_number() {
        let text = to_jsonl(&sample_log());
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = "{not json".into();
        match parse_jsonl(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }
}
