//! Reading and writing the program and profile file formats.
//!
//! Both formats are versioned JSON documents. Unknown fields are
//! rejected everywhere so that typos in hand-edited fixtures fail loudly
//! instead of being silently ignored. Writing is deterministic: maps are
//! ordered and struct fields serialize in declaration order, so the same
//! in-memory value always produces the same bytes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{GoalId, Procedure, ProcKey, Profile, Program, SiteId, SiteStats};

/// The only file format version this build reads and writes.
pub const FORMAT_VERSION: u32 = 1;

/// Errors from reading a program or profile file.
#[derive(Debug, thiserror::Error)]
pub enum ParseError {
    #[error("{0} at line {1}, column {2}")]
    Json(String, usize, usize),
    #[error("unsupported format_version {found} (this build reads version {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("{0}")]
    Invalid(String),
}

impl From<serde_json::Error> for ParseError {
    fn from(e: serde_json::Error) -> Self {
        ParseError::Json(e.to_string(), e.line(), e.column())
    }
}

impl serde::Serialize for ProcKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for ProcKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramFile {
    format_version: u32,
    entry: ProcKey,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    externals: BTreeSet<String>,
    procedures: Vec<Procedure>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SiteRecord {
    site: SiteId,
    count: u64,
    total_cost: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalCountRecord {
    proc: ProcKey,
    goal: GoalId,
    count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    format_version: u32,
    sites: Vec<SiteRecord>,
    #[serde(default)]
    goal_entries: Vec<GoalCountRecord>,
    #[serde(default)]
    cond_failures: Vec<GoalCountRecord>,
}

/// Parses a program document from JSON text.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let file: ProgramFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(ParseError::Version { found: file.format_version });
    }
    Program::new(file.entry, file.procedures, file.externals).map_err(ParseError::Invalid)
}

/// Parses a profile document from JSON text.
pub fn parse_profile(text: &str) -> Result<Profile, ParseError> {
    let file: ProfileFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(ParseError::Version { found: file.format_version });
    }
    let mut profile = Profile::default();
    for r in file.sites {
        let stats = SiteStats { count: r.count, total_cost: r.total_cost };
        if r.total_cost < 0.0 || !r.total_cost.is_finite() {
            return Err(ParseError::Invalid(format!(
                "site {} has invalid total_cost {}",
                r.site, r.total_cost
            )));
        }
        if profile.sites.insert(r.site, stats).is_some() {
            return Err(ParseError::Invalid(format!("duplicate site record {}", r.site)));
        }
    }
    for r in file.goal_entries {
        if profile.goal_entries.insert((r.proc.clone(), r.goal), r.count).is_some() {
            return Err(ParseError::Invalid(format!(
                "duplicate goal entry record {} {}",
                r.proc, r.goal
            )));
        }
    }
    for r in file.cond_failures {
        if profile.cond_failures.insert((r.proc.clone(), r.goal), r.count).is_some() {
            return Err(ParseError::Invalid(format!(
                "duplicate condition failure record {} {}",
                r.proc, r.goal
            )));
        }
    }
    Ok(profile)
}

/// Serializes a program to deterministic, pretty-printed JSON.
pub fn write_program(program: &Program) -> String {
    let file = ProgramFile {
        format_version: FORMAT_VERSION,
        entry: program.entry.clone(),
        externals: program.externals.clone(),
        procedures: program.procedures.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("program serialization");
    text.push('\n');
    text
}

/// Serializes a profile to deterministic, pretty-printed JSON.
pub fn write_profile(profile: &Profile) -> String {
    let file = ProfileFile {
        format_version: FORMAT_VERSION,
        sites: profile
            .sites
            .iter()
            .map(|(&site, s)| SiteRecord { site, count: s.count, total_cost: s.total_cost })
            .collect(),
        goal_entries: profile
            .goal_entries
            .iter()
            .map(|((proc, goal), &count)| GoalCountRecord {
                proc: proc.clone(),
                goal: *goal,
                count,
            })
            .collect(),
        cond_failures: profile
            .cond_failures
            .iter()
            .map(|((proc, goal), &count)| GoalCountRecord {
                proc: proc.clone(),
                goal: *goal,
                count,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("profile serialization");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proc_key_round_trips() {
        let k: ProcKey = "map_foldl/5-0".parse().unwrap();
        assert_eq!(k, ProcKey::new("map_foldl", 5, 0));
        assert_eq!(k.to_string(), "map_foldl/5-0");
        // Names may contain the separator characters themselves.
        let odd: ProcKey = "std/list.map/2-1".parse().unwrap();
        assert_eq!(odd.name, "std/list.map");
        assert_eq!((odd.arity, odd.mode), (2, 1));
        assert!("nonsense".parse::<ProcKey>().is_err());
        assert!("/3-0".parse::<ProcKey>().is_err());
    }

    #[test]
    fn rejects_wrong_version() {
        let text = r#"{"format_version": 99, "entry": "main/0-0", "procedures": []}"#;
        match parse_program(text) {
            Err(ParseError::Version { found: 99 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_fields_with_position() {
        let text = r#"{"format_version": 1, "entry": "main/0-0", "procedures": [],
                       "surprise": true}"#;
        match parse_program(text) {
            Err(ParseError::Json(msg, line, col)) => {
                assert!(msg.contains("surprise"), "message should name the field: {msg}");
                assert!(line >= 1 && col >= 1);
            }
            other => panic!("expected json error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_site_records() {
        let text = r#"{"format_version": 1,
                       "sites": [{"site": 0, "count": 1, "total_cost": 5.0},
                                 {"site": 0, "count": 2, "total_cost": 6.0}]}"#;
        assert!(matches!(parse_profile(text), Err(ParseError::Invalid(_))));
    }
}
