//! Call-graph exploration and the advice file.
//!
//! The driver decides *where* the planner looks: starting from the entry
//! point it walks the call graph depth-first, descending through a call
//! site only when the site's total profiled cost justifies the visit and
//! the parallelism already found along the path has not saturated the
//! machine. Every sequential conjunction of a visited procedure is a
//! candidate.
//!
//! Advice changes costs: once a descendant is parallelized, its callers
//! see a cheaper call, which can demote (or reshape) their own advice.
//! The driver therefore re-runs the analysis with the accumulated
//! savings layered over the profile until the advice set stops changing;
//! savings only ever lower costs, so the loop converges in at most one
//! pass per advice found.
//!
//! The result is written as a versioned advice file — one record per
//! parallelized conjunction, fingerprinted against the program document
//! it was computed from.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::AnalysisConfig;
use crate::ir::{
    write_program, CalleeRef, Cost, GoalId, GoalKind, ParseError, ProcKey, Procedure, Profile,
    Program, FORMAT_VERSION,
};
use crate::planner::{best_parallelisation, call_graph_sccs, Advice, PlannerError};
use crate::timing::{Adjustments, Analysis, CostModel};

/// Errors from exploration or advice-file handling.
#[derive(Debug, thiserror::Error)]
pub enum DriverError {
    #[error("entry point {0} is not defined")]
    UnresolvedEntry(ProcKey),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Product of the speedups of advised conjunctions along a call path —
/// the amount of parallelism found at and above a node. Empty path
/// → 1.0.
pub fn accumulated_parallelism<'a>(path: impl IntoIterator<Item = &'a Advice>) -> f64 {
    path.into_iter().map(|a| a.speedup).product::<f64>().max(1.0)
}

/// Procedures worth analyzing, from a depth-first walk of the call
/// graph. A call site is descended through only when its total profiled
/// cost reaches `call_cost` and the parallelism already found along the
/// path (including advice on the caller itself) stays below
/// `saturation`. The entry procedure is always analyzed.
fn analysis_set(
    program: &Program,
    profile: &Profile,
    config: &AnalysisConfig,
    advised: &BTreeMap<(ProcKey, GoalId), Advice>,
) -> Vec<ProcKey> {
    // Parallelism found *at* each procedure so far.
    let mut own: BTreeMap<&ProcKey, f64> = BTreeMap::new();
    for a in advised.values() {
        *own.entry(&a.proc).or_insert(1.0) *= a.speedup;
    }

    // Cheapest accumulated parallelism a procedure has been reached
    // with; revisits that cannot lower it are skipped, which also cuts
    // recursion cycles (the product never decreases along a path).
    let mut best: BTreeMap<ProcKey, f64> = BTreeMap::new();
    let mut stack: Vec<(ProcKey, f64)> = vec![(program.entry.clone(), 1.0)];
    while let Some((key, acc)) = stack.pop() {
        match best.get(&key) {
            Some(&b) if b <= acc => continue,
            _ => {}
        }
        let Some(proc) = program.proc(&key) else { continue };
        best.insert(key.clone(), acc);
        let below = acc * own.get(&key).copied().unwrap_or(1.0);
        if below >= config.thresholds.saturation {
            continue;
        }
        proc.body.visit(&mut |g| {
            if let GoalKind::Call { callee: CalleeRef::Proc(k), site, .. } = &g.kind {
                let total = profile.site(*site).map(|s| s.total_cost).unwrap_or(0.0);
                if total >= config.thresholds.call_cost {
                    stack.push((k.clone(), below));
                }
            }
        });
    }
    best.into_keys().collect()
}

/// Sequential conjunctions of a body, in goal-id order. Parallel
/// conjunctions are not candidates — they are already the programmer's
/// decision — though conjunctions nested inside them still are.
fn candidate_conjunctions(proc: &Procedure) -> Vec<GoalId> {
    let mut out = Vec::new();
    proc.body.visit(&mut |g| {
        if matches!(g.kind, GoalKind::SeqConj { .. }) {
            out.push(g.id);
        }
    });
    out.sort_unstable();
    out
}

/// One full analysis pass over `procs`, with the savings from `advised`
/// layered over the profile. While analyzing a procedure its own
/// recursion clique is masked: the saving a recursive procedure gets
/// from its own advice is already extrapolated over the whole recursion
/// and must not also discount its recursive call sites.
fn analyze_pass(
    program: &Program,
    profile: &Profile,
    config: &AnalysisConfig,
    procs: &[ProcKey],
    advised: &BTreeMap<(ProcKey, GoalId), Advice>,
    sccs: &BTreeMap<ProcKey, usize>,
) -> Result<BTreeMap<(ProcKey, GoalId), Advice>, DriverError> {
    let mut call_savings: BTreeMap<ProcKey, Cost> = BTreeMap::new();
    for a in advised.values() {
        *call_savings.entry(a.proc.clone()).or_insert(0.0) += a.saving_per_entry;
    }
    let conj_overrides: BTreeMap<(ProcKey, GoalId), Cost> = advised
        .values()
        .map(|a| ((a.proc.clone(), a.conjunction), a.par_time))
        .collect();

    let results: Vec<Result<Vec<Advice>, PlannerError>> = procs
        .par_iter()
        .map(|key| {
            let proc = program.proc(key).expect("analysis set holds defined procedures");
            let my_scc = sccs[key];
            let adjust = Adjustments {
                call_savings: call_savings.clone(),
                conj_overrides: conj_overrides.clone(),
                masked: sccs
                    .iter()
                    .filter(|&(_, &s)| s == my_scc)
                    .map(|(k, _)| k.clone())
                    .collect(),
            };
            let analysis = Analysis::new(program, CostModel::adjusted(profile, &adjust));
            let mut found = Vec::new();
            for conj in candidate_conjunctions(proc) {
                if let Some(a) = best_parallelisation(&analysis, proc, conj, config)? {
                    found.push(a);
                }
            }
            Ok(found)
        })
        .collect();

    let mut out = BTreeMap::new();
    for r in results {
        for a in r? {
            out.insert((a.proc.clone(), a.conjunction), a);
        }
    }
    Ok(out)
}

/// Runs the whole pipeline: explores the call graph, analyzes every
/// candidate conjunction, and revisits with updated costs until the
/// advice set is stable. The result is sorted by (procedure, goal id)
/// and is a pure function of its inputs.
pub fn explore_call_tree(
    program: &Program,
    profile: &Profile,
    config: &AnalysisConfig,
) -> Result<Vec<Advice>, DriverError> {
    if program.proc(&program.entry).is_none() {
        return Err(DriverError::UnresolvedEntry(program.entry.clone()));
    }
    let sccs = call_graph_sccs(program);

    let procs = analysis_set(program, profile, config, &BTreeMap::new());
    let mut advised = analyze_pass(program, profile, config, &procs, &BTreeMap::new(), &sccs)?;

    // Each revisit folds the current savings back in; advice can shrink,
    // move, or disappear, but costs only decrease, so one pass per
    // advice found bounds the loop.
    let max_revisits = advised.len();
    for _ in 0..max_revisits {
        let procs = analysis_set(program, profile, config, &advised);
        let next = analyze_pass(program, profile, config, &procs, &advised, &sccs)?;
        if next == advised {
            break;
        }
        advised = next;
    }
    Ok(advised.into_values().collect())
}

/// One record of the advice file: what a compiler needs to transform one
/// conjunction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdviceRecord {
    pub procedure: ProcKey,
    pub goal_id: GoalId,
    /// Parallel groups as half-open conjunct index ranges; contiguous,
    /// at least two.
    pub groups: Vec<(usize, usize)>,
    pub predicted_seq: Cost,
    pub predicted_par: Cost,
    pub speedup: f64,
    /// Whether the runtime must throttle spawns (the region spawns its
    /// own recursion).
    pub throttle: bool,
}

impl AdviceRecord {
    /// The file form of one piece of advice.
    pub fn from_advice(a: &Advice) -> AdviceRecord {
        AdviceRecord {
            procedure: a.proc.clone(),
            goal_id: a.conjunction,
            groups: a.groups.clone(),
            predicted_seq: a.seq_time,
            predicted_par: a.par_time,
            speedup: a.speedup,
            throttle: a.throttle.is_some(),
        }
    }
}

/// The advice file: versioned, fingerprinted against the program it was
/// computed from, records sorted by (procedure, goal id).
#[derive(Clone, Debug, PartialEq)]
pub struct AdviceFile {
    pub format_version: u32,
    /// Hex SHA-256 of the program document.
    pub fingerprint: String,
    pub records: Vec<AdviceRecord>,
}

/// Hex SHA-256 of the canonical serialized program, for checking that an
/// advice file matches the program it is applied to.
pub fn program_fingerprint(program: &Program) -> String {
    let mut hasher = Sha256::new();
    hasher.update(write_program(program).as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct AdviceFileDoc<'a> {
    format_version: u32,
    fingerprint: &'a str,
    records: &'a [AdviceRecord],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdviceFileRaw {
    format_version: u32,
    fingerprint: String,
    // Parsed loosely first so malformed records can be reported by index.
    records: Vec<serde_json::Value>,
}

impl AdviceFile {
    pub fn new(program: &Program, advices: &[Advice]) -> AdviceFile {
        let mut records: Vec<AdviceRecord> = advices.iter().map(AdviceRecord::from_advice).collect();
        records.sort_by(|a, b| (&a.procedure, a.goal_id).cmp(&(&b.procedure, b.goal_id)));
        AdviceFile {
            format_version: FORMAT_VERSION,
            fingerprint: program_fingerprint(program),
            records,
        }
    }

    /// Deterministic textual form: same file, same bytes.
    pub fn to_text(&self) -> String {
        let doc = AdviceFileDoc {
            format_version: self.format_version,
            fingerprint: &self.fingerprint,
            records: &self.records,
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("advice serialization");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<AdviceFile, ParseError> {
        let raw: AdviceFileRaw = serde_json::from_str(text)?;
        if raw.format_version != FORMAT_VERSION {
            return Err(ParseError::Version { found: raw.format_version });
        }
        let mut records = Vec::with_capacity(raw.records.len());
        let mut seen: BTreeSet<(ProcKey, GoalId)> = BTreeSet::new();
        for (i, value) in raw.records.into_iter().enumerate() {
            let rec: AdviceRecord = serde_json::from_value(value)
                .map_err(|e| ParseError::Invalid(format!("advice record {i}: {e}")))?;
            let name = format!("advice record {i} ({} {})", rec.procedure, rec.goal_id);
            if rec.groups.len() < 2 {
                return Err(ParseError::Invalid(format!("{name}: fewer than two groups")));
            }
            for pair in rec.groups.windows(2) {
                if pair[0].1 != pair[1].0 {
                    return Err(ParseError::Invalid(format!("{name}: groups are not contiguous")));
                }
            }
            if rec.groups.iter().any(|&(a, b)| a >= b) {
                return Err(ParseError::Invalid(format!("{name}: empty group")));
            }
            if !seen.insert((rec.procedure.clone(), rec.goal_id)) {
                return Err(ParseError::Invalid(format!("{name}: duplicate conjunction")));
            }
            records.push(rec);
        }
        Ok(AdviceFile { format_version: raw.format_version, fingerprint: raw.fingerprint, records })
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DriverError {
    DriverError::Io { path: path.display().to_string(), source }
}

/// Writes the advice for `program` to `path`.
pub fn emit_advice_file(
    program: &Program,
    advices: &[Advice],
    path: &Path,
) -> Result<(), DriverError> {
    let file = AdviceFile::new(program, advices);
    std::fs::write(path, file.to_text()).map_err(|e| io_err(path, e))
}

/// Reads an advice file back, verifying version and record shape.
pub fn read_advice_file(path: &Path) -> Result<AdviceFile, DriverError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(AdviceFile::from_text(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AnalysisConfig;
    use crate::fixtures;
    use crate::ir::SiteId;
    use crate::planner::RecursionClass;

    fn advise(f: &fixtures::Fixture, config: &AnalysisConfig) -> Vec<Advice> {
        explore_call_tree(&f.program, &f.profile, config).unwrap()
    }

    #[test]
    fn map_foldl_yields_exactly_the_recursive_clause_advice() {
        let f = fixtures::map_foldl();
        let advices = advise(&f, &AnalysisConfig::default());
        assert_eq!(advices.len(), 1);
        let a = &advices[0];
        assert_eq!(a.proc, ProcKey::new("map_foldl", 4, 0));
        assert_eq!(a.conjunction, f.label("map_foldl.cons_arm"));
        assert_eq!(a.groups, vec![(1, 3), (3, 4)]);
        assert_eq!(a.rendering, "(c2, c3) & c4");
        assert_eq!(a.seq_time, 3_250_107.0);
        assert_eq!(a.par_time, 1_625_080.0);
        assert_eq!(a.recursion, RecursionClass::Single);
        assert_eq!(a.throttle, Some(32));
    }

    #[test]
    fn revisiting_halves_the_parents_estimate() {
        let f = fixtures::two_level();
        let advices = advise(&f, &AnalysisConfig::default());
        assert_eq!(advices.len(), 2);
        let child = advices.iter().find(|a| a.proc.name == "child").unwrap();
        let parent = advices.iter().find(|a| a.proc.name == "parent").unwrap();
        assert_eq!(child.seq_time, 1_000_000.0);
        assert_eq!(child.par_time, 500_024.0);
        // Without revisiting the parent would claim ~2×; with the child
        // already parallel, one branch shrinks and the speedup drops.
        assert_eq!(parent.seq_time, 1_500_024.0);
        assert_eq!(parent.par_time, 1_000_024.0);
        assert!((parent.speedup - 1_500_024.0 / 1_000_024.0).abs() < 1e-12);
        assert!(parent.speedup < 1.51);
    }

    #[test]
    fn saturation_gate_stops_descending() {
        let f = fixtures::two_level();
        let mut config = AnalysisConfig::default();
        config.thresholds.saturation = 1.0;
        let advices = advise(&f, &config);
        // The entry procedure is still analyzed, but nothing below it is,
        // so the child stays sequential and the parent claims the full 2×.
        assert_eq!(advices.len(), 1);
        assert_eq!(advices[0].proc.name, "parent");
        assert!((advices[0].speedup - 2_000_000.0 / 1_000_024.0).abs() < 1e-12);
    }

    #[test]
    fn call_cost_gate_stops_descending() {
        let f = fixtures::two_level();
        let mut config = AnalysisConfig::default();
        config.thresholds.call_cost = 2_000_000.0;
        let advices = advise(&f, &config);
        assert_eq!(advices.len(), 1);
        assert_eq!(advices[0].proc.name, "parent");
    }

    #[test]
    fn fully_gated_program_yields_nothing() {
        let f = fixtures::two_level();
        let mut config = AnalysisConfig::default();
        config.thresholds.expensive_goal = 1e12;
        assert!(advise(&f, &config).is_empty());
    }

    #[test]
    fn irregular_recursion_is_left_alone() {
        let f = fixtures::irregular();
        assert!(advise(&f, &AnalysisConfig::default()).is_empty());
    }

    #[test]
    fn existing_parallel_conjunctions_are_respected() {
        use crate::fixtures::{G, ProcBuilder, ProfileBuilder};
        let b = ProcBuilder::new("main");
        let built = b.build(G::Par(vec![
            G::Call(CalleeRef::External("e1".into()), vec![], vec![], SiteId(1)),
            G::Call(CalleeRef::External("e2".into()), vec![], vec![], SiteId(2)),
        ]));
        let key = built.proc.key.clone();
        let program = Program::new(
            key,
            vec![built.proc],
            ["e1", "e2"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        let mut prof = ProfileBuilder::new();
        prof.site(SiteId(1), 1, 50_000.0).site(SiteId(2), 1, 50_000.0);
        let advices =
            explore_call_tree(&program, &prof.build(), &AnalysisConfig::default()).unwrap();
        assert!(advices.is_empty());
    }

    #[test]
    fn missing_entry_point_is_an_error() {
        let f = fixtures::independent_pair();
        let mut program = f.program.clone();
        program.entry = ProcKey::new("nowhere", 0, 0);
        match explore_call_tree(&program, &f.profile, &AnalysisConfig::default()) {
            Err(DriverError::UnresolvedEntry(k)) => assert_eq!(k.name, "nowhere"),
            other => panic!("expected unresolved entry, got {other:?}"),
        }
    }

    #[test]
    fn accumulated_parallelism_is_a_product() {
        assert_eq!(accumulated_parallelism(Vec::<&Advice>::new()), 1.0);
        let f = fixtures::independent_pair();
        let mut advices = advise(&f, &AnalysisConfig::default());
        assert_eq!(advices.len(), 1);
        advices[0].speedup = 2.0;
        let doubled: Vec<&Advice> = vec![&advices[0], &advices[0]];
        assert_eq!(accumulated_parallelism(doubled), 4.0);
    }

    #[test]
    fn advice_file_round_trips_and_is_stable() {
        let f = fixtures::map_foldl();
        let advices = advise(&f, &AnalysisConfig::default());
        let file = AdviceFile::new(&f.program, &advices);
        let text = file.to_text();
        assert_eq!(AdviceFile::from_text(&text).unwrap(), file);
        // Re-running the whole pipeline reproduces the bytes.
        let again = AdviceFile::new(&f.program, &advise(&f, &AnalysisConfig::default()));
        assert_eq!(again.to_text(), text);
        assert_eq!(file.records.len(), 1);
        assert_eq!(file.records[0].groups, vec![(1, 3), (3, 4)]);
        assert!(file.records[0].throttle);
    }

    #[test]
    fn corrupt_advice_records_are_named() {
        let text = r#"{
            "format_version": 1,
            "fingerprint": "00",
            "records": [ { "procedure": "p/1-0" } ]
        }"#;
        match AdviceFile::from_text(text) {
            Err(ParseError::Invalid(msg)) => {
                assert!(msg.contains("advice record 0"), "message was: {msg}");
            }
            other => panic!("expected invalid-record error, got {other:?}"),
        }
        let gap = r#"{
            "format_version": 1,
            "fingerprint": "00",
            "records": [ {
                "procedure": "p/1-0", "goal_id": 3,
                "groups": [[0, 1], [2, 3]],
                "predicted_seq": 10.0, "predicted_par": 6.0,
                "speedup": 1.67, "throttle": false
            } ]
        }"#;
        match AdviceFile::from_text(gap) {
            Err(ParseError::Invalid(msg)) => {
                assert!(msg.contains("not contiguous") && msg.contains("p/1-0"), "{msg}");
            }
            other => panic!("expected contiguity error, got {other:?}"),
        }
    }

    #[test]
    fn empty_advice_file_is_valid() {
        let f = fixtures::irregular();
        let file = AdviceFile::new(&f.program, &[]);
        let back = AdviceFile::from_text(&file.to_text()).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back.fingerprint, program_fingerprint(&f.program));
    }
}
