//! Subcommand implementations.
//!
//! Every command distinguishes hard errors (bad flags, unreadable or
//! unparsable files — bubbled up as [`anyhow::Error`], exit 2) from
//! analysis-level findings (validation diagnostics, conjunctions that
//! cannot be analyzed, failed oracle checks — reported on standard error
//! and returned as [`Outcome::Findings`], exit 1).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use autopar::config::{parse_config, AnalysisConfig, SearchParams};
use autopar::driver::{explore_call_tree, AdviceFile, AdviceRecord, DriverError};
use autopar::fixtures::{self, Fixture};
use autopar::ir::{
    self, parse_profile, parse_program, write_profile, write_program, GoalId, GoalKind, ProcKey,
    Procedure, Profile, Program,
};
use autopar::oracle::{
    brute_force_best, compose_groups, enumerate_partitions, simulate_execution, Engines,
};
use autopar::overlap::{find_par_time, find_par_time_simple, ParConjunct};
use autopar::planner::{
    best_parallelisation, find_best_partition, region_time, render_groups, AbstractSource,
    IrSource, PlannerError,
};
use autopar::timing::{Analysis, CostModel, UseKind};

use crate::report::{self, fmt_cost};
use crate::{
    AdviseArgs, Cli, Command, ConfigArgs, EngineChoice, ExplainArgs, Format, GenFixtureArgs,
    InputArgs, SimulateArgs, Template, ValidateArgs,
};

pub(crate) enum Outcome {
    Clean,
    Findings,
}

pub(crate) fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Advise(a) => advise(a),
        Command::Explain(a) => explain(a),
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
        Command::GenFixture(a) => gen_fixture(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_inputs(io: &InputArgs) -> Result<(Program, Profile)> {
    let program = parse_program(&read_text(&io.program)?)
        .with_context(|| format!("parsing program {}", io.program.display()))?;
    let profile = parse_profile(&read_text(&io.profile)?)
        .with_context(|| format!("parsing profile {}", io.profile.display()))?;
    Ok((program, profile))
}

/// Defaults, overlaid by the config file, overlaid by flags.
fn build_config(cfg: &ConfigArgs, engines: Option<u32>) -> Result<AnalysisConfig> {
    let mut config = match &cfg.config {
        Some(path) => parse_config(&read_text(path)?)
            .with_context(|| format!("parsing config {}", path.display()))?,
        None => AnalysisConfig::default(),
    };
    if let Some(path) = &cfg.overheads_file {
        config.overheads = serde_json::from_str(&read_text(path)?)
            .with_context(|| format!("parsing overheads {}", path.display()))?;
    }
    if let Some(x) = cfg.expensive_threshold {
        config.thresholds.expensive_goal = x;
    }
    if let Some(x) = cfg.call_cost_threshold {
        config.thresholds.call_cost = x;
    }
    if let Some(x) = cfg.speedup_threshold {
        config.thresholds.speedup = x;
    }
    if let Some(x) = cfg.eval_budget {
        config.search.prefer_linear_evals = x;
    }
    if let Some(x) = engines {
        config.engines = x;
    }
    Ok(config)
}

/// Runs the structural checks; diagnostics go to standard error.
fn inputs_have_problems(program: &Program, profile: &Profile) -> bool {
    let diags = ir::validate(program, profile);
    for d in &diags {
        eprintln!("{d}");
    }
    !diags.is_empty()
}

fn parse_conjunction(s: &str) -> Result<(ProcKey, GoalId)> {
    let Some((proc, goal)) = s.rsplit_once(':') else {
        bail!("--conjunction must look like <name>/<arity>-<mode>:<goal-id>, got {s:?}");
    };
    let key: ProcKey = proc.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let digits = goal.strip_prefix('g').unwrap_or(goal);
    let id: u32 = digits
        .parse()
        .with_context(|| format!("goal id must be an integer, got {goal:?}"))?;
    Ok((key, GoalId(id)))
}

/// "1,2|3" → half-open 0-based ranges. Each group must be a run of
/// consecutive 1-based conjunct indices.
fn parse_partition(s: &str) -> Result<Vec<(usize, usize)>> {
    let mut groups = Vec::new();
    for part in s.split('|') {
        let mut idxs = Vec::new();
        for tok in part.split(',') {
            let i: usize = tok
                .trim()
                .parse()
                .with_context(|| format!("bad conjunct index {tok:?} in --partition"))?;
            if i == 0 {
                bail!("conjunct indices in --partition are 1-based");
            }
            idxs.push(i - 1);
        }
        for w in idxs.windows(2) {
            if w[1] != w[0] + 1 {
                bail!("group {part:?} is not a run of consecutive conjuncts");
            }
        }
        groups.push((idxs[0], idxs[idxs.len() - 1] + 1));
    }
    Ok(groups)
}

/// Per-conjunct cost and shared-variable events, as the predictor and
/// the simulator consume them.
fn conjunct_timelines(
    analysis: &Analysis<'_>,
    key: &ProcKey,
    conjuncts: &[autopar::ir::Goal],
) -> Result<Vec<ParConjunct>, PlannerError> {
    let events = analysis.shared_var_timeline(key, conjuncts)?;
    conjuncts
        .iter()
        .zip(events)
        .map(|(c, events)| Ok(ParConjunct { cost: analysis.goal_cost(c, key)?, events }))
        .collect()
}

// ---------------------------------------------------------------- advise

fn advise(a: AdviseArgs) -> Result<Outcome> {
    if let Some(jobs) = a.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("initializing the worker pool")?;
    }
    let config = build_config(&a.cfg, a.engines)?;
    let (program, profile) = load_inputs(&a.inputs)?;
    if inputs_have_problems(&program, &profile) {
        return Ok(Outcome::Findings);
    }
    let advices = match explore_call_tree(&program, &profile, &config) {
        Ok(advices) => advices,
        Err(e @ (DriverError::UnresolvedEntry(_) | DriverError::Planner(_))) => {
            eprintln!("{e}");
            return Ok(Outcome::Findings);
        }
        Err(e) => return Err(e.into()),
    };
    let file = AdviceFile::new(&program, &advices);
    fs::write(&a.out, file.to_text())
        .with_context(|| format!("writing {}", a.out.display()))?;

    match a.format {
        Format::Text => {
            for advice in &advices {
                println!("{}", report::advice_line(advice));
            }
            let noun = if file.records.len() == 1 { "record" } else { "records" };
            println!("wrote {} advice {} to {}", file.records.len(), noun, a.out.display());
        }
        Format::Json => report::print_json(&json!({
            "command": "advise",
            "out": a.out.display().to_string(),
            "fingerprint": file.fingerprint,
            "records": file.records,
        })),
    }
    Ok(Outcome::Clean)
}

// ---------------------------------------------------------------- explain

/// Partitions listed exhaustively when the middle has at most this many
/// units; past that only the best set is shown.
const MAX_LISTED_UNITS: usize = 5;

fn explain(a: ExplainArgs) -> Result<Outcome> {
    let config = build_config(&a.cfg, a.engines)?;
    let (program, profile) = load_inputs(&a.inputs)?;
    if inputs_have_problems(&program, &profile) {
        return Ok(Outcome::Findings);
    }
    let (key, goal_id) = parse_conjunction(&a.conjunction)?;
    let Some(proc) = program.proc(&key) else {
        eprintln!("no procedure {key} in the program");
        return Ok(Outcome::Findings);
    };
    let Some(goal) = proc.goal(goal_id) else {
        eprintln!("{key} has no goal {goal_id}");
        return Ok(Outcome::Findings);
    };
    let GoalKind::SeqConj { conjuncts } = &goal.kind else {
        eprintln!("{key} {goal_id} is not a sequential conjunction");
        return Ok(Outcome::Findings);
    };

    let analysis = Analysis::new(&program, CostModel::plain(&profile));
    let built = build_explanation(&analysis, proc, goal_id, conjuncts, &config);
    let exp = match built {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("{e}");
            return Ok(Outcome::Findings);
        }
    };

    match a.format {
        Format::Text => print_explanation_text(&key, goal_id, proc, conjuncts, &exp),
        Format::Json => report::print_json(&explanation_json(&key, goal_id, proc, &exp)),
    }
    Ok(Outcome::Clean)
}

struct Explanation {
    timelines: Vec<ParConjunct>,
    /// Conjunct span of the searchable middle, when there is one.
    middle: Option<(usize, usize)>,
    /// Candidate partitions in conjunct space with predicted times.
    partitions: Vec<(Vec<(usize, usize)>, f64)>,
    /// Whether `partitions` is every partition of the middle or only the
    /// best-scoring set.
    exhaustive: bool,
    advice: Option<autopar::planner::Advice>,
}

fn build_explanation(
    analysis: &Analysis<'_>,
    proc: &Procedure,
    goal_id: GoalId,
    conjuncts: &[autopar::ir::Goal],
    config: &AnalysisConfig,
) -> Result<Explanation, PlannerError> {
    let timelines = conjunct_timelines(analysis, &proc.key, conjuncts)?;
    let source = IrSource::new(analysis, &proc.key, conjuncts, config.thresholds.expensive_goal)?;

    let mut middle = None;
    let mut partitions = Vec::new();
    let mut exhaustive = true;
    if let Some(src) = &source {
        let (ulo, uhi) = src.middle;
        middle = Some(src.conjunct_span(ulo, uhi));
        let units = uhi - ulo;
        if units <= MAX_LISTED_UNITS {
            for p in enumerate_partitions(units) {
                let shifted: Vec<(usize, usize)> =
                    p.iter().map(|&(x, y)| (x + ulo, y + ulo)).collect();
                let t = region_time(src, &shifted, &config.overheads)?;
                let spans: Vec<(usize, usize)> =
                    shifted.iter().map(|&(x, y)| src.conjunct_span(x, y)).collect();
                partitions.push((spans, t));
            }
        } else {
            exhaustive = false;
            let found = find_best_partition(
                src,
                src.middle,
                &config.overheads,
                &SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: false },
            )?;
            for p in &found.best {
                let spans: Vec<(usize, usize)> =
                    p.iter().map(|&(x, y)| src.conjunct_span(x, y)).collect();
                partitions.push((spans, found.best_time));
            }
        }
    }
    let advice = best_parallelisation(analysis, proc, goal_id, config)?;
    Ok(Explanation { timelines, middle, partitions, exhaustive, advice })
}

fn events_text(proc: &Procedure, events: &[autopar::timing::VarUse]) -> String {
    let parts: Vec<String> = events
        .iter()
        .map(|ev| {
            let kind = match ev.kind {
                UseKind::Produce => "produce",
                UseKind::Consume => "consume",
            };
            format!("{} {} @ {}", kind, proc.var_name(ev.var), fmt_cost(ev.time))
        })
        .collect();
    parts.join(", ")
}

fn print_explanation_text(
    key: &ProcKey,
    goal_id: GoalId,
    proc: &Procedure,
    conjuncts: &[autopar::ir::Goal],
    exp: &Explanation,
) {
    println!("conjunction {key} {goal_id} ({} conjuncts)", conjuncts.len());
    println!("timeline:");
    for (i, t) in exp.timelines.iter().enumerate() {
        let events = events_text(proc, &t.events);
        if events.is_empty() {
            println!("  c{}  cost {}", i + 1, fmt_cost(t.cost));
        } else {
            println!("  c{}  cost {}  [{}]", i + 1, fmt_cost(t.cost), events);
        }
    }
    match exp.middle {
        None => println!("searchable middle: none (fewer than two expensive conjuncts)"),
        Some((lo, hi)) => {
            println!("searchable middle: c{}..c{}", lo + 1, hi);
            let best = exp
                .partitions
                .iter()
                .map(|&(_, t)| t)
                .fold(f64::INFINITY, f64::min);
            let label = if exp.exhaustive { "partitions" } else { "best partitions found" };
            println!("{label} (predicted time):");
            for (groups, t) in &exp.partitions {
                let marker = if *t == best { "  <- best" } else { "" };
                println!("  {:<24} {}{}", render_groups(groups), fmt_cost(*t), marker);
            }
        }
    }
    match &exp.advice {
        Some(a) => println!("advice: {}", report::advice_line(a)),
        None => println!("advice: none"),
    }
}

fn explanation_json(
    key: &ProcKey,
    goal_id: GoalId,
    proc: &Procedure,
    exp: &Explanation,
) -> serde_json::Value {
    let conjuncts: Vec<_> = exp
        .timelines
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let events: Vec<_> = t
                .events
                .iter()
                .map(|ev| {
                    json!({
                        "kind": match ev.kind {
                            UseKind::Produce => "produce",
                            UseKind::Consume => "consume",
                        },
                        "var": proc.var_name(ev.var),
                        "time": ev.time,
                    })
                })
                .collect();
            json!({ "index": i + 1, "cost": t.cost, "events": events })
        })
        .collect();
    let partitions: Vec<_> = exp
        .partitions
        .iter()
        .map(|(groups, t)| {
            json!({ "groups": groups, "rendering": render_groups(groups), "time": t })
        })
        .collect();
    json!({
        "command": "explain",
        "procedure": key.to_string(),
        "goal_id": goal_id.0,
        "conjuncts": conjuncts,
        "middle": exp.middle,
        "exhaustive": exp.exhaustive,
        "partitions": partitions,
        "advice": exp.advice.as_ref().map(AdviceRecord::from_advice),
    })
}

// --------------------------------------------------------------- simulate

fn simulate(a: SimulateArgs) -> Result<Outcome> {
    let config = build_config(&a.cfg, None)?;
    let (program, profile) = load_inputs(&a.inputs)?;
    if inputs_have_problems(&program, &profile) {
        return Ok(Outcome::Findings);
    }
    let (key, goal_id) = parse_conjunction(&a.conjunction)?;
    let groups = parse_partition(&a.partition)?;
    let Some(proc) = program.proc(&key) else {
        eprintln!("no procedure {key} in the program");
        return Ok(Outcome::Findings);
    };
    let Some(goal) = proc.goal(goal_id) else {
        eprintln!("{key} has no goal {goal_id}");
        return Ok(Outcome::Findings);
    };
    let GoalKind::SeqConj { conjuncts } = &goal.kind else {
        eprintln!("{key} {goal_id} is not a sequential conjunction");
        return Ok(Outcome::Findings);
    };

    let analysis = Analysis::new(&program, CostModel::plain(&profile));
    let timelines = match conjunct_timelines(&analysis, &key, conjuncts) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return Ok(Outcome::Findings);
        }
    };
    let composed = match compose_groups(&timelines, &groups) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return Ok(Outcome::Findings);
        }
    };
    let engines = match a.engines {
        EngineChoice::Unlimited => Engines::Unlimited,
        EngineChoice::Fixed(n) => Engines::Fixed(n),
    };
    let result = match simulate_execution(&composed, &config.overheads, engines) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return Ok(Outcome::Findings);
        }
    };

    match a.format {
        Format::Text => {
            let engines_text = match a.engines {
                EngineChoice::Unlimited => "unlimited engines".to_string(),
                EngineChoice::Fixed(1) => "1 engine".to_string(),
                EngineChoice::Fixed(n) => format!("{n} engines"),
            };
            println!("partition {} of {key} {goal_id} on {engines_text}", render_groups(&groups));
            let finishes: Vec<String> =
                result.conjunct_finish.iter().map(|&t| fmt_cost(t)).collect();
            println!("group finishes: {}", finishes.join(", "));
            println!("makespan {}", fmt_cost(result.makespan));
            if a.trace {
                println!("trace:");
                for line in &result.trace {
                    println!("  {line}");
                }
            }
        }
        Format::Json => {
            let mut doc = json!({
                "command": "simulate",
                "procedure": key.to_string(),
                "goal_id": goal_id.0,
                "partition": groups,
                "rendering": render_groups(&groups),
                "engines": match a.engines {
                    EngineChoice::Unlimited => json!("unlimited"),
                    EngineChoice::Fixed(n) => json!(n),
                },
                "group_finish": result.conjunct_finish,
                "makespan": result.makespan,
            });
            if a.trace {
                doc["trace"] = json!(result.trace);
            }
            report::print_json(&doc);
        }
    }
    Ok(Outcome::Clean)
}

// --------------------------------------------------------------- validate

fn validate(a: ValidateArgs) -> Result<Outcome> {
    match (&a.program, &a.profile) {
        (Some(program), Some(profile)) => validate_files(program, profile, a.format),
        _ => oracle_suite(a.seed, a.format),
    }
}

fn validate_files(program_path: &Path, profile_path: &Path, format: Format) -> Result<Outcome> {
    let program = parse_program(&read_text(program_path)?)
        .with_context(|| format!("parsing program {}", program_path.display()))?;
    let profile = parse_profile(&read_text(profile_path)?)
        .with_context(|| format!("parsing profile {}", profile_path.display()))?;
    let diags = ir::validate(&program, &profile);
    for d in &diags {
        eprintln!("{d}");
    }
    match format {
        Format::Text => {
            println!(
                "program: {} procedures, {} externals, entry {}",
                program.procedures.len(),
                program.externals.len(),
                program.entry
            );
            println!(
                "profile: {} sites, {} goal entries",
                profile.sites.len(),
                profile.goal_entries.len()
            );
            if diags.is_empty() {
                println!("program and profile are valid");
            } else {
                println!("{} problems found", diags.len());
            }
        }
        Format::Json => report::print_json(&json!({
            "command": "validate",
            "mode": "files",
            "passed": diags.is_empty(),
            "diagnostics": diags.iter().map(|d| d.to_string()).collect::<Vec<_>>(),
            "checks": [],
        })),
    }
    Ok(if diags.is_empty() { Outcome::Clean } else { Outcome::Findings })
}

struct Check {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn check(name: &'static str, run: impl FnOnce() -> Result<String, String>) -> Check {
    match run() {
        Ok(detail) => Check { name, ok: true, detail },
        Err(detail) => Check { name, ok: false, detail },
    }
}

fn oracle_suite(seed_base: u64, format: Format) -> Result<Outcome> {
    let checks = oracle_checks(seed_base);
    let passed = checks.iter().all(|c| c.ok);
    match format {
        Format::Text => {
            for c in &checks {
                if c.ok {
                    println!("check {}: ok ({})", c.name, c.detail);
                } else {
                    println!("check {}: FAILED", c.name);
                    eprintln!("check {} failed: {}", c.name, c.detail);
                }
            }
            if passed {
                println!("all oracle checks passed");
            }
        }
        Format::Json => {
            if !passed {
                for c in checks.iter().filter(|c| !c.ok) {
                    eprintln!("check {} failed: {}", c.name, c.detail);
                }
            }
            report::print_json(&json!({
                "command": "validate",
                "mode": "oracle",
                "passed": passed,
                "diagnostics": [],
                "checks": checks
                    .iter()
                    .map(|c| json!({ "name": c.name, "ok": c.ok, "detail": c.detail }))
                    .collect::<Vec<_>>(),
            }));
        }
    }
    Ok(if passed { Outcome::Clean } else { Outcome::Findings })
}

/// Timelines of the entry procedure's top-level conjunction.
fn entry_timelines(f: &Fixture) -> Result<Vec<ParConjunct>, String> {
    let proc = f.program.proc(&f.program.entry).ok_or("fixture has no entry procedure")?;
    let GoalKind::SeqConj { conjuncts } = &proc.body.kind else {
        return Err("fixture entry body is not a conjunction".to_string());
    };
    let analysis = Analysis::new(&f.program, CostModel::plain(&f.profile));
    conjunct_timelines(&analysis, &proc.key, conjuncts).map_err(|e| e.to_string())
}

fn oracle_checks(seed_base: u64) -> Vec<Check> {
    let exhaustive = SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: false };

    vec![
        check("partition enumeration", || {
            for n in 1..=10usize {
                let got = enumerate_partitions(n).len();
                if got != 1 << (n - 1) {
                    return Err(format!("n={n}: {got} partitions, expected {}", 1 << (n - 1)));
                }
            }
            let three = enumerate_partitions(3);
            let want = vec![
                vec![(0, 3)],
                vec![(0, 1), (1, 3)],
                vec![(0, 2), (2, 3)],
                vec![(0, 1), (1, 2), (2, 3)],
            ];
            if three != want {
                return Err(format!("n=3 enumeration order changed: {three:?}"));
            }
            Ok("2^(n-1) partitions for n = 1..=10, stable order".to_string())
        }),
        check("predictor worked examples", || {
            let cases = [
                ("fig1-left", fixtures::fig1_left(), vec![5.0, 4.0], 5.0),
                ("fig1-right", fixtures::fig1_right(), vec![5.0, 7.0], 7.0),
            ];
            for (name, f, finishes, total) in cases {
                let conjs = entry_timelines(&f)?;
                let s = find_par_time_simple(&conjs).map_err(|e| format!("{name}: {e}"))?;
                if s.conjunct_finish != finishes || s.total != total {
                    return Err(format!(
                        "{name}: finishes {:?} total {}, expected {:?} / {}",
                        s.conjunct_finish, s.total, finishes, total
                    ));
                }
            }
            Ok("fig1 pair under zero overheads: totals 5 and 7".to_string())
        }),
        check("partition search vs brute force", || {
            for i in 0..500u64 {
                let seed = seed_base.wrapping_add(i);
                let conjuncts = fixtures::random_conjuncts(seed, 8);
                let n = conjuncts.len();
                let o = fixtures::random_overheads(seed);
                let src =
                    AbstractSource::new(conjuncts).map_err(|e| format!("seed {seed}: {e}"))?;
                let found = find_best_partition(&src, (0, n), &o, &exhaustive)
                    .map_err(|e| format!("seed {seed}: {e}"))?;
                let (bt, mut bb) = brute_force_best(n, |p| region_time(&src, p, &o))
                    .map_err(|e| format!("seed {seed}: {e}"))?;
                bb.sort();
                if found.best_time != bt || found.best != bb {
                    return Err(format!(
                        "seed {seed}: search found {:?} at {}, brute force {:?} at {}",
                        found.best, found.best_time, bb, bt
                    ));
                }
            }
            Ok("500 random conjunctions (n <= 8), exact tie-set equality".to_string())
        }),
        check("simulator vs predictor", || {
            for i in 0..1000u64 {
                let seed = seed_base.wrapping_add(i);
                let conjs = fixtures::random_conjuncts(seed, 6);
                let o = fixtures::random_overheads(seed);
                let pred = find_par_time(&conjs, &o).map_err(|e| format!("seed {seed}: {e}"))?;
                let sim = simulate_execution(&conjs, &o, Engines::Unlimited)
                    .map_err(|e| format!("seed {seed}: {e}"))?;
                if sim.makespan != pred.total || sim.conjunct_finish != pred.conjunct_finish {
                    return Err(format!(
                        "seed {seed}: simulator {} {:?}, predictor {} {:?}",
                        sim.makespan, sim.conjunct_finish, pred.total, pred.conjunct_finish
                    ));
                }
            }
            Ok("1000 random conjunctions (n <= 6), unlimited engines, exact".to_string())
        }),
        check("engine limits", || {
            for i in 0..100u64 {
                let seed = seed_base.wrapping_add(i);
                let conjs = fixtures::random_conjuncts(seed, 6);
                let mut o = fixtures::random_overheads(seed);
                // The wakeup penalty makes makespans non-monotone in the
                // engine count (a delayed start can dodge a block), so the
                // contention bound only holds without it.
                o.context_wakeup_delay = 0.0;
                let free = simulate_execution(&conjs, &o, Engines::Unlimited)
                    .map_err(|e| format!("seed {seed}: {e}"))?
                    .makespan;
                for k in [1, 2, 4] {
                    let mk = simulate_execution(&conjs, &o, Engines::Fixed(k))
                        .map_err(|e| format!("seed {seed}: {e}"))?
                        .makespan;
                    if mk < free {
                        return Err(format!(
                            "seed {seed}: {k} engine(s) beat unlimited, {mk} < {free}"
                        ));
                    }
                }
                let serial = simulate_execution(&conjs, &fixtures::random_overheads(seed), Engines::Fixed(1))
                    .map_err(|e| format!("seed {seed}: {e}"))?;
                if serial.trace.iter().any(|line| line.contains("blocks on")) {
                    return Err(format!("seed {seed}: a single engine blocked"));
                }
            }
            Ok("100 random conjunctions: no fixed count beats unlimited (wakeup-free), one engine never blocks"
                .to_string())
        }),
        check("advisor worked example", || {
            let f = fixtures::map_foldl();
            let advices = explore_call_tree(&f.program, &f.profile, &AnalysisConfig::default())
                .map_err(|e| e.to_string())?;
            if advices.len() != 1 {
                return Err(format!("expected exactly one advice, got {}", advices.len()));
            }
            let a = &advices[0];
            if a.groups != vec![(1, 3), (3, 4)]
                || a.seq_time != 3_250_107.0
                || a.par_time != 1_625_080.0
            {
                return Err(format!(
                    "got {} seq {} par {}, expected (c2, c3) & c4 seq 3250107 par 1625080",
                    a.rendering, a.seq_time, a.par_time
                ));
            }
            Ok("map_foldl: (M, F) & Rec at predicted 1,625,080".to_string())
        }),
    ]
}

// ------------------------------------------------------------ gen-fixture

fn gen_fixture(a: GenFixtureArgs) -> Result<Outcome> {
    let (name, fixture) = match a.template {
        Template::Fig1Left => ("fig1-left", fixtures::fig1_left()),
        Template::Fig1Right => ("fig1-right", fixtures::fig1_right()),
        Template::MapFoldl => ("map-foldl", fixtures::map_foldl()),
        Template::Random => ("random", fixtures::random_program(a.seed)),
    };
    fs::write(&a.program, write_program(&fixture.program))
        .with_context(|| format!("writing {}", a.program.display()))?;
    fs::write(&a.profile, write_profile(&fixture.profile))
        .with_context(|| format!("writing {}", a.profile.display()))?;
    match a.format {
        Format::Text => {
            println!("wrote program to {}", a.program.display());
            println!("wrote profile to {}", a.profile.display());
        }
        Format::Json => report::print_json(&json!({
            "command": "gen-fixture",
            "template": name,
            "seed": a.seed,
            "program": a.program.display().to_string(),
            "profile": a.profile.display().to_string(),
        })),
    }
    Ok(Outcome::Clean)
}
