//! The acceptance suite: one test per shipped guarantee, so a plain
//! `cargo test --test acceptance` prints one pass/fail line for each.
//!
//! In order: exact worked-example predictions, the known best partition
//! of the map_foldl pipeline with its frozen golden times, search and
//! model equivalence against brute-force oracles, the randomized
//! invariant families, exact recursion-extrapolation arithmetic,
//! byte-level determinism of advice files, and an explicit note on what
//! is out of scope at desk scale.

use std::time::{Duration, Instant};

use autopar::config::{AnalysisConfig, SearchParams};
use autopar::driver::{explore_call_tree, AdviceFile};
use autopar::fixtures::{self, random_conjuncts, random_overheads, random_program, Fixture, G,
    ProcBuilder, ProfileBuilder};
use autopar::ir::{ArgMode, CalleeRef, GoalId, GoalKind, ProcKey, Program, SiteId};
use autopar::oracle::{brute_force_best, enumerate_partitions, simulate_execution, Engines};
use autopar::overlap::{find_par_time, find_par_time_simple, OverheadParams, ParConjunct};
use autopar::planner::{
    classify_recursion, expand_edges, extrapolated_saving, find_best_partition, pick_preferred,
    region_time, shrink_edges, AbstractSource, ConjunctSource, IrSource, PlannerError,
    RecursionClass, RecursionInfo,
};
use autopar::timing::{Analysis, CostModel};

fn exhaustive() -> SearchParams {
    SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: false }
}

/// Per-conjunct cost and shared-variable events for one sequential
/// conjunction of a fixture.
fn timelines(
    analysis: &Analysis<'_>,
    key: &ProcKey,
    conjuncts: &[autopar::ir::Goal],
) -> Vec<ParConjunct> {
    let events = analysis.shared_var_timeline(key, conjuncts).unwrap();
    conjuncts
        .iter()
        .zip(events)
        .map(|(c, events)| ParConjunct { cost: analysis.goal_cost(c, key).unwrap(), events })
        .collect()
}

fn entry_timelines(f: &Fixture) -> Vec<ParConjunct> {
    let proc = f.program.proc(&f.program.entry).expect("fixture has an entry procedure");
    let GoalKind::SeqConj { conjuncts } = &proc.body.kind else {
        panic!("fixture entry body is not a conjunction");
    };
    let analysis = Analysis::new(&f.program, CostModel::plain(&f.profile));
    timelines(&analysis, &proc.key, conjuncts)
}

/// The two hand-worked pipelines predict exactly under zero overheads:
/// totals 5 and 7, with the dependent second conjunct finishing at 4
/// and 7 respectively.
#[test]
fn c1_worked_example_predictions_are_exact() {
    let t0 = Instant::now();
    for (f, finishes, total) in [
        (fixtures::fig1_left(), vec![5.0, 4.0], 5.0),
        (fixtures::fig1_right(), vec![5.0, 7.0], 7.0),
    ] {
        let conjs = entry_timelines(&f);
        let s = find_par_time_simple(&conjs).unwrap();
        assert_eq!(s.conjunct_finish, finishes);
        assert_eq!(s.total, total);
    }
    assert!(t0.elapsed() < Duration::from_secs(1));
}

/// On the map_foldl pipeline the advisor picks (c2, c3) & c4 at the
/// frozen golden times; leaving the region whole and splitting it fully
/// both score strictly worse, and the choice equals the brute-force
/// optimum of the region.
#[test]
fn c2_map_foldl_gets_the_known_best_partition() {
    let t0 = Instant::now();
    let f = fixtures::map_foldl();
    let config = AnalysisConfig::default();

    let advices = explore_call_tree(&f.program, &f.profile, &config).unwrap();
    assert_eq!(advices.len(), 1, "exactly one conjunction is worth advising");
    let a = &advices[0];
    assert_eq!(a.proc.to_string(), "map_foldl/4-0");
    assert_eq!(a.groups, vec![(1, 3), (3, 4)]);
    assert_eq!(a.rendering, "(c2, c3) & c4");
    assert_eq!(a.seq_time, 3_250_107.0);
    assert_eq!(a.par_time, 1_625_080.0);
    assert_eq!(a.throttle, Some(32));

    // Every split of the three-unit middle, in enumeration order:
    // whole, c2 & (c3, c4), (c2, c3) & c4, fully split.
    let analysis = Analysis::new(&f.program, CostModel::plain(&f.profile));
    let proc = f.program.proc(&a.proc).unwrap();
    let GoalKind::SeqConj { conjuncts } = &proc.goal(a.conjunction).unwrap().kind else {
        panic!("advice does not point at a sequential conjunction");
    };
    let src = IrSource::new(&analysis, &proc.key, conjuncts, config.thresholds.expensive_goal)
        .unwrap()
        .expect("map_foldl has a parallelisable middle");
    let (ulo, uhi) = src.middle;
    assert_eq!(uhi - ulo, 3);
    let shift = |p: &[(usize, usize)]| -> Vec<(usize, usize)> {
        p.iter().map(|&(x, y)| (x + ulo, y + ulo)).collect()
    };
    let times: Vec<f64> = enumerate_partitions(3)
        .iter()
        .map(|p| region_time(&src, &shift(p), &config.overheads).unwrap())
        .collect();
    assert_eq!(times, vec![3_250_109.0, 3_250_135.0, 1_625_080.0, 1_625_092.0]);
    assert!(a.par_time < a.seq_time, "parallel must beat sequential");
    assert!(a.par_time < times[3], "the 3-way split must lose");

    let (bt, bb) =
        brute_force_best(3, |p| region_time(&src, &shift(p), &config.overheads)).unwrap();
    assert_eq!(bt, 1_625_080.0);
    assert_eq!(bb, vec![vec![(0, 2), (2, 3)]]);
    let found = find_best_partition(&src, src.middle, &config.overheads, &exhaustive()).unwrap();
    assert_eq!(found.best_time, bt);
    assert_eq!(found.best, vec![shift(&[(0, 2), (2, 3)])]);
    assert!(t0.elapsed() < Duration::from_secs(1));
}

fn search_matches_brute_force(conjs: Vec<ParConjunct>, o: &OverheadParams, what: &str) {
    let n = conjs.len();
    let src = AbstractSource::new(conjs).unwrap();
    let found = find_best_partition(&src, (0, n), o, &exhaustive()).unwrap();
    let (bt, mut bb) = brute_force_best(n, |p| region_time(&src, p, o)).unwrap();
    bb.sort();
    assert_eq!(found.best_time, bt, "{what}: best time differs from brute force");
    assert_eq!(found.best, bb, "{what}: best partition set differs from brute force");
}

/// With an unlimited budget the partition search returns exactly the
/// brute-force-optimal time and tie set: on every multi-conjunct
/// sequential conjunction in the shipped fixtures and on 500 seeded
/// random conjunctions of up to eight conjuncts.
#[test]
fn c3_search_matches_brute_force_everywhere() {
    let t0 = Instant::now();
    let o = AnalysisConfig::default().overheads;

    let mut fixture_regions = 0u32;
    for (name, f) in fixtures::all_named() {
        let analysis = Analysis::new(&f.program, CostModel::plain(&f.profile));
        for proc in &f.program.procedures {
            let mut region_ids: Vec<GoalId> = Vec::new();
            proc.body.visit(&mut |g| {
                if let GoalKind::SeqConj { conjuncts } = &g.kind {
                    if conjuncts.len() >= 2 {
                        region_ids.push(g.id);
                    }
                }
            });
            for id in region_ids {
                let GoalKind::SeqConj { conjuncts } = &proc.goal(id).unwrap().kind else {
                    unreachable!("collected ids point at conjunctions");
                };
                let lines = timelines(&analysis, &proc.key, conjuncts);
                search_matches_brute_force(lines, &o, &format!("{name} {}", proc.key));
                fixture_regions += 1;
            }
        }
    }
    assert!(fixture_regions >= 5, "only {fixture_regions} fixture conjunctions checked");

    for seed in 0..500u64 {
        let conjs = random_conjuncts(seed, 8);
        search_matches_brute_force(conjs, &random_overheads(seed), &format!("seed {seed}"));
    }
    assert!(t0.elapsed() < Duration::from_secs(60));
}

/// With engines to spare the simulator agrees with the predictor
/// exactly — makespan and every per-conjunct finish time — on 1,000
/// seeded random conjunctions.
#[test]
fn c4_unlimited_simulation_matches_the_predictor() {
    let t0 = Instant::now();
    for seed in 0..1000u64 {
        let conjs = random_conjuncts(seed, 6);
        let o = random_overheads(seed);
        let pred = find_par_time(&conjs, &o).unwrap();
        let sim = simulate_execution(&conjs, &o, Engines::Unlimited).unwrap();
        assert_eq!(sim.makespan, pred.total, "seed {seed}: makespan");
        assert_eq!(sim.conjunct_finish, pred.conjunct_finish, "seed {seed}: finish times");
    }
    assert!(t0.elapsed() < Duration::from_secs(60));
}

/// The invariant families, each over at least 200 seeded cases: the
/// prediction's bounds, zero-overhead equivalence of the two predictors,
/// overhead monotonicity in its true form, boundary post-processing
/// never hurting, switch-weight normalization, and the advice speedup
/// threshold. (The same families run under proptest with shrinking in
/// the `properties` test target; this pins them over fixed seeds.)
#[test]
fn c5_invariant_families_hold_across_seeds() {
    // Bounded by the longest conjunct below and full serialization above.
    for seed in 0..250u64 {
        let conjs = random_conjuncts(seed, 8);
        let longest = conjs.iter().map(|c| c.cost).fold(0.0, f64::max);
        let serial: f64 = conjs.iter().map(|c| c.cost).sum();
        let t = find_par_time_simple(&conjs).unwrap().total;
        assert!(longest <= t && t <= serial, "seed {seed}: {t} outside [{longest}, {serial}]");
    }

    // All-zero overheads collapse the full predictor onto the idealized
    // one, schedules included.
    for seed in 0..250u64 {
        let conjs = random_conjuncts(seed, 8);
        let zero = find_par_time(&conjs, &OverheadParams::ZERO).unwrap();
        let simple = find_par_time_simple(&conjs).unwrap();
        assert_eq!(zero, simple, "seed {seed}");
    }

    // Overheads never beat the ideal; and with no wakeup penalty in
    // play, bumping any single field never lowers the prediction. (The
    // unrestricted per-field claim is false; the counterexample is the
    // `a_higher_wait_cost_can_dodge_a_block` unit test.)
    for seed in 0..250u64 {
        let conjs = random_conjuncts(seed, 8);
        let o = random_overheads(seed);
        let ideal = find_par_time_simple(&conjs).unwrap().total;
        let with = find_par_time(&conjs, &o).unwrap().total;
        assert!(with >= ideal, "seed {seed}: {with} beats ideal {ideal}");

        let mut base_o = o;
        base_o.context_wakeup_delay = 0.0;
        let base = find_par_time(&conjs, &base_o).unwrap().total;
        let bump = 1.0 + (seed % 10) as f64;
        let fields: [fn(&mut OverheadParams) -> &mut f64; 5] = [
            |o| &mut o.spark_cost,
            |o| &mut o.spark_delay,
            |o| &mut o.signal_cost,
            |o| &mut o.wait_cost,
            |o| &mut o.barrier_cost,
        ];
        for field in fields {
            let mut o2 = base_o;
            *field(&mut o2) += bump;
            let t = find_par_time(&conjs, &o2).unwrap().total;
            assert!(t >= base, "seed {seed}: a dearer overhead dropped {base} to {t}");
        }
    }

    // Boundary post-processing never increases the total of sequential
    // fringe plus parallel region.
    for seed in 0..250u64 {
        let conjs = random_conjuncts(seed, 8);
        let n = conjs.len();
        let o = random_overheads(seed);
        let src = AbstractSource::new(conjs).unwrap();
        let total = |groups: &[(usize, usize)]| -> f64 {
            let before: f64 = (0..groups[0].0).map(|i| src.unit_cost(i)).sum();
            let after: f64 = (groups[groups.len() - 1].1..n).map(|i| src.unit_cost(i)).sum();
            before + region_time(&src, groups, &o).unwrap() + after
        };
        let found = find_best_partition(&src, (0, n), &o, &exhaustive()).unwrap();
        let chosen = pick_preferred(&found.best);
        let t_chosen = total(&chosen);
        let (shrunk, left, right) = shrink_edges(&src, chosen, &o).unwrap();
        let t_shrunk = total(&shrunk);
        assert!(t_shrunk <= t_chosen, "seed {seed}: shrink worsened {t_chosen} to {t_shrunk}");
        if shrunk.len() >= 2 {
            let grown = expand_edges(&src, shrunk, (0, n), !left, !right, &o).unwrap();
            let t_grown = total(&grown);
            assert!(t_grown <= t_shrunk, "seed {seed}: expand worsened {t_shrunk} to {t_grown}");
        }
    }

    // Switch arm weights are entry fractions summing to one: unanimous
    // arms collapse exactly, differing arms mix to the entry-weighted
    // mean within 1e-9 relative.
    for seed in 0..200u64 {
        let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).max(1);
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        let arms = 2 + (next() % 3) as usize;
        let costs: Vec<u64> = (0..arms).map(|_| 1 + next() % 50).collect();
        let counts: Vec<u64> = (0..4).map(|_| 1 + next() % 1000).collect();
        let same = seed % 2 == 0;

        let (program, profile, var, goal_id) = switch_fixture(&costs, &counts, same);
        let analysis = Analysis::new(&program, CostModel::plain(&profile));
        let proc = &program.procedures[0];
        let goal = proc.goal(goal_id).unwrap();
        let got = analysis.production_time(&proc.key, goal, var).unwrap();
        if same {
            assert_eq!(got, costs[0] as f64, "seed {seed}: unanimous arms must collapse exactly");
        } else {
            let total: u64 = counts[..arms].iter().sum();
            let want: f64 = costs
                .iter()
                .zip(&counts)
                .map(|(&c, &n)| (n as f64 / total as f64) * c as f64)
                .sum();
            let slack = 1e-9 * want.max(1.0);
            assert!(
                (got - want).abs() <= slack,
                "seed {seed}: production time {got}, entry-weighted mean {want}"
            );
        }
    }

    // No advice below the speedup threshold, which defaults to 1.01.
    let config = AnalysisConfig::default();
    assert_eq!(config.thresholds.speedup, 1.01);
    for seed in 0..200u64 {
        let f = random_program(seed);
        for a in explore_call_tree(&f.program, &f.profile, &config).unwrap() {
            assert!(
                a.speedup >= 1.01,
                "seed {seed}: {} {} advised at speedup {}",
                a.proc,
                a.conjunction,
                a.speedup
            );
        }
    }
}

/// Recursion extrapolation is exact arithmetic — an entry fan-out of
/// E = 2 with R = 20 recursive calls means an expected depth of 10, and
/// each recursion shape multiplies by its closed form — while irregular
/// shapes are refused outright and draw no advice.
#[test]
fn c6_recursion_extrapolation_is_exact() {
    let t0 = Instant::now();
    let key: ProcKey = "walk/2-0".parse().unwrap();

    // Singly recursive: the saving repeats once per level, R / E = 10
    // levels deep on average.
    let single = RecursionInfo {
        class: RecursionClass::Single,
        sites: vec![(SiteId(1), GoalId(9), 20)],
        entry_calls: 2,
        total_calls: 22,
    };
    assert_eq!(extrapolated_saving(&single, &key, 1.0, 22, Some(SiteId(1))).unwrap(), 10.0);
    assert_eq!(extrapolated_saving(&single, &key, 6.0, 22, Some(SiteId(1))).unwrap(), 60.0);

    // No recursive call inside the parallel region: the saving scales by
    // conjunction entries per entry call, 3 * 11 / 2.
    assert_eq!(extrapolated_saving(&single, &key, 3.0, 11, None).unwrap(), 16.5);

    // Multi-clause single recursion: R_i / E per level, weighted by how
    // often this clause is the one taken, 1 * (30 / 5) * (30 / 40).
    let multi = RecursionInfo {
        class: RecursionClass::MultiClauseSingle,
        sites: vec![(SiteId(1), GoalId(5), 30), (SiteId(2), GoalId(12), 10)],
        entry_calls: 5,
        total_calls: 45,
    };
    assert_eq!(extrapolated_saving(&multi, &key, 1.0, 45, Some(SiteId(1))).unwrap(), 4.5);

    // Double recursion collects the saving along one spine only:
    // R / (2E), so 5 * 12 / 6.
    let double = RecursionInfo {
        class: RecursionClass::Double,
        sites: vec![(SiteId(1), GoalId(4), 12), (SiteId(2), GoalId(6), 12)],
        entry_calls: 3,
        total_calls: 27,
    };
    assert_eq!(extrapolated_saving(&double, &key, 5.0, 27, Some(SiteId(1))).unwrap(), 10.0);

    // Shapes with no sound multiplier are refused.
    let irregular = RecursionInfo {
        class: RecursionClass::Irregular,
        sites: vec![(SiteId(1), GoalId(3), 7), (SiteId(2), GoalId(8), 9)],
        entry_calls: 4,
        total_calls: 20,
    };
    assert!(matches!(
        extrapolated_saving(&irregular, &key, 1.0, 20, Some(SiteId(1))),
        Err(PlannerError::IrregularRecursion { .. })
    ));
    let orphan = RecursionInfo { entry_calls: 0, ..single.clone() };
    assert!(matches!(
        extrapolated_saving(&orphan, &key, 1.0, 20, None),
        Err(PlannerError::NoEntryCalls { .. })
    ));

    // Classification agrees on the shipped fixtures, and the advisor
    // stays silent about the irregular one even though its two-recursive-
    // call clause would otherwise parallelize nicely.
    let mf = fixtures::map_foldl();
    let mf_key: ProcKey = "map_foldl/4-0".parse().unwrap();
    assert_eq!(classify_recursion(&mf.program, &mf.profile, &mf_key).unwrap().class,
        RecursionClass::Single);

    let f = fixtures::irregular();
    let irr_key = ProcKey::new("irr", 2, 0);
    assert_eq!(classify_recursion(&f.program, &f.profile, &irr_key).unwrap().class,
        RecursionClass::Irregular);
    let advices = explore_call_tree(&f.program, &f.profile, &AnalysisConfig::default()).unwrap();
    assert!(
        advices.iter().all(|a| a.proc != irr_key),
        "advice touched an irregularly recursive procedure"
    );
    assert!(t0.elapsed() < Duration::from_secs(1));
}

/// Advising the same inputs twice yields identical advice and
/// byte-identical advice files. (That the same holds across worker
/// counts of the command-line tool is covered by the CLI crate's tests.)
#[test]
fn c7_advice_files_are_deterministic() {
    let config = AnalysisConfig::default();
    for f in [fixtures::map_foldl(), random_program(11), random_program(4242)] {
        let a = explore_call_tree(&f.program, &f.profile, &config).unwrap();
        let b = explore_call_tree(&f.program, &f.profile, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            AdviceFile::new(&f.program, &a).to_text(),
            AdviceFile::new(&f.program, &b).to_text()
        );
    }
}

/// Wall-clock results are deliberately not reproduced here, and nothing
/// in this suite claims them: measured multi-core speedup tables and
/// statistics gathered over a real compiler's source corpus depend on
/// the Mercury toolchain, its benchmark programs, and the machine they
/// ran on. At desk scale this repository stands behind the model-level
/// guarantees above — exact worked examples, oracle equivalence,
/// randomized invariants, exact extrapolation arithmetic, and
/// determinism — which are the checkable core of the approach.
#[test]
fn c8_wall_clock_results_are_out_of_scope() {}

/// One procedure whose body is a switch: each arm runs an external call
/// of cost `arm_costs[i]` (or `arm_costs[0]` when `same` is set) and
/// then binds `Out`. Arm entry counts come from `counts`.
fn switch_fixture(
    arm_costs: &[u64],
    counts: &[u64],
    same: bool,
) -> (Program, autopar::ir::Profile, autopar::ir::VarId, GoalId) {
    static ARMS: [&str; 4] = ["a", "b", "c", "d"];

    let mut pb = ProcBuilder::new("pick");
    let scrutinee = pb.arg("Sel", ArgMode::In);
    let out = pb.arg("Out", ArgMode::Out);
    let arms: Vec<(&'static str, G)> = arm_costs
        .iter()
        .enumerate()
        .map(|(i, _)| {
            (
                ARMS[i],
                G::Seq(vec![
                    G::Call(
                        CalleeRef::External("work".to_string()),
                        vec![],
                        vec![],
                        SiteId(i as u32 + 1),
                    ),
                    G::Construct(out, "r", vec![]),
                ]),
            )
        })
        .collect();
    let built = pb.build(G::Label("sw", Box::new(G::Switch(scrutinee, arms))));
    let goal_id = built.labels["sw"];
    let key = built.proc.key.clone();

    let mut prof = ProfileBuilder::new();
    for (i, &cost) in arm_costs.iter().enumerate() {
        let cost = if same { arm_costs[0] } else { cost };
        let n = counts[i];
        prof.site(SiteId(i as u32 + 1), n, n as f64 * cost as f64);
        // The builder labels only the switch; arm goal ids follow the
        // switch id in preorder, each arm being a two-goal sequence.
        let arm_goal = GoalId(goal_id.0 + 1 + 3 * i as u32);
        prof.entry(&key, arm_goal, n);
    }
    prof.entry(&key, goal_id, counts[..arm_costs.len()].iter().sum());

    let program = Program::new(key, vec![built.proc], ["work".to_string()].into_iter().collect())
        .expect("switch fixture is well-formed");
    (program, prof.build(), out, goal_id)
}
