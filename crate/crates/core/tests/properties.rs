//! Randomized invariants of the predictor, the partition search, and the
//! advisor pipeline.
//!
//! Inputs come from the seeded generators in [`autopar::fixtures`], so
//! every case proptest explores is reproducible from its seed alone.
//! Two model artifacts are deliberately *not* claimed here, because they
//! are false: predictions are not monotone in every overhead field once
//! `context_wakeup_delay` is nonzero (arriving later can dodge a block
//! and its wakeup penalty), and adding engines to the simulator can
//! lengthen the makespan (resume contention). The restricted forms that
//! do hold are below; the counterexamples live in the unit tests of
//! `overlap` and `oracle`.

use autopar::config::SearchParams;
use autopar::driver::{explore_call_tree, AdviceFile};
use autopar::fixtures::{self, random_conjuncts, random_overheads, random_program};
use autopar::ir::{ArgMode, CalleeRef, Program, SiteId, VarId};
use autopar::oracle::{simulate_execution, Engines};
use autopar::overlap::{find_par_time, find_par_time_simple, OverheadParams};
use autopar::planner::{
    expand_edges, find_best_partition, pick_preferred, region_time, shrink_edges, AbstractSource,
    ConjunctSource,
};
use autopar::timing::{Analysis, CostModel};
use autopar::AnalysisConfig;
use proptest::prelude::*;

fn exhaustive() -> SearchParams {
    SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: false }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// The idealized prediction is bounded below by the longest conjunct
    /// and above by full serialization.
    #[test]
    fn prop_simple_time_is_bounded(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let longest = conjs.iter().map(|c| c.cost).fold(0.0, f64::max);
        let serial: f64 = conjs.iter().map(|c| c.cost).sum();
        let t = find_par_time_simple(&conjs).unwrap().total;
        prop_assert!(longest <= t, "{t} beats the longest conjunct {longest}");
        prop_assert!(t <= serial, "{t} exceeds full serialization {serial}");
    }

    /// `find_par_time` with every overhead zero is `find_par_time_simple`,
    /// down to identical schedules.
    #[test]
    fn prop_zero_overheads_equal_simple(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let zero = find_par_time(&conjs, &OverheadParams::ZERO).unwrap();
        let simple = find_par_time_simple(&conjs).unwrap();
        prop_assert_eq!(zero, simple);
    }

    /// Overheads never make the prediction faster than the idealized
    /// model.
    #[test]
    fn prop_overheads_never_beat_the_ideal(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let o = random_overheads(seed);
        let with = find_par_time(&conjs, &o).unwrap().total;
        let ideal = find_par_time_simple(&conjs).unwrap().total;
        prop_assert!(with >= ideal, "{with} with overheads beats ideal {ideal}");
    }

    /// With no wakeup penalty in play, increasing any single overhead
    /// field never lowers the prediction. (With a nonzero
    /// `context_wakeup_delay` this is false; see
    /// `a_higher_wait_cost_can_dodge_a_block` in the overlap module.)
    #[test]
    fn prop_overheads_monotone_without_wakeup(seed in any::<u64>(), bump in 1u32..=10) {
        let conjs = random_conjuncts(seed, 8);
        let mut o = random_overheads(seed);
        o.context_wakeup_delay = 0.0;
        let base = find_par_time(&conjs, &o).unwrap().total;
        let bump = bump as f64;
        let fields: [fn(&mut OverheadParams) -> &mut f64; 5] = [
            |o| &mut o.spark_cost,
            |o| &mut o.spark_delay,
            |o| &mut o.signal_cost,
            |o| &mut o.wait_cost,
            |o| &mut o.barrier_cost,
        ];
        for field in fields {
            let mut o2 = o;
            *field(&mut o2) += bump;
            let t = find_par_time(&conjs, &o2).unwrap().total;
            prop_assert!(t >= base, "bumping a field dropped {base} to {t}");
        }
    }

    /// Boundary post-processing only ever helps: neither shrinking nor
    /// expanding the parallel region increases the predicted total of
    /// sequential fringe plus parallel region.
    #[test]
    fn prop_shrink_expand_never_increase(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let n = conjs.len();
        let o = random_overheads(seed);
        let src = AbstractSource::new(conjs).unwrap();
        let total = |groups: &[(usize, usize)]| -> f64 {
            let before: f64 = (0..groups[0].0).map(|i| src.unit_cost(i)).sum();
            let after: f64 =
                (groups[groups.len() - 1].1..n).map(|i| src.unit_cost(i)).sum();
            before + region_time(&src, groups, &o).unwrap() + after
        };
        let found = find_best_partition(&src, (0, n), &o, &exhaustive()).unwrap();
        let chosen = pick_preferred(&found.best);
        let t0 = total(&chosen);
        let (shrunk, left, right) = shrink_edges(&src, chosen, &o).unwrap();
        let t1 = total(&shrunk);
        prop_assert!(t1 <= t0, "shrink worsened {t0} to {t1}");
        if shrunk.len() >= 2 {
            let expanded = expand_edges(&src, shrunk, (0, n), !left, !right, &o).unwrap();
            let t2 = total(&expanded);
            prop_assert!(t2 <= t1, "expand worsened {t1} to {t2}");
        }
    }

    /// A larger evaluation budget never returns a worse best time.
    #[test]
    fn prop_budget_monotone(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let n = conjs.len();
        let o = random_overheads(seed);
        let src = AbstractSource::new(conjs).unwrap();
        let mut last = f64::INFINITY;
        for budget in [2u64, 6, 20, 100, u64::MAX] {
            let params = SearchParams { prefer_linear_evals: budget, enable_pruning: false };
            let t = find_best_partition(&src, (0, n), &o, &params).unwrap().best_time;
            prop_assert!(t <= last, "budget {budget} worsened {last} to {t}");
            last = t;
        }
    }

    /// Pruning is an approximation under this cost model (a partial
    /// partition can get cheaper as it grows, through a dodged block), so
    /// all it may do is miss optima: its best time never beats the
    /// exhaustive one, and on a tie its partitions are a subset.
    #[test]
    fn prop_pruning_is_an_upper_bound(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let n = conjs.len();
        let o = random_overheads(seed);
        let src = AbstractSource::new(conjs).unwrap();
        let off = find_best_partition(&src, (0, n), &o, &exhaustive()).unwrap();
        let on = find_best_partition(
            &src,
            (0, n),
            &o,
            &SearchParams { prefer_linear_evals: u64::MAX, enable_pruning: true },
        )
        .unwrap();
        prop_assert!(on.best_time >= off.best_time);
        if on.best_time == off.best_time {
            for p in &on.best {
                prop_assert!(off.best.contains(p), "pruned tie {p:?} unknown to exhaustive");
            }
        }
    }

    /// With engines to spare the simulator retraces the prediction
    /// exactly: same makespan and the same finish time per conjunct.
    #[test]
    fn prop_unlimited_simulation_matches_the_prediction(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 6);
        let o = random_overheads(seed);
        let pred = find_par_time(&conjs, &o).unwrap();
        let sim = simulate_execution(&conjs, &o, Engines::Unlimited).unwrap();
        prop_assert_eq!(sim.makespan, pred.total);
        prop_assert_eq!(sim.conjunct_finish, pred.conjunct_finish);
    }

    /// The simulator is deterministic and, on timelines where producers
    /// precede consumers, never deadlocks for any engine count.
    #[test]
    fn prop_simulator_never_deadlocks(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let o = random_overheads(seed);
        for engines in [Engines::Fixed(1), Engines::Fixed(3), Engines::Unlimited] {
            let a = simulate_execution(&conjs, &o, engines).unwrap();
            let b = simulate_execution(&conjs, &o, engines).unwrap();
            prop_assert_eq!(a.trace, b.trace);
            prop_assert_eq!(a.makespan, b.makespan);
        }
    }

    /// Without the wakeup penalty, no fixed engine count beats unlimited
    /// engines. (With it, even this fails: a spark delayed by a busy
    /// machine can dodge a block. Adding engines can also lengthen the
    /// makespan outright; see `more_engines_can_hurt` in the oracle
    /// module.)
    #[test]
    fn prop_fixed_engines_never_beat_unlimited_without_wakeup(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let mut o = random_overheads(seed);
        o.context_wakeup_delay = 0.0;
        let unlimited = simulate_execution(&conjs, &o, Engines::Unlimited).unwrap().makespan;
        for k in [1, 2, 3, 4, 8] {
            let fixed = simulate_execution(&conjs, &o, Engines::Fixed(k)).unwrap().makespan;
            prop_assert!(
                fixed >= unlimited,
                "{k} engines finished at {fixed}, unlimited at {unlimited}"
            );
        }
    }

    /// One engine serializes the conjunction, so nothing ever blocks on a
    /// future.
    #[test]
    fn prop_single_engine_never_blocks(seed in any::<u64>()) {
        let conjs = random_conjuncts(seed, 8);
        let o = random_overheads(seed);
        let r = simulate_execution(&conjs, &o, Engines::Fixed(1)).unwrap();
        prop_assert!(r.trace.iter().all(|l| !l.contains("blocks on")));
    }

    /// Every piece of advice the driver emits clears the speedup
    /// threshold, and each conjunction gets at most one.
    #[test]
    fn prop_advice_clears_the_threshold(seed in any::<u64>()) {
        let f = random_program(seed);
        let config = AnalysisConfig::default();
        let advices = explore_call_tree(&f.program, &f.profile, &config).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for a in &advices {
            prop_assert!(
                a.speedup >= config.thresholds.speedup,
                "{} {} advised at speedup {}",
                a.proc,
                a.conjunction,
                a.speedup
            );
            prop_assert!(seen.insert((a.proc.clone(), a.conjunction)));
        }
    }

    /// The whole pipeline is deterministic: advising twice (including the
    /// parallel analysis passes) yields identical advice and an identical
    /// serialized advice file.
    #[test]
    fn prop_advice_is_deterministic(seed in any::<u64>()) {
        let f = random_program(seed);
        let config = AnalysisConfig::default();
        let a = explore_call_tree(&f.program, &f.profile, &config).unwrap();
        let b = explore_call_tree(&f.program, &f.profile, &config).unwrap();
        prop_assert_eq!(&a, &b);
        let fa = AdviceFile::new(&f.program, &a).to_text();
        let fb = AdviceFile::new(&f.program, &b).to_text();
        prop_assert_eq!(fa, fb);
    }

    /// Shared-variable timelines stay inside their conjunct: every event
    /// lands in `[0, conjunct cost]` and event lists are sorted by time.
    #[test]
    fn prop_timelines_stay_inside_their_conjunct(seed in any::<u64>()) {
        let f = random_program(seed);
        let analysis = Analysis::new(&f.program, CostModel::plain(&f.profile));
        for proc in &f.program.procedures {
            let autopar::ir::GoalKind::SeqConj { conjuncts } = &proc.body.kind else {
                continue;
            };
            let lines = analysis.shared_var_timeline(&proc.key, conjuncts).unwrap();
            for (goal, line) in conjuncts.iter().zip(&lines) {
                let cost = analysis.goal_cost(goal, &proc.key).unwrap();
                for ev in line {
                    prop_assert!(ev.time >= 0.0 && ev.time <= cost);
                }
                prop_assert!(line.windows(2).all(|w| w[0].time <= w[1].time));
            }
        }
    }

    /// Switch arm weights are profile-entry fractions that sum to one:
    /// the weighted production time of a switch whose arms all bind the
    /// variable at the same offset is that offset exactly, and with
    /// differing offsets it is the entry-weighted mean.
    #[test]
    fn prop_switch_weights_normalize(
        arm_costs in prop::collection::vec(1u64..=50, 2..=4),
        counts in prop::collection::vec(1u64..=1000, 4),
        same in any::<bool>(),
    ) {
        let (program, profile, var, goal_id) = switch_fixture(&arm_costs, &counts, same);
        let analysis = Analysis::new(&program, CostModel::plain(&profile));
        let proc = &program.procedures[0];
        let goal = proc.goal(goal_id).unwrap();
        let got = analysis.production_time(&proc.key, goal, var).unwrap();
        if same {
            // Branch collapse must be exact, not within epsilon.
            prop_assert_eq!(got, arm_costs[0] as f64);
        } else {
            let total: u64 = counts[..arm_costs.len()].iter().sum();
            let want: f64 = arm_costs
                .iter()
                .zip(&counts)
                .map(|(&c, &n)| (n as f64 / total as f64) * c as f64)
                .sum();
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0));
        }
    }
}

/// One procedure whose body is a switch: each arm runs an external call
/// of cost `arm_costs[i]` (or `arm_costs[0]` when `same` is set) and then
/// binds `Out`. Arm entry counts come from `counts`.
fn switch_fixture(
    arm_costs: &[u64],
    counts: &[u64],
    same: bool,
) -> (Program, autopar::ir::Profile, VarId, autopar::ir::GoalId) {
    use fixtures::{G, ProcBuilder, ProfileBuilder};
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
        let arm_goal = autopar::ir::GoalId(goal_id.0 + 1 + 3 * i as u32);
        prof.entry(&key, arm_goal, n);
    }
    prof.entry(&key, goal_id, counts[..arm_costs.len()].iter().sum());

    let program = Program::new(key, vec![built.proc], ["work".to_string()].into_iter().collect())
        .expect("switch fixture is well-formed");
    (program, prof.build(), out, goal_id)
}
