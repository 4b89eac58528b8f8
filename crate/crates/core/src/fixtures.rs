//! Hand-built programs, profiles, and conjunct descriptors for tests,
//! benchmarks, and `gen-fixture`.
//!
//! The named fixtures encode the worked examples the test suite checks
//! against — the two producer/consumer pairs from the overlap examples,
//! the `map_foldl` pipeline with its rounded profile table, a two-level
//! program that exercises ancestor revisiting, and an irregularly
//! recursive procedure. The seeded generators provide random abstract
//! conjunctions, overhead sets, and straight-line programs for the
//! oracle-equivalence and property suites.
//!
//! Programs are assembled through [`G`] goal templates: `build` assigns
//! goal ids in preorder, derives each goal's nonlocal set from variable
//! occurrences (a variable is nonlocal to a goal when it also occurs
//! outside it, head arguments counting as outside), and derives composite
//! produced-sets bottom-up. That keeps the fixtures honest: mode
//! bookkeeping the analysis relies on is computed, not hand-declared.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{
    ArgMode, CalleeRef, Cost, Determinism, Goal, GoalId, GoalKind, HeadArg, ProcKey, Procedure,
    Profile, Program, SiteId, SiteStats, SwitchArm, UnifyRhs, VarId,
};
use crate::overlap::{OverheadParams, ParConjunct};
use crate::timing::{sort_var_uses, UseKind, VarUse};

/// A goal template: the shape of a goal without the bookkeeping the IR
/// carries. Building a procedure from templates fills in goal ids,
/// nonlocal sets, and composite produced-sets.
pub enum G {
    /// `out := functor(args…)` — binds `out`.
    Construct(VarId, &'static str, Vec<VarId>),
    /// `scrutinee => functor(args…)` — binds every argument.
    Deconstruct(VarId, &'static str, Vec<VarId>),
    /// `out := in`.
    Assign(VarId, VarId),
    /// First-order call. `args` is the full positional argument list;
    /// the second list names the arguments the callee binds.
    Call(CalleeRef, Vec<VarId>, Vec<VarId>, SiteId),
    /// Call through a closure variable.
    HoCall(VarId, Vec<VarId>, Vec<VarId>, SiteId),
    Seq(Vec<G>),
    Par(Vec<G>),
    Switch(VarId, Vec<(&'static str, G)>),
    Ite(Box<G>, Box<G>, Box<G>),
    Neg(Box<G>),
    Scope(Box<G>),
    Disj(Vec<G>),
    /// Overrides the built goal's determinism (everything defaults to det).
    Det(Determinism, Box<G>),
    /// Records the built goal's id under a name in [`BuiltProc::labels`].
    Label(&'static str, Box<G>),
}

/// Builds one procedure: declare arguments and locals, then hand `build`
/// a body template.
pub struct ProcBuilder {
    name: String,
    mode: u32,
    determinism: Determinism,
    head: Vec<HeadArg>,
    var_names: BTreeMap<VarId, String>,
    next_var: u32,
}

/// A built procedure plus the goal ids of its labelled goals.
pub struct BuiltProc {
    pub proc: Procedure,
    pub labels: BTreeMap<String, GoalId>,
}

impl ProcBuilder {
    pub fn new(name: &str) -> ProcBuilder {
        ProcBuilder {
            name: name.to_string(),
            mode: 0,
            determinism: Determinism::Det,
            head: Vec::new(),
            var_names: BTreeMap::new(),
            next_var: 0,
        }
    }

    fn fresh(&mut self, name: &str) -> VarId {
        let v = VarId(self.next_var);
        self.next_var += 1;
        self.var_names.insert(v, name.to_string());
        v
    }

    /// Declares the next head argument.
    pub fn arg(&mut self, name: &str, mode: ArgMode) -> VarId {
        let v = self.fresh(name);
        self.head.push(HeadArg { var: v, mode });
        v
    }

    /// Declares a local variable.
    pub fn var(&mut self, name: &str) -> VarId {
        self.fresh(name)
    }

    pub fn build(self, body: G) -> BuiltProc {
        let mut labels = BTreeMap::new();
        let mut next_id = 0;
        let mut body = build_goal(body, &mut next_id, &mut labels);
        let mut total: BTreeMap<VarId, usize> = BTreeMap::new();
        for h in &self.head {
            *total.entry(h.var).or_default() += 1;
        }
        body.visit(&mut |g| {
            for v in direct_mentions(g) {
                *total.entry(v).or_default() += 1;
            }
        });
        finalize(&mut body, &total);
        let key = ProcKey::new(&self.name, self.head.len() as u32, self.mode);
        BuiltProc {
            proc: Procedure {
                key,
                determinism: self.determinism,
                head: self.head,
                var_names: self.var_names,
                body,
            },
            labels,
        }
    }
}

fn build_goal(tmpl: G, next_id: &mut u32, labels: &mut BTreeMap<String, GoalId>) -> Goal {
    // Wrappers adjust the goal they contain; they are not goals themselves.
    match tmpl {
        G::Label(name, inner) => {
            let g = build_goal(*inner, next_id, labels);
            labels.insert(name.to_string(), g.id);
            return g;
        }
        G::Det(d, inner) => {
            let mut g = build_goal(*inner, next_id, labels);
            g.determinism = d;
            return g;
        }
        _ => {}
    }
    let id = GoalId(*next_id);
    *next_id += 1;
    let (kind, produces): (GoalKind, BTreeSet<VarId>) = match tmpl {
        G::Construct(out, functor, args) => (
            GoalKind::Unify {
                lhs: out,
                rhs: UnifyRhs::Functor { name: functor.to_string(), args },
            },
            [out].into_iter().collect(),
        ),
        G::Deconstruct(scrutinee, functor, args) => {
            let produces = args.iter().copied().collect();
            (
                GoalKind::Unify {
                    lhs: scrutinee,
                    rhs: UnifyRhs::Functor { name: functor.to_string(), args },
                },
                produces,
            )
        }
        G::Assign(out, from) => (
            GoalKind::Unify { lhs: out, rhs: UnifyRhs::Var(from) },
            [out].into_iter().collect(),
        ),
        G::Call(callee, args, outs, site) => (
            GoalKind::Call { callee, args, site },
            outs.into_iter().collect(),
        ),
        G::HoCall(closure, args, outs, site) => (
            GoalKind::HigherOrderCall { closure, args, site },
            outs.into_iter().collect(),
        ),
        G::Seq(gs) => {
            let conjuncts = build_goals(gs, next_id, labels);
            (GoalKind::SeqConj { conjuncts }, BTreeSet::new())
        }
        G::Par(gs) => {
            let conjuncts = build_goals(gs, next_id, labels);
            (GoalKind::ParConj { conjuncts }, BTreeSet::new())
        }
        G::Switch(var, arm_tmpls) => {
            let mut arms = Vec::new();
            for (functor, g) in arm_tmpls {
                arms.push(SwitchArm {
                    functor: functor.to_string(),
                    goal: build_goal(g, next_id, labels),
                });
            }
            (GoalKind::Switch { var, arms }, BTreeSet::new())
        }
        G::Ite(c, t, e) => (
            GoalKind::IfThenElse {
                cond: Box::new(build_goal(*c, next_id, labels)),
                then: Box::new(build_goal(*t, next_id, labels)),
                els: Box::new(build_goal(*e, next_id, labels)),
            },
            BTreeSet::new(),
        ),
        G::Neg(inner) => (
            GoalKind::Negation { inner: Box::new(build_goal(*inner, next_id, labels)) },
            BTreeSet::new(),
        ),
        G::Scope(inner) => (
            GoalKind::Scope { inner: Box::new(build_goal(*inner, next_id, labels)) },
            BTreeSet::new(),
        ),
        G::Disj(gs) => {
            let disjuncts = build_goals(gs, next_id, labels);
            (GoalKind::Disjunction { disjuncts }, BTreeSet::new())
        }
        G::Label(..) | G::Det(..) => unreachable!("wrappers handled above"),
    };
    Goal { id, determinism: Determinism::Det, produces, nonlocals: BTreeSet::new(), kind }
}

fn build_goals(gs: Vec<G>, next_id: &mut u32, labels: &mut BTreeMap<String, GoalId>) -> Vec<Goal> {
    gs.into_iter().map(|g| build_goal(g, next_id, labels)).collect()
}

/// Variables this goal node itself mentions (not counting its children).
fn direct_mentions(g: &Goal) -> BTreeSet<VarId> {
    let mut out = BTreeSet::new();
    match &g.kind {
        GoalKind::Unify { lhs, rhs } => {
            out.insert(*lhs);
            match rhs {
                UnifyRhs::Var(v) => {
                    out.insert(*v);
                }
                UnifyRhs::Functor { args, .. } => out.extend(args.iter().copied()),
            }
        }
        GoalKind::Call { args, .. } => out.extend(args.iter().copied()),
        GoalKind::HigherOrderCall { closure, args, .. } => {
            out.insert(*closure);
            out.extend(args.iter().copied());
        }
        GoalKind::Switch { var, .. } => {
            out.insert(*var);
        }
        _ => {}
    }
    out
}

/// Fills nonlocals (occurs inside and outside) and composite produces
/// (children's bindings that are visible outside). Returns the subtree's
/// per-variable occurrence counts.
fn finalize(g: &mut Goal, total: &BTreeMap<VarId, usize>) -> BTreeMap<VarId, usize> {
    let mut counts: BTreeMap<VarId, usize> = BTreeMap::new();
    for v in direct_mentions(g) {
        *counts.entry(v).or_default() += 1;
    }
    let merge = |counts: &mut BTreeMap<VarId, usize>, sub: BTreeMap<VarId, usize>| {
        for (v, n) in sub {
            *counts.entry(v).or_default() += n;
        }
    };
    let mut child_produces: BTreeSet<VarId> = BTreeSet::new();
    match &mut g.kind {
        GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
            for c in conjuncts {
                merge(&mut counts, finalize(c, total));
                child_produces.extend(c.produces.iter().copied());
            }
        }
        GoalKind::Switch { arms, .. } => {
            for a in arms {
                merge(&mut counts, finalize(&mut a.goal, total));
                child_produces.extend(a.goal.produces.iter().copied());
            }
        }
        GoalKind::IfThenElse { cond, then, els } => {
            // Condition bindings are visible only inside the then-arm,
            // never to the goal's surroundings.
            merge(&mut counts, finalize(cond, total));
            merge(&mut counts, finalize(then, total));
            child_produces.extend(then.produces.iter().copied());
            merge(&mut counts, finalize(els, total));
            child_produces.extend(els.produces.iter().copied());
        }
        GoalKind::Negation { inner } => {
            merge(&mut counts, finalize(inner, total));
        }
        GoalKind::Scope { inner } => {
            merge(&mut counts, finalize(inner, total));
            child_produces.extend(inner.produces.iter().copied());
        }
        GoalKind::Disjunction { disjuncts } => {
            for d in disjuncts {
                merge(&mut counts, finalize(d, total));
            }
        }
        GoalKind::Unify { .. } | GoalKind::Call { .. } | GoalKind::HigherOrderCall { .. } => {}
    }
    g.nonlocals = counts
        .keys()
        .copied()
        .filter(|v| total.get(v).copied().unwrap_or(0) > counts[v])
        .collect();
    if !child_produces.is_empty() {
        g.produces = child_produces.intersection(&g.nonlocals).copied().collect();
    }
    counts
}

/// Incrementally assembled [`Profile`].
#[derive(Default)]
pub struct ProfileBuilder {
    sites: BTreeMap<SiteId, SiteStats>,
    goal_entries: BTreeMap<(ProcKey, GoalId), u64>,
    cond_failures: BTreeMap<(ProcKey, GoalId), u64>,
}

impl ProfileBuilder {
    pub fn new() -> ProfileBuilder {
        ProfileBuilder::default()
    }

    pub fn site(&mut self, id: SiteId, count: u64, total_cost: Cost) -> &mut Self {
        self.sites.insert(id, SiteStats { count, total_cost });
        self
    }

    pub fn entry(&mut self, proc: &ProcKey, goal: GoalId, count: u64) -> &mut Self {
        self.goal_entries.insert((proc.clone(), goal), count);
        self
    }

    pub fn cond_failure(&mut self, proc: &ProcKey, goal: GoalId, count: u64) -> &mut Self {
        self.cond_failures.insert((proc.clone(), goal), count);
        self
    }

    pub fn build(self) -> Profile {
        Profile {
            sites: self.sites,
            goal_entries: self.goal_entries,
            cond_failures: self.cond_failures,
        }
    }
}

/// A ready-to-analyze program/profile pair, with labelled goal ids
/// reachable as `"proc_name.label"`.
pub struct Fixture {
    pub program: Program,
    pub profile: Profile,
    pub labels: BTreeMap<String, GoalId>,
}

impl Fixture {
    /// Goal id recorded under `"proc_name.label"`. Panics when absent:
    /// fixture labels are part of the fixture's contract.
    pub fn label(&self, name: &str) -> GoalId {
        *self
            .labels
            .get(name)
            .unwrap_or_else(|| panic!("fixture has no label `{name}`"))
    }
}

fn qualify(labels: &mut BTreeMap<String, GoalId>, proc: &str, built: &BuiltProc) {
    for (k, v) in &built.labels {
        labels.insert(format!("{proc}.{k}"), *v);
    }
}

fn ext(name: &str) -> CalleeRef {
    CalleeRef::External(name.to_string())
}

/// The two-conjunct producer/consumer example: `main` calls `p` (binds
/// `A`) then `q` (reads `A`). The cost split inside `p` and `q` decides
/// how well the pair overlaps.
///
/// * `p`: `pre()` for `pre_cost`, bind `A`, `post()` for `post_cost` —
///   so `p` produces `A` at offset `pre_cost` and costs
///   `pre_cost + post_cost`.
/// * `q`: `qpre()` for `qpre_cost`, then `quse(A)` for `quse_cost` — so
///   `q` first consumes `A` at offset `qpre_cost`.
fn fig1(pre_cost: Cost, post_cost: Cost, qpre_cost: Cost, quse_cost: Cost) -> Fixture {
    let s_p = SiteId(1);
    let s_q = SiteId(2);
    let s_pre = SiteId(3);
    let s_post = SiteId(4);
    let s_qpre = SiteId(5);
    let s_quse = SiteId(6);

    let mut pb = ProcBuilder::new("p");
    let a = pb.arg("A", ArgMode::Out);
    let p = pb.build(G::Label(
        "body",
        Box::new(G::Seq(vec![
            G::Call(ext("pre"), vec![], vec![], s_pre),
            G::Construct(a, "k", vec![]),
            G::Call(ext("post"), vec![], vec![], s_post),
        ])),
    ));

    let mut qb = ProcBuilder::new("q");
    let aq = qb.arg("A", ArgMode::In);
    let q = qb.build(G::Label(
        "body",
        Box::new(G::Seq(vec![
            G::Call(ext("qpre"), vec![], vec![], s_qpre),
            G::Call(ext("quse"), vec![aq], vec![], s_quse),
        ])),
    ));

    let mut mb = ProcBuilder::new("main");
    let am = mb.var("A");
    let main = mb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(CalleeRef::Proc(p.proc.key.clone()), vec![am], vec![am], s_p),
            G::Call(CalleeRef::Proc(q.proc.key.clone()), vec![am], vec![], s_q),
        ])),
    ));

    let mut labels = BTreeMap::new();
    qualify(&mut labels, "p", &p);
    qualify(&mut labels, "q", &q);
    qualify(&mut labels, "main", &main);

    let mut prof = ProfileBuilder::new();
    prof.site(s_p, 1, pre_cost + post_cost)
        .site(s_q, 1, qpre_cost + quse_cost)
        .site(s_pre, 1, pre_cost)
        .site(s_post, 1, post_cost)
        .site(s_qpre, 1, qpre_cost)
        .site(s_quse, 1, quse_cost)
        .entry(&main.proc.key, labels["main.conj"], 1)
        .entry(&p.proc.key, labels["p.body"], 1)
        .entry(&q.proc.key, labels["q.body"], 1);

    let entry = main.proc.key.clone();
    let program = Program::new(
        entry,
        vec![main.proc, p.proc, q.proc],
        ["pre", "post", "qpre", "quse"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// Producer binds early, consumer wants late: the friendly case.
/// `p` costs 5 producing `A` at 1; `q` costs 4 consuming `A` at 2.
pub fn fig1_left() -> Fixture {
    fig1(1.0, 4.0, 2.0, 2.0)
}

/// Producer binds late, consumer wants early: the stalling case.
/// `p` costs 5 producing `A` at 4; `q` costs 4 consuming `A` at 1.
pub fn fig1_right() -> Fixture {
    fig1(4.0, 1.0, 1.0, 3.0)
}

/// The `map_foldl` pipeline with its rounded profile table: a switch on
/// the list with a recursive cons clause
///
/// ```text
/// map_foldl(M, L, Acc0, Acc) :-
///     ( L => [],        pad(), Acc := Acc0
///     ; L => [X | Xs],  M(X, Y), fold(Y, Acc0, Acc1),
///                       map_foldl(M, Xs, Acc1, Acc)
///     ).
/// ```
///
/// Per-call means from the profile: `M` = 1,625,050; `fold` = 3
/// (producing `Acc1` at 3); the recursive call = 1,625,054, first
/// consuming `Acc1` at 1,625,051. The analyzed conjunction is the cons
/// clause, labelled `map_foldl.cons_arm`.
pub fn map_foldl() -> Fixture {
    let s_main = SiteId(1);
    let s_m = SiteId(2);
    let s_f = SiteId(3);
    let s_rec = SiteId(4);
    let s_pad = SiteId(5);
    let s_trans = SiteId(6);
    let s_combine = SiteId(7);

    // fold(Y, Acc0, Acc): transform the mapped value, combine it in.
    let mut fb = ProcBuilder::new("fold");
    let fy = fb.arg("Y", ArgMode::In);
    let facc0 = fb.arg("Acc0", ArgMode::In);
    let facc = fb.arg("Acc", ArgMode::Out);
    let ft = fb.var("T");
    let fold = fb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(ext("trans"), vec![fy, ft], vec![ft], s_trans),
            G::Call(ext("combine"), vec![ft, facc0, facc], vec![facc], s_combine),
        ])),
    ));

    let mf_key = ProcKey::new("map_foldl", 4, 0);
    let mut mb = ProcBuilder::new("map_foldl");
    let m = mb.arg("M", ArgMode::In);
    let l = mb.arg("L", ArgMode::In);
    let acc0 = mb.arg("Acc0", ArgMode::In);
    let acc = mb.arg("Acc", ArgMode::Out);
    let x = mb.var("X");
    let xs = mb.var("Xs");
    let y = mb.var("Y");
    let acc1 = mb.var("Acc1");
    let map_foldl = mb.build(G::Label(
        "switch",
        Box::new(G::Switch(
            l,
            vec![
                (
                    "[]",
                    G::Label(
                        "nil_arm",
                        Box::new(G::Seq(vec![
                            G::Call(ext("pad"), vec![], vec![], s_pad),
                            G::Assign(acc, acc0),
                        ])),
                    ),
                ),
                (
                    "[|]",
                    G::Label(
                        "cons_arm",
                        Box::new(G::Seq(vec![
                            G::Deconstruct(l, "[|]", vec![x, xs]),
                            G::HoCall(m, vec![x, y], vec![y], s_m),
                            G::Call(
                                CalleeRef::Proc(fold.proc.key.clone()),
                                vec![y, acc0, acc1],
                                vec![acc1],
                                s_f,
                            ),
                            G::Label(
                                "rec_call",
                                Box::new(G::Call(
                                    CalleeRef::Proc(mf_key.clone()),
                                    vec![m, xs, acc1, acc],
                                    vec![acc],
                                    s_rec,
                                )),
                            ),
                        ])),
                    ),
                ),
            ],
        )),
    ));

    let mut nb = ProcBuilder::new("main");
    let nm = nb.var("M");
    let nl = nb.var("L");
    let na0 = nb.var("Acc0");
    let na = nb.var("Acc");
    let main = nb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Construct(nm, "m_closure", vec![]),
            G::Construct(nl, "input_list", vec![]),
            G::Construct(na0, "zero", vec![]),
            G::Call(CalleeRef::Proc(mf_key.clone()), vec![nm, nl, na0, na], vec![na], s_main),
        ])),
    ));

    let mut labels = BTreeMap::new();
    qualify(&mut labels, "fold", &fold);
    qualify(&mut labels, "map_foldl", &map_foldl);
    qualify(&mut labels, "main", &main);

    let mut prof = ProfileBuilder::new();
    prof.site(s_main, 1, 1_625_054.0)
        .site(s_m, 600, 975_030_000.0)
        .site(s_f, 600, 1_800.0)
        .site(s_rec, 600, 975_032_400.0)
        .site(s_pad, 1, 1_625_051.0)
        .site(s_trans, 600, 600.0)
        .site(s_combine, 600, 1_200.0)
        .entry(&mf_key, labels["map_foldl.switch"], 601)
        .entry(&mf_key, labels["map_foldl.nil_arm"], 1)
        .entry(&mf_key, labels["map_foldl.cons_arm"], 600)
        .entry(&fold.proc.key, labels["fold.conj"], 600)
        .entry(&main.proc.key, labels["main.conj"], 1);

    let entry = main.proc.key.clone();
    let program = Program::new(
        entry,
        vec![main.proc, map_foldl.proc, fold.proc],
        ["trans", "combine", "pad"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// Parent/child pair for revisit testing. `child`'s two halves are
/// independent (its conjunction parallelizes to ~2×); `parent` runs
/// `child` next to an equally expensive independent call. Once the
/// child's advice lands, the parent's candidate is re-evaluated with the
/// cheaper child and its speedup drops from ~2.0 to ~1.5.
pub fn two_level() -> Fixture {
    let s_child = SiteId(1);
    let s_other = SiteId(2);
    let s_e1 = SiteId(3);
    let s_e2 = SiteId(4);

    let mut cb = ProcBuilder::new("child");
    let c_out = cb.arg("C", ArgMode::Out);
    let child = cb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(ext("e1"), vec![], vec![], s_e1),
            G::Call(ext("e2"), vec![c_out], vec![c_out], s_e2),
        ])),
    ));

    let mut pb = ProcBuilder::new("parent");
    let p_out = pb.arg("P", ArgMode::Out);
    let pc = pb.var("C");
    let parent = pb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(CalleeRef::Proc(child.proc.key.clone()), vec![pc], vec![pc], s_child),
            G::Call(ext("other"), vec![p_out], vec![p_out], s_other),
        ])),
    ));

    let mut labels = BTreeMap::new();
    qualify(&mut labels, "child", &child);
    qualify(&mut labels, "parent", &parent);

    let mut prof = ProfileBuilder::new();
    prof.site(s_child, 1, 1_000_000.0)
        .site(s_other, 1, 1_000_000.0)
        .site(s_e1, 1, 500_000.0)
        .site(s_e2, 1, 500_000.0)
        .entry(&parent.proc.key, labels["parent.conj"], 1)
        .entry(&child.proc.key, labels["child.conj"], 1);

    let entry = parent.proc.key.clone();
    let program = Program::new(
        entry,
        vec![parent.proc, child.proc],
        ["e1", "e2", "other"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// A procedure whose execution paths make 0, 1, or 2 recursive calls —
/// irregular recursion. The two-recursive-calls clause would parallelize
/// nicely, but no per-entry saving can be extrapolated, so the advisor
/// must stay silent.
pub fn irregular() -> Fixture {
    let s_one = SiteId(1);
    let s_two_a = SiteId(2);
    let s_two_b = SiteId(3);
    let s_wrap = SiteId(4);
    let s_comb = SiteId(5);

    let irr_key = ProcKey::new("irr", 2, 0);
    let mut ib = ProcBuilder::new("irr");
    let l = ib.arg("L", ArgMode::In);
    let r = ib.arg("R", ArgMode::Out);
    let a = ib.var("A");
    let r1 = ib.var("R1");
    let a2 = ib.var("A2");
    let b2 = ib.var("B2");
    let r2a = ib.var("R2a");
    let r2b = ib.var("R2b");
    let irr = ib.build(G::Label(
        "switch",
        Box::new(G::Switch(
            l,
            vec![
                ("leaf", G::Label("leaf_arm", Box::new(G::Construct(r, "leaf", vec![])))),
                (
                    "one",
                    G::Label(
                        "one_arm",
                        Box::new(G::Seq(vec![
                            G::Deconstruct(l, "one", vec![a]),
                            G::Call(CalleeRef::Proc(irr_key.clone()), vec![a, r1], vec![r1], s_one),
                            G::Call(ext("wrap"), vec![r1, r], vec![r], s_wrap),
                        ])),
                    ),
                ),
                (
                    "two",
                    G::Label(
                        "two_arm",
                        Box::new(G::Seq(vec![
                            G::Deconstruct(l, "two", vec![a2, b2]),
                            G::Call(
                                CalleeRef::Proc(irr_key.clone()),
                                vec![a2, r2a],
                                vec![r2a],
                                s_two_a,
                            ),
                            G::Call(
                                CalleeRef::Proc(irr_key.clone()),
                                vec![b2, r2b],
                                vec![r2b],
                                s_two_b,
                            ),
                            G::Call(ext("comb"), vec![r2a, r2b, r], vec![r], s_comb),
                        ])),
                    ),
                ),
            ],
        )),
    ));

    let mut labels = BTreeMap::new();
    qualify(&mut labels, "irr", &irr);

    // 1 outside entry + 30 + 35 + 35 recursive calls = 101 invocations.
    let mut prof = ProfileBuilder::new();
    prof.site(s_one, 30, 3_000_000.0)
        .site(s_two_a, 35, 3_500_000.0)
        .site(s_two_b, 35, 3_500_000.0)
        .site(s_wrap, 30, 30.0)
        .site(s_comb, 35, 35.0)
        .entry(&irr_key, labels["irr.switch"], 101)
        .entry(&irr_key, labels["irr.leaf_arm"], 36)
        .entry(&irr_key, labels["irr.one_arm"], 30)
        .entry(&irr_key, labels["irr.two_arm"], 35);

    let program = Program::new(
        irr_key,
        vec![irr.proc],
        ["wrap", "comb"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// Two independent calls of 50,000 each: the cleanest possible win
/// (speedup exactly 2 under zero overheads).
pub fn independent_pair() -> Fixture {
    let s_a = SiteId(1);
    let s_b = SiteId(2);
    let mb = ProcBuilder::new("main");
    let main = mb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(ext("ea"), vec![], vec![], s_a),
            G::Call(ext("eb"), vec![], vec![], s_b),
        ])),
    ));
    let mut labels = BTreeMap::new();
    qualify(&mut labels, "main", &main);
    let mut prof = ProfileBuilder::new();
    prof.site(s_a, 1, 50_000.0)
        .site(s_b, 1, 50_000.0)
        .entry(&main.proc.key, labels["main.conj"], 1);
    let entry = main.proc.key.clone();
    let program = Program::new(
        entry,
        vec![main.proc],
        ["ea", "eb"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// Producer binds its output at the very end, consumer needs it at the
/// very start: zero overlap, so any nonzero overheads make parallelizing
/// a strict loss.
pub fn tight_pair() -> Fixture {
    let s_p = SiteId(1);
    let s_q = SiteId(2);
    let s_work = SiteId(3);
    let s_use = SiteId(4);

    let mut pb = ProcBuilder::new("p");
    let a = pb.arg("A", ArgMode::Out);
    let p = pb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(ext("work"), vec![], vec![], s_work),
            G::Construct(a, "k", vec![]),
        ])),
    ));

    let mut qb = ProcBuilder::new("q");
    let aq = qb.arg("A", ArgMode::In);
    let q = qb.build(G::Call(ext("use"), vec![aq], vec![], s_use));

    let mut mb = ProcBuilder::new("main");
    let am = mb.var("A");
    let main = mb.build(G::Label(
        "conj",
        Box::new(G::Seq(vec![
            G::Call(CalleeRef::Proc(p.proc.key.clone()), vec![am], vec![am], s_p),
            G::Call(CalleeRef::Proc(q.proc.key.clone()), vec![am], vec![], s_q),
        ])),
    ));

    let mut labels = BTreeMap::new();
    qualify(&mut labels, "p", &p);
    qualify(&mut labels, "q", &q);
    qualify(&mut labels, "main", &main);

    let mut prof = ProfileBuilder::new();
    prof.site(s_p, 1, 100_000.0)
        .site(s_q, 1, 100_000.0)
        .site(s_work, 1, 100_000.0)
        .site(s_use, 1, 100_000.0)
        .entry(&main.proc.key, labels["main.conj"], 1)
        .entry(&p.proc.key, labels["p.conj"], 1);

    let entry = main.proc.key.clone();
    let program = Program::new(
        entry,
        vec![main.proc, p.proc, q.proc],
        ["work", "use"].iter().map(|s| s.to_string()).collect(),
    )
    .expect("fixture program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

/// Every named program fixture, for suites that sweep them all.
pub fn all_named() -> Vec<(&'static str, Fixture)> {
    vec![
        ("fig1_left", fig1_left()),
        ("fig1_right", fig1_right()),
        ("map_foldl", map_foldl()),
        ("two_level", two_level()),
        ("irregular", irregular()),
        ("independent_pair", independent_pair()),
        ("tight_pair", tight_pair()),
    ]
}

/// Seeded random abstract conjunction: 2..=`max_n` conjuncts with
/// integer costs in 1..=100 and up to three shared variables, each
/// produced before it is consumed, with integer event times inside each
/// conjunct.
pub fn random_conjuncts(seed: u64, max_n: usize) -> Vec<ParConjunct> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=max_n);
    let costs: Vec<Cost> = (0..n).map(|_| rng.gen_range(1..=100) as Cost).collect();
    let mut events: Vec<Vec<VarUse>> = vec![Vec::new(); n];
    let max_shared = 3.min(n - 1);
    let shared = rng.gen_range(0..=max_shared);
    for v in 0..shared {
        let var = VarId(v as u32);
        let producer = rng.gen_range(0..n - 1);
        let t = rng.gen_range(0..=costs[producer] as u64) as Cost;
        events[producer].push(VarUse { var, time: t, kind: UseKind::Produce });
        let mut consumers: Vec<usize> =
            (producer + 1..n).filter(|_| rng.gen_bool(0.5)).collect();
        if consumers.is_empty() {
            consumers.push(rng.gen_range(producer + 1..n));
        }
        for c in consumers {
            let t = rng.gen_range(0..=costs[c] as u64) as Cost;
            events[c].push(VarUse { var, time: t, kind: UseKind::Consume });
        }
    }
    costs
        .into_iter()
        .zip(events)
        .map(|(cost, mut evs)| {
            sort_var_uses(&mut evs);
            ParConjunct { cost, events: evs }
        })
        .collect()
}

/// Seeded random overheads: each field an integer in 0..=10.
pub fn random_overheads(seed: u64) -> OverheadParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = || rng.gen_range(0..=10) as Cost;
    OverheadParams {
        spark_cost: pick(),
        spark_delay: pick(),
        signal_cost: pick(),
        wait_cost: pick(),
        context_wakeup_delay: pick(),
        barrier_cost: pick(),
    }
}

/// Seeded random straight-line program: `main` is a conjunction of calls
/// to generated worker procedures, each worker splitting its inputs
/// between an early and a late phase so consumption and production times
/// vary. All counts are 1 and all costs integers, so analysis results
/// are exact.
pub fn random_program(seed: u64) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6usize);
    let mut next_site = 0u32;
    let mut site = || {
        next_site += 1;
        SiteId(next_site)
    };

    let mut externals: BTreeSet<String> = BTreeSet::new();
    let mut procs: Vec<Procedure> = Vec::new();
    let mut prof = ProfileBuilder::new();
    let mut labels = BTreeMap::new();

    let mut mb = ProcBuilder::new("main");
    let outs: Vec<VarId> = (0..n).map(|i| mb.var(&format!("V{i}"))).collect();
    let mut conjuncts: Vec<G> = Vec::new();
    let mut worker_sites: Vec<(SiteId, Cost)> = Vec::new();

    for i in 0..n {
        // Which earlier outputs does worker i read?
        let consumed: Vec<VarId> =
            (0..i).filter(|_| rng.gen_bool(0.4)).map(|j| outs[j]).collect();

        let early_cost = rng.gen_range(1..=1000) as Cost;
        let late_cost = rng.gen_range(1..=1000) as Cost;
        let tail_cost =
            if rng.gen_bool(0.5) { rng.gen_range(1..=500) as Cost } else { 0.0 };

        // Worker body: early phase reads some inputs immediately, late
        // phase reads the rest and binds the output, optional tail runs
        // after the output is bound.
        let mut wb = ProcBuilder::new(&format!("w{i}"));
        let mut formal_ins = Vec::new();
        for (k, _) in consumed.iter().enumerate() {
            formal_ins.push(wb.arg(&format!("I{k}"), ArgMode::In));
        }
        let w_out = wb.arg("O", ArgMode::Out);
        let split = if formal_ins.is_empty() { 0 } else { rng.gen_range(0..=formal_ins.len()) };
        let (early_ins, late_ins) = formal_ins.split_at(split);

        let e_early = format!("w{i}_early");
        let e_late = format!("w{i}_late");
        externals.insert(e_early.clone());
        externals.insert(e_late.clone());
        let s_early = site();
        let s_late = site();
        prof.site(s_early, 1, early_cost).site(s_late, 1, late_cost);

        let mut body = vec![
            G::Call(ext(&e_early), early_ins.to_vec(), vec![], s_early),
            G::Call(
                ext(&e_late),
                late_ins.iter().copied().chain([w_out]).collect(),
                vec![w_out],
                s_late,
            ),
        ];
        if tail_cost > 0.0 {
            let e_tail = format!("w{i}_tail");
            externals.insert(e_tail.clone());
            let s_tail = site();
            prof.site(s_tail, 1, tail_cost);
            body.push(G::Call(ext(&e_tail), vec![], vec![], s_tail));
        }
        let built = wb.build(G::Label("conj", Box::new(G::Seq(body))));
        prof.entry(&built.proc.key, built.labels["conj"], 1);

        let s_w = site();
        prof.site(s_w, 1, early_cost + late_cost + tail_cost);
        worker_sites.push((s_w, early_cost + late_cost + tail_cost));
        conjuncts.push(G::Call(
            CalleeRef::Proc(built.proc.key.clone()),
            consumed.iter().copied().chain([outs[i]]).collect(),
            vec![outs[i]],
            s_w,
        ));
        procs.push(built.proc);
    }

    let main = mb.build(G::Label("conj", Box::new(G::Seq(conjuncts))));
    prof.entry(&main.proc.key, main.labels["conj"], 1);
    qualify(&mut labels, "main", &main);

    let entry = main.proc.key.clone();
    let mut all = vec![main.proc];
    all.extend(procs);
    let program =
        Program::new(entry, all, externals).expect("generated program is well-formed");
    Fixture { program, profile: prof.build(), labels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::validate;

    #[test]
    fn named_fixtures_validate_cleanly() {
        for (name, f) in all_named() {
            let diags = validate(&f.program, &f.profile);
            assert!(diags.is_empty(), "{name}: {:?}", diags);
        }
    }

    #[test]
    fn builder_derives_nonlocals_and_produces() {
        let f = map_foldl();
        let mf = ProcKey::new("map_foldl", 4, 0);
        let proc = f.program.proc(&mf).unwrap();
        // The cons-clause conjunction: its conjuncts' produced sets feed
        // the shared-variable discovery.
        let conj = proc.goal(f.label("map_foldl.cons_arm")).unwrap();
        let GoalKind::SeqConj { conjuncts } = &conj.kind else {
            panic!("cons arm is a conjunction")
        };
        assert_eq!(conjuncts.len(), 4);
        // The deconstruction binds X and Xs; both are read later, so both
        // are nonlocal to it.
        assert_eq!(conjuncts[0].produces.len(), 2);
        assert!(conjuncts[0].produces.iter().all(|v| conjuncts[0].nonlocals.contains(v)));
        // The whole clause exposes only Acc to the switch.
        let acc = proc.head[3].var;
        assert_eq!(conj.produces.iter().copied().collect::<Vec<_>>(), vec![acc]);
        // The recursive call consumes the mid-pipeline values.
        let rec = proc.goal(f.label("map_foldl.rec_call")).unwrap();
        assert!(rec.consumed().len() >= 3); // M, Xs, Acc1
    }

    #[test]
    fn random_program_is_deterministic_and_valid() {
        for seed in [0u64, 1, 7, 42] {
            let a = random_program(seed);
            let b = random_program(seed);
            assert_eq!(a.program, b.program);
            assert_eq!(a.profile, b.profile);
            let diags = validate(&a.program, &a.profile);
            assert!(diags.is_empty(), "seed {seed}: {:?}", diags);
        }
    }

    #[test]
    fn random_conjuncts_respect_their_invariants() {
        for seed in 0..50 {
            let conjs = random_conjuncts(seed, 8);
            assert!((2..=8).contains(&conjs.len()));
            let mut produced: BTreeMap<VarId, usize> = BTreeMap::new();
            for (i, c) in conjs.iter().enumerate() {
                assert!(c.cost >= 1.0 && c.cost <= 100.0);
                for e in &c.events {
                    assert!(e.time >= 0.0 && e.time <= c.cost);
                    if e.kind == UseKind::Produce {
                        assert!(produced.insert(e.var, i).is_none());
                    }
                }
            }
            for (i, c) in conjs.iter().enumerate() {
                for e in &c.events {
                    if e.kind == UseKind::Consume {
                        assert!(produced[&e.var] < i, "consumed at {i} before production");
                    }
                }
            }
        }
    }
}
