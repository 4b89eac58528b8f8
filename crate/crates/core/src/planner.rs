//! Choosing how to parallelise one conjunction.
//!
//! Given a sequential conjunction and timing data for its conjuncts, the
//! planner:
//!
//! 1. finds the *middle* — the span from the first to the last expensive
//!    conjunct — and fuses leading runs of free unifications into the
//!    goal that consumes them;
//! 2. searches contiguous partitions of the middle into parallel groups
//!    with [`find_best_partition`], evaluating candidates under the
//!    overlap model (a budget caps the exponential branch-and-eval
//!    process, after which it degrades to a greedy walk);
//! 3. post-processes the winner: [`shrink_edges`] pulls edge groups back
//!    out of the parallel region when running them sequentially is
//!    cheaper, and [`expand_edges`] pulls cheap neighbouring conjuncts in
//!    when that helps;
//! 4. classifies the procedure's recursion and extrapolates the
//!    per-execution saving to a per-entry-call figure, since a saving
//!    inside a recursive clause is collected once per iteration.
//!
//! The result is an [`Advice`]: which conjuncts to run in parallel, in
//! which groups, and what it should be worth.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::config::{AnalysisConfig, SearchParams};
use crate::ir::{
    AnalysisError, CalleeRef, Cost, Goal, GoalId, GoalKind, ProcKey, Procedure, Profile, Program,
    SiteId, VarId,
};
use crate::overlap::{
    find_par_time, finish_time, speedup, walk_conjunct, OverheadParams, OverlapError, ParConjunct,
};
use crate::timing::{sort_var_uses, Analysis, UseKind, VarUse};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum PlannerError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
    #[error("goal {goal} in {proc} is not a sequential conjunction")]
    NotAConjunction { proc: ProcKey, goal: GoalId },
    #[error("{proc} recurses irregularly; savings cannot be extrapolated")]
    IrregularRecursion { proc: ProcKey },
    #[error("{proc} was never entered from outside its recursion; nothing to extrapolate from")]
    NoEntryCalls { proc: ProcKey },
    #[error("site {site} is not a recursive call site of {proc}")]
    NotARecursiveSite { proc: ProcKey, site: SiteId },
}

/// A partition of a window of units into contiguous groups; each entry
/// is a half-open `(start, end)` span in unit indices.
pub type Partition = Vec<(usize, usize)>;

/// A variable crossing unit boundaries: who binds it, who reads it.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub var: VarId,
    /// Producing unit.
    pub producer: usize,
    /// Consuming units, ascending, all greater than `producer`.
    pub consumers: Vec<usize>,
}

/// Anything the partition search can run over: an ordered row of units
/// that can be costed individually and composed into group descriptors.
///
/// `window` is the span of units currently considered part of the
/// parallel region. Variables produced before it are available from the
/// start (no future is created for them), and consumers beyond it read
/// the ordinary binding after the barrier, so neither generates events.
pub trait ConjunctSource {
    fn len(&self) -> usize;
    fn unit_cost(&self, i: usize) -> Cost;
    /// Units `[a, b)` composed into a single parallel conjunct.
    fn group(
        &self,
        a: usize,
        b: usize,
        window: (usize, usize),
    ) -> Result<ParConjunct, PlannerError>;
}

/// Shared group-assembly logic: which flows become events for units
/// `[a, b)` under `window`, with times supplied by the source.
fn assemble_group(
    cost: Cost,
    flows: &[Flow],
    a: usize,
    b: usize,
    window: (usize, usize),
    mut produce_at: impl FnMut(VarId) -> Result<Cost, PlannerError>,
    mut consume_at: impl FnMut(VarId) -> Result<Cost, PlannerError>,
) -> Result<ParConjunct, PlannerError> {
    let (wlo, whi) = window;
    let mut events = Vec::new();
    for flow in flows {
        if (a..b).contains(&flow.producer) {
            if flow.consumers.iter().any(|&c| c >= b && c < whi) {
                let t = produce_at(flow.var)?;
                events.push(VarUse {
                    var: flow.var,
                    time: t.clamp(0.0, cost),
                    kind: UseKind::Produce,
                });
            }
        } else if flow.producer >= wlo
            && flow.producer < a
            && flow.consumers.iter().any(|&c| (a..b).contains(&c))
        {
            let t = consume_at(flow.var)?;
            events.push(VarUse { var: flow.var, time: t.clamp(0.0, cost), kind: UseKind::Consume });
        }
    }
    sort_var_uses(&mut events);
    Ok(ParConjunct { cost, events })
}

/// A source whose units are pre-built conjunct descriptors with explicit
/// event timelines; group composition is prefix arithmetic. Used for
/// search testing and simulation, where no IR backs the conjunction.
pub struct AbstractSource {
    conjuncts: Vec<ParConjunct>,
    flows: Vec<Flow>,
    /// Production/consumption times per (unit, var).
    times: BTreeMap<(usize, VarId), Cost>,
}

impl AbstractSource {
    /// Builds a source from per-conjunct descriptors. Fails on a variable
    /// with two producers or one consumed before (or where) it is
    /// produced. Consumed variables with no producer are inputs from
    /// outside the conjunction and never block anyone.
    pub fn new(conjuncts: Vec<ParConjunct>) -> Result<AbstractSource, String> {
        let mut producers: BTreeMap<VarId, usize> = BTreeMap::new();
        let mut consumers: BTreeMap<VarId, Vec<usize>> = BTreeMap::new();
        let mut times = BTreeMap::new();
        for (i, c) in conjuncts.iter().enumerate() {
            for ev in &c.events {
                match ev.kind {
                    UseKind::Produce => {
                        if producers.insert(ev.var, i).is_some() {
                            return Err(format!("{} has two producers", ev.var));
                        }
                    }
                    UseKind::Consume => consumers.entry(ev.var).or_default().push(i),
                }
                times.insert((i, ev.var), ev.time);
            }
        }
        let mut flows = Vec::new();
        for (var, &p) in &producers {
            let cs: Vec<usize> = consumers.get(var).cloned().unwrap_or_default();
            if cs.iter().any(|&c| c <= p) {
                return Err(format!("{var} is consumed no later than it is produced"));
            }
            if !cs.is_empty() {
                flows.push(Flow { var: *var, producer: p, consumers: cs });
            }
        }
        Ok(AbstractSource { conjuncts, flows, times })
    }

    fn prefix(&self, a: usize, i: usize) -> Cost {
        self.conjuncts[a..i].iter().map(|c| c.cost).sum()
    }
}

impl ConjunctSource for AbstractSource {
    fn len(&self) -> usize {
        self.conjuncts.len()
    }

    fn unit_cost(&self, i: usize) -> Cost {
        self.conjuncts[i].cost
    }

    fn group(
        &self,
        a: usize,
        b: usize,
        window: (usize, usize),
    ) -> Result<ParConjunct, PlannerError> {
        let cost = self.prefix(a, b);
        assemble_group(
            cost,
            &self.flows,
            a,
            b,
            window,
            |var| {
                let flow = self.flows.iter().find(|f| f.var == var).expect("flow exists");
                Ok(self.prefix(a, flow.producer) + self.times[&(flow.producer, var)])
            },
            |var| {
                let flow = self.flows.iter().find(|f| f.var == var).expect("flow exists");
                let first = flow
                    .consumers
                    .iter()
                    .copied()
                    .find(|c| (a..b).contains(c))
                    .expect("a consumer is in range");
                Ok(self.prefix(a, first) + self.times[&(first, var)])
            },
        )
    }
}

/// A source backed by real IR conjuncts; group timings come from the
/// production/first-consumption analyses over the spanned goal slice, so
/// a group's event times see branch weighting and callee recursion just
/// like single conjuncts do.
pub struct IrSource<'a> {
    analysis: &'a Analysis<'a>,
    proc: &'a ProcKey,
    conjuncts: &'a [Goal],
    /// Conjunct span per unit.
    spans: Vec<(usize, usize)>,
    costs: Vec<Cost>,
    flows: Vec<Flow>,
    /// Unit range of the middle (the searchable span).
    pub middle: (usize, usize),
    prod_memo: RefCell<HashMap<(usize, usize, VarId), Cost>>,
    cons_memo: RefCell<HashMap<(usize, usize, VarId), Cost>>,
}

impl<'a> IrSource<'a> {
    /// Builds a source for a conjunction, or `None` when fewer than two
    /// conjuncts reach the `expensive` threshold (nothing worth running
    /// in parallel).
    ///
    /// Conjuncts outside the middle become single-conjunct units; inside
    /// it, each run of (free) unifications fuses into the conjunct that
    /// follows, so a deconstruction never ends up parallelised away from
    /// the call it feeds.
    pub fn new(
        analysis: &'a Analysis<'a>,
        proc: &'a ProcKey,
        conjuncts: &'a [Goal],
        expensive: Cost,
    ) -> Result<Option<IrSource<'a>>, PlannerError> {
        let mut conj_costs = Vec::with_capacity(conjuncts.len());
        for c in conjuncts {
            conj_costs.push(analysis.goal_cost(c, proc)?);
        }
        let mut pricey = conj_costs.iter().enumerate().filter(|(_, &c)| c >= expensive);
        let lo = match pricey.next() {
            Some((i, _)) => i,
            None => return Ok(None),
        };
        let hi = match pricey.last() {
            Some((i, _)) => i + 1,
            None => return Ok(None), // only one expensive conjunct
        };

        let mut spans: Vec<(usize, usize)> = (0..lo).map(|i| (i, i + 1)).collect();
        let mlo = spans.len();
        let mut run_start = lo;
        for (i, c) in conjuncts.iter().enumerate().take(hi).skip(lo) {
            if matches!(c.kind, GoalKind::Unify { .. }) {
                continue;
            }
            spans.push((run_start, i + 1));
            run_start = i + 1;
        }
        if run_start < hi {
            // Trailing unifications: keep them with the previous unit.
            if spans.len() > mlo {
                spans.last_mut().expect("at least one unit").1 = hi;
            } else {
                spans.push((run_start, hi));
            }
        }
        let mhi = spans.len();
        spans.extend((hi..conjuncts.len()).map(|i| (i, i + 1)));

        if mhi - mlo < 2 {
            return Ok(None);
        }

        let costs: Vec<Cost> = spans
            .iter()
            .map(|&(s, e)| conj_costs[s..e].iter().sum())
            .collect();

        // Unit each conjunct belongs to.
        let mut unit_of = vec![0usize; conjuncts.len()];
        for (u, &(s, e)) in spans.iter().enumerate() {
            for slot in unit_of.iter_mut().take(e).skip(s) {
                *slot = u;
            }
        }

        let mut producer: BTreeMap<VarId, usize> = BTreeMap::new();
        let mut duplicated: BTreeSet<VarId> = BTreeSet::new();
        for (i, c) in conjuncts.iter().enumerate() {
            for &v in &c.produces {
                if producer.insert(v, i).is_some() {
                    duplicated.insert(v);
                }
            }
        }
        let mut flows = Vec::new();
        for (&var, &pc) in &producer {
            if duplicated.contains(&var) {
                continue; // malformed input; validation reports it
            }
            let p = unit_of[pc];
            let mut cs: Vec<usize> = Vec::new();
            for (i, c) in conjuncts.iter().enumerate() {
                let u = unit_of[i];
                if u != p && c.consumed().contains(&var) && !cs.contains(&u) {
                    cs.push(u);
                }
            }
            if cs.iter().any(|&c| c < p) {
                continue; // consumed before produced; validation reports it
            }
            if !cs.is_empty() {
                flows.push(Flow { var, producer: p, consumers: cs });
            }
        }

        Ok(Some(IrSource {
            analysis,
            proc,
            conjuncts,
            spans,
            costs,
            flows,
            middle: (mlo, mhi),
            prod_memo: RefCell::new(HashMap::new()),
            cons_memo: RefCell::new(HashMap::new()),
        }))
    }

    /// Conjunct span covered by units `[a, b)`.
    pub fn conjunct_span(&self, a: usize, b: usize) -> (usize, usize) {
        (self.spans[a].0, self.spans[b - 1].1)
    }

    fn slice(&self, a: usize, b: usize) -> &[Goal] {
        let (s, e) = self.conjunct_span(a, b);
        &self.conjuncts[s..e]
    }

    fn produce_time(&self, a: usize, b: usize, var: VarId) -> Result<Cost, PlannerError> {
        if let Some(&t) = self.prod_memo.borrow().get(&(a, b, var)) {
            return Ok(t);
        }
        let t = self.analysis.production_time_in(self.proc, self.slice(a, b), var)?;
        self.prod_memo.borrow_mut().insert((a, b, var), t);
        Ok(t)
    }

    fn consume_time(&self, a: usize, b: usize, var: VarId) -> Result<Cost, PlannerError> {
        if let Some(&t) = self.cons_memo.borrow().get(&(a, b, var)) {
            return Ok(t);
        }
        let t = self.analysis.first_consumption_time_in(self.proc, self.slice(a, b), var)?;
        self.cons_memo.borrow_mut().insert((a, b, var), t);
        Ok(t)
    }
}

impl ConjunctSource for IrSource<'_> {
    fn len(&self) -> usize {
        self.spans.len()
    }

    fn unit_cost(&self, i: usize) -> Cost {
        self.costs[i]
    }

    fn group(
        &self,
        a: usize,
        b: usize,
        window: (usize, usize),
    ) -> Result<ParConjunct, PlannerError> {
        let cost: Cost = self.costs[a..b].iter().sum();
        assemble_group(
            cost,
            &self.flows,
            a,
            b,
            window,
            |var| self.produce_time(a, b, var),
            |var| self.consume_time(a, b, var),
        )
    }
}

/// Predicted time of a parallel region on its own: the groups evaluated
/// under the overlap model, with the window taken to be exactly their
/// span.
pub fn region_time<S: ConjunctSource + ?Sized>(
    source: &S,
    groups: &[(usize, usize)],
    overheads: &OverheadParams,
) -> Result<Cost, PlannerError> {
    let window = (groups[0].0, groups[groups.len() - 1].1);
    let descs: Vec<ParConjunct> = groups
        .iter()
        .map(|&(a, b)| source.group(a, b, window))
        .collect::<Result<_, _>>()?;
    Ok(find_par_time(&descs, overheads)?.total)
}

/// Result of [`find_best_partition`].
#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_time: Cost,
    /// Every partition achieving `best_time` that the search saw, sorted.
    pub best: Vec<Vec<(usize, usize)>>,
    /// Partition evaluations spent (the initial one is free).
    pub evals: u64,
    /// True when the evaluation budget stopped the search from exploring
    /// both alternatives somewhere.
    pub truncated: bool,
}

/// Walk state for the finalised (non-last) groups of a partial
/// partition; candidates are evaluated by walking only their tail
/// groups on top of this.
#[derive(Clone)]
struct Prefix {
    groups: Vec<(usize, usize)>,
    prods: BTreeMap<VarId, Cost>,
    finishes: Vec<Cost>,
}

impl Prefix {
    fn empty() -> Prefix {
        Prefix { groups: Vec::new(), prods: BTreeMap::new(), finishes: Vec::new() }
    }
}

struct Search<'s, S: ConjunctSource> {
    source: &'s S,
    window: (usize, usize),
    o: OverheadParams,
    params: SearchParams,
    evals: u64,
    truncated: bool,
    /// Cheapest complete partition seen; used only when pruning.
    best_seen: Cost,
}

#[derive(Clone, Copy, PartialEq)]
enum Branch {
    Extend,
    AddNew,
}

impl<S: ConjunctSource> Search<'_, S> {
    /// Time of the partial partition `prefix ++ tail`, treating the final
    /// tail group as the last in the conjunction.
    fn complete(&self, prefix: &Prefix, tail: &[(usize, usize)]) -> Result<Cost, PlannerError> {
        let mut prods = prefix.prods.clone();
        let mut fins = prefix.finishes.clone();
        let count = fins.len() + tail.len();
        for &(a, b) in tail {
            let d = self.source.group(a, b, self.window)?;
            let f = walk_conjunct(&d, fins.len(), count, &self.o, &mut prods).map_err(|var| {
                OverlapError::UnproducedConsume { conjunct: fins.len(), var }
            })?;
            fins.push(f);
        }
        Ok(finish_time(&fins, &self.o))
    }

    /// Finalises `group` as a non-last group on top of `prefix`.
    fn push_group(&self, prefix: &Prefix, group: (usize, usize)) -> Result<Prefix, PlannerError> {
        let mut next = prefix.clone();
        let d = self.source.group(group.0, group.1, self.window)?;
        // count = index + 2 marks the group as not-last so it pays the
        // spark for the rest of the conjunction.
        let f = walk_conjunct(&d, next.finishes.len(), next.finishes.len() + 2, &self.o, &mut next.prods)
            .map_err(|var| OverlapError::UnproducedConsume { conjunct: next.finishes.len(), var })?;
        next.finishes.push(f);
        next.groups.push(group);
        Ok(next)
    }

    fn recurse(
        &mut self,
        prefix: Prefix,
        last: (usize, usize),
        last_time: Cost,
        next: usize,
    ) -> Result<(Cost, Vec<Vec<(usize, usize)>>), PlannerError> {
        if next == self.window.1 {
            if last_time < self.best_seen {
                self.best_seen = last_time;
            }
            let mut full = prefix.groups;
            full.push(last);
            return Ok((last_time, vec![full]));
        }
        let t_ext = self.complete(&prefix, &[(last.0, next + 1)])?;
        let t_add = self.complete(&prefix, &[last, (next, next + 1)])?;
        self.evals += 2;
        // Cheaper branch first; on a tie, starting a new group wins.
        let order = if t_ext < t_add {
            [Branch::Extend, Branch::AddNew]
        } else {
            [Branch::AddNew, Branch::Extend]
        };
        let mut acc: (Cost, Vec<Vec<(usize, usize)>>) = (f64::INFINITY, Vec::new());
        for (i, branch) in order.into_iter().enumerate() {
            if i == 1 && self.evals >= self.params.prefer_linear_evals {
                self.truncated = true;
                break;
            }
            let partial = if branch == Branch::Extend { t_ext } else { t_add };
            if self.params.enable_pruning && partial > self.best_seen {
                // A partial partition never gets cheaper by growing, so
                // nothing down this branch can beat what we have.
                continue;
            }
            let sub = match branch {
                Branch::Extend => {
                    self.recurse(prefix.clone(), (last.0, next + 1), t_ext, next + 1)?
                }
                Branch::AddNew => {
                    let grown = self.push_group(&prefix, last)?;
                    self.recurse(grown, (next, next + 1), t_add, next + 1)?
                }
            };
            if sub.0 < acc.0 {
                acc = sub;
            } else if sub.0 == acc.0 {
                acc.1.extend(sub.1);
            }
        }
        Ok(acc)
    }
}

/// Searches contiguous partitions of the units in `window` for the
/// cheapest parallel schedule under the overlap model.
///
/// Candidates grow left to right; at each unit the search evaluates
/// extending the current group versus starting a new one, recursing into
/// the cheaper alternative first and into the other too while the
/// evaluation budget lasts. All partitions tied for the best time are
/// returned.
pub fn find_best_partition<S: ConjunctSource>(
    source: &S,
    window: (usize, usize),
    overheads: &OverheadParams,
    params: &SearchParams,
) -> Result<SearchResult, PlannerError> {
    let (wlo, whi) = window;
    assert!(wlo < whi && whi <= source.len(), "bad search window");
    let mut search = Search {
        source,
        window,
        o: *overheads,
        params: *params,
        evals: 0,
        truncated: false,
        best_seen: f64::INFINITY,
    };
    let init = (wlo, wlo + 1);
    let t0 = search.complete(&Prefix::empty(), &[init])?;
    let (best_time, mut best) = search.recurse(Prefix::empty(), init, t0, wlo + 1)?;
    best.sort();
    Ok(SearchResult { best_time, best, evals: search.evals, truncated: search.truncated })
}

/// Among equally-good partitions, prefer fewer groups, then boundaries
/// as far left as possible.
pub fn pick_preferred(best: &[Vec<(usize, usize)>]) -> Vec<(usize, usize)> {
    let bounds = |p: &Vec<(usize, usize)>| -> Vec<usize> { p[1..].iter().map(|g| g.0).collect() };
    best.iter()
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| bounds(a).cmp(&bounds(b))))
        .expect("at least one best partition")
        .clone()
}

/// Repeatedly moves an edge group out of the parallel region while the
/// region is cheaper without it (the group then runs sequentially before
/// or after). Returns the surviving groups and whether each edge moved.
pub fn shrink_edges<S: ConjunctSource>(
    source: &S,
    mut groups: Vec<(usize, usize)>,
    overheads: &OverheadParams,
) -> Result<(Vec<(usize, usize)>, bool, bool), PlannerError> {
    let seq_cost = |s: &S, (a, b): (usize, usize)| -> Cost {
        (a..b).map(|i| s.unit_cost(i)).sum()
    };
    let mut shrank_left = false;
    let mut shrank_right = false;
    while groups.len() >= 2 {
        let cur = region_time(source, &groups, overheads)?;
        let alt = seq_cost(source, groups[0]) + region_time(source, &groups[1..], overheads)?;
        if alt < cur {
            groups.remove(0);
            shrank_left = true;
        } else {
            break;
        }
    }
    while groups.len() >= 2 {
        let cur = region_time(source, &groups, overheads)?;
        let last = groups[groups.len() - 1];
        let alt =
            region_time(source, &groups[..groups.len() - 1], overheads)? + seq_cost(source, last);
        if alt < cur {
            groups.pop();
            shrank_right = true;
        } else {
            break;
        }
    }
    Ok((groups, shrank_left, shrank_right))
}

/// Grows edge groups one neighbouring unit at a time while the total
/// (sequential context plus parallel region) strictly improves. Only
/// edges that did not shrink are tried; `limits` bounds how far
/// absorption may reach.
pub fn expand_edges<S: ConjunctSource>(
    source: &S,
    mut groups: Vec<(usize, usize)>,
    limits: (usize, usize),
    try_left: bool,
    try_right: bool,
    overheads: &OverheadParams,
) -> Result<Vec<(usize, usize)>, PlannerError> {
    let total = |s: &S, gs: &[(usize, usize)]| -> Result<Cost, PlannerError> {
        let before: Cost = (limits.0..gs[0].0).map(|i| s.unit_cost(i)).sum();
        let after: Cost = (gs[gs.len() - 1].1..limits.1).map(|i| s.unit_cost(i)).sum();
        Ok(before + region_time(s, gs, overheads)? + after)
    };
    if try_left {
        let mut best = total(source, &groups)?;
        while groups[0].0 > limits.0 {
            let mut cand = groups.clone();
            cand[0].0 -= 1;
            let t = total(source, &cand)?;
            if t < best {
                best = t;
                groups = cand;
            } else {
                break;
            }
        }
    }
    if try_right {
        let mut best = total(source, &groups)?;
        while groups[groups.len() - 1].1 < limits.1 {
            let mut cand = groups.clone();
            cand.last_mut().unwrap().1 += 1;
            let t = total(source, &cand)?;
            if t < best {
                best = t;
                groups = cand;
            } else {
                break;
            }
        }
    }
    Ok(groups)
}

/// How a procedure recurses, as far as extrapolation is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecursionClass {
    /// No recursive call sites.
    None,
    /// One recursive site, at most one call per invocation.
    Single,
    /// Several recursive sites in different clauses, still at most one
    /// call per invocation.
    MultiClauseSingle,
    /// Exactly two recursive sites, invoked zero or two at a time.
    Double,
    /// Anything else.
    Irregular,
}

impl std::fmt::Display for RecursionClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RecursionClass::None => "none",
            RecursionClass::Single => "single",
            RecursionClass::MultiClauseSingle => "multi_clause_single",
            RecursionClass::Double => "double",
            RecursionClass::Irregular => "irregular",
        };
        f.write_str(s)
    }
}

/// A procedure's recursion shape plus the profile counts extrapolation
/// needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RecursionInfo {
    pub class: RecursionClass,
    /// Call sites in the procedure's own body that re-enter its clique:
    /// (site, call goal, profiled count).
    pub sites: Vec<(SiteId, GoalId, u64)>,
    /// Calls into the procedure from outside its clique; running the
    /// program entry point counts as one call.
    pub entry_calls: u64,
    /// All calls to the procedure, from anywhere.
    pub total_calls: u64,
}

/// Strongly connected components of the call graph, as a component id
/// per procedure. Procedures in the same component can reach each other
/// through calls (mutual recursion); a lone procedure is its own
/// component.
pub fn call_graph_sccs(program: &Program) -> BTreeMap<ProcKey, usize> {
    use petgraph::graph::DiGraph;
    let mut graph: DiGraph<(), ()> = DiGraph::new();
    let mut node_of = BTreeMap::new();
    for p in &program.procedures {
        node_of.insert(p.key.clone(), graph.add_node(()));
    }
    for p in &program.procedures {
        let from = node_of[&p.key];
        p.body.visit(&mut |g| {
            if let GoalKind::Call { callee: CalleeRef::Proc(k), .. } = &g.kind {
                if let Some(&to) = node_of.get(k) {
                    graph.add_edge(from, to, ());
                }
            }
        });
    }
    let mut out = BTreeMap::new();
    for (id, comp) in petgraph::algo::tarjan_scc(&graph).into_iter().enumerate() {
        for node in comp {
            let key = node_of
                .iter()
                .find(|(_, &n)| n == node)
                .map(|(k, _)| k.clone())
                .expect("node belongs to a procedure");
            out.insert(key, id);
        }
    }
    out
}

/// Per-invocation counts of recursive calls a goal can make: the set of
/// possible multiplicities, capped at 3 (anything at 3 or more is
/// already irregular).
fn rec_multiplicities(goal: &Goal, rec_ids: &BTreeSet<GoalId>) -> BTreeSet<u8> {
    fn seq(a: &BTreeSet<u8>, b: &BTreeSet<u8>) -> BTreeSet<u8> {
        let mut out = BTreeSet::new();
        for &x in a {
            for &y in b {
                out.insert((x + y).min(3));
            }
        }
        out
    }
    let zero: BTreeSet<u8> = [0].into_iter().collect();
    match &goal.kind {
        GoalKind::Call { .. } => {
            if rec_ids.contains(&goal.id) {
                [1].into_iter().collect()
            } else {
                zero
            }
        }
        GoalKind::Unify { .. } | GoalKind::HigherOrderCall { .. } => zero,
        GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
            conjuncts.iter().fold(zero, |acc, c| seq(&acc, &rec_multiplicities(c, rec_ids)))
        }
        GoalKind::Switch { arms, .. } => {
            let mut out = BTreeSet::new();
            for a in arms {
                out.extend(rec_multiplicities(&a.goal, rec_ids));
            }
            if out.is_empty() {
                zero
            } else {
                out
            }
        }
        GoalKind::IfThenElse { cond, then, els } => {
            let c = rec_multiplicities(cond, rec_ids);
            let mut out = seq(&c, &rec_multiplicities(then, rec_ids));
            out.extend(seq(&c, &rec_multiplicities(els, rec_ids)));
            out
        }
        GoalKind::Negation { inner } | GoalKind::Scope { inner } => {
            rec_multiplicities(inner, rec_ids)
        }
        GoalKind::Disjunction { disjuncts } => {
            let mut out = BTreeSet::new();
            for d in disjuncts {
                out.extend(rec_multiplicities(d, rec_ids));
            }
            if out.is_empty() {
                zero
            } else {
                out
            }
        }
    }
}

/// Classifies how `key` recurses and collects the counts extrapolation
/// needs. Sites with no profile record count as zero.
pub fn classify_recursion(
    program: &Program,
    profile: &Profile,
    key: &ProcKey,
) -> Result<RecursionInfo, PlannerError> {
    let proc = program
        .proc(key)
        .ok_or_else(|| AnalysisError::UnknownProcedure(key.clone()))?;
    let sccs = call_graph_sccs(program);
    let my_scc = sccs[key];

    let mut sites: Vec<(SiteId, GoalId, u64)> = Vec::new();
    proc.body.visit(&mut |g| {
        if let GoalKind::Call { callee: CalleeRef::Proc(k), site, .. } = &g.kind {
            if sccs.get(k) == Some(&my_scc) {
                let count = profile.site(*site).map(|s| s.count).unwrap_or(0);
                sites.push((*site, g.id, count));
            }
        }
    });

    let mut total_calls: u64 = u64::from(*key == program.entry);
    let mut internal_calls: u64 = 0;
    for p in &program.procedures {
        p.body.visit(&mut |g| {
            if let GoalKind::Call { callee: CalleeRef::Proc(k), site, .. } = &g.kind {
                if k == key {
                    let c = profile.site(*site).map(|s| s.count).unwrap_or(0);
                    total_calls += c;
                    if sccs[&p.key] == my_scc {
                        internal_calls += c;
                    }
                }
            }
        });
    }

    let rec_ids: BTreeSet<GoalId> = sites.iter().map(|s| s.1).collect();
    let multis = rec_multiplicities(&proc.body, &rec_ids);
    let class = if sites.is_empty() {
        RecursionClass::None
    } else if multis.iter().all(|&m| m <= 1) {
        if sites.len() == 1 {
            RecursionClass::Single
        } else {
            RecursionClass::MultiClauseSingle
        }
    } else if sites.len() == 2 && multis.iter().all(|&m| m == 0 || m == 2) {
        RecursionClass::Double
    } else {
        RecursionClass::Irregular
    };

    Ok(RecursionInfo {
        class,
        sites,
        entry_calls: total_calls - internal_calls,
        total_calls,
    })
}

/// Extrapolates a per-execution saving of one conjunction to the
/// expected saving per call into the procedure from outside its
/// recursion.
///
/// `conj_site` is the recursive call site inside the parallelised
/// conjunction, if there is one; without one the saving simply scales by
/// how often the conjunction runs per entry. With one, the recursion
/// class decides: a singly-recursive clause collects the saving once per
/// iteration, and a doubly-recursive one only on the spine, which halves
/// the factor.
pub fn extrapolated_saving(
    info: &RecursionInfo,
    proc: &ProcKey,
    seq_saving: Cost,
    conj_entries: u64,
    conj_site: Option<SiteId>,
) -> Result<Cost, PlannerError> {
    if info.entry_calls == 0 {
        return Err(PlannerError::NoEntryCalls { proc: proc.clone() });
    }
    let e = info.entry_calls as f64;
    let site_count = |site: SiteId| -> Result<f64, PlannerError> {
        info.sites
            .iter()
            .find(|s| s.0 == site)
            .map(|s| s.2 as f64)
            .ok_or_else(|| PlannerError::NotARecursiveSite { proc: proc.clone(), site })
    };
    match conj_site {
        None => Ok(seq_saving * conj_entries as f64 / e),
        Some(site) => match info.class {
            RecursionClass::None => Err(PlannerError::NotARecursiveSite { proc: proc.clone(), site }),
            RecursionClass::Single => Ok(seq_saving * site_count(site)? / e),
            RecursionClass::MultiClauseSingle => {
                let r = site_count(site)?;
                let sum: f64 = info.sites.iter().map(|s| s.2 as f64).sum();
                if sum == 0.0 {
                    return Ok(0.0);
                }
                Ok(seq_saving * (r / e) * (r / sum))
            }
            RecursionClass::Double => Ok(seq_saving * site_count(site)? / (2.0 * e)),
            RecursionClass::Irregular => {
                Err(PlannerError::IrregularRecursion { proc: proc.clone() })
            }
        },
    }
}

/// Maximum outstanding spawns a recursive parallel conjunction should
/// allow at runtime: an explicit override, or 8 per engine.
pub fn spawn_throttle(engines: u32, override_: Option<u32>) -> u32 {
    override_.unwrap_or_else(|| engines.saturating_mul(8))
}

/// One piece of advice: parallelise one conjunction this way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Advice {
    pub proc: ProcKey,
    /// The sequential conjunction this applies to.
    pub conjunction: GoalId,
    /// Conjunct index range left sequential before the parallel region.
    pub before: (usize, usize),
    /// Parallel groups, as conjunct index ranges.
    pub groups: Vec<(usize, usize)>,
    /// Conjunct index range left sequential after the parallel region.
    pub after: (usize, usize),
    /// Human-readable shape, e.g. `(c1, c2) & c3`.
    pub rendering: String,
    /// Expected sequential time of the whole conjunction.
    pub seq_time: Cost,
    /// Predicted time with this advice applied, sequential edges included.
    pub par_time: Cost,
    pub speedup: f64,
    pub recursion: RecursionClass,
    /// Calls into the procedure from outside its recursion.
    pub entry_calls: u64,
    /// Profiled count of each recursive call site in the body.
    pub recursive_counts: Vec<u64>,
    /// Expected saving per entry call, recursion included.
    pub saving_per_entry: Cost,
    /// Spawn throttle for the runtime; present when the parallel region
    /// contains a recursive call.
    pub throttle: Option<u32>,
}

/// `(c1, c2) & c3` notation for conjunct-index group ranges (1-based
/// display, as in the advice rendering).
pub fn render_groups(groups: &[(usize, usize)]) -> String {
    let mut parts = Vec::new();
    for &(s, e) in groups {
        let names: Vec<String> = (s..e).map(|i| format!("c{}", i + 1)).collect();
        if names.len() == 1 {
            parts.push(names.into_iter().next().unwrap());
        } else {
            parts.push(format!("({})", names.join(", ")));
        }
    }
    parts.join(" & ")
}

/// Analyses one conjunction end to end and returns advice when
/// parallelising it beats the speedup threshold.
///
/// Returns `Ok(None)` when the conjunction has no parallelisable middle,
/// when no partition clears the threshold, or when the procedure
/// recurses irregularly through the conjunction (no sound extrapolation
/// exists, so such advice would be a guess).
pub fn best_parallelisation(
    analysis: &Analysis<'_>,
    proc: &Procedure,
    conjunction: GoalId,
    config: &AnalysisConfig,
) -> Result<Option<Advice>, PlannerError> {
    let not_conj = || PlannerError::NotAConjunction { proc: proc.key.clone(), goal: conjunction };
    let goal = proc.goal(conjunction).ok_or_else(not_conj)?;
    let GoalKind::SeqConj { conjuncts } = &goal.kind else {
        return Err(not_conj());
    };

    let source =
        match IrSource::new(analysis, &proc.key, conjuncts, config.thresholds.expensive_goal)? {
            Some(s) => s,
            None => return Ok(None),
        };
    let o = &config.overheads;
    let found = find_best_partition(&source, source.middle, o, &config.search)?;
    let chosen = pick_preferred(&found.best);
    let (groups, shrank_left, shrank_right) = shrink_edges(&source, chosen, o)?;
    let groups = expand_edges(
        &source,
        groups,
        (0, source.len()),
        !shrank_left,
        !shrank_right,
        o,
    )?;
    if groups.len() < 2 {
        return Ok(None);
    }

    let seq_time: Cost = (0..source.len()).map(|i| source.unit_cost(i)).sum();
    let before_cost: Cost = (0..groups[0].0).map(|i| source.unit_cost(i)).sum();
    let after_cost: Cost =
        (groups[groups.len() - 1].1..source.len()).map(|i| source.unit_cost(i)).sum();
    let par_time = before_cost + region_time(&source, &groups, o)? + after_cost;
    let gain = speedup(seq_time, par_time)?;
    if gain < config.thresholds.speedup {
        return Ok(None);
    }

    let info = classify_recursion(analysis.program, analysis.model.profile, &proc.key)?;

    // A recursive call inside the parallel region changes both the
    // extrapolation and the runtime story (the spawn chain needs a
    // throttle).
    let (clo, chi) = source.conjunct_span(groups[0].0, groups[groups.len() - 1].1);
    let rec_ids: BTreeSet<GoalId> = info.sites.iter().map(|s| s.1).collect();
    let mut conj_site = None;
    for c in &conjuncts[clo..chi] {
        c.visit(&mut |g| {
            if let GoalKind::Call { site, .. } = &g.kind {
                if rec_ids.contains(&g.id) && conj_site.is_none() {
                    conj_site = Some(*site);
                }
            }
        });
    }
    if info.class == RecursionClass::Irregular && conj_site.is_some() {
        return Ok(None);
    }

    let conj_entries = analysis
        .model
        .profile
        .goal_entry(&proc.key, conjunction)
        .ok_or(AnalysisError::MissingGoalEntry { proc: proc.key.clone(), goal: conjunction })?;
    let saving_per_entry =
        extrapolated_saving(&info, &proc.key, seq_time - par_time, conj_entries, conj_site)?;
    let throttle =
        conj_site.map(|_| spawn_throttle(config.engines, config.throttle_override));

    let conj_groups: Vec<(usize, usize)> =
        groups.iter().map(|&(a, b)| source.conjunct_span(a, b)).collect();
    let rendering = render_groups(&conj_groups);
    Ok(Some(Advice {
        proc: proc.key.clone(),
        conjunction,
        before: (0, conj_groups[0].0),
        after: (conj_groups[conj_groups.len() - 1].1, conjuncts.len()),
        groups: conj_groups,
        rendering,
        seq_time,
        par_time,
        speedup: gain,
        recursion: info.class,
        entry_calls: info.entry_calls,
        recursive_counts: info.sites.iter().map(|s| s.2).collect(),
        saving_per_entry,
        throttle,
    }))
}
