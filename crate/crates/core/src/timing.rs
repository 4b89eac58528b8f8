//! When variables are produced and first consumed inside a goal.
//!
//! All times here are sequential execution offsets from the start of the
//! goal under consideration, measured in the profile's cost units. The
//! core questions are:
//!
//! * `production_time` — how long after a goal starts does it bind a
//!   given variable?
//! * `first_consumption_time` — how long after a goal starts does it
//!   first need a given variable?
//!
//! Both walk the goal structure, recursing into first-order callees
//! (memoized per procedure and argument position, with self-recursive
//! chains cut off at the callee's flat average cost). Branched goals
//! contribute entry-count-weighted averages over their executed,
//! non-erroneous arms.
//!
//! First consumption has one wrinkle production does not: a branch may
//! consume the variable in some arms and not in others. A non-consuming
//! arm defers consumption to whatever follows the branch, and a goal
//! that never consumes the variable at all is treated as consuming it at
//! its very end (a conjunct that merely finishes while holding a future
//! behaves exactly like one that consumes it as it finishes). The
//! [`FcOutcome`] algebra tracks both kinds of path through arbitrary
//! nesting.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::ir::{
    AnalysisError, ArgMode, CalleeRef, Cost, Determinism, Goal, GoalId, GoalKind, ProcKey,
    Profile, Program, VarId,
};

/// Whether an event in a shared-variable timeline makes a binding
/// available or demands one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord,
    serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UseKind {
    Produce,
    Consume,
}

/// One production or consumption in a conjunct's sequential timeline.
/// Times are relative to the conjunct's own start.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VarUse {
    pub var: VarId,
    pub time: Cost,
    pub kind: UseKind,
}

/// Cost adjustments layered over a profile while revisiting ancestors of
/// already-parallelized procedures.
#[derive(Clone, Debug, Default)]
pub struct Adjustments {
    /// Expected saving per call for procedures that received advice.
    /// Applied at call sites, clamped so costs stay nonnegative.
    pub call_savings: BTreeMap<ProcKey, Cost>,
    /// Expected per-execution cost for conjunctions that received advice,
    /// replacing the structural cost of the conjunction goal.
    pub conj_overrides: BTreeMap<(ProcKey, GoalId), Cost>,
    /// Procedures whose savings are suppressed. While re-analyzing a
    /// procedure we mask its own recursion clique: the effect of
    /// parallelizing the recursion is accounted for by extrapolation,
    /// not by discounting the recursive call sites.
    pub masked: BTreeSet<ProcKey>,
}

impl Adjustments {
    pub fn is_empty(&self) -> bool {
        self.call_savings.is_empty() && self.conj_overrides.is_empty()
    }
}

/// A profile plus optional adjustments; the only source of goal costs.
#[derive(Clone, Copy)]
pub struct CostModel<'a> {
    pub profile: &'a Profile,
    adjust: Option<&'a Adjustments>,
}

impl<'a> CostModel<'a> {
    pub fn plain(profile: &'a Profile) -> Self {
        CostModel { profile, adjust: None }
    }

    pub fn adjusted(profile: &'a Profile, adjust: &'a Adjustments) -> Self {
        CostModel { profile, adjust: Some(adjust) }
    }

    /// Mean cost of one execution of a call site, after adjustments.
    fn site_cost(&self, site: crate::ir::SiteId, proc: &ProcKey, goal: GoalId,
        callee: Option<&ProcKey>) -> Result<Cost, AnalysisError> {
        let stats = self
            .profile
            .site(site)
            .ok_or_else(|| AnalysisError::MissingSite { proc: proc.clone(), site })?;
        let mut cost = stats.mean_cost();
        if let (Some(adjust), Some(callee)) = (self.adjust, callee) {
            if !adjust.masked.contains(callee) {
                if let Some(saving) = adjust.call_savings.get(callee) {
                    cost = (cost - saving).max(0.0);
                }
            }
        }
        let _ = goal;
        Ok(cost)
    }

    fn conj_override(&self, proc: &ProcKey, goal: GoalId) -> Option<Cost> {
        self.adjust.and_then(|a| a.conj_overrides.get(&(proc.clone(), goal)).copied())
    }

    /// Average per-execution cost of a goal. See [`crate::ir::goal_cost`].
    pub fn goal_cost(&self, goal: &Goal, proc: &ProcKey) -> Result<Cost, AnalysisError> {
        if let Some(c) = self.conj_override(proc, goal.id) {
            return Ok(c);
        }
        match &goal.kind {
            GoalKind::Unify { .. } => Ok(0.0),
            GoalKind::Call { callee, site, .. } => {
                let key = match callee {
                    CalleeRef::Proc(k) => Some(k),
                    CalleeRef::External(_) => None,
                };
                self.site_cost(*site, proc, goal.id, key)
            }
            GoalKind::HigherOrderCall { site, .. } => self.site_cost(*site, proc, goal.id, None),
            GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
                conjuncts.iter().try_fold(0.0, |acc, c| Ok(acc + self.goal_cost(c, proc)?))
            }
            GoalKind::Switch { arms, .. } => {
                let weights = self.arm_weights(
                    proc,
                    arms.iter().map(|a| (&a.goal, a.goal.determinism)),
                )?;
                let mut parts = Vec::new();
                for (a, w) in arms.iter().zip(&weights) {
                    if *w > 0.0 {
                        parts.push((*w, self.goal_cost(&a.goal, proc)?));
                    }
                }
                if parts.is_empty() {
                    return Ok(0.0); // never entered: costs nothing
                }
                Ok(weighted_mean(&parts))
            }
            GoalKind::IfThenElse { cond, then, els } => {
                let (wt, we) = self.ite_weights(proc, then, els)?;
                let mut total = 0.0;
                if wt > 0.0 {
                    total += wt * (self.goal_cost(cond, proc)? + self.goal_cost(then, proc)?);
                }
                if we > 0.0 {
                    total += we
                        * (self.expected_cost_on_failure(cond, proc)?
                            + self.goal_cost(els, proc)?);
                }
                Ok(total)
            }
            GoalKind::Negation { inner } | GoalKind::Scope { inner } => {
                self.goal_cost(inner, proc)
            }
            GoalKind::Disjunction { disjuncts } => {
                // Per-entry expected work: each disjunct's cost weighted
                // by how often it ran per entry to the disjunction. The
                // weights may exceed 1 in total under backtracking.
                let total_entries = self
                    .profile
                    .goal_entry(proc, goal.id)
                    .ok_or_else(|| AnalysisError::MissingGoalEntry {
                        proc: proc.clone(),
                        goal: goal.id,
                    })?;
                if total_entries == 0 {
                    return Ok(0.0);
                }
                let mut total = 0.0;
                for d in disjuncts {
                    let n = self.profile.goal_entry(proc, d.id).ok_or_else(|| {
                        AnalysisError::MissingGoalEntry { proc: proc.clone(), goal: d.id }
                    })?;
                    if n > 0 {
                        total +=
                            (n as f64 / total_entries as f64) * self.goal_cost(d, proc)?;
                    }
                }
                Ok(total)
            }
        }
    }

    /// Entry-count weights over a branched goal's arms. Erroneous and
    /// never-entered arms weigh zero; the remaining weights are
    /// normalized over the executed, non-erroneous arms so they sum to 1
    /// (or are all zero if nothing ever completes the branch).
    pub fn arm_weights<'g>(
        &self,
        proc: &ProcKey,
        arms: impl Iterator<Item = (&'g Goal, Determinism)>,
    ) -> Result<Vec<f64>, AnalysisError> {
        let mut counts = Vec::new();
        for (goal, det) in arms {
            let n = self.profile.goal_entry(proc, goal.id).ok_or_else(|| {
                AnalysisError::MissingGoalEntry { proc: proc.clone(), goal: goal.id }
            })?;
            counts.push(if det == Determinism::Erroneous { 0 } else { n });
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Ok(vec![0.0; counts.len()]);
        }
        Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
    }

    fn ite_weights(
        &self,
        proc: &ProcKey,
        then: &Goal,
        els: &Goal,
    ) -> Result<(f64, f64), AnalysisError> {
        let w = self.arm_weights(
            proc,
            [(then, then.determinism), (els, els.determinism)].into_iter(),
        )?;
        Ok((w[0], w[1]))
    }

    /// Expected cost spent in a condition per entry, used as the prefix
    /// of the else-arm. Each call inside the condition is weighted by
    /// its execution count relative to the condition's entry count, so
    /// steps after the usual point of failure weigh very little.
    ///
    /// Errors if the condition never failed: there is no failure path to
    /// cost, and the caller must use the success path only.
    pub fn expected_cost_on_failure(
        &self,
        cond: &Goal,
        proc: &ProcKey,
    ) -> Result<Cost, AnalysisError> {
        let failures = self.profile.cond_failure(proc, cond.id).unwrap_or(0);
        if failures == 0 {
            return Err(AnalysisError::ConditionNeverFails {
                proc: proc.clone(),
                goal: cond.id,
            });
        }
        let entries = self.profile.goal_entry(proc, cond.id).ok_or_else(|| {
            AnalysisError::MissingGoalEntry { proc: proc.clone(), goal: cond.id }
        })?;
        if entries == 0 {
            return Ok(0.0);
        }
        Ok(self.total_site_cost(cond, proc)? / entries as f64)
    }

    /// Total adjusted cost accumulated by every call site in a subtree.
    fn total_site_cost(&self, goal: &Goal, proc: &ProcKey) -> Result<Cost, AnalysisError> {
        let mut total = 0.0;
        let mut err = None;
        goal.visit(&mut |g| {
            if err.is_some() {
                return;
            }
            let (site, callee) = match &g.kind {
                GoalKind::Call { callee, site, .. } => (
                    *site,
                    match callee {
                        CalleeRef::Proc(k) => Some(k),
                        CalleeRef::External(_) => None,
                    },
                ),
                GoalKind::HigherOrderCall { site, .. } => (*site, None),
                _ => return,
            };
            match self.site_cost(site, proc, g.id, callee) {
                Ok(mean) => {
                    let count = self.profile.site(site).map(|s| s.count).unwrap_or(0);
                    total += mean * count as f64;
                }
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }
}

/// The outcome of scanning part of a goal for the first consumption of
/// one variable. Execution paths are split into those that consumed the
/// variable (`hit`) and those that finished the scanned part without
/// consuming it (`miss`).
///
/// * `hit_mass` / `miss_mass` — total probability of each path class.
/// * `hit_cost` — probability-weighted sum of first-consumption times.
/// * `miss_cost` — probability-weighted sum of elapsed execution time.
///
/// Sequential composition is associative, which lets conjunctions fold
/// their conjuncts' outcomes left to right.
#[derive(Clone, Copy, Debug, PartialEq)]
struct FcOutcome {
    hit_mass: f64,
    hit_cost: f64,
    miss_mass: f64,
    miss_cost: f64,
}

impl FcOutcome {
    /// The whole scanned part consumes the variable at `t`.
    fn hit(t: Cost) -> Self {
        FcOutcome { hit_mass: 1.0, hit_cost: t, miss_mass: 0.0, miss_cost: 0.0 }
    }

    /// The whole scanned part runs for `elapsed` without consuming.
    fn miss(elapsed: Cost) -> Self {
        FcOutcome { hit_mass: 0.0, hit_cost: 0.0, miss_mass: 1.0, miss_cost: elapsed }
    }

    /// Identity for branch accumulation.
    fn zero() -> Self {
        FcOutcome { hit_mass: 0.0, hit_cost: 0.0, miss_mass: 0.0, miss_cost: 0.0 }
    }

    /// Runs `self`, then `next` on the paths that have not consumed yet.
    fn then(self, next: FcOutcome) -> FcOutcome {
        FcOutcome {
            hit_mass: self.hit_mass + self.miss_mass * next.hit_mass,
            hit_cost: self.hit_cost
                + self.miss_cost * next.hit_mass
                + self.miss_mass * next.hit_cost,
            miss_mass: self.miss_mass * next.miss_mass,
            miss_cost: self.miss_cost * next.miss_mass + self.miss_mass * next.miss_cost,
        }
    }

    fn scaled(self, w: f64) -> FcOutcome {
        FcOutcome {
            hit_mass: self.hit_mass * w,
            hit_cost: self.hit_cost * w,
            miss_mass: self.miss_mass * w,
            miss_cost: self.miss_cost * w,
        }
    }

    fn add(self, other: FcOutcome) -> FcOutcome {
        FcOutcome {
            hit_mass: self.hit_mass + other.hit_mass,
            hit_cost: self.hit_cost + other.hit_cost,
            miss_mass: self.miss_mass + other.miss_mass,
            miss_cost: self.miss_cost + other.miss_cost,
        }
    }

    /// Prepends `p` time units of non-consuming execution.
    fn shifted(self, p: Cost) -> FcOutcome {
        FcOutcome {
            hit_mass: self.hit_mass,
            hit_cost: self.hit_cost + p * self.hit_mass,
            miss_mass: self.miss_mass,
            miss_cost: self.miss_cost + p * self.miss_mass,
        }
    }

    /// Expected first-consumption time, counting paths that never
    /// consume as consuming at their very end.
    fn expected_time(self) -> Cost {
        self.hit_cost + self.miss_cost
    }
}

/// Entry-weighted mean over contributing branches that returns a
/// unanimous value untouched. Normalized weights need not sum to exactly
/// 1.0 in floating point (three times 1/3 falls one ulp short), and
/// branches that agree must not drift because of it.
fn weighted_mean(parts: &[(f64, Cost)]) -> Cost {
    let first = parts.first().expect("at least one contributing branch").1;
    if parts.iter().all(|&(_, v)| v == first) {
        return first;
    }
    parts.iter().map(|&(w, v)| w * v).sum()
}

/// Branch mixture of first-consumption outcomes, with the same unanimity
/// rule as [`weighted_mean`].
fn mix_outcomes(parts: &[(f64, FcOutcome)]) -> FcOutcome {
    let first = parts.first().expect("at least one contributing branch").1;
    if parts.iter().all(|&(_, o)| o == first) {
        return first;
    }
    parts.iter().fold(FcOutcome::zero(), |acc, &(w, o)| acc.add(o.scaled(w)))
}

type ProcPos = (ProcKey, usize);

/// Analysis context: program + cost model + memo tables for recursion
/// into callees. Construct one per conjunction analysis; results are a
/// pure function of (program, profile, adjustments).
pub struct Analysis<'a> {
    pub program: &'a Program,
    pub model: CostModel<'a>,
    prod_memo: RefCell<HashMap<ProcPos, Cost>>,
    cons_memo: RefCell<HashMap<ProcPos, FcOutcome>>,
    prod_active: RefCell<HashSet<ProcPos>>,
    cons_active: RefCell<HashSet<ProcPos>>,
}

impl<'a> Analysis<'a> {
    pub fn new(program: &'a Program, model: CostModel<'a>) -> Self {
        Analysis {
            program,
            model,
            prod_memo: RefCell::new(HashMap::new()),
            cons_memo: RefCell::new(HashMap::new()),
            prod_active: RefCell::new(HashSet::new()),
            cons_active: RefCell::new(HashSet::new()),
        }
    }

    pub fn goal_cost(&self, goal: &Goal, proc: &ProcKey) -> Result<Cost, AnalysisError> {
        self.model.goal_cost(goal, proc)
    }

    /// Time from the start of the conjunct sequence until `var` is
    /// bound. `var` must be produced by exactly one of the conjuncts.
    pub fn production_time_in(
        &self,
        proc: &ProcKey,
        conjuncts: &[Goal],
        var: VarId,
    ) -> Result<Cost, AnalysisError> {
        let mut prefix = 0.0;
        for c in conjuncts {
            if c.produces.contains(&var) {
                return Ok(prefix + self.production_in_goal(c, proc, var)?);
            }
            prefix += self.goal_cost(c, proc)?;
        }
        Err(AnalysisError::NotProduced {
            proc: proc.clone(),
            goal: conjuncts.first().map(|g| g.id).unwrap_or(GoalId(0)),
            var,
        })
    }

    /// Time from the start of the goal until it binds `var`.
    pub fn production_time(
        &self,
        proc: &ProcKey,
        goal: &Goal,
        var: VarId,
    ) -> Result<Cost, AnalysisError> {
        if !goal.produces.contains(&var) {
            return Err(AnalysisError::NotProduced { proc: proc.clone(), goal: goal.id, var });
        }
        self.production_in_goal(goal, proc, var)
    }

    fn production_in_goal(
        &self,
        goal: &Goal,
        proc: &ProcKey,
        var: VarId,
    ) -> Result<Cost, AnalysisError> {
        match &goal.kind {
            GoalKind::Unify { .. } => Ok(0.0),
            GoalKind::Call { callee, args, site: _ } => {
                let cost = self.goal_cost(goal, proc)?;
                match callee {
                    // Externals are opaque: outputs appear at the end.
                    CalleeRef::External(_) => Ok(cost),
                    CalleeRef::Proc(key) => {
                        let pos = self.arg_position(key, args, var, ArgMode::Out)?;
                        let inner = self.production_in_callee(key, pos, cost)?;
                        // Clamp: a production time cannot exceed the
                        // call's own cost even when the callee body's
                        // structural cost disagrees with the site data.
                        Ok(inner.min(cost))
                    }
                }
            }
            // The callee of a higher-order call is unknown; assume its
            // outputs appear at the very end of the call.
            GoalKind::HigherOrderCall { .. } => self.goal_cost(goal, proc),
            GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
                self.production_time_in(proc, conjuncts, var)
            }
            GoalKind::Switch { arms, .. } => {
                let weights = self.model.arm_weights(
                    proc,
                    arms.iter().map(|a| (&a.goal, a.goal.determinism)),
                )?;
                let mut parts = Vec::new();
                for (a, w) in arms.iter().zip(&weights) {
                    if *w == 0.0 {
                        continue;
                    }
                    if !a.goal.produces.contains(&var) {
                        return Err(AnalysisError::NeverProducedOnPath {
                            proc: proc.clone(),
                            goal: a.goal.id,
                            var,
                        });
                    }
                    parts.push((*w, self.production_in_goal(&a.goal, proc, var)?));
                }
                if parts.is_empty() {
                    return Err(AnalysisError::NeverProducedOnPath {
                        proc: proc.clone(),
                        goal: goal.id,
                        var,
                    });
                }
                Ok(weighted_mean(&parts))
            }
            GoalKind::IfThenElse { cond, then, els } => {
                // The condition cannot produce `var` for the outside
                // world; bindings made there are visible only from the
                // then-arm. Both arms produce it on their own paths.
                let (wt, we) = self.model.ite_weights(proc, then, els)?;
                let mut parts = Vec::new();
                if wt > 0.0 {
                    if !then.produces.contains(&var) {
                        return Err(AnalysisError::NeverProducedOnPath {
                            proc: proc.clone(),
                            goal: then.id,
                            var,
                        });
                    }
                    let t = self.goal_cost(cond, proc)?
                        + self.production_in_goal(then, proc, var)?;
                    parts.push((wt, t));
                }
                if we > 0.0 {
                    if !els.produces.contains(&var) {
                        return Err(AnalysisError::NeverProducedOnPath {
                            proc: proc.clone(),
                            goal: els.id,
                            var,
                        });
                    }
                    let t = self.model.expected_cost_on_failure(cond, proc)?
                        + self.production_in_goal(els, proc, var)?;
                    parts.push((we, t));
                }
                if parts.is_empty() {
                    return Err(AnalysisError::NeverProducedOnPath {
                        proc: proc.clone(),
                        goal: goal.id,
                        var,
                    });
                }
                Ok(weighted_mean(&parts))
            }
            GoalKind::Negation { .. } | GoalKind::Disjunction { .. } => {
                Err(AnalysisError::CannotProduce { proc: proc.clone(), goal: goal.id })
            }
            GoalKind::Scope { inner } => self.production_in_goal(inner, proc, var),
        }
    }

    /// Production time of the formal argument at `pos` inside `callee`'s
    /// body, memoized. Re-entering a (procedure, position) already being
    /// computed means a recursive chain; the occurrence is cut off at
    /// the callee's flat average cost (`site_cost`), i.e. treated as
    /// producing at the end of the call.
    fn production_in_callee(
        &self,
        callee: &ProcKey,
        pos: usize,
        site_cost: Cost,
    ) -> Result<Cost, AnalysisError> {
        let key = (callee.clone(), pos);
        if let Some(&t) = self.prod_memo.borrow().get(&key) {
            return Ok(t);
        }
        if self.prod_active.borrow().contains(&key) {
            return Ok(site_cost);
        }
        let proc = self
            .program
            .proc(callee)
            .ok_or_else(|| AnalysisError::UnknownProcedure(callee.clone()))?;
        let formal = proc.head[pos].var;
        self.prod_active.borrow_mut().insert(key.clone());
        let result = self.production_in_goal(&proc.body, callee, formal);
        self.prod_active.borrow_mut().remove(&key);
        let t = result?;
        self.prod_memo.borrow_mut().insert(key, t);
        Ok(t)
    }

    /// Expected time from the start of the conjunct sequence until the
    /// first consumption of `var`. If no path consumes it, this is the
    /// sequence's full cost: holding a variable to the end is
    /// indistinguishable from consuming it there.
    pub fn first_consumption_time_in(
        &self,
        proc: &ProcKey,
        conjuncts: &[Goal],
        var: VarId,
    ) -> Result<Cost, AnalysisError> {
        Ok(self.consumption_in_conjuncts(conjuncts, proc, var)?.expected_time())
    }

    /// Expected time from the start of the goal until it first consumes
    /// `var` (its full cost if it never does).
    pub fn first_consumption_time(
        &self,
        proc: &ProcKey,
        goal: &Goal,
        var: VarId,
    ) -> Result<Cost, AnalysisError> {
        Ok(self.consumption_in_goal(goal, proc, var)?.expected_time())
    }

    fn consumption_in_conjuncts(
        &self,
        conjuncts: &[Goal],
        proc: &ProcKey,
        var: VarId,
    ) -> Result<FcOutcome, AnalysisError> {
        let mut out = FcOutcome::miss(0.0);
        for c in conjuncts {
            if out.miss_mass == 0.0 {
                break; // every path has consumed already
            }
            out = out.then(self.consumption_in_goal(c, proc, var)?);
        }
        Ok(out)
    }

    fn consumption_in_goal(
        &self,
        goal: &Goal,
        proc: &ProcKey,
        var: VarId,
    ) -> Result<FcOutcome, AnalysisError> {
        // A goal that does not consume the variable (it may not even see
        // it, or it may be its producer) just contributes elapsed time.
        if !goal.consumed().contains(&var) {
            return Ok(FcOutcome::miss(self.goal_cost(goal, proc)?));
        }
        match &goal.kind {
            GoalKind::Unify { .. } => Ok(FcOutcome::hit(0.0)),
            GoalKind::Call { callee, args, site: _ } => {
                let cost = self.goal_cost(goal, proc)?;
                match callee {
                    // Opaque call: inputs are consumed up front.
                    CalleeRef::External(_) => Ok(FcOutcome::hit(0.0)),
                    CalleeRef::Proc(key) => {
                        let pos = self.arg_position(key, args, var, ArgMode::In)?;
                        let body = self.consumption_in_callee(key, pos, cost)?;
                        // Re-anchor the outcome to this call's own cost:
                        // consumption can happen no later than the call
                        // finishes, and on paths that never consume the
                        // caller sees the call's mean cost elapse.
                        Ok(FcOutcome {
                            hit_mass: body.hit_mass,
                            hit_cost: body.hit_cost.min(cost * body.hit_mass),
                            miss_mass: body.miss_mass,
                            miss_cost: cost * body.miss_mass,
                        })
                    }
                }
            }
            // Unknown callee: assume it needs its inputs immediately.
            GoalKind::HigherOrderCall { .. } => Ok(FcOutcome::hit(0.0)),
            GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
                self.consumption_in_conjuncts(conjuncts, proc, var)
            }
            GoalKind::Switch { var: scrutinee, arms } => {
                // The switch inspects its scrutinee before anything else.
                if *scrutinee == var {
                    return Ok(FcOutcome::hit(0.0));
                }
                let weights = self.model.arm_weights(
                    proc,
                    arms.iter().map(|a| (&a.goal, a.goal.determinism)),
                )?;
                let mut parts = Vec::new();
                for (a, w) in arms.iter().zip(&weights) {
                    if *w > 0.0 {
                        parts.push((*w, self.consumption_in_goal(&a.goal, proc, var)?));
                    }
                }
                if parts.is_empty() {
                    // Never executed (or only erroneously); nothing runs.
                    return Ok(FcOutcome::miss(0.0));
                }
                Ok(mix_outcomes(&parts))
            }
            GoalKind::IfThenElse { cond, then, els } => {
                let (wt, we) = self.model.ite_weights(proc, then, els)?;
                if wt == 0.0 && we == 0.0 {
                    return Ok(FcOutcome::miss(0.0));
                }
                if cond.consumed().contains(&var) {
                    // The wait happens whenever the condition runs, so
                    // it is weighted by entry probability, not success
                    // probability. Elapsed time through the condition on
                    // non-consuming paths uses its average cost.
                    let out_cond = self.consumption_in_goal(cond, proc, var)?;
                    let mut parts = Vec::new();
                    if wt > 0.0 {
                        parts.push((wt, self.consumption_in_goal(then, proc, var)?));
                    }
                    if we > 0.0 {
                        parts.push((we, self.consumption_in_goal(els, proc, var)?));
                    }
                    return Ok(out_cond.then(mix_outcomes(&parts)));
                }
                let mut parts = Vec::new();
                if wt > 0.0 {
                    let prefix = self.goal_cost(cond, proc)?;
                    parts.push((wt, self.consumption_in_goal(then, proc, var)?.shifted(prefix)));
                }
                if we > 0.0 {
                    let prefix = self.model.expected_cost_on_failure(cond, proc)?;
                    parts.push((we, self.consumption_in_goal(els, proc, var)?.shifted(prefix)));
                }
                Ok(mix_outcomes(&parts))
            }
            GoalKind::Negation { inner } | GoalKind::Scope { inner } => {
                self.consumption_in_goal(inner, proc, var)
            }
            GoalKind::Disjunction { disjuncts } => {
                let weights = self.model.arm_weights(
                    proc,
                    disjuncts.iter().map(|d| (d, d.determinism)),
                )?;
                let mut parts = Vec::new();
                for (d, w) in disjuncts.iter().zip(&weights) {
                    if *w > 0.0 {
                        parts.push((*w, self.consumption_in_goal(d, proc, var)?));
                    }
                }
                if parts.is_empty() {
                    return Ok(FcOutcome::miss(0.0));
                }
                Ok(mix_outcomes(&parts))
            }
        }
    }

    fn consumption_in_callee(
        &self,
        callee: &ProcKey,
        pos: usize,
        site_cost: Cost,
    ) -> Result<FcOutcome, AnalysisError> {
        let key = (callee.clone(), pos);
        if let Some(out) = self.cons_memo.borrow().get(&key) {
            return Ok(*out);
        }
        if self.cons_active.borrow().contains(&key) {
            // Recursive chain: charge the flat average cost of the call,
            // i.e. treat the occurrence as consuming at its very end.
            return Ok(FcOutcome::hit(site_cost));
        }
        let proc = self
            .program
            .proc(callee)
            .ok_or_else(|| AnalysisError::UnknownProcedure(callee.clone()))?;
        let formal = proc.head[pos].var;
        self.cons_active.borrow_mut().insert(key.clone());
        let result = self.consumption_in_goal(&proc.body, callee, formal);
        self.cons_active.borrow_mut().remove(&key);
        let out = result?;
        self.cons_memo.borrow_mut().insert(key, out);
        Ok(out)
    }

    /// Position of `var` among a call's actual arguments whose formal
    /// parameter has the given mode.
    fn arg_position(
        &self,
        callee: &ProcKey,
        args: &[VarId],
        var: VarId,
        mode: ArgMode,
    ) -> Result<usize, AnalysisError> {
        let proc = self
            .program
            .proc(callee)
            .ok_or_else(|| AnalysisError::UnknownProcedure(callee.clone()))?;
        for (i, a) in args.iter().enumerate() {
            if *a == var && proc.head.get(i).map(|h| h.mode) == Some(mode) {
                return Ok(i);
            }
        }
        Err(AnalysisError::ArgNotFound {
            callee: callee.clone(),
            var,
            mode: match mode {
                ArgMode::In => "in",
                ArgMode::Out => "out",
            },
        })
    }

    /// Shared-variable timelines for the conjuncts of a candidate
    /// conjunction. A variable is shared when exactly one conjunct
    /// produces it and at least one other conjunct consumes it; inputs
    /// that arrive from outside the conjunction are available from the
    /// start and generate no events.
    ///
    /// Returns one event list per conjunct, each sorted by time with
    /// ties broken by kind (produce first) and then variable id.
    pub fn shared_var_timeline(
        &self,
        proc: &ProcKey,
        conjuncts: &[Goal],
    ) -> Result<Vec<Vec<VarUse>>, AnalysisError> {
        let shared = shared_vars(conjuncts);
        let mut events: Vec<Vec<VarUse>> = vec![Vec::new(); conjuncts.len()];
        for (var, producer) in &shared {
            for (i, c) in conjuncts.iter().enumerate() {
                if i == *producer {
                    let t = self.production_in_goal(c, proc, *var)?;
                    events[i].push(VarUse { var: *var, time: t, kind: UseKind::Produce });
                } else if c.consumed().contains(var) {
                    let t = self.first_consumption_time(proc, c, *var)?;
                    events[i].push(VarUse { var: *var, time: t, kind: UseKind::Consume });
                }
            }
        }
        for list in &mut events {
            sort_var_uses(list);
        }
        Ok(events)
    }
}

/// Sorts events by time, producing before consuming on ties, then by
/// variable id. Keeps timeline construction deterministic.
pub fn sort_var_uses(list: &mut [VarUse]) {
    list.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .expect("event times are finite")
            .then(a.kind.cmp(&b.kind))
            .then(a.var.cmp(&b.var))
    });
}

/// The variables shared between conjuncts: produced by exactly one
/// conjunct and consumed by at least one other. Returns each with its
/// producer's index.
pub fn shared_vars(conjuncts: &[Goal]) -> BTreeMap<VarId, usize> {
    let mut producer: BTreeMap<VarId, usize> = BTreeMap::new();
    for (i, c) in conjuncts.iter().enumerate() {
        for v in &c.produces {
            producer.entry(*v).or_insert(i);
        }
    }
    producer
        .into_iter()
        .filter(|(v, i)| {
            conjuncts
                .iter()
                .enumerate()
                .any(|(j, c)| j != *i && c.consumed().contains(v))
        })
        .collect()
}

/// Convenience wrappers matching the one-shot call shape: construct a
/// fresh analysis over a plain profile and answer a single query.
pub fn production_time(
    program: &Program,
    profile: &Profile,
    proc: &ProcKey,
    goal: &Goal,
    var: VarId,
) -> Result<Cost, AnalysisError> {
    Analysis::new(program, CostModel::plain(profile)).production_time(proc, goal, var)
}

pub fn first_consumption_time(
    program: &Program,
    profile: &Profile,
    proc: &ProcKey,
    goal: &Goal,
    var: VarId,
) -> Result<Cost, AnalysisError> {
    Analysis::new(program, CostModel::plain(profile)).first_consumption_time(proc, goal, var)
}

pub fn expected_cost_on_failure(
    profile: &Profile,
    proc: &ProcKey,
    cond: &Goal,
) -> Result<Cost, AnalysisError> {
    CostModel::plain(profile).expected_cost_on_failure(cond, proc)
}
