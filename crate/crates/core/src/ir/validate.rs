//! Structural and profile-consistency validation.
//!
//! `validate` never fails hard; it returns a list of diagnostics, each
//! naming the procedure, the goal (where there is one) and the violated
//! rule. An empty list means the program/profile pair is coherent enough
//! for analysis. Some rules are requirements of the underlying execution
//! model (producer-before-consumer ordering, negations binding nothing);
//! others catch profile damage (branch counts that do not add up,
//! zero-count sites that somehow accumulated cost).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{
    CalleeRef, Determinism, Goal, GoalId, GoalKind, ProcKey, Procedure, Profile, Program,
};

/// The rule a diagnostic reports against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    DuplicateGoalId,
    DuplicateSiteId,
    ProducedNotMentioned,
    NegationProduces,
    DisjunctionProduces,
    ProducerOrder,
    DuplicateProducer,
    OutArgNotProduced,
    UnresolvedCallee,
    ArityMismatch,
    NondetParConjunct,
    BranchCountMismatch,
    CondFailureMismatch,
    MissingEntryCount,
    MissingSiteEntry,
    ZeroCountSiteWithCost,
    UnknownEntryPoint,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::DuplicateGoalId => "duplicate-goal-id",
            Rule::DuplicateSiteId => "duplicate-site-id",
            Rule::ProducedNotMentioned => "produced-not-mentioned",
            Rule::NegationProduces => "negation-produces",
            Rule::DisjunctionProduces => "disjunction-produces",
            Rule::ProducerOrder => "producer-order",
            Rule::DuplicateProducer => "duplicate-producer",
            Rule::OutArgNotProduced => "out-arg-not-produced",
            Rule::UnresolvedCallee => "unresolved-callee",
            Rule::ArityMismatch => "arity-mismatch",
            Rule::NondetParConjunct => "nondet-par-conjunct",
            Rule::BranchCountMismatch => "branch-count-mismatch",
            Rule::CondFailureMismatch => "cond-failure-mismatch",
            Rule::MissingEntryCount => "missing-entry-count",
            Rule::MissingSiteEntry => "missing-site-entry",
            Rule::ZeroCountSiteWithCost => "zero-count-site-with-cost",
            Rule::UnknownEntryPoint => "unknown-entry-point",
        };
        f.write_str(s)
    }
}

/// One validation finding.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub proc: Option<ProcKey>,
    pub goal: Option<GoalId>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.proc, &self.goal) {
            (Some(p), Some(g)) => write!(f, "{p} {g}: {}: {}", self.rule, self.message),
            (Some(p), None) => write!(f, "{p}: {}: {}", self.rule, self.message),
            _ => write!(f, "{}: {}", self.rule, self.message),
        }
    }
}

struct Checker<'a> {
    program: &'a Program,
    profile: &'a Profile,
    out: Vec<Diagnostic>,
    /// Site ids seen so far, to catch reuse across goals.
    sites_seen: BTreeMap<super::SiteId, ProcKey>,
}

impl<'a> Checker<'a> {
    fn push(&mut self, proc: &ProcKey, goal: Option<GoalId>, rule: Rule, message: String) {
        self.out.push(Diagnostic { proc: Some(proc.clone()), goal, rule, message });
    }

    fn check_procedure(&mut self, p: &Procedure) {
        // Goal ids must be unique within the procedure.
        let mut ids = BTreeSet::new();
        p.body.visit(&mut |g| {
            if !ids.insert(g.id) {
                self.out.push(Diagnostic {
                    proc: Some(p.key.clone()),
                    goal: Some(g.id),
                    rule: Rule::DuplicateGoalId,
                    message: format!("goal id {} appears more than once", g.id),
                });
            }
        });

        // Out-mode head arguments must be produced by the body.
        for arg in &p.head {
            if arg.mode == super::ArgMode::Out && !p.body.produces.contains(&arg.var) {
                self.push(
                    &p.key,
                    Some(p.body.id),
                    Rule::OutArgNotProduced,
                    format!("output argument {} is not produced by the body", p.var_name(arg.var)),
                );
            }
        }

        self.check_goal(p, &p.body);
    }

    fn check_goal(&mut self, p: &Procedure, g: &Goal) {
        let key = &p.key;

        // Declared produced-vars must actually appear in the goal.
        let mentioned = g.vars_mentioned();
        for v in &g.produces {
            if !mentioned.contains(v) {
                self.push(
                    key,
                    Some(g.id),
                    Rule::ProducedNotMentioned,
                    format!("{} is declared produced but never mentioned", p.var_name(*v)),
                );
            }
        }

        match &g.kind {
            GoalKind::Unify { .. } => {}
            GoalKind::Call { callee, args, site } => {
                self.check_site(key, g.id, *site);
                match callee {
                    CalleeRef::Proc(k) => match self.program.proc(k) {
                        None => self.push(
                            key,
                            Some(g.id),
                            Rule::UnresolvedCallee,
                            format!("call to undefined procedure {k}"),
                        ),
                        Some(callee_proc) => {
                            if callee_proc.head.len() != args.len() {
                                self.push(
                                    key,
                                    Some(g.id),
                                    Rule::ArityMismatch,
                                    format!(
                                        "call to {k} passes {} arguments, head has {}",
                                        args.len(),
                                        callee_proc.head.len()
                                    ),
                                );
                            }
                        }
                    },
                    CalleeRef::External(name) => {
                        if !self.program.externals.contains(name) {
                            self.push(
                                key,
                                Some(g.id),
                                Rule::UnresolvedCallee,
                                format!("external callee `{name}` is not declared"),
                            );
                        }
                    }
                }
            }
            GoalKind::HigherOrderCall { site, .. } => self.check_site(key, g.id, *site),
            GoalKind::SeqConj { conjuncts } => {
                self.check_conjunction(p, g, conjuncts, false);
                for c in conjuncts {
                    self.check_goal(p, c);
                }
            }
            GoalKind::ParConj { conjuncts } => {
                self.check_conjunction(p, g, conjuncts, true);
                for c in conjuncts {
                    self.check_goal(p, c);
                }
            }
            GoalKind::Switch { arms, .. } => {
                self.check_switch_counts(p, g, arms);
                for a in arms {
                    self.check_goal(p, &a.goal);
                }
            }
            GoalKind::IfThenElse { cond, then, els } => {
                self.check_ite_counts(p, g, cond, then, els);
                self.check_goal(p, cond);
                self.check_goal(p, then);
                self.check_goal(p, els);
            }
            GoalKind::Negation { inner } => {
                if !g.produces.is_empty() {
                    self.push(
                        key,
                        Some(g.id),
                        Rule::NegationProduces,
                        "a negation cannot produce variables".to_string(),
                    );
                }
                self.check_goal(p, inner);
            }
            GoalKind::Scope { inner } => self.check_goal(p, inner),
            GoalKind::Disjunction { disjuncts } => {
                if !g.produces.is_empty() {
                    self.push(
                        key,
                        Some(g.id),
                        Rule::DisjunctionProduces,
                        "a det-visible disjunction cannot produce variables".to_string(),
                    );
                }
                for d in disjuncts {
                    self.check_goal(p, d);
                }
            }
        }
    }

    /// Producer-before-consumer ordering and single-producer checks for
    /// one conjunction's direct conjuncts.
    fn check_conjunction(&mut self, p: &Procedure, g: &Goal, conjuncts: &[Goal], par: bool) {
        let mut available: BTreeSet<_> = g.nonlocals.clone();
        let mut producers: BTreeMap<super::VarId, GoalId> = BTreeMap::new();
        for c in conjuncts {
            if par && c.determinism != Determinism::Det {
                self.push(
                    &p.key,
                    Some(c.id),
                    Rule::NondetParConjunct,
                    format!("parallel conjunct is {}, only det goals may run in parallel",
                        c.determinism),
                );
            }
            for v in c.consumed() {
                if !available.contains(&v) {
                    self.push(
                        &p.key,
                        Some(c.id),
                        Rule::ProducerOrder,
                        format!(
                            "{} is consumed before any earlier conjunct produces it",
                            p.var_name(v)
                        ),
                    );
                }
            }
            for v in &c.produces {
                if let Some(prev) = producers.insert(*v, c.id) {
                    self.push(
                        &p.key,
                        Some(c.id),
                        Rule::DuplicateProducer,
                        format!("{} is already produced by {prev}", p.var_name(*v)),
                    );
                }
                available.insert(*v);
            }
        }
    }

    fn check_switch_counts(&mut self, p: &Procedure, g: &Goal, arms: &[super::SwitchArm]) {
        let switch_count = self.profile.goal_entry(&p.key, g.id);
        if switch_count.is_none() {
            self.push(
                &p.key,
                Some(g.id),
                Rule::MissingEntryCount,
                "switch has no entry count; branch weights are undefined".to_string(),
            );
        }
        let mut sum = 0u64;
        let mut complete = true;
        for a in arms {
            match self.profile.goal_entry(&p.key, a.goal.id) {
                Some(n) => sum += n,
                None => {
                    complete = false;
                    self.push(
                        &p.key,
                        Some(a.goal.id),
                        Rule::MissingEntryCount,
                        format!("switch arm `{}` has no entry count", a.functor),
                    );
                }
            }
        }
        if let (Some(total), true) = (switch_count, complete) {
            if sum != total {
                self.push(
                    &p.key,
                    Some(g.id),
                    Rule::BranchCountMismatch,
                    format!("switch arm entry counts sum to {sum}, switch was entered {total} times"),
                );
            }
        }
    }

    fn check_ite_counts(&mut self, p: &Procedure, g: &Goal, cond: &Goal, then: &Goal, els: &Goal) {
        let ite = self.profile.goal_entry(&p.key, g.id);
        let then_n = self.profile.goal_entry(&p.key, then.id);
        let else_n = self.profile.goal_entry(&p.key, els.id);
        for (id, n, what) in [(then.id, then_n, "then"), (els.id, else_n, "else")] {
            if n.is_none() {
                self.push(
                    &p.key,
                    Some(id),
                    Rule::MissingEntryCount,
                    format!("{what}-arm has no entry count"),
                );
            }
        }
        if let (Some(total), Some(t), Some(e)) = (ite, then_n, else_n) {
            if t + e != total {
                self.push(
                    &p.key,
                    Some(g.id),
                    Rule::BranchCountMismatch,
                    format!(
                        "then ({t}) + else ({e}) entry counts do not sum to the \
                         if-then-else entry count ({total})"
                    ),
                );
            }
        }
        if let (Some(fails), Some(e)) = (self.profile.cond_failure(&p.key, cond.id), else_n) {
            if fails != e {
                self.push(
                    &p.key,
                    Some(cond.id),
                    Rule::CondFailureMismatch,
                    format!("condition failed {fails} times but the else-arm ran {e} times"),
                );
            }
        }
    }

    fn check_site(&mut self, proc: &ProcKey, goal: GoalId, site: super::SiteId) {
        if let Some(first) = self.sites_seen.insert(site, proc.clone()) {
            self.push(
                proc,
                Some(goal),
                Rule::DuplicateSiteId,
                format!("site {site} already used in {first}"),
            );
        }
        match self.profile.site(site) {
            None => self.push(
                proc,
                Some(goal),
                Rule::MissingSiteEntry,
                format!("profile has no record for site {site}"),
            ),
            Some(stats) if stats.count == 0 && stats.total_cost > 0.0 => self.push(
                proc,
                Some(goal),
                Rule::ZeroCountSiteWithCost,
                format!(
                    "site {site} was never executed but carries cost {}; treating its cost as 0",
                    stats.total_cost
                ),
            ),
            Some(_) => {}
        }
    }
}

/// Checks a program/profile pair and returns all findings.
pub fn validate(program: &Program, profile: &Profile) -> Vec<Diagnostic> {
    let mut checker =
        Checker { program, profile, out: Vec::new(), sites_seen: BTreeMap::new() };
    if program.proc(&program.entry).is_none() {
        checker.out.push(Diagnostic {
            proc: None,
            goal: None,
            rule: Rule::UnknownEntryPoint,
            message: format!("entry point {} is not defined", program.entry),
        });
    }
    for p in &program.procedures {
        checker.check_procedure(p);
    }
    checker.out
}
