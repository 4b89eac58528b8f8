//! Goal-level intermediate representation and profile data.
//!
//! Programs are trees of [`Goal`]s grouped into [`Procedure`]s. The shape
//! mirrors a mode-correct logic-programming IR: every goal declares which
//! of its variables it produces (binds) and which variables are nonlocal
//! (visible outside the goal). Consumption is derived, not declared: a
//! goal consumes the nonlocal variables it mentions but does not produce.
//!
//! Profiles are flat: per-call-site invocation counts and accumulated
//! costs, per-goal entry counts for branch weighting, and per-condition
//! failure counts for if-then-else analysis. Costs are abstract
//! call-sequence-count-like units; the analysis never interprets them as
//! wall-clock time.

mod parse;
mod validate;

pub use parse::{
    parse_profile, parse_program, write_profile, write_program, ParseError, FORMAT_VERSION,
};
pub use validate::{validate, Diagnostic, Rule};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// Abstract cost, in call-sequence-count-like units. Always nonnegative.
pub type Cost = f64;

/// A variable, identified by a small integer unique within its procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct VarId(pub u32);

/// A goal node, identified by a small integer unique within its procedure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct GoalId(pub u32);

/// A static call site, identified by an integer unique across the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub u32);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for GoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Procedure key: name, arity and mode number, written `name/arity-mode`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcKey {
    pub name: String,
    pub arity: u32,
    pub mode: u32,
}

impl ProcKey {
    pub fn new(name: &str, arity: u32, mode: u32) -> Self {
        ProcKey { name: name.to_string(), arity, mode }
    }
}

impl fmt::Display for ProcKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}-{}", self.name, self.arity, self.mode)
    }
}

impl std::str::FromStr for ProcKey {
    type Err = String;

    /// Parses `name/arity-mode`. The name itself may contain `/` or `-`;
    /// the arity and mode are taken from the last two separators.
    fn from_str(s: &str) -> Result<Self, String> {
        let err = || format!("malformed procedure key `{s}` (want name/arity-mode)");
        let (rest, mode) = s.rsplit_once('-').ok_or_else(err)?;
        let (name, arity) = rest.rsplit_once('/').ok_or_else(err)?;
        if name.is_empty() {
            return Err(err());
        }
        Ok(ProcKey {
            name: name.to_string(),
            arity: arity.parse().map_err(|_| err())?,
            mode: mode.parse().map_err(|_| err())?,
        })
    }
}

/// Determinism of a goal: how many solutions it can have and whether it
/// can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Determinism {
    /// Exactly one solution.
    Det,
    /// At most one solution.
    Semidet,
    /// One or more solutions.
    Multi,
    /// Any number of solutions.
    Nondet,
    /// No solutions (always fails).
    Failure,
    /// Throws or aborts; never produces a solution.
    Erroneous,
}

impl fmt::Display for Determinism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Determinism::Det => "det",
            Determinism::Semidet => "semidet",
            Determinism::Multi => "multi",
            Determinism::Nondet => "nondet",
            Determinism::Failure => "failure",
            Determinism::Erroneous => "erroneous",
        };
        f.write_str(s)
    }
}

/// Argument mode in a procedure head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArgMode {
    In,
    Out,
}

/// One formal argument of a procedure.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadArg {
    pub var: VarId,
    pub mode: ArgMode,
}

/// Right-hand side of a unification.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnifyRhs {
    /// `X = Y`.
    Var(VarId),
    /// `X = f(Y1, ..., Yn)`; construction or deconstruction depending on
    /// which side the declared produced-vars put the bindings.
    Functor { name: String, args: Vec<VarId> },
}

/// What a call goal refers to.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalleeRef {
    /// A procedure defined in this program.
    Proc(ProcKey),
    /// An external procedure with no visible body. Externals behave as
    /// opaque calls: cost comes from the call site, inputs are consumed
    /// at the start of the call and outputs produced at its end.
    External(String),
}

/// One arm of a switch, selected by the principal functor of the
/// switched-on variable.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchArm {
    pub functor: String,
    pub goal: Goal,
}

/// The structural part of a goal.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalKind {
    Unify {
        lhs: VarId,
        rhs: UnifyRhs,
    },
    Call {
        callee: CalleeRef,
        args: Vec<VarId>,
        site: SiteId,
    },
    /// Call through a closure variable. The callee is unknown to the
    /// analysis, so the goal is opaque: inputs are consumed at the start,
    /// outputs produced at the end, cost comes from the site.
    HigherOrderCall {
        closure: VarId,
        args: Vec<VarId>,
        site: SiteId,
    },
    SeqConj {
        conjuncts: Vec<Goal>,
    },
    /// A conjunction already marked parallel in the input. The advisor
    /// never re-advises these; for timing purposes it is treated like a
    /// sequential conjunction (a conservative upper bound).
    ParConj {
        conjuncts: Vec<Goal>,
    },
    Switch {
        var: VarId,
        arms: Vec<SwitchArm>,
    },
    IfThenElse {
        cond: Box<Goal>,
        then: Box<Goal>,
        #[serde(rename = "else")]
        els: Box<Goal>,
    },
    /// Negation: may consume variables but can never produce any.
    Negation {
        inner: Box<Goal>,
    },
    /// Existential quantification; transparent to the analysis.
    Scope {
        inner: Box<Goal>,
    },
    /// Disjunction; in det-visible contexts it produces nothing.
    Disjunction {
        disjuncts: Vec<Goal>,
    },
}

/// A goal: structure plus the mode information the analysis needs.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub id: GoalId,
    pub determinism: Determinism,
    /// Variables this goal binds, as established by mode analysis.
    pub produces: BTreeSet<VarId>,
    /// Variables visible both inside and outside this goal.
    pub nonlocals: BTreeSet<VarId>,
    pub kind: GoalKind,
}

impl Goal {
    /// Nonlocal variables this goal uses without producing them.
    pub fn consumed(&self) -> BTreeSet<VarId> {
        self.nonlocals.difference(&self.produces).copied().collect()
    }

    /// True if `v` is visible at this goal's boundary, as producer or
    /// consumer. For a variable that lives outside the goal this is the
    /// same as "the goal mentions it".
    pub fn touches(&self, v: VarId) -> bool {
        self.nonlocals.contains(&v) || self.produces.contains(&v)
    }

    /// Calls `f` on this goal and every goal nested inside it, preorder.
    pub fn visit<F: FnMut(&Goal)>(&self, f: &mut F) {
        f(self);
        match &self.kind {
            GoalKind::Unify { .. }
            | GoalKind::Call { .. }
            | GoalKind::HigherOrderCall { .. } => {}
            GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
                for c in conjuncts {
                    c.visit(f);
                }
            }
            GoalKind::Switch { arms, .. } => {
                for a in arms {
                    a.goal.visit(f);
                }
            }
            GoalKind::IfThenElse { cond, then, els } => {
                cond.visit(f);
                then.visit(f);
                els.visit(f);
            }
            GoalKind::Negation { inner } | GoalKind::Scope { inner } => inner.visit(f),
            GoalKind::Disjunction { disjuncts } => {
                for d in disjuncts {
                    d.visit(f);
                }
            }
        }
    }

    /// All variables mentioned anywhere in this goal's structure.
    pub fn vars_mentioned(&self) -> BTreeSet<VarId> {
        let mut out = BTreeSet::new();
        self.visit(&mut |g| {
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
            out.extend(g.produces.iter().copied());
        });
        out
    }
}

/// A procedure: head arguments, local variable names, and a body goal.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Procedure {
    pub key: ProcKey,
    pub determinism: Determinism,
    pub head: Vec<HeadArg>,
    /// Optional human-readable names for variables, for rendering only.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub var_names: BTreeMap<VarId, String>,
    pub body: Goal,
}

impl Procedure {
    /// The goal with the given id, if any.
    pub fn goal(&self, id: GoalId) -> Option<&Goal> {
        fn find(g: &Goal, id: GoalId) -> Option<&Goal> {
            if g.id == id {
                return Some(g);
            }
            match &g.kind {
                GoalKind::Unify { .. }
                | GoalKind::Call { .. }
                | GoalKind::HigherOrderCall { .. } => None,
                GoalKind::SeqConj { conjuncts } | GoalKind::ParConj { conjuncts } => {
                    conjuncts.iter().find_map(|c| find(c, id))
                }
                GoalKind::Switch { arms, .. } => arms.iter().find_map(|a| find(&a.goal, id)),
                GoalKind::IfThenElse { cond, then, els } => {
                    find(cond, id).or_else(|| find(then, id)).or_else(|| find(els, id))
                }
                GoalKind::Negation { inner } | GoalKind::Scope { inner } => find(inner, id),
                GoalKind::Disjunction { disjuncts } => {
                    disjuncts.iter().find_map(|d| find(d, id))
                }
            }
        }
        find(&self.body, id)
    }

    /// Name of a variable for rendering; falls back to `v<N>`.
    pub fn var_name(&self, v: VarId) -> String {
        self.var_names.get(&v).cloned().unwrap_or_else(|| v.to_string())
    }
}

/// A whole program: procedures, the entry point, and the set of known
/// external callees.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub entry: ProcKey,
    pub procedures: Vec<Procedure>,
    pub externals: BTreeSet<String>,
    index: BTreeMap<ProcKey, usize>,
}

impl Program {
    /// Builds a program, indexing procedures by key. Fails on duplicates.
    pub fn new(
        entry: ProcKey,
        procedures: Vec<Procedure>,
        externals: BTreeSet<String>,
    ) -> Result<Program, String> {
        let mut index = BTreeMap::new();
        for (i, p) in procedures.iter().enumerate() {
            if index.insert(p.key.clone(), i).is_some() {
                return Err(format!("duplicate procedure {}", p.key));
            }
        }
        Ok(Program { entry, procedures, externals, index })
    }

    pub fn proc(&self, key: &ProcKey) -> Option<&Procedure> {
        self.index.get(key).map(|&i| &self.procedures[i])
    }
}

/// Per-call-site statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteStats {
    /// Number of times the site was executed.
    pub count: u64,
    /// Total cost accumulated over all executions.
    pub total_cost: Cost,
}

impl SiteStats {
    /// Average cost per execution; zero for never-executed sites.
    pub fn mean_cost(&self) -> Cost {
        if self.count == 0 {
            0.0
        } else {
            self.total_cost / self.count as f64
        }
    }
}

/// A flat profile of one program run (or an aggregate of runs).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Profile {
    pub sites: BTreeMap<SiteId, SiteStats>,
    /// Entry counts for goals that need them (branch arms, conjunctions).
    pub goal_entries: BTreeMap<(ProcKey, GoalId), u64>,
    /// For each if-then-else condition goal: how often it failed.
    pub cond_failures: BTreeMap<(ProcKey, GoalId), u64>,
}

impl Profile {
    pub fn site(&self, id: SiteId) -> Option<SiteStats> {
        self.sites.get(&id).copied()
    }

    pub fn goal_entry(&self, proc: &ProcKey, goal: GoalId) -> Option<u64> {
        self.goal_entries.get(&(proc.clone(), goal)).copied()
    }

    pub fn cond_failure(&self, proc: &ProcKey, goal: GoalId) -> Option<u64> {
        self.cond_failures.get(&(proc.clone(), goal)).copied()
    }
}

/// Errors from cost lookup and the timing analyses built on it.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("no profile entry for call site {site} in {proc}")]
    MissingSite { proc: ProcKey, site: SiteId },
    #[error("no entry count recorded for goal {goal} in {proc}")]
    MissingGoalEntry { proc: ProcKey, goal: GoalId },
    #[error("procedure {0} is not defined")]
    UnknownProcedure(ProcKey),
    #[error("variable {var} is not produced by goal {goal} in {proc}")]
    NotProduced { proc: ProcKey, goal: GoalId, var: VarId },
    #[error("variable {var} is produced on no executed path of goal {goal} in {proc}")]
    NeverProducedOnPath { proc: ProcKey, goal: GoalId, var: VarId },
    #[error("goal {goal} in {proc} cannot produce variables")]
    CannotProduce { proc: ProcKey, goal: GoalId },
    #[error("condition {goal} in {proc} never fails; there is no failure path to cost")]
    ConditionNeverFails { proc: ProcKey, goal: GoalId },
    #[error("variable {var} is not an {mode}-mode argument of the call to {callee}")]
    ArgNotFound { callee: ProcKey, var: VarId, mode: &'static str },
}

/// Average per-execution cost of a goal under the given profile.
///
/// Unifications are free; call costs come from their sites; compound
/// goals combine their children, weighting branch arms by entry counts.
/// A zero-count call site costs zero (validation flags such sites if they
/// carry recorded cost).
pub fn goal_cost(goal: &Goal, proc: &ProcKey, profile: &Profile) -> Result<Cost, AnalysisError> {
    let model = crate::timing::CostModel::plain(profile);
    model.goal_cost(goal, proc)
}
