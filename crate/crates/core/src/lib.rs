//! Profile-directed advisor for dependent AND-parallelism.
//!
//! Given a goal-level intermediate representation of a program and a flat
//! profile (per-call-site counts and costs, per-goal entry counts), the
//! advisor predicts how much two or more dependent conjuncts would overlap
//! if executed in parallel, searches for the best partition of each
//! candidate conjunction into parallel groups, and emits advice describing
//! which conjunctions to parallelize and how.
//!
//! The crate is organized around the analysis pipeline:
//!
//! * [`ir`] — the goal IR, profile data, parsing and validation.
//! * [`timing`] — variable production / first-consumption times inside a
//!   goal, branch weighting, and shared-variable timelines.
//! * [`overlap`] — the per-conjunction parallel execution time estimate,
//!   with and without runtime overheads.
//! * [`planner`] — partition search over one conjunction, edge
//!   shrinking/expansion, recursion classification, and advice formation.
//! * [`driver`] — call-graph exploration, revisiting ancestors once
//!   descendants are parallelized, and the advice file format.
//! * [`oracle`] — independent checking machinery: exhaustive partition
//!   enumeration and a discrete-event simulator of the spark/future
//!   runtime.
//! * [`fixtures`] — canned example programs and random instance
//!   generators used by tests and the CLI.
//!
//! All analysis is deterministic: the advice produced is a pure function
//! of the program, the profile, and the analysis parameters.

pub mod config;
pub mod driver;
pub mod fixtures;
pub mod ir;
pub mod oracle;
pub mod overlap;
pub mod planner;
pub mod timing;

pub use config::{AnalysisConfig, Thresholds};
pub use driver::{explore_call_tree, AdviceFile};
pub use ir::{Goal, GoalId, GoalKind, Procedure, Profile, Program, SiteId, VarId};
pub use overlap::{find_par_time, find_par_time_simple, OverheadParams, ParSchedule};
pub use planner::{best_parallelisation, Advice, Partition};
