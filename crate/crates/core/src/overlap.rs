//! Predicted execution time of one parallel conjunction.
//!
//! Each parallel conjunct is summarized by its sequential cost and the
//! timeline of its shared-variable events ([`VarUse`], times relative to
//! the conjunct's own start). The predictor walks every conjunct's
//! events in order, maintaining two clocks: the sequential offset within
//! the conjunct and the wall-clock time in the parallel execution.
//! Producing a variable records its wall-clock availability; consuming
//! one stalls the consumer until the recorded availability if the value
//! is not ready yet.
//!
//! With all overheads zero this is the idealized overlap model. With
//! nonzero [`OverheadParams`] the walk also charges the bookkeeping of
//! the runtime the model targets: conjuncts after the first start on
//! other engines via a chain of sparks, producers pay to signal their
//! futures, consumers pay to wait (plus a context wakeup if they
//! actually blocked), every conjunct ends with a barrier, and if anyone
//! finishes after the first conjunct, the original context must be woken
//! one final time.

use std::collections::BTreeMap;

use crate::ir::{Cost, VarId};
use crate::timing::{UseKind, VarUse};

/// Costs of the runtime primitives, in the profile's cost units.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverheadParams {
    /// Creating a spark for the rest of a conjunction.
    pub spark_cost: Cost,
    /// From spark creation until another engine starts running it.
    pub spark_delay: Cost,
    /// Signalling a future when its variable is bound.
    pub signal_cost: Cost,
    /// Reading a future, even when the value is already available.
    pub wait_cost: Cost,
    /// Rescheduling a context that blocked on a future.
    pub context_wakeup_delay: Cost,
    /// Synchronizing at the end of a conjunct.
    pub barrier_cost: Cost,
}

impl OverheadParams {
    /// No overheads: the idealized overlap model.
    pub const ZERO: OverheadParams = OverheadParams {
        spark_cost: 0.0,
        spark_delay: 0.0,
        signal_cost: 0.0,
        wait_cost: 0.0,
        context_wakeup_delay: 0.0,
        barrier_cost: 0.0,
    };
}

/// Placeholder magnitudes for a runtime nobody has measured yet: small
/// relative to any conjunct worth parallelizing, but nonzero so that
/// pointless decompositions are penalized.
impl Default for OverheadParams {
    fn default() -> Self {
        OverheadParams {
            spark_cost: 2.0,
            spark_delay: 10.0,
            signal_cost: 2.0,
            wait_cost: 2.0,
            context_wakeup_delay: 10.0,
            barrier_cost: 2.0,
        }
    }
}

/// One parallel conjunct as the predictor sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct ParConjunct {
    /// Sequential cost of the whole conjunct.
    pub cost: Cost,
    /// Shared-variable events, sorted by time (ties: produce first,
    /// then variable id).
    pub events: Vec<VarUse>,
}

/// The predictor's result for one conjunction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParSchedule {
    /// Wall-clock completion time of each conjunct (including its
    /// barrier).
    pub conjunct_finish: Vec<Cost>,
    /// Wall-clock time each shared variable became available (its
    /// future signalled).
    pub prod_times: BTreeMap<VarId, Cost>,
    /// Predicted execution time of the whole conjunction.
    pub total: Cost,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum OverlapError {
    /// A conjunct consumed a variable no earlier conjunct produced.
    /// Timelines from a validated conjunction cannot do this; seeing it
    /// means an ordering bug upstream.
    #[error("conjunct {conjunct} consumes {var} but no earlier conjunct produces it")]
    UnproducedConsume { conjunct: usize, var: VarId },
    #[error("sequential time must be positive to compute a speedup (got {0})")]
    NonPositiveSeqTime(Cost),
    #[error("parallel time must be positive to compute a speedup (got {0})")]
    NonPositiveParTime(Cost),
}

/// Predicted parallel execution time with explicit overhead parameters.
///
/// This follows the overlap model exactly: conjunct `i` (0-based) begins
/// `(spark_cost + spark_delay) * i` after the conjunction, pays
/// `spark_cost` up front if it must spawn the next spark in the chain,
/// `signal_cost` after binding each shared variable, `wait_cost` at each
/// future read plus `context_wakeup_delay` if it actually blocked, and
/// `barrier_cost` at the end. If the last conjunct to finish is not the
/// first one, the conjunction's own context blocked at the barrier and
/// pays one final `context_wakeup_delay`.
pub fn find_par_time(
    conjuncts: &[ParConjunct],
    overheads: &OverheadParams,
) -> Result<ParSchedule, OverlapError> {
    let n = conjuncts.len();
    let mut prod_times: BTreeMap<VarId, Cost> = BTreeMap::new();
    let mut finishes = Vec::with_capacity(n);
    for (i, conjunct) in conjuncts.iter().enumerate() {
        let finish =
            walk_conjunct(conjunct, i, n, overheads, &mut prod_times).map_err(|var| {
                OverlapError::UnproducedConsume { conjunct: i, var }
            })?;
        finishes.push(finish);
    }
    let total = finish_time(&finishes, overheads);
    Ok(ParSchedule { conjunct_finish: finishes, prod_times, total })
}

/// Predicted parallel execution time of the idealized model (all
/// overheads zero).
pub fn find_par_time_simple(conjuncts: &[ParConjunct]) -> Result<ParSchedule, OverlapError> {
    find_par_time(conjuncts, &OverheadParams::ZERO)
}

/// Walks one conjunct's timeline given the production times recorded by
/// earlier conjuncts; records this conjunct's own productions. Returns
/// its wall-clock finish time, or the offending variable on a consume
/// with no recorded production.
pub(crate) fn walk_conjunct(
    conjunct: &ParConjunct,
    index: usize,
    count: usize,
    o: &OverheadParams,
    prod_times: &mut BTreeMap<VarId, Cost>,
) -> Result<Cost, VarId> {
    let mut seq = 0.0; // offset reached within the conjunct's own execution
    let mut par = (o.spark_cost + o.spark_delay) * index as f64;
    if index + 1 != count {
        par += o.spark_cost; // this context spawns the next spark in the chain
    }
    debug_assert!(conjunct.events.windows(2).all(|w| w[0].time <= w[1].time),
        "conjunct events must be sorted by time");
    for ev in &conjunct.events {
        let duration = ev.time - seq;
        debug_assert!(
            (-1e-9..=conjunct.cost + 1e-9).contains(&ev.time),
            "event time {} outside conjunct of cost {}",
            ev.time,
            conjunct.cost
        );
        seq = ev.time;
        match ev.kind {
            UseKind::Produce => {
                par += duration + o.signal_cost;
                prod_times.insert(ev.var, par);
            }
            UseKind::Consume => {
                let want = par + duration;
                let avail = *prod_times.get(&ev.var).ok_or(ev.var)?;
                par = want.max(avail) + o.wait_cost;
                if want < avail {
                    // The value was not ready: the context blocked and
                    // must be rescheduled once the future is signalled.
                    par += o.context_wakeup_delay;
                }
            }
        }
    }
    Ok(par + (conjunct.cost - seq) + o.barrier_cost)
}

/// Combines per-conjunct finish times into the conjunction's total.
pub(crate) fn finish_time(finishes: &[Cost], o: &OverheadParams) -> Cost {
    let mut total = finishes.iter().copied().fold(0.0, f64::max);
    if let Some(&first) = finishes.first() {
        if total > first {
            total += o.context_wakeup_delay;
        }
    }
    total
}

/// `SeqTime / ParTime`. Both inputs must be positive.
pub fn speedup(seq_time: Cost, par_time: Cost) -> Result<f64, OverlapError> {
    if seq_time <= 0.0 {
        return Err(OverlapError::NonPositiveSeqTime(seq_time));
    }
    if par_time <= 0.0 {
        return Err(OverlapError::NonPositiveParTime(par_time));
    }
    Ok(seq_time / par_time)
}
