//! Independent checking machinery.
//!
//! Nothing in this module is used to *produce* advice. It exists to
//! check the analysis from a different direction:
//!
//! * [`enumerate_partitions`] / [`brute_force_best`] — exhaustive search
//!   over all contiguous partitions of a conjunction, against which the
//!   budgeted search must agree whenever its budget is unlimited.
//! * [`simulate_execution`] — a discrete-event simulator of the
//!   spark/future runtime the overlap model describes. With unlimited
//!   engines its makespan must equal [`find_par_time`] exactly; with a
//!   fixed engine count it reports what the model cannot see.
//!
//! The simulator is deliberately not a re-arrangement of the predictor's
//! arithmetic. It runs engines, sparks, futures and blocked contexts
//! through a time-ordered event queue, the way a runtime would, and lets
//! the makespan fall out.
//!
//! [`find_par_time`]: crate::overlap::find_par_time

use std::collections::{BTreeMap, VecDeque};

use crate::ir::{Cost, VarId};
use crate::overlap::{OverheadParams, ParConjunct};
use crate::timing::{sort_var_uses, UseKind, VarUse};

/// All partitions of `n` items into non-empty contiguous groups, as
/// `[start, end)` ranges. There are exactly `2^(n-1)` of them; the order
/// is deterministic (by the bitmask of group boundaries).
pub fn enumerate_partitions(n: usize) -> Vec<Vec<(usize, usize)>> {
    assert!((1..=20).contains(&n), "partition enumeration needs 1 <= n <= 20, got {n}");
    let mut all = Vec::with_capacity(1 << (n - 1));
    for mask in 0u64..(1u64 << (n - 1)) {
        let mut groups = Vec::new();
        let mut start = 0;
        for i in 0..n - 1 {
            if mask & (1 << i) != 0 {
                groups.push((start, i + 1));
                start = i + 1;
            }
        }
        groups.push((start, n));
        all.push(groups);
    }
    all
}

/// Evaluates every contiguous partition of `n` items with the supplied
/// costing function and returns the minimum time together with *all*
/// partitions achieving it (exact tie set, in enumeration order).
pub fn brute_force_best<E>(
    n: usize,
    mut eval: impl FnMut(&[(usize, usize)]) -> Result<Cost, E>,
) -> Result<(Cost, Vec<Vec<(usize, usize)>>), E> {
    let mut best_time = f64::INFINITY;
    let mut best: Vec<Vec<(usize, usize)>> = Vec::new();
    for partition in enumerate_partitions(n) {
        let t = eval(&partition)?;
        if t < best_time {
            best_time = t;
            best = vec![partition];
        } else if t == best_time {
            best.push(partition);
        }
    }
    Ok((best_time, best))
}

/// Composes contiguous groups of conjuncts into one descriptor per
/// group, mapping each conjunct-relative event onto the group timeline.
///
/// Events survive only where they cross group boundaries: a production
/// is kept if some later group within the partition consumes the
/// variable, and only the first consumption within a group is kept
/// (later conjuncts of the same group already run after it in sequence).
/// Variables produced before the partition's range are treated as
/// available from the start.
pub fn compose_groups(
    conjuncts: &[ParConjunct],
    groups: &[(usize, usize)],
) -> Result<Vec<ParConjunct>, String> {
    for w in groups.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(format!("groups are not contiguous: {:?} then {:?}", w[0], w[1]));
        }
    }
    if groups.iter().any(|&(a, b)| a >= b || b > conjuncts.len()) {
        return Err(format!("group out of range in {groups:?}"));
    }

    // Producer index and consumer indices per variable.
    let mut producers: BTreeMap<VarId, (usize, Cost)> = BTreeMap::new();
    let mut consumers: BTreeMap<VarId, Vec<(usize, Cost)>> = BTreeMap::new();
    for (i, c) in conjuncts.iter().enumerate() {
        for ev in &c.events {
            match ev.kind {
                UseKind::Produce => {
                    if producers.insert(ev.var, (i, ev.time)).is_some() {
                        return Err(format!("{} has two producers", ev.var));
                    }
                }
                UseKind::Consume => consumers.entry(ev.var).or_default().push((i, ev.time)),
            }
        }
    }

    let group_of = |idx: usize| groups.iter().position(|&(a, b)| (a..b).contains(&idx));
    let lo = groups[0].0;
    let prefix = |a: usize, idx: usize| -> Cost {
        conjuncts[a..idx].iter().map(|c| c.cost).sum()
    };

    let mut out = Vec::with_capacity(groups.len());
    for (gi, &(a, b)) in groups.iter().enumerate() {
        let mut events = Vec::new();
        for (&var, &(p, tp)) in &producers {
            if (a..b).contains(&p) {
                let consumed_later = consumers
                    .get(&var)
                    .map(|cs| cs.iter().any(|&(j, _)| j >= b && group_of(j).is_some()))
                    .unwrap_or(false);
                if consumed_later {
                    events.push(VarUse {
                        var,
                        time: prefix(a, p) + tp,
                        kind: UseKind::Produce,
                    });
                }
            }
        }
        for (&var, cs) in &consumers {
            // Only the first consumption within this group matters.
            let Some(&(j, tc)) = cs.iter().find(|&&(j, _)| (a..b).contains(&j)) else {
                continue;
            };
            match producers.get(&var) {
                Some(&(p, _)) if p >= b && group_of(p).is_some() => {
                    return Err(format!("{var} is consumed in group {gi} but produced later"));
                }
                // Produced by an earlier group of the partition: a real wait.
                Some(&(p, _)) if p < a && p >= lo => {
                    events.push(VarUse { var, time: prefix(a, j) + tc, kind: UseKind::Consume });
                }
                // Same group (already sequenced) or produced outside the
                // partition's range: available from the start.
                _ => {}
            }
        }
        sort_var_uses(&mut events);
        out.push(ParConjunct { cost: conjuncts[a..b].iter().map(|c| c.cost).sum(), events });
    }
    Ok(out)
}

/// How many engines the simulated runtime has.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engines {
    Unlimited,
    Fixed(usize),
}

/// Result of one simulation run.
#[derive(Clone, Debug)]
pub struct SimResult {
    /// Completion time of each conjunct, including its barrier.
    pub conjunct_finish: Vec<Cost>,
    /// Total time for the conjunction, including the final wakeup of the
    /// original context if anything outlived the first conjunct.
    pub makespan: Cost,
    /// Line-oriented trace of every scheduling decision; identical
    /// inputs always produce identical traces.
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("simulation deadlocked: conjunct {conjunct} waits forever on {var}")]
    Deadlock { conjunct: usize, var: VarId },
    #[error("need at least one engine")]
    NoEngines,
}

#[derive(Clone, Copy, PartialEq)]
enum ActionKind {
    /// A future's value became visible, or a spark hit the queue.
    Avail,
    /// A context reached its next milestone (event or end of work).
    Step,
    /// A consumer looks for its value. Runs after every signal and bind
    /// at the same instant: a value signalled at time t is available to
    /// a read at time t, whichever context was stepped first.
    Check,
    /// Engines look for queued work (fixed-engine mode only).
    Dispatch,
}

struct Action {
    time: Cost,
    kind: ActionKind,
    seq: u64,
    what: What,
}

enum What {
    SparkReady(usize),
    Signal(VarId),
    Step(usize),
    Check(usize),
    Dispatch,
}

/// Pending actions in time order. Ties resolve by kind (availability
/// first, then steps, then reads, then dispatch) and finally insertion
/// order, so the simulation is deterministic.
struct Agenda {
    items: Vec<Action>,
    next_seq: u64,
}

impl Agenda {
    fn new() -> Self {
        Agenda { items: Vec::new(), next_seq: 0 }
    }

    fn push(&mut self, time: Cost, kind: ActionKind, what: What) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.items.push(Action { time, kind, seq, what });
    }

    fn pop(&mut self) -> Option<Action> {
        if self.items.is_empty() {
            return None;
        }
        let mut best = 0;
        for i in 1..self.items.len() {
            let (a, b) = (&self.items[i], &self.items[best]);
            let earlier = a.time < b.time
                || (a.time == b.time
                    && ((a.kind as u8) < (b.kind as u8)
                        || (a.kind == b.kind && a.seq < b.seq)));
            if earlier {
                best = i;
            }
        }
        Some(self.items.swap_remove(best))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum CtxState {
    /// Not yet started (waiting for its spark to be picked up).
    Pending,
    /// Executing; `clock` is valid while running.
    Running,
    /// Blocked on a future.
    Blocked(VarId),
    /// Ready to resume, waiting for an engine.
    Runnable,
    Done,
}

struct Context {
    state: CtxState,
    /// Sequential offset of its own work already executed.
    done: Cost,
    /// Wall-clock time the context has reached (valid while running).
    clock: Cost,
    /// Next event index in its timeline.
    next_event: usize,
    /// Wall-clock time it stopped at when blocking (its "want" time).
    blocked_at: Cost,
    finish: Option<Cost>,
}

struct Future {
    signalled_at: Option<Cost>,
    waiters: Vec<usize>,
}

/// Runs the spark/future runtime on the given parallel conjuncts.
///
/// Conjunct 0 runs on the original context. Each context, as its first
/// action, spends `spark_cost` creating the spark for the rest of the
/// conjunction (if any); idle engines pick sparks up in FIFO order and
/// start them `spark_delay` later. Producers spend `signal_cost` making
/// each shared variable available; consumers spend `wait_cost` per read
/// and block (releasing their engine) when the value is not there yet,
/// paying `context_wakeup_delay` when rescheduled. Each conjunct ends
/// with `barrier_cost`. If the last finisher is not conjunct 0, the
/// original context blocked at the barrier and pays one more wakeup.
pub fn simulate_execution(
    conjuncts: &[ParConjunct],
    overheads: &OverheadParams,
    engines: Engines,
) -> Result<SimResult, SimError> {
    if let Engines::Fixed(0) = engines {
        return Err(SimError::NoEngines);
    }
    let o = *overheads;
    let n = conjuncts.len();
    let mut agenda = Agenda::new();
    let mut trace = Vec::new();
    let mut ctxs: Vec<Context> = (0..n)
        .map(|_| Context {
            state: CtxState::Pending,
            done: 0.0,
            clock: 0.0,
            next_event: 0,
            blocked_at: 0.0,
            finish: None,
        })
        .collect();
    let mut futures: BTreeMap<VarId, Future> = BTreeMap::new();
    for c in conjuncts {
        for ev in &c.events {
            if ev.kind == UseKind::Produce {
                futures.insert(ev.var, Future { signalled_at: None, waiters: Vec::new() });
            }
        }
    }

    let mut free_engines = match engines {
        Engines::Unlimited => usize::MAX,
        Engines::Fixed(k) => k,
    };
    let unlimited = engines == Engines::Unlimited;
    let mut spark_queue: VecDeque<usize> = VecDeque::new();
    let mut runnable_queue: VecDeque<usize> = VecDeque::new();

    let fmt_t = |t: Cost| {
        if t == t.trunc() && t.abs() < 1e15 {
            format!("{}", t as i64)
        } else {
            format!("{t}")
        }
    };

    // Starts `ctx` running at `begin`: spawn the next spark if this
    // context carries the rest of the chain, then schedule its first
    // milestone.
    fn begin_context(
        ctx: usize,
        begin: Cost,
        n: usize,
        o: &OverheadParams,
        ctxs: &mut [Context],
        agenda: &mut Agenda,
        trace: &mut Vec<String>,
        fmt_t: &impl Fn(Cost) -> String,
    ) {
        let mut clock = begin;
        if ctx + 1 < n {
            clock += o.spark_cost;
            agenda.push(clock, ActionKind::Avail, What::SparkReady(ctx + 1));
            trace.push(format!(
                "t={} ctx{} sparks off conjuncts {}..{}",
                fmt_t(clock),
                ctx,
                ctx + 1,
                n - 1
            ));
        }
        ctxs[ctx].state = CtxState::Running;
        ctxs[ctx].clock = clock;
        schedule_step(ctx, ctxs, agenda);
    }

    // Schedules the next milestone of a running context: either its next
    // timeline event or the end of its work.
    fn schedule_step(ctx: usize, ctxs: &mut [Context], agenda: &mut Agenda) {
        let c = &ctxs[ctx];
        agenda.push(c.clock, ActionKind::Step, What::Step(ctx));
    }

    if n > 0 {
        trace.push("t=0 ctx0 begins on the original context".to_string());
        if !unlimited {
            free_engines -= 1;
        }
        begin_context(0, 0.0, n, &o, &mut ctxs, &mut agenda, &mut trace, &fmt_t);
    }

    while let Some(action) = agenda.pop() {
        let now = action.time;
        match action.what {
            What::SparkReady(ctx) => {
                if unlimited {
                    trace.push(format!(
                        "t={} spark for ctx{ctx} picked up at once",
                        fmt_t(now)
                    ));
                    begin_context(
                        ctx,
                        now + o.spark_delay,
                        n,
                        &o,
                        &mut ctxs,
                        &mut agenda,
                        &mut trace,
                        &fmt_t,
                    );
                } else {
                    spark_queue.push_back(ctx);
                    agenda.push(now, ActionKind::Dispatch, What::Dispatch);
                }
            }
            What::Signal(var) => {
                let fut = futures.get_mut(&var).expect("signal for unknown future");
                fut.signalled_at = Some(now);
                let waiters = std::mem::take(&mut fut.waiters);
                for ctx in waiters {
                    trace.push(format!("t={} ctx{ctx} woken by {var}", fmt_t(now)));
                    if unlimited {
                        // Wake immediately: pay the read and the reschedule.
                        ctxs[ctx].state = CtxState::Running;
                        ctxs[ctx].clock = now + o.wait_cost + o.context_wakeup_delay;
                        ctxs[ctx].next_event += 1;
                        schedule_step(ctx, &mut ctxs, &mut agenda);
                    } else {
                        ctxs[ctx].state = CtxState::Runnable;
                        runnable_queue.push_back(ctx);
                        agenda.push(now, ActionKind::Dispatch, What::Dispatch);
                    }
                }
            }
            What::Dispatch => {
                while free_engines > 0 {
                    if let Some(ctx) = runnable_queue.pop_front() {
                        free_engines -= 1;
                        trace.push(format!("t={} ctx{ctx} resumes on an engine", fmt_t(now)));
                        ctxs[ctx].state = CtxState::Running;
                        ctxs[ctx].clock = now + o.wait_cost + o.context_wakeup_delay;
                        ctxs[ctx].next_event += 1;
                        schedule_step(ctx, &mut ctxs, &mut agenda);
                    } else if let Some(ctx) = spark_queue.pop_front() {
                        free_engines -= 1;
                        trace.push(format!(
                            "t={} spark for ctx{ctx} picked up by an idle engine",
                            fmt_t(now)
                        ));
                        begin_context(
                            ctx,
                            now + o.spark_delay,
                            n,
                            &o,
                            &mut ctxs,
                            &mut agenda,
                            &mut trace,
                            &fmt_t,
                        );
                    } else {
                        break;
                    }
                }
            }
            What::Step(ctx) => {
                if ctxs[ctx].state != CtxState::Running || ctxs[ctx].clock != now {
                    continue; // superseded milestone
                }
                let conjunct = &conjuncts[ctx];
                match conjunct.events.get(ctxs[ctx].next_event) {
                    Some(ev) => {
                        let run = ev.time - ctxs[ctx].done;
                        let reached = now + run;
                        if run > 0.0 {
                            // Still work to do before the event: advance.
                            ctxs[ctx].clock = reached;
                            ctxs[ctx].done = ev.time;
                            schedule_step(ctx, &mut ctxs, &mut agenda);
                            continue;
                        }
                        match ev.kind {
                            UseKind::Produce => {
                                let at = reached + o.signal_cost;
                                trace.push(format!(
                                    "t={} ctx{ctx} binds {}, signal lands at t={}",
                                    fmt_t(reached),
                                    ev.var,
                                    fmt_t(at)
                                ));
                                agenda.push(at, ActionKind::Avail, What::Signal(ev.var));
                                ctxs[ctx].clock = at;
                                ctxs[ctx].next_event += 1;
                                schedule_step(ctx, &mut ctxs, &mut agenda);
                            }
                            UseKind::Consume => {
                                // Look for the value only after every bind
                                // and signal at this instant has landed.
                                agenda.push(reached, ActionKind::Check, What::Check(ctx));
                            }
                        }
                    }
                    None => {
                        let run = conjunct.cost - ctxs[ctx].done;
                        if run > 0.0 {
                            ctxs[ctx].clock = now + run;
                            ctxs[ctx].done = conjunct.cost;
                            schedule_step(ctx, &mut ctxs, &mut agenda);
                            continue;
                        }
                        let finish = now + o.barrier_cost;
                        ctxs[ctx].state = CtxState::Done;
                        ctxs[ctx].finish = Some(finish);
                        trace.push(format!(
                            "t={} ctx{ctx} passes the barrier and finishes",
                            fmt_t(finish)
                        ));
                        if !unlimited {
                            free_engines += 1;
                            agenda.push(finish, ActionKind::Dispatch, What::Dispatch);
                        }
                    }
                }
            }
            What::Check(ctx) => {
                if ctxs[ctx].state != CtxState::Running || ctxs[ctx].clock != now {
                    continue; // superseded milestone
                }
                let ev = &conjuncts[ctx].events[ctxs[ctx].next_event];
                let want = now;
                let Some(fut) = futures.get_mut(&ev.var) else {
                    // Nobody ever signals this future.
                    return Err(SimError::Deadlock { conjunct: ctx, var: ev.var });
                };
                match fut.signalled_at.filter(|&t| t <= want) {
                    Some(_) => {
                        trace.push(format!(
                            "t={} ctx{ctx} reads {} (already available)",
                            fmt_t(want),
                            ev.var
                        ));
                        ctxs[ctx].clock = want + o.wait_cost;
                        ctxs[ctx].next_event += 1;
                        schedule_step(ctx, &mut ctxs, &mut agenda);
                    }
                    None => {
                        trace.push(format!(
                            "t={} ctx{ctx} blocks on {}",
                            fmt_t(want),
                            ev.var
                        ));
                        ctxs[ctx].state = CtxState::Blocked(ev.var);
                        ctxs[ctx].blocked_at = want;
                        fut.waiters.push(ctx);
                        if !unlimited {
                            free_engines += 1;
                            agenda.push(want, ActionKind::Dispatch, What::Dispatch);
                        }
                    }
                }
            }
        }
    }

    // Anything still blocked or never started is a deadlock (or an
    // unproduced variable, which amounts to the same thing here).
    for (i, c) in ctxs.iter().enumerate() {
        match c.state {
            CtxState::Done => {}
            CtxState::Blocked(var) => return Err(SimError::Deadlock { conjunct: i, var }),
            _ => {
                let var = conjuncts[i]
                    .events
                    .get(c.next_event)
                    .map(|e| e.var)
                    .unwrap_or(VarId(u32::MAX));
                return Err(SimError::Deadlock { conjunct: i, var });
            }
        }
    }

    let finishes: Vec<Cost> = ctxs.iter().map(|c| c.finish.unwrap()).collect();
    let makespan = crate::overlap::finish_time(&finishes, &o);
    if n > 0 && makespan > finishes[0] {
        trace.push(format!(
            "t={} original context woken after the last conjunct",
            fmt_t(makespan)
        ));
    }
    Ok(SimResult { conjunct_finish: finishes, makespan, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlap::find_par_time;

    fn produce(var: u32, time: f64) -> VarUse {
        VarUse { var: VarId(var), time, kind: UseKind::Produce }
    }

    fn consume(var: u32, time: f64) -> VarUse {
        VarUse { var: VarId(var), time, kind: UseKind::Consume }
    }

    #[test]
    fn partition_count_is_two_to_the_n_minus_one() {
        assert_eq!(enumerate_partitions(1).len(), 1);
        assert_eq!(enumerate_partitions(4).len(), 8);
        assert_eq!(enumerate_partitions(8).len(), 128);
        assert_eq!(enumerate_partitions(3), vec![
            vec![(0, 3)],
            vec![(0, 1), (1, 3)],
            vec![(0, 2), (2, 3)],
            vec![(0, 1), (1, 2), (2, 3)],
        ]);
    }

    #[test]
    fn composing_one_group_hides_all_events() {
        let conjs = [
            ParConjunct { cost: 5.0, events: vec![produce(0, 1.0)] },
            ParConjunct { cost: 4.0, events: vec![consume(0, 2.0)] },
        ];
        let composed = compose_groups(&conjs, &[(0, 2)]).unwrap();
        assert_eq!(composed.len(), 1);
        assert_eq!(composed[0].cost, 9.0);
        assert!(composed[0].events.is_empty());
    }

    #[test]
    fn composing_keeps_cross_group_events_with_prefix_offsets() {
        let conjs = [
            ParConjunct { cost: 5.0, events: vec![produce(0, 1.0)] },
            ParConjunct { cost: 4.0, events: vec![consume(0, 2.0), produce(1, 3.0)] },
            ParConjunct { cost: 6.0, events: vec![consume(1, 0.0)] },
        ];
        let composed = compose_groups(&conjs, &[(0, 2), (2, 3)]).unwrap();
        assert_eq!(composed[0].cost, 9.0);
        // Var 0 stays internal; var 1 is produced at 5 + 3 = 8.
        assert_eq!(composed[0].events, vec![produce(1, 8.0)]);
        assert_eq!(composed[1].events, vec![consume(1, 0.0)]);
    }

    #[test]
    fn simulator_matches_predictor_on_a_dependent_pair() {
        let conjs = [
            ParConjunct { cost: 5.0, events: vec![produce(0, 4.0)] },
            ParConjunct { cost: 4.0, events: vec![consume(0, 1.0)] },
        ];
        let o = OverheadParams::ZERO;
        let sim = simulate_execution(&conjs, &o, Engines::Unlimited).unwrap();
        let model = find_par_time(&conjs, &o).unwrap();
        assert_eq!(sim.makespan, model.total);
        assert_eq!(sim.conjunct_finish, model.conjunct_finish);
        assert_eq!(sim.makespan, 7.0);
    }

    #[test]
    fn one_engine_and_no_overheads_run_sequentially() {
        let conjs = [
            ParConjunct { cost: 5.0, events: vec![produce(0, 4.0)] },
            ParConjunct { cost: 4.0, events: vec![consume(0, 1.0)] },
            ParConjunct { cost: 3.0, events: vec![] },
        ];
        let sim =
            simulate_execution(&conjs, &OverheadParams::ZERO, Engines::Fixed(1)).unwrap();
        assert_eq!(sim.makespan, 12.0);
    }

    /// Adding engines is not always a win. Serially the consumer starts
    /// after the producer has signalled and never blocks; with a second
    /// engine it starts at once, blocks, and pays the wakeup penalty at
    /// the consume and again at the barrier.
    #[test]
    fn more_engines_can_hurt() {
        let conjs = [
            ParConjunct { cost: 1.0, events: vec![produce(0, 1.0)] },
            ParConjunct { cost: 1.0, events: vec![consume(0, 0.0)] },
        ];
        let mut o = OverheadParams::ZERO;
        o.context_wakeup_delay = 10.0;
        let serial = simulate_execution(&conjs, &o, Engines::Fixed(1)).unwrap();
        let pair = simulate_execution(&conjs, &o, Engines::Fixed(2)).unwrap();
        assert_eq!(serial.makespan, 12.0);
        assert_eq!(pair.makespan, 22.0);
    }

    #[test]
    fn trace_is_reproducible() {
        let conjs = [
            ParConjunct { cost: 5.0, events: vec![produce(0, 4.0)] },
            ParConjunct { cost: 4.0, events: vec![consume(0, 1.0)] },
        ];
        let o = OverheadParams::default();
        let a = simulate_execution(&conjs, &o, Engines::Fixed(2)).unwrap();
        let b = simulate_execution(&conjs, &o, Engines::Fixed(2)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(!a.trace.is_empty());
    }
}
