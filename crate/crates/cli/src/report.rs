//! Small formatting helpers shared by the subcommands.

use autopar::planner::Advice;

/// Costs are call-sequence counts, so they are almost always whole
/// numbers; print those without a trailing `.0`.
pub(crate) fn fmt_cost(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

pub(crate) fn fmt_speedup(s: f64) -> String {
    format!("{s:.3}")
}

pub(crate) fn print_json(doc: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(doc).expect("report serialization"));
}

/// One-line summary of an advice, as printed by `advise` and `explain`.
pub(crate) fn advice_line(a: &Advice) -> String {
    let mut line = format!(
        "{} {}: {}  seq {}  par {}  speedup {}",
        a.proc,
        a.conjunction,
        a.rendering,
        fmt_cost(a.seq_time),
        fmt_cost(a.par_time),
        fmt_speedup(a.speedup),
    );
    if let Some(t) = a.throttle {
        line.push_str(&format!("  throttle {t}"));
    }
    line
}
