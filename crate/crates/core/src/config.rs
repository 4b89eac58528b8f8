//! Tunable parameters for the whole pipeline, and the on-disk config
//! file they can be loaded from.
//!
//! Every knob has a default that works for the bundled fixtures; a
//! config file may override any subset. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use serde::{Deserialize, Serialize};

use crate::ir::{ParseError, FORMAT_VERSION};
use crate::overlap::OverheadParams;

/// Cost thresholds gating what gets analysed and what gets advised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Call sites whose total profiled cost is below this are not worth
    /// descending into during call-tree exploration.
    pub call_cost: f64,
    /// A conjunct counts as expensive (and anchors the parallelisable
    /// middle of its conjunction) when its mean cost reaches this.
    pub expensive_goal: f64,
    /// Exploration below a call site stops once the product of advised
    /// speedups along the path reaches this; more parallelism than the
    /// machine has engines is not worth the overhead of finding it.
    pub saturation: f64,
    /// Minimum predicted speedup for advice to be worth emitting.
    pub speedup: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { call_cost: 10_000.0, expensive_goal: 1_000.0, saturation: 8.0, speedup: 1.01 }
    }
}

/// Limits on the partition search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    /// After this many partition evaluations the search stops exploring
    /// both alternatives at each step and follows only the cheaper one.
    pub prefer_linear_evals: u64,
    /// Skip branches whose partial partition already costs more than a
    /// known complete one. Off by default; turning it on must never
    /// change the result, only the number of evaluations.
    pub enable_pruning: bool,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { prefer_linear_evals: 1_000, enable_pruning: false }
    }
}

/// Everything the analysis can be tuned with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub overheads: OverheadParams,
    pub thresholds: Thresholds,
    pub search: SearchParams,
    /// Engines assumed to be available; the spawn throttle derives from
    /// this unless overridden.
    pub engines: u32,
    /// Explicit spawn-throttle override.
    pub throttle_override: Option<u32>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            overheads: OverheadParams::default(),
            thresholds: Thresholds::default(),
            search: SearchParams::default(),
            engines: 4,
            throttle_override: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    format_version: u32,
    #[serde(default)]
    overheads: Option<OverheadParams>,
    #[serde(default)]
    thresholds: Option<Thresholds>,
    #[serde(default)]
    search: Option<SearchParams>,
    #[serde(default)]
    engines: Option<u32>,
    #[serde(default)]
    throttle_override: Option<u32>,
}

/// Parses a config file, filling anything unspecified from the
/// defaults.
pub fn parse_config(text: &str) -> Result<AnalysisConfig, ParseError> {
    let file: ConfigFile = serde_json::from_str(text)?;
    if file.format_version != FORMAT_VERSION {
        return Err(ParseError::Version { found: file.format_version });
    }
    let dft = AnalysisConfig::default();
    Ok(AnalysisConfig {
        overheads: file.overheads.unwrap_or(dft.overheads),
        thresholds: file.thresholds.unwrap_or(dft.thresholds),
        search: file.search.unwrap_or(dft.search),
        engines: file.engines.unwrap_or(dft.engines),
        throttle_override: file.throttle_override,
    })
}
