//! Run statistics and the slowdown factor.

use std::collections::BTreeMap;

use super::{HarnessError, RunResult, Setup};
use crate::engine::EngineKind;
use crate::queries::{ApiKind, QueryKind};

/// Arithmetic mean.
pub fn mean_time(times: &[f64]) -> Result<f64, HarnessError> {
    if times.is_empty() {
        return Err(HarnessError::EmptyList);
    }
    Ok(times.iter().sum::<f64>() / times.len() as f64)
}

/// Population standard deviation (divides by `n`).
pub fn population_stddev(times: &[f64]) -> Result<f64, HarnessError> {
    let mean = mean_time(times)?;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
    Ok(var.sqrt())
}

/// Standard deviation over mean; zero when the mean is zero.
pub fn relative_stddev(times: &[f64]) -> Result<f64, HarnessError> {
    let mean = mean_time(times)?;
    let sd = population_stddev(times)?;
    Ok(if mean > 0.0 { sd / mean } else { 0.0 })
}

/// Mean over parallelisms of the unified-to-native mean time ratio.
pub fn slowdown_factor(
    unified_means: &BTreeMap<usize, f64>,
    native_means: &BTreeMap<usize, f64>,
) -> Result<f64, HarnessError> {
    if unified_means.is_empty() {
        return Err(HarnessError::EmptyList);
    }
    if unified_means.keys().ne(native_means.keys()) {
        return Err(HarnessError::MismatchedParallelisms {
            unified: unified_means.keys().copied().collect(),
            native: native_means.keys().copied().collect(),
        });
    }
    let mut sum = 0.0;
    for (p, unified) in unified_means {
        let native = native_means[p];
        if native <= 0.0 {
            return Err(HarnessError::ZeroNativeMean { parallelism: *p });
        }
        sum += unified / native;
    }
    Ok(sum / unified_means.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetupStats {
    pub setup: Setup,
    pub runs: usize,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub rel_stddev: f64,
    /// Fewer than two runs: the deviation carries no information.
    pub insufficient_runs: bool,
}

/// Relative standard deviation per (engine, api kind, query), averaged over
/// the per-parallelism values.
#[derive(Debug, Clone, PartialEq)]
pub struct RelStddevSummary {
    pub engine: EngineKind,
    pub api: ApiKind,
    pub query: QueryKind,
    pub rel_stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Aggregate {
    pub setups: Vec<SetupStats>,
    pub rel_stddev: Vec<RelStddevSummary>,
}

pub fn aggregate_stats(results: &[RunResult]) -> Aggregate {
    let mut by_setup: BTreeMap<Setup, Vec<f64>> = BTreeMap::new();
    for r in results {
        by_setup.entry(r.setup).or_default().push(r.exec_time_ms as f64);
    }
    let setups: Vec<SetupStats> = by_setup
        .into_iter()
        .map(|(setup, times)| {
            let mean_ms = mean_time(&times).expect("non-empty group");
            let stddev_ms = population_stddev(&times).expect("non-empty group");
            SetupStats {
                setup,
                runs: times.len(),
                mean_ms,
                stddev_ms,
                rel_stddev: if mean_ms > 0.0 { stddev_ms / mean_ms } else { 0.0 },
                insufficient_runs: times.len() < 2,
            }
        })
        .collect();

    let mut grouped: BTreeMap<(EngineKind, ApiKind, QueryKind), Vec<f64>> = BTreeMap::new();
    for s in &setups {
        grouped
            .entry((s.setup.engine, s.setup.api, s.setup.query))
            .or_default()
            .push(s.rel_stddev);
    }
    let rel_stddev = grouped
        .into_iter()
        .map(|((engine, api, query), v)| RelStddevSummary {
            engine,
            api,
            query,
            rel_stddev: mean_time(&v).expect("non-empty group"),
        })
        .collect();
    Aggregate { setups, rel_stddev }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowdownRow {
    pub engine: EngineKind,
    pub query: QueryKind,
    /// `None` when a native mean is zero or parallelisms do not line up.
    pub sf: Option<f64>,
    /// Mean over parallelisms of the per-setup mean times.
    pub unified_mean_ms: f64,
    pub native_mean_ms: f64,
    pub note: Option<String>,
}

/// One row per (engine, query) that has both api kinds measured.
pub fn slowdowns(stats: &[SetupStats]) -> Vec<SlowdownRow> {
    let mut means: BTreeMap<(EngineKind, QueryKind), [BTreeMap<usize, f64>; 2]> = BTreeMap::new();
    for s in stats {
        let slot = match s.setup.api {
            ApiKind::Native => 0,
            ApiKind::Unified => 1,
        };
        means.entry((s.setup.engine, s.setup.query)).or_default()[slot].insert(s.setup.parallelism, s.mean_ms);
    }
    means
        .into_iter()
        .filter(|(_, [native, unified])| !native.is_empty() && !unified.is_empty())
        .map(|((engine, query), [native, unified])| {
            let avg = |m: &BTreeMap<usize, f64>| m.values().sum::<f64>() / m.len() as f64;
            let (sf, note) = match slowdown_factor(&unified, &native) {
                Ok(sf) => (Some(sf), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SlowdownRow {
                engine,
                query,
                sf,
                unified_mean_ms: avg(&unified),
                native_mean_ms: avg(&native),
                note,
            }
        })
        .collect()
}
