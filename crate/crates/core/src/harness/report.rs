//! CSV, markdown and plan-file output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::stats::{aggregate_stats, slowdowns, Aggregate, SlowdownRow};
use super::{HarnessError, RunResult, Setup, SetupFailure};
use crate::dataflow::ExecutionPlan;

pub const RESULTS_HEADER: [&str; 7] = [
    "engine",
    "api_kind",
    "query",
    "parallelism",
    "run_index",
    "exec_time_ms",
    "records_out",
];
pub const STATS_HEADER: [&str; 7] = [
    "engine",
    "api_kind",
    "query",
    "parallelism",
    "mean_ms",
    "stddev_ms",
    "rel_stddev",
];
pub const SLOWDOWN_HEADER: [&str; 5] = ["engine", "query", "sf", "unified_mean_ms", "native_mean_ms"];

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ReportMetadata {
    pub config_hash: String,
    pub corpus_seed: u64,
    pub query_seed: u64,
    /// Effective configuration, echoed verbatim into the report.
    pub config_json: String,
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub results: PathBuf,
    pub stats: PathBuf,
    pub slowdown: PathBuf,
    pub report_md: PathBuf,
    pub aggregate: Aggregate,
    pub slowdowns: Vec<SlowdownRow>,
}

pub fn write_results(path: &Path, results: &[RunResult]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in results {
        w.write_record([
            r.setup.engine.to_string(),
            r.setup.api.to_string(),
            r.setup.query.to_string(),
            r.setup.parallelism.to_string(),
            r.run_index.to_string(),
            r.exec_time_ms.to_string(),
            r.records_out.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>, HarnessError> {
    let file = path.display().to_string();
    let malformed = |message: String| HarnessError::Malformed {
        file: file.clone(),
        message,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(malformed(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_err = |what: &str| malformed(format!("row {}: bad {what}", line + 1));
        let setup = Setup {
            engine: field(0).parse().map_err(|_| parse_err("engine"))?,
            api: field(1).parse().map_err(|_| parse_err("api_kind"))?,
            query: field(2).parse().map_err(|_| parse_err("query"))?,
            parallelism: field(3).parse().map_err(|_| parse_err("parallelism"))?,
        };
        out.push(RunResult {
            setup,
            run_index: field(4).parse().map_err(|_| parse_err("run_index"))?,
            exec_time_ms: field(5).parse().map_err(|_| parse_err("exec_time_ms"))?,
            records_out: field(6).parse().map_err(|_| parse_err("records_out"))?,
            operator_invocations: None,
            output_topic: None,
        });
    }
    Ok(out)
}

fn write_stats(path: &Path, aggregate: &Aggregate) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STATS_HEADER)?;
    for s in &aggregate.setups {
        let (sd, rel) = if s.insufficient_runs {
            (String::new(), String::new())
        } else {
            (s.stddev_ms.to_string(), s.rel_stddev.to_string())
        };
        w.write_record([
            s.setup.engine.to_string(),
            s.setup.api.to_string(),
            s.setup.query.to_string(),
            s.setup.parallelism.to_string(),
            s.mean_ms.to_string(),
            sd,
            rel,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_slowdowns(path: &Path, rows: &[SlowdownRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SLOWDOWN_HEADER)?;
    for r in rows {
        w.write_record([
            r.engine.to_string(),
            r.query.to_string(),
            r.sf.map(|v| v.to_string()).unwrap_or_default(),
            r.unified_mean_ms.to_string(),
            r.native_mean_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one `<setup>.plan` file per setup under `dir/plans`.
pub fn write_plans(dir: &Path, plans: &BTreeMap<Setup, ExecutionPlan>) -> Result<Vec<PathBuf>, HarnessError> {
    let plan_dir = dir.join("plans");
    fs::create_dir_all(&plan_dir)?;
    plans
        .iter()
        .map(|(setup, plan)| {
            let path = plan_dir.join(format!("{setup}.plan"));
            dump_plan(plan, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn dump_plan(plan: &ExecutionPlan, path: &Path) -> Result<(), HarnessError> {
    fs::write(path, plan.dump())?;
    Ok(())
}

pub fn read_plan(path: &Path) -> Result<ExecutionPlan, HarnessError> {
    let text = fs::read_to_string(path)?;
    ExecutionPlan::parse(&text).map_err(|e| HarnessError::Malformed {
        file: path.display().to_string(),
        message: e.to_string(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into())
}

fn markdown(
    results: &[RunResult],
    aggregate: &Aggregate,
    rows: &[SlowdownRow],
    failures: &[SetupFailure],
    meta: &ReportMetadata,
) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# Benchmark report\n");
    let _ = writeln!(md, "- config hash: `{}`", meta.config_hash);
    let _ = writeln!(md, "- corpus seed: {}", meta.corpus_seed);
    let _ = writeln!(md, "- query seed: {}", meta.query_seed);
    let _ = writeln!(md, "- clock: broker append time, monotonic process clock, milliseconds");
    let _ = writeln!(md, "- runs recorded: {}\n", results.len());

    let _ = writeln!(md, "## Slowdown factors\n");
    let _ = writeln!(md, "| engine | query | sf | unified mean ms | native mean ms |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for r in rows {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {:.3} | {:.3} |",
            r.engine,
            r.query,
            fmt_opt(r.sf),
            r.unified_mean_ms,
            r.native_mean_ms
        );
    }

    let _ = writeln!(md, "\n## Setups\n");
    let _ = writeln!(md, "| setup | runs | mean ms | stddev ms | rel stddev |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    for s in &aggregate.setups {
        let (sd, rel) = if s.insufficient_runs {
            ("n/a".to_string(), "n/a".to_string())
        } else {
            (format!("{:.3}", s.stddev_ms), format!("{:.3}", s.rel_stddev))
        };
        let _ = writeln!(md, "| {} | {} | {:.3} | {sd} | {rel} |", s.setup, s.runs, s.mean_ms);
    }

    let _ = writeln!(md, "\n## Relative standard deviation, averaged over parallelisms\n");
    let _ = writeln!(md, "| engine | api | query | rel stddev |");
    let _ = writeln!(md, "|---|---|---|---|");
    for r in &aggregate.rel_stddev {
        let _ = writeln!(md, "| {} | {} | {} | {:.3} |", r.engine, r.api, r.query, r.rel_stddev);
    }

    let flagged: Vec<_> = results.iter().filter_map(|r| r.flag().map(|f| (r, f))).collect();
    if !flagged.is_empty() {
        let _ = writeln!(md, "\n## Flagged runs\n");
        for (r, f) in flagged {
            let _ = writeln!(md, "- {} run {}: {f:?}", r.setup, r.run_index);
        }
    }
    let notes: Vec<_> = rows.iter().filter_map(|r| r.note.as_ref().map(|n| (r, n))).collect();
    if !notes.is_empty() {
        let _ = writeln!(md, "\n## Undefined slowdown factors\n");
        for (r, n) in notes {
            let _ = writeln!(md, "- {} {}: {n}", r.engine, r.query);
        }
    }
    if !failures.is_empty() {
        let _ = writeln!(md, "\n## Failed setups\n");
        let _ = writeln!(md, "| setup | run | error |");
        let _ = writeln!(md, "|---|---|---|");
        for f in failures {
            let _ = writeln!(md, "| {} | {} | {} |", f.setup, f.run_index, f.message.replace('|', "/"));
        }
    }
    if !meta.config_json.is_empty() {
        let _ = writeln!(md, "\n## Effective configuration\n\n```json\n{}\n```", meta.config_json);
    }
    md
}

/// Writes results.csv, stats.csv, slowdown.csv and report.md into `dir`.
pub fn emit_report(
    dir: &Path,
    results: &[RunResult],
    failures: &[SetupFailure],
    meta: &ReportMetadata,
) -> Result<ReportFiles, HarnessError> {
    fs::create_dir_all(dir)?;
    let aggregate = aggregate_stats(results);
    let rows = slowdowns(&aggregate.setups);
    let files = ReportFiles {
        results: dir.join("results.csv"),
        stats: dir.join("stats.csv"),
        slowdown: dir.join("slowdown.csv"),
        report_md: dir.join("report.md"),
        aggregate,
        slowdowns: rows,
    };
    write_results(&files.results, results)?;
    write_stats(&files.stats, &files.aggregate)?;
    write_slowdowns(&files.slowdown, &files.slowdowns)?;
    fs::write(
        &files.report_md,
        markdown(results, &files.aggregate, &files.slowdowns, failures, meta),
    )?;
    Ok(files)
}
