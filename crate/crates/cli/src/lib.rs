//! Command-line driver for the benchmark phases.
//!
//! Configuration comes from an optional TOML file whose keys are the
//! `BenchmarkConfig` field names (`corpus.n_records`, `runs_per_setup`, ...),
//! then the `STREAMLAB_OUTPUT_DIR` environment variable, then flags.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use streamlab::corpus::{self, CorpusError, FULL_SCALE_RECORDS};
use streamlab::engine::{BatchPolicy, EngineKind};
use streamlab::harness::{
    self, emit_report, read_results, write_plans, write_results, BenchmarkConfig, HarnessError, ReportMetadata,
    RunResult, SetupFailure, INPUT_TOPIC,
};
use streamlab::minilog::{Broker, TopicConfig};
use streamlab::queries::{self, ApiKind, QueryKind, QuerySpec, QueryTarget};
use thiserror::Error;

pub const OUTPUT_DIR_ENV: &str = "STREAMLAB_OUTPUT_DIR";
pub const CONFIG_ECHO: &str = "config.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0} setup(s) failed")]
    SetupsFailed(usize),
    #[error("run failed: {0}")]
    Run(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::SetupsFailed(_) | CliError::Run(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidConfig(m) => CliError::Config(m),
            HarnessError::Corpus(CorpusError::InvalidSpec(m)) => CliError::Config(m),
            HarnessError::Io(_)
            | HarnessError::Csv(_)
            | HarnessError::Malformed { .. }
            | HarnessError::Corpus(CorpusError::Io(_)) => CliError::Io(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "streamlab", version, about = "Native vs unified-layer stream processing benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the corpus and send it into a fresh in-memory broker.
    Ingest(ConfigArgs),
    /// Ingest, run every setup and write results.csv plus plan dumps.
    Bench(ConfigArgs),
    /// Compute statistics from a previous bench output directory.
    Report { dir: PathBuf },
    /// Print the execution plan of one setup.
    Plan {
        query: QueryKind,
        api: ApiKind,
        engine: EngineKind,
        parallelism: usize,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        batch_delay_ms: Option<u64>,
    },
    /// Bench followed by report.
    All(ConfigArgs),
    /// Write the generated corpus as tab-separated lines.
    ExportCorpus {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Every config key has a flag here.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "full_scale")]
    pub n_records: Option<u64>,
    /// Use the full-size corpus of 1,000,001 records.
    #[arg(long)]
    pub full_scale: bool,
    #[arg(long)]
    pub grep_needle: Option<String>,
    #[arg(long)]
    pub grep_match_count: Option<u64>,
    /// Corpus generator seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Measured runs per setup.
    #[arg(long)]
    pub runs: Option<usize>,
    /// Extra leading runs per setup that are discarded.
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub parallelisms: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub engines: Option<Vec<EngineKind>>,
    #[arg(long, value_delimiter = ',')]
    pub api_kinds: Option<Vec<ApiKind>>,
    #[arg(long, value_delimiter = ',')]
    pub queries: Option<Vec<QueryKind>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub batch_delay_ms: Option<u64>,
    #[arg(long)]
    pub sample_probability: Option<f64>,
    #[arg(long)]
    pub query_seed: Option<u64>,
    /// Records per second sent by the ingest phase.
    #[arg(long)]
    pub ingest_rate: Option<f64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    /// Builds the effective config: file, then `env_output_dir`, then flags.
    pub fn resolve(&self, env_output_dir: Option<PathBuf>) -> Result<BenchmarkConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                toml::from_str::<BenchmarkConfig>(&text)
                    .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?
            }
            None => BenchmarkConfig::default(),
        };
        if let Some(dir) = env_output_dir {
            c.output_dir = dir;
        }
        if self.full_scale {
            c.corpus.n_records = FULL_SCALE_RECORDS;
        }
        set(&mut c.corpus.n_records, self.n_records);
        set(&mut c.corpus.grep_needle, self.grep_needle.clone());
        if self.grep_match_count.is_some() {
            c.corpus.grep_match_count = self.grep_match_count;
        }
        set(&mut c.corpus.rng_seed, self.seed);
        set(&mut c.runs_per_setup, self.runs);
        set(&mut c.warmup, self.warmup);
        set(&mut c.parallelisms, self.parallelisms.clone());
        set(&mut c.engines, self.engines.clone());
        set(&mut c.api_kinds, self.api_kinds.clone());
        set(&mut c.queries, self.queries.clone());
        set(&mut c.batch_policy.max_batch_size, self.batch_size);
        set(&mut c.batch_policy.max_batch_delay_ms, self.batch_delay_ms);
        set(&mut c.sample_probability, self.sample_probability);
        set(&mut c.query_seed, self.query_seed);
        if self.ingest_rate.is_some() {
            c.ingest_rate = self.ingest_rate;
        }
        set(&mut c.output_dir, self.output_dir.clone());
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn metadata(config: &BenchmarkConfig) -> ReportMetadata {
    ReportMetadata {
        config_hash: config.hash(),
        corpus_seed: config.corpus.rng_seed,
        query_seed: config.query_seed,
        config_json: serde_json::to_string_pretty(config).expect("config serializes"),
    }
}

fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    run_with_env(cli, env_output_dir(), out)
}

/// Like [`run`] with the output directory variable passed in explicitly.
pub fn run_with_env(cli: Cli, env_dir: Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(&args.resolve(env_dir)?, out),
        Command::Bench(args) => {
            let config = args.resolve(env_dir)?;
            let (_, failures) = cmd_bench(&config, out)?;
            check_failures(&failures, out)
        }
        Command::Report { dir } => cmd_report(&dir, out),
        Command::Plan {
            query,
            api,
            engine,
            parallelism,
            batch_size,
            batch_delay_ms,
        } => {
            let mut policy = BatchPolicy::default();
            set(&mut policy.max_batch_size, batch_size);
            set(&mut policy.max_batch_delay_ms, batch_delay_ms);
            cmd_plan(query, api, engine, parallelism, policy, out)
        }
        Command::All(args) => cmd_all(&args.resolve(env_dir)?, out),
        Command::ExportCorpus { config, out: path } => {
            let config = config.resolve(env_dir)?;
            let records = corpus::generate_corpus(&config.corpus).map_err(HarnessError::from)?;
            corpus::export_corpus(&records, &path).map_err(HarnessError::from)?;
            writeln!(out, "wrote {} records to {}", records.len(), path.display())?;
            Ok(())
        }
    }
}

pub fn cmd_ingest(config: &BenchmarkConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let broker = Broker::new();
    let s = harness::phase_ingest(config, &broker)?;
    writeln!(
        out,
        "ingested {} records into `{INPUT_TOPIC}` over {} ms",
        s.count,
        s.last_ts.saturating_sub(s.first_ts)
    )?;
    Ok(())
}

/// Runs ingest and execute, then writes results.csv, the plan dumps and the
/// effective config into the output directory.
pub fn cmd_bench(
    config: &BenchmarkConfig,
    out: &mut dyn Write,
) -> Result<(Vec<RunResult>, Vec<SetupFailure>), CliError> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let (_, outcome) = harness::run_benchmark(config)?;
    let execute = outcome.execute;
    write_results(&dir.join("results.csv"), &execute.results)?;
    write_plans(dir, &execute.plans)?;
    fs::write(dir.join(CONFIG_ECHO), metadata(config).config_json)?;
    writeln!(
        out,
        "{} runs over {} setups written to {}",
        execute.results.len(),
        config.setups().len(),
        dir.join("results.csv").display()
    )?;
    Ok((execute.results, execute.failures))
}

fn check_failures(failures: &[SetupFailure], out: &mut dyn Write) -> Result<(), CliError> {
    if failures.is_empty() {
        return Ok(());
    }
    writeln!(out, "\nfailed setups:")?;
    writeln!(out, "{:<36} {:>4}  error", "setup", "run")?;
    for f in failures {
        writeln!(out, "{:<36} {:>4}  {}", f.setup.to_string(), f.run_index, f.message)?;
    }
    Err(CliError::SetupsFailed(failures.len()))
}

fn print_slowdowns(rows: &[harness::SlowdownRow], out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "{:<11} {:<11} {:>9} {:>12} {:>12}", "engine", "query", "sf", "unified ms", "native ms")?;
    for r in rows {
        let sf = r.sf.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        writeln!(
            out,
            "{:<11} {:<11} {:>9} {:>12.3} {:>12.3}",
            r.engine.to_string(),
            r.query.to_string(),
            sf,
            r.unified_mean_ms,
            r.native_mean_ms
        )?;
    }
    Ok(())
}

pub fn cmd_report(dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let results_path = dir.join("results.csv");
    if !results_path.is_file() {
        return Err(CliError::Io(format!("no bench output in {}", dir.display())));
    }
    let results = read_results(&results_path)?;
    let meta = match fs::read_to_string(dir.join(CONFIG_ECHO)) {
        Ok(json) => {
            let config: BenchmarkConfig = serde_json::from_str(&json)
                .map_err(|e| CliError::Io(format!("{}: {e}", dir.join(CONFIG_ECHO).display())))?;
            metadata(&config)
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => ReportMetadata::default(),
        Err(e) => return Err(e.into()),
    };
    let files = emit_report(dir, &results, &[], &meta)?;
    print_slowdowns(&files.slowdowns, out)?;
    writeln!(out, "report written to {}", files.report_md.display())?;
    Ok(())
}

pub fn cmd_plan(
    query: QueryKind,
    api: ApiKind,
    engine: EngineKind,
    parallelism: usize,
    batch_policy: BatchPolicy,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let broker = Broker::new();
    let input = broker.create_topic(TopicConfig::new(INPUT_TOPIC)).map_err(HarnessError::from)?;
    let output = broker.create_topic(TopicConfig::new("plan")).map_err(HarnessError::from)?;
    let target = QueryTarget {
        input,
        end_offset: 0,
        output,
        batch_policy,
    };
    let spec = QuerySpec::new(query, 0);
    let job = queries::build_query(&spec, api, engine, parallelism, &target)
        .map_err(|e| CliError::Config(e.to_string()))?;
    out.write_all(job.plan.dump().as_bytes())?;
    Ok(())
}

pub fn cmd_all(config: &BenchmarkConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let (results, failures) = cmd_bench(config, out)?;
    let files = emit_report(&config.output_dir, &results, &failures, &metadata(config))?;
    print_slowdowns(&files.slowdowns, out)?;
    writeln!(out, "report written to {}", files.report_md.display())?;
    check_failures(&failures, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use streamlab::harness::Setup;

    #[test]
    fn failure_table_and_exit_code() {
        let failures = vec![SetupFailure {
            setup: Setup {
                engine: EngineKind::Tuple,
                api: ApiKind::Native,
                query: QueryKind::Projection,
                parallelism: 2,
            },
            run_index: 0,
            message: "operator `Map` failed: expected 5 columns".into(),
        }];
        let mut out = Vec::new();
        let err = check_failures(&failures, &mut out).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("tuple-native-projection-p2"));
        assert!(text.contains("expected 5 columns"));
        assert!(check_failures(&[], &mut Vec::new()).is_ok());
    }

    #[test]
    fn harness_errors_map_to_exit_codes() {
        let config: CliError = HarnessError::InvalidConfig("x".into()).into();
        let io: CliError = HarnessError::Io(io::Error::other("disk")).into();
        let run: CliError = HarnessError::EmptyList.into();
        assert_eq!((config.exit_code(), run.exit_code(), io.exit_code()), (1, 2, 3));
    }
}
