//! Benchmark orchestration: ingest, execute, report.
//!
//! Execution time of a run is the difference between the append timestamps of
//! the first and last record in that run's output topic. Nothing the engines
//! report about themselves enters the metric.

mod report;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, CorpusSpec, IngestRate, IngestSummary};
use crate::dataflow::{DataflowError, ExecutionPlan};
use crate::engine::{BatchPolicy, EngineKind};
use crate::minilog::{AckMode, Broker, LogError, TopicConfig, TopicHandle};
use crate::queries::{self, ApiKind, IndexedSampler, QueryError, QueryKind, QuerySpec, QueryTarget};

pub use report::{
    dump_plan, emit_report, read_plan, read_results, write_plans, write_results, ReportFiles,
    ReportMetadata,
};
pub use stats::{
    aggregate_stats, mean_time, population_stddev, relative_stddev, slowdown_factor, slowdowns,
    Aggregate, RelStddevSummary, SetupStats, SlowdownRow,
};

pub const INPUT_TOPIC: &str = "input";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid benchmark config: {0}")]
    InvalidConfig(String),
    #[error("output topic `{0}` is empty")]
    EmptyOutput(String),
    #[error("statistic over an empty list")]
    EmptyList,
    #[error("parallelism sets differ: unified {unified:?}, native {native:?}")]
    MismatchedParallelisms { unified: Vec<usize>, native: Vec<usize> },
    #[error("native mean time is zero at parallelism {parallelism}")]
    ZeroNativeMean { parallelism: usize },
    #[error("malformed {file}: {message}")]
    Malformed { file: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn default_runs() -> usize {
    10
}

fn default_parallelisms() -> Vec<usize> {
    vec![1, 2]
}

fn default_engines() -> Vec<EngineKind> {
    EngineKind::ALL.to_vec()
}

fn default_api_kinds() -> Vec<ApiKind> {
    ApiKind::ALL.to_vec()
}

fn default_queries() -> Vec<QueryKind> {
    QueryKind::ALL.to_vec()
}

fn default_sample_probability() -> f64 {
    queries::DEFAULT_SAMPLE_PROBABILITY
}

fn default_query_seed() -> u64 {
    7
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bench-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub corpus: CorpusSpec,
    #[serde(default = "default_runs")]
    pub runs_per_setup: usize,
    /// Leading runs per setup that are executed and discarded.
    #[serde(default)]
    pub warmup: usize,
    #[serde(default = "default_parallelisms")]
    pub parallelisms: Vec<usize>,
    #[serde(default = "default_engines")]
    pub engines: Vec<EngineKind>,
    #[serde(default = "default_api_kinds")]
    pub api_kinds: Vec<ApiKind>,
    #[serde(default = "default_queries")]
    pub queries: Vec<QueryKind>,
    #[serde(default)]
    pub batch_policy: BatchPolicy,
    #[serde(default = "default_sample_probability")]
    pub sample_probability: f64,
    #[serde(default = "default_query_seed")]
    pub query_seed: u64,
    /// Records per second for the data sender; absent means unlimited.
    #[serde(default)]
    pub ingest_rate: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            runs_per_setup: default_runs(),
            warmup: 0,
            parallelisms: default_parallelisms(),
            engines: default_engines(),
            api_kinds: default_api_kinds(),
            queries: default_queries(),
            batch_policy: BatchPolicy::default(),
            sample_probability: default_sample_probability(),
            query_seed: default_query_seed(),
            ingest_rate: None,
            output_dir: default_output_dir(),
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidConfig(m.to_string()));
        if self.runs_per_setup == 0 {
            return bad("runs_per_setup must be at least 1");
        }
        if self.parallelisms.is_empty() || self.parallelisms.contains(&0) {
            return bad("parallelisms must be a non-empty list of positive integers");
        }
        if self.engines.is_empty() {
            return bad("engines must not be empty");
        }
        if self.api_kinds.is_empty() {
            return bad("api_kinds must not be empty");
        }
        if self.queries.is_empty() {
            return bad("queries must not be empty");
        }
        if let Some(r) = self.ingest_rate {
            if !(r > 0.0 && r.is_finite()) {
                return bad("ingest_rate must be a positive number");
            }
        }
        self.corpus.validate()?;
        self.batch_policy.validate()?;
        self.query_spec(QueryKind::Sample).validate()?;
        Ok(())
    }

    pub fn query_spec(&self, kind: QueryKind) -> QuerySpec {
        QuerySpec {
            kind,
            sample_probability: self.sample_probability,
            grep_needle: self.corpus.grep_needle.clone(),
            rng_seed: self.query_seed,
        }
    }

    /// Every setup in execution order: engine, api kind, query, parallelism.
    pub fn setups(&self) -> Vec<Setup> {
        fn sorted<T: Ord + Copy>(v: &[T]) -> Vec<T> {
            let mut v = v.to_vec();
            v.sort();
            v.dedup();
            v
        }
        let mut out = Vec::new();
        for &engine in &sorted(&self.engines) {
            for &api in &sorted(&self.api_kinds) {
                for &query in &sorted(&self.queries) {
                    for &parallelism in &sorted(&self.parallelisms) {
                        out.push(Setup {
                            engine,
                            api,
                            query,
                            parallelism,
                        });
                    }
                }
            }
        }
        out
    }

    /// Short SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Setup {
    pub engine: EngineKind,
    pub api: ApiKind,
    pub query: QueryKind,
    pub parallelism: usize,
}

impl fmt::Display for Setup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}-p{}", self.engine, self.api, self.query, self.parallelism)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunFlag {
    /// No output; execution time is undefined and recorded as 0.
    EmptyOutput,
    /// One output record; execution time is 0 by construction.
    SingleRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    pub setup: Setup,
    pub run_index: usize,
    pub exec_time_ms: u64,
    pub records_out: u64,
    /// Total operator invocations; unknown when loaded back from CSV.
    pub operator_invocations: Option<u64>,
    pub output_topic: Option<String>,
}

impl RunResult {
    pub fn flag(&self) -> Option<RunFlag> {
        match self.records_out {
            0 => Some(RunFlag::EmptyOutput),
            1 => Some(RunFlag::SingleRecord),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetupFailure {
    pub setup: Setup,
    pub run_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExecuteOutcome {
    pub results: Vec<RunResult>,
    pub failures: Vec<SetupFailure>,
    pub plans: BTreeMap<Setup, ExecutionPlan>,
}

/// Phase 1: generate the corpus and send it into the input topic.
pub fn phase_ingest(config: &BenchmarkConfig, broker: &Broker) -> Result<IngestSummary, HarnessError> {
    let topic = match broker.topic(INPUT_TOPIC) {
        Ok(t) => t,
        Err(_) => broker.create_topic(TopicConfig::new(INPUT_TOPIC))?,
    };
    let len = topic.high_water_mark(0)?;
    if len != 0 {
        return Err(CorpusError::NonEmptyTopic {
            topic: INPUT_TOPIC.into(),
            len,
        }
        .into());
    }
    let records = corpus::generate_corpus(&config.corpus)?;
    let rate = config.ingest_rate.map_or(IngestRate::Unlimited, IngestRate::PerSecond);
    let summary = corpus::send(&records, &topic, rate, AckMode::Confirmed)?;
    info!("ingested {} records into `{INPUT_TOPIC}`", summary.count);
    Ok(summary)
}

/// Execution time of a finished run: last minus first append timestamp of the
/// output topic.
pub fn compute_execution_time(broker: &Broker, output_topic: &str) -> Result<u64, HarnessError> {
    let topic = broker.topic(output_topic)?;
    match topic.boundary_timestamps(0) {
        Ok((first, last)) => Ok(last - first),
        Err(LogError::EmptyPartition { .. }) => Err(HarnessError::EmptyOutput(output_topic.into())),
        Err(e) => Err(e.into()),
    }
}

/// Output cardinality each query must produce on the configured corpus.
pub fn expected_records_out(config: &BenchmarkConfig, query: QueryKind, records_in: u64) -> u64 {
    match query {
        QueryKind::Identity | QueryKind::Projection => records_in,
        QueryKind::Grep => config.corpus.effective_match_count(),
        QueryKind::Sample => {
            let sampler = IndexedSampler::new(config.query_seed, config.sample_probability);
            (0..records_in).filter(|&i| sampler.keep(i)).count() as u64
        }
    }
}

fn run_once(
    config: &BenchmarkConfig,
    broker: &Broker,
    input: &TopicHandle,
    setup: Setup,
    topic_name: String,
    expected: &mut BTreeMap<QueryKind, u64>,
) -> Result<(RunResult, ExecutionPlan), String> {
    let output = broker
        .create_topic(TopicConfig::new(topic_name.clone()))
        .map_err(|e| e.to_string())?;
    let end_offset = input.high_water_mark(0).map_err(|e| e.to_string())?;
    let target = QueryTarget {
        input: input.clone(),
        end_offset,
        output: output.clone(),
        batch_policy: config.batch_policy,
    };
    let job = queries::build_query(
        &config.query_spec(setup.query),
        setup.api,
        setup.engine,
        setup.parallelism,
        &target,
    )
    .map_err(|e| e.to_string())?;
    let report = job.job.execute().map_err(|e| e.to_string())?;

    let written = output.high_water_mark(0).map_err(|e| e.to_string())?;
    if written != report.records_out {
        return Err(format!("job reported {} records but sink holds {written}", report.records_out));
    }
    let want = *expected
        .entry(setup.query)
        .or_insert_with(|| expected_records_out(config, setup.query, end_offset));
    if report.records_out != want {
        return Err(format!(
            "{} produced {} records, expected {want}",
            setup.query, report.records_out
        ));
    }
    let exec_time_ms = match compute_execution_time(broker, &topic_name) {
        Ok(t) => t,
        Err(HarnessError::EmptyOutput(_)) => 0,
        Err(e) => return Err(e.to_string()),
    };
    Ok((
        RunResult {
            setup,
            run_index: 0,
            exec_time_ms,
            records_out: report.records_out,
            operator_invocations: Some(report.total_invocations()),
            output_topic: Some(topic_name),
        },
        job.plan,
    ))
}

/// Phase 2: run every setup `runs_per_setup` times, strictly sequentially,
/// each run on a fresh output topic and a fresh engine instance.
pub fn phase_execute(config: &BenchmarkConfig, broker: &Broker) -> Result<ExecuteOutcome, HarnessError> {
    config.validate()?;
    let input = broker.topic(INPUT_TOPIC)?;
    let mut outcome = ExecuteOutcome::default();
    let mut expected = BTreeMap::new();
    for setup in config.setups() {
        let total = config.warmup + config.runs_per_setup;
        for i in 0..total {
            let measured = i >= config.warmup;
            let run_index = i.saturating_sub(config.warmup);
            let topic_name = if measured {
                format!("out-{setup}-{run_index}")
            } else {
                format!("out-{setup}-warmup-{i}")
            };
            match run_once(config, broker, &input, setup, topic_name, &mut expected) {
                Ok((mut result, plan)) => {
                    if measured {
                        result.run_index = run_index;
                        if let Some(flag) = result.flag() {
                            warn!("{setup} run {run_index}: {flag:?}");
                        }
                        outcome.results.push(result);
                        outcome.plans.entry(setup).or_insert(plan);
                    }
                }
                Err(message) => {
                    warn!("{setup} run {run_index} failed: {message}");
                    outcome.failures.push(SetupFailure {
                        setup,
                        run_index,
                        message,
                    });
                    break;
                }
            }
        }
    }
    Ok(outcome)
}

/// Everything produced by a full benchmark.
#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub ingest: IngestSummary,
    pub execute: ExecuteOutcome,
}

/// Ingest into a fresh broker and execute all setups.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<(Broker, BenchmarkOutcome), HarnessError> {
    config.validate()?;
    let broker = Broker::new();
    let ingest = phase_ingest(config, &broker)?;
    let execute = phase_execute(config, &broker)?;
    Ok((broker, BenchmarkOutcome { ingest, execute }))
}
