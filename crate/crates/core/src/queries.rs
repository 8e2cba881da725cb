//! The four stateless benchmark queries, as element functions and as runnable
//! jobs for every (api kind, engine) combination.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use bytes::Bytes;
use memchr::memmem;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataflow::{DataflowError, Datum, Element, ExecutionPlan, OpError};
use crate::engine::{microbatch, tuple, BatchPolicy, EngineKind, NativeJob};
use crate::minilog::TopicHandle;
use crate::unified::{self, ElementKind, Input, PTransform, Pipeline, Runner, UnifiedError};

pub const DEFAULT_SAMPLE_PROBABILITY: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Identity,
    Sample,
    Projection,
    Grep,
}

impl QueryKind {
    pub const ALL: [QueryKind; 4] = [QueryKind::Identity, QueryKind::Sample, QueryKind::Projection, QueryKind::Grep];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryKind::Identity => "identity",
            QueryKind::Sample => "sample",
            QueryKind::Projection => "projection",
            QueryKind::Grep => "grep",
        }
    }

    /// Identity and projection emit one record per input.
    pub fn preserves_cardinality(self) -> bool {
        matches!(self, QueryKind::Identity | QueryKind::Projection)
    }
}

impl fmt::Display for QueryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QueryKind::ALL
            .into_iter()
            .find(|q| q.as_str() == s)
            .ok_or_else(|| format!("unknown query `{s}` (expected identity | sample | projection | grep)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiKind {
    Native,
    Unified,
}

impl ApiKind {
    pub const ALL: [ApiKind; 2] = [ApiKind::Native, ApiKind::Unified];

    pub fn as_str(self) -> &'static str {
        match self {
            ApiKind::Native => "native",
            ApiKind::Unified => "unified",
        }
    }
}

impl fmt::Display for ApiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApiKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native" => Ok(ApiKind::Native),
            "unified" => Ok(ApiKind::Unified),
            other => Err(format!("unknown api kind `{other}` (expected native | unified)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("invalid query spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Unified(#[from] UnifiedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub kind: QueryKind,
    pub sample_probability: f64,
    pub grep_needle: String,
    pub rng_seed: u64,
}

impl QuerySpec {
    pub fn new(kind: QueryKind, rng_seed: u64) -> Self {
        Self {
            kind,
            sample_probability: DEFAULT_SAMPLE_PROBABILITY,
            grep_needle: crate::corpus::DEFAULT_NEEDLE.to_string(),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), QueryError> {
        let p = self.sample_probability;
        // zero is accepted as a degenerate drop-everything sampler
        if !(0.0..=1.0).contains(&p) {
            return Err(QueryError::InvalidSpec(format!("sample probability {p} outside [0, 1]")));
        }
        if self.grep_needle.is_empty() {
            return Err(QueryError::InvalidSpec("grep needle must not be empty".into()));
        }
        Ok(())
    }
}

pub fn identity_fn(payload: Bytes) -> Bytes {
    payload
}

/// First tab-separated column of a five-column record.
pub fn projection_fn(payload: &Bytes) -> Result<Bytes, OpError> {
    let columns = memchr::memchr_iter(b'\t', payload).count() + 1;
    if columns != 5 {
        return Err(OpError(format!("malformed record: expected 5 columns, found {columns}")));
    }
    let end = memchr::memchr(b'\t', payload).unwrap_or(payload.len());
    Ok(payload.slice(..end))
}

/// Literal substring match.
#[derive(Debug, Clone)]
pub struct Grep {
    finder: memmem::Finder<'static>,
}

impl Grep {
    pub fn new(needle: &str) -> Self {
        Self {
            finder: memmem::Finder::new(needle.as_bytes()).into_owned(),
        }
    }

    pub fn matches(&self, payload: &[u8]) -> bool {
        self.finder.find(payload).is_some()
    }
}

pub fn grep_fn(payload: &[u8], needle: &str) -> bool {
    memmem::find(payload, needle.as_bytes()).is_some()
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based Bernoulli sampler. The draw for element `i` is the `i`-th
/// output of a SplitMix64 stream seeded with `seed`, computed directly from
/// the index, so the decision does not depend on arrival order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedSampler {
    pub seed: u64,
    pub probability: f64,
}

impl IndexedSampler {
    pub fn new(seed: u64, probability: f64) -> Self {
        Self { seed, probability }
    }

    /// Uniform draw in `[0, 1)` for element `index`.
    pub fn uniform(&self, index: u64) -> f64 {
        let state = self.seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        (mix64(state) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn keep(&self, index: u64) -> bool {
        self.uniform(index) < self.probability
    }
}

pub fn sample_fn(payload: Bytes, index: u64, sampler: &IndexedSampler) -> Option<Bytes> {
    sampler.keep(index).then_some(payload)
}

/// Topics and engine settings a query job is bound to.
#[derive(Debug, Clone)]
pub struct QueryTarget {
    pub input: TopicHandle,
    pub end_offset: u64,
    pub output: TopicHandle,
    pub batch_policy: BatchPolicy,
}

pub struct QueryJob {
    pub job: NativeJob,
    pub plan: ExecutionPlan,
}

pub const NATIVE_SINK: &str = "Sink:Unnamed";

type NativeStep = (String, crate::dataflow::OperatorFn);

fn native_steps(spec: &QuerySpec) -> Vec<NativeStep> {
    use crate::dataflow::OperatorFn;
    match spec.kind {
        QueryKind::Identity => vec![],
        QueryKind::Grep => {
            let grep = Grep::new(&spec.grep_needle);
            let f = move |e: &Element| Ok(grep.matches(e.datum.as_bytes()?));
            vec![("Filter".into(), OperatorFn::Filter(Arc::new(f)))]
        }
        QueryKind::Sample => {
            let sampler = IndexedSampler::new(spec.rng_seed, spec.sample_probability);
            let f = move |e: &Element| Ok(sampler.keep(e.index));
            vec![("Filter".into(), OperatorFn::Filter(Arc::new(f)))]
        }
        QueryKind::Projection => {
            let f = |e: Element| {
                let col = projection_fn(e.datum.as_bytes()?)?;
                Ok(e.with_datum(Datum::Bytes(col)))
            };
            vec![("Map".into(), OperatorFn::Map(Arc::new(f)))]
        }
    }
}

fn user_par_do(spec: &QuerySpec) -> Option<PTransform> {
    let bytes = ElementKind::Bytes;
    match spec.kind {
        QueryKind::Identity => None,
        QueryKind::Grep => {
            let grep = Grep::new(&spec.grep_needle);
            Some(PTransform::par_do("Grep", bytes, bytes, move |e, out| {
                if grep.matches(e.datum.as_bytes()?) {
                    out.push(e);
                }
                Ok(())
            }))
        }
        QueryKind::Sample => {
            let sampler = IndexedSampler::new(spec.rng_seed, spec.sample_probability);
            Some(PTransform::par_do("Sample", bytes, bytes, move |e, out| {
                if sampler.keep(e.index) {
                    out.push(e);
                }
                Ok(())
            }))
        }
        QueryKind::Projection => Some(PTransform::par_do("Projection", bytes, bytes, |e, out| {
            let col = projection_fn(e.datum.as_bytes()?)?;
            out.push(e.with_datum(Datum::Bytes(col)));
            Ok(())
        })),
    }
}

/// Portable pipeline for `spec`: read, optional user ParDo, write.
pub fn unified_pipeline(spec: &QuerySpec, target: &QueryTarget) -> Result<Pipeline, QueryError> {
    let mut p = Pipeline::new(spec.rng_seed);
    let mut pc = p.apply(
        Input::Root,
        PTransform::read_from_log(target.input.clone(), target.end_offset),
    )?;
    if let Some(t) = user_par_do(spec) {
        pc = p.apply(pc, t)?;
    }
    p.apply(pc, PTransform::write_to_log(target.output.clone()))?;
    Ok(p)
}

pub fn build_query(
    spec: &QuerySpec,
    api: ApiKind,
    engine: EngineKind,
    parallelism: usize,
    target: &QueryTarget,
) -> Result<QueryJob, QueryError> {
    spec.validate()?;
    if parallelism == 0 {
        return Err(DataflowError::InvalidParallelism.into());
    }
    match api {
        ApiKind::Native => {
            let steps = native_steps(spec);
            let job = match engine {
                EngineKind::Tuple => {
                    let mut b = tuple::build(target.input.clone(), target.end_offset);
                    for (name, f) in steps {
                        b = b.operator(name, f);
                    }
                    NativeJob::Tuple {
                        topology: b.sink_write(NATIVE_SINK, target.output.clone()).finalize()?,
                        parallelism,
                    }
                }
                EngineKind::Microbatch => {
                    let mut b = microbatch::build(target.input.clone(), target.end_offset, target.batch_policy)?;
                    for (name, f) in steps {
                        b = b.operator(name, f);
                    }
                    NativeJob::Microbatch {
                        topology: b.sink_write(NATIVE_SINK, target.output.clone()).finalize()?,
                        parallelism,
                    }
                }
            };
            let plan = job.plan();
            Ok(QueryJob { job, plan })
        }
        ApiKind::Unified => {
            let pipeline = unified_pipeline(spec, target)?;
            let runner = match engine {
                EngineKind::Tuple => Runner::Tuple,
                EngineKind::Microbatch => Runner::Microbatch(target.batch_policy),
            };
            let t = unified::translate(&pipeline, runner, parallelism)?;
            Ok(QueryJob { job: t.job, plan: t.plan })
        }
    }
}
