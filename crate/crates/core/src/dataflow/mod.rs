//! Shared vocabulary for both native engines: elements, operator specs,
//! linear topologies, job reports and the fused per-lane chain runner.

mod chain;
pub mod plan;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use bytes::Bytes;
use thiserror::Error;

use crate::minilog::{LogError, TopicHandle};

pub(crate) use chain::Chain;
pub use plan::{ExecutionPlan, PlanNode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataflowError {
    #[error("parallelism must be at least 1")]
    InvalidParallelism,
    #[error("topology has no sink")]
    MissingSink,
    #[error("operator `{0}` added after the sink")]
    OperatorAfterSink(String),
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("end offset {end} is beyond the source high-water mark {hwm}")]
    EndOffsetBeyondHighWater { end: u64, hwm: u64 },
    #[error("invalid batch policy: {0}")]
    InvalidPolicy(String),
    #[error("operator `{node}` failed: {message}")]
    Operator { node: String, message: String },
    #[error("worker thread panicked: {0}")]
    WorkerPanicked(String),
    #[error(transparent)]
    Log(#[from] LogError),
}

pub type Result<T, E = DataflowError> = std::result::Result<T, E>;

/// Failure raised by a user function; the engine attaches the node name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpError(pub String);

impl OpError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl fmt::Display for OpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for OpError {}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyValue {
    pub key: Bytes,
    pub value: Bytes,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KeyedGroup {
    pub key: Bytes,
    pub values: Vec<Bytes>,
}

/// A source record wrapped together with its broker metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEnvelope {
    pub topic: String,
    pub partition: u32,
    pub offset: u64,
    pub timestamp: u64,
    pub kv: KeyValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Datum {
    Bytes(Bytes),
    KeyValue(KeyValue),
    KeyedGroup(KeyedGroup),
    Envelope(Box<RecordEnvelope>),
}

impl Datum {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Datum::Bytes(_) => "bytes",
            Datum::KeyValue(_) => "key-value",
            Datum::KeyedGroup(_) => "keyed-group",
            Datum::Envelope(_) => "envelope",
        }
    }

    pub fn into_bytes(self) -> Result<Bytes, OpError> {
        match self {
            Datum::Bytes(b) => Ok(b),
            other => Err(OpError(format!("expected bytes, got {}", other.kind_name()))),
        }
    }

    pub fn as_bytes(&self) -> Result<&Bytes, OpError> {
        match self {
            Datum::Bytes(b) => Ok(b),
            other => Err(OpError(format!("expected bytes, got {}", other.kind_name()))),
        }
    }
}

/// A stream element. `index` is the source offset the element derives from
/// and travels with it through every operator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub index: u64,
    pub ts: u64,
    pub datum: Datum,
}

impl Element {
    pub fn with_datum(&self, datum: Datum) -> Element {
        Element {
            index: self.index,
            ts: self.ts,
            datum,
        }
    }
}

pub type MapFn = Arc<dyn Fn(Element) -> Result<Element, OpError> + Send + Sync>;
pub type FlatMapFn = Arc<dyn Fn(Element, &mut Vec<Element>) -> Result<(), OpError> + Send + Sync>;
pub type FilterFn = Arc<dyn Fn(&Element) -> Result<bool, OpError> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Map,
    FlatMap,
    Filter,
    /// Per-lane tumbling count window grouping key-value elements by key.
    GroupWindow,
    SinkWrite,
}

#[derive(Clone)]
pub enum OperatorFn {
    Map(MapFn),
    FlatMap(FlatMapFn),
    Filter(FilterFn),
    GroupWindow { size: usize },
    SinkWrite(TopicHandle),
}

impl OperatorFn {
    pub fn kind(&self) -> OperatorKind {
        match self {
            OperatorFn::Map(_) => OperatorKind::Map,
            OperatorFn::FlatMap(_) => OperatorKind::FlatMap,
            OperatorFn::Filter(_) => OperatorKind::Filter,
            OperatorFn::GroupWindow { .. } => OperatorKind::GroupWindow,
            OperatorFn::SinkWrite(_) => OperatorKind::SinkWrite,
        }
    }
}

#[derive(Clone)]
pub struct OperatorSpec {
    pub name: String,
    pub func: OperatorFn,
}

impl OperatorSpec {
    pub fn kind(&self) -> OperatorKind {
        self.func.kind()
    }
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("name", &self.name)
            .field("kind", &self.kind())
            .finish()
    }
}

pub const DEFAULT_SOURCE_NAME: &str = "Source:CustomSource";

#[derive(Clone, Debug)]
pub struct SourceSpec {
    pub name: String,
    pub topic: TopicHandle,
    pub end_offset: u64,
}

/// A validated linear job: one source, a chain of operators, the last of
/// which writes to the sink topic.
#[derive(Clone, Debug)]
pub struct Topology {
    source: SourceSpec,
    operators: Vec<OperatorSpec>,
}

impl Topology {
    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    pub fn operators(&self) -> &[OperatorSpec] {
        &self.operators
    }

    /// Source plus operators.
    pub fn node_count(&self) -> usize {
        1 + self.operators.len()
    }

    pub fn node_names(&self) -> Vec<&str> {
        std::iter::once(self.source.name.as_str())
            .chain(self.operators.iter().map(|o| o.name.as_str()))
            .collect()
    }

    /// Forwarding links between consecutive nodes.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (1..self.node_count()).map(|i| (i - 1, i)).collect()
    }

    pub fn sink(&self) -> &TopicHandle {
        match &self.operators.last().map(|o| &o.func) {
            Some(OperatorFn::SinkWrite(t)) => t,
            _ => unreachable!("finalized topology always ends in a sink"),
        }
    }

    pub(crate) fn plan(&self, engine: &'static str, parallelism: usize, annotation: Option<&str>) -> ExecutionPlan {
        let nodes = self
            .node_names()
            .into_iter()
            .enumerate()
            .map(|(index, name)| PlanNode {
                index,
                name: name.to_string(),
                parallelism,
                annotation: annotation.map(str::to_string),
            })
            .collect();
        ExecutionPlan {
            engine: engine.to_string(),
            nodes,
            edges: self.edges(),
        }
    }
}

pub struct TopologyBuilder {
    source: SourceSpec,
    operators: Vec<OperatorSpec>,
    after_sink: Option<String>,
}

impl TopologyBuilder {
    pub fn new(topic: TopicHandle, end_offset: u64) -> Self {
        Self {
            source: SourceSpec {
                name: DEFAULT_SOURCE_NAME.to_string(),
                topic,
                end_offset,
            },
            operators: Vec::new(),
            after_sink: None,
        }
    }

    pub fn source_name(mut self, name: impl Into<String>) -> Self {
        self.source.name = name.into();
        self
    }

    pub fn operator(mut self, name: impl Into<String>, func: OperatorFn) -> Self {
        let name = name.into();
        let has_sink = matches!(
            self.operators.last().map(|o| &o.func),
            Some(OperatorFn::SinkWrite(_))
        );
        if has_sink && self.after_sink.is_none() {
            self.after_sink = Some(name.clone());
        }
        self.operators.push(OperatorSpec { name, func });
        self
    }

    pub fn map<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Element) -> Result<Element, OpError> + Send + Sync + 'static,
    {
        self.operator(name, OperatorFn::Map(Arc::new(f)))
    }

    pub fn flat_map<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Element, &mut Vec<Element>) -> Result<(), OpError> + Send + Sync + 'static,
    {
        self.operator(name, OperatorFn::FlatMap(Arc::new(f)))
    }

    pub fn filter<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Element) -> Result<bool, OpError> + Send + Sync + 'static,
    {
        self.operator(name, OperatorFn::Filter(Arc::new(f)))
    }

    pub fn group_window(self, name: impl Into<String>, size: usize) -> Self {
        self.operator(name, OperatorFn::GroupWindow { size })
    }

    pub fn sink_write(self, name: impl Into<String>, topic: TopicHandle) -> Self {
        self.operator(name, OperatorFn::SinkWrite(topic))
    }

    pub fn finalize(self) -> Result<Topology> {
        if let Some(name) = self.after_sink {
            return Err(DataflowError::OperatorAfterSink(name));
        }
        match self.operators.last().map(|o| o.kind()) {
            Some(OperatorKind::SinkWrite) => {}
            _ => return Err(DataflowError::MissingSink),
        }
        let mut seen = HashSet::new();
        seen.insert(self.source.name.clone());
        for op in &self.operators {
            if !seen.insert(op.name.clone()) {
                return Err(DataflowError::DuplicateNode(op.name.clone()));
            }
            if let OperatorFn::GroupWindow { size: 0 } = op.func {
                return Err(DataflowError::Operator {
                    node: op.name.clone(),
                    message: "window size must be positive".into(),
                });
            }
        }
        let hwm = self.source.topic.high_water_mark(0)?;
        if self.source.end_offset > hwm {
            return Err(DataflowError::EndOffsetBeyondHighWater {
                end: self.source.end_offset,
                hwm,
            });
        }
        Ok(Topology {
            source: self.source,
            operators: self.operators,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchStats {
    pub batch_index: u64,
    pub size: usize,
    /// Sink offsets written while processing this batch.
    pub first_output_offset: Option<u64>,
    pub last_output_offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JobReport {
    pub records_in: u64,
    pub records_out: u64,
    /// Invocation count per node name, source included.
    pub operator_invocations: BTreeMap<String, u64>,
    pub lanes: usize,
    /// Elements moved between threads. Dispatch from the source reader to a
    /// lane is the only handoff, so this equals `records_in`.
    pub thread_handoffs: u64,
    /// Populated by the micro-batch engine only.
    pub batches: Vec<BatchStats>,
}

impl JobReport {
    pub fn total_invocations(&self) -> u64 {
        self.operator_invocations.values().sum()
    }

    pub fn invocations(&self, node: &str) -> u64 {
        self.operator_invocations.get(node).copied().unwrap_or(0)
    }

    pub(crate) fn from_counters(topology: &Topology, records_in: u64, counters: &LaneCounters, lanes: usize) -> Self {
        let mut operator_invocations = BTreeMap::new();
        operator_invocations.insert(topology.source().name.clone(), records_in);
        for (op, count) in topology.operators().iter().zip(&counters.invocations) {
            operator_invocations.insert(op.name.clone(), *count);
        }
        JobReport {
            records_in,
            records_out: counters.records_out,
            operator_invocations,
            lanes,
            thread_handoffs: counters.handoffs,
            batches: Vec::new(),
        }
    }
}

/// Per-lane instrumentation, summed after the final barrier.
#[derive(Debug, Clone, Default)]
pub(crate) struct LaneCounters {
    pub invocations: Vec<u64>,
    pub records_out: u64,
    pub handoffs: u64,
}

impl LaneCounters {
    pub fn new(n_ops: usize) -> Self {
        Self {
            invocations: vec![0; n_ops],
            ..Default::default()
        }
    }

    pub fn absorb(&mut self, other: &LaneCounters) {
        for (a, b) in self.invocations.iter_mut().zip(&other.invocations) {
            *a += b;
        }
        self.records_out += other.records_out;
        self.handoffs += other.handoffs;
    }
}

/// Groups one window of key-value pairs: one output per distinct key, keys in
/// first-arrival order, values in arrival order.
pub fn group_window(items: Vec<KeyValue>) -> Vec<KeyedGroup> {
    let mut slot: std::collections::HashMap<Bytes, usize> = std::collections::HashMap::new();
    let mut groups: Vec<KeyedGroup> = Vec::new();
    for KeyValue { key, value } in items {
        match slot.get(&key) {
            Some(&i) => groups[i].values.push(value),
            None => {
                slot.insert(key.clone(), groups.len());
                groups.push(KeyedGroup {
                    key,
                    values: vec![value],
                });
            }
        }
    }
    groups
}

pub(crate) fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".to_string()
    }
}
