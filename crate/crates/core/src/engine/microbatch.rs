//! Micro-batch engine.
//!
//! A batch former discretizes the bounded source into immutable batches that
//! close on a size or delay bound. The scheduler splits each batch
//! round-robin into `p` partitions, hands them to persistent workers, and
//! waits for all of them before releasing the next batch. Outputs of batch
//! `i` are therefore appended before any output of batch `i + 1`.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded};
use serde::{Deserialize, Serialize};

use crate::dataflow::{
    panic_message, BatchStats, Chain, DataflowError, Datum, Element, ExecutionPlan, JobReport,
    LaneCounters, OpError, OperatorFn, Result, Topology, TopologyBuilder,
};
use crate::minilog::TopicHandle;

pub const ENGINE_NAME: &str = "microbatch";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchPolicy {
    pub max_batch_size: usize,
    pub max_batch_delay_ms: u64,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            max_batch_size: 1000,
            max_batch_delay_ms: 100,
        }
    }
}

impl BatchPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_batch_size == 0 {
            return Err(DataflowError::InvalidPolicy("max_batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn max_batch_delay(&self) -> Duration {
        Duration::from_millis(self.max_batch_delay_ms)
    }
}

#[derive(Clone, Debug)]
pub struct MicrobatchTopology {
    topology: Topology,
    policy: BatchPolicy,
}

impl MicrobatchTopology {
    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn policy(&self) -> BatchPolicy {
        self.policy
    }
}

/// Same chainable steps as the tuple builder, with a batch policy attached.
pub struct MicrobatchBuilder {
    inner: TopologyBuilder,
    policy: BatchPolicy,
}

pub fn build(source: TopicHandle, end_offset: u64, policy: BatchPolicy) -> Result<MicrobatchBuilder> {
    policy.validate()?;
    Ok(MicrobatchBuilder {
        inner: TopologyBuilder::new(source, end_offset),
        policy,
    })
}

impl MicrobatchBuilder {
    pub fn source_name(self, name: impl Into<String>) -> Self {
        Self {
            inner: self.inner.source_name(name),
            ..self
        }
    }

    pub fn operator(self, name: impl Into<String>, func: OperatorFn) -> Self {
        Self {
            inner: self.inner.operator(name, func),
            ..self
        }
    }

    pub fn map<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Element) -> Result<Element, OpError> + Send + Sync + 'static,
    {
        Self {
            inner: self.inner.map(name, f),
            ..self
        }
    }

    pub fn flat_map<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Element, &mut Vec<Element>) -> Result<(), OpError> + Send + Sync + 'static,
    {
        Self {
            inner: self.inner.flat_map(name, f),
            ..self
        }
    }

    pub fn filter<F>(self, name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&Element) -> Result<bool, OpError> + Send + Sync + 'static,
    {
        Self {
            inner: self.inner.filter(name, f),
            ..self
        }
    }

    pub fn group_window(self, name: impl Into<String>, size: usize) -> Self {
        Self {
            inner: self.inner.group_window(name, size),
            ..self
        }
    }

    pub fn sink_write(self, name: impl Into<String>, topic: TopicHandle) -> Self {
        Self {
            inner: self.inner.sink_write(name, topic),
            ..self
        }
    }

    pub fn finalize(self) -> Result<MicrobatchTopology> {
        Ok(MicrobatchTopology {
            topology: self.inner.finalize()?,
            policy: self.policy,
        })
    }
}

pub fn plan(topology: &MicrobatchTopology, parallelism: usize) -> ExecutionPlan {
    topology
        .topology
        .plan(ENGINE_NAME, parallelism, Some("mode=microbatch"))
}

struct Batch {
    index: u64,
    elements: Vec<Element>,
}

struct PartitionDone {
    result: Result<Option<(u64, u64)>>,
}

#[derive(Debug, Clone)]
pub struct MicrobatchEngine {
    read_chunk: usize,
}

impl Default for MicrobatchEngine {
    fn default() -> Self {
        Self { read_chunk: 512 }
    }
}

impl MicrobatchEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn execute(&mut self, job: &MicrobatchTopology, parallelism: usize) -> Result<JobReport> {
        if parallelism == 0 {
            return Err(DataflowError::InvalidParallelism);
        }
        job.policy.validate()?;
        let topology = &job.topology;
        let ops = topology.operators();
        let source = topology.source();
        let end = source.end_offset;
        let max_size = job.policy.max_batch_size;
        let max_delay = job.policy.max_batch_delay();
        let read_chunk = self.read_chunk;
        let abort = AtomicBool::new(false);

        std::thread::scope(|s| {
            // batch former
            let (batch_tx, batch_rx) = bounded::<Batch>(1);
            let former = {
                let abort = &abort;
                let topic = source.topic.clone();
                s.spawn(move || -> Result<u64> {
                    let mut next = 0u64;
                    let mut index = 0u64;
                    while next < end && !abort.load(Ordering::Relaxed) {
                        let opened = Instant::now();
                        let mut elements = Vec::with_capacity(max_size.min((end - next) as usize));
                        while elements.len() < max_size && next < end {
                            if !elements.is_empty() && opened.elapsed() >= max_delay {
                                break;
                            }
                            let want = read_chunk.min(max_size - elements.len()).min((end - next) as usize);
                            let entries = topic.read(0, next, want)?;
                            if entries.is_empty() {
                                break;
                            }
                            next += entries.len() as u64;
                            elements.extend(entries.into_iter().map(|e| Element {
                                index: e.offset,
                                ts: e.append_ts,
                                datum: Datum::Bytes(e.payload),
                            }));
                        }
                        if elements.is_empty() {
                            break;
                        }
                        if batch_tx.send(Batch { index, elements }).is_err() {
                            break;
                        }
                        index += 1;
                    }
                    Ok(next)
                })
            };

            // partition workers
            let (done_tx, done_rx) = unbounded::<PartitionDone>();
            let mut task_txs = Vec::with_capacity(parallelism);
            let mut workers = Vec::with_capacity(parallelism);
            for _ in 0..parallelism {
                let (task_tx, task_rx) = bounded::<Vec<Element>>(1);
                task_txs.push(task_tx);
                let done_tx = done_tx.clone();
                workers.push(s.spawn(move || -> LaneCounters {
                    let mut chain = Chain::new(ops);
                    for partition in task_rx {
                        chain.counters.handoffs += partition.len() as u64;
                        let mut result = Ok(());
                        for elem in partition {
                            result = chain.push(elem);
                            if result.is_err() {
                                break;
                            }
                        }
                        // windows never span a partition
                        if result.is_ok() {
                            result = chain.finish();
                        }
                        let range = chain.take_sink_range();
                        let failed = result.is_err();
                        let _ = done_tx.send(PartitionDone {
                            result: result.map(|_| range),
                        });
                        if failed {
                            break;
                        }
                    }
                    chain.counters
                }));
            }
            drop(done_tx);

            // scheduler: one batch at a time, barrier in between
            let mut batches = Vec::new();
            let mut failure = None;
            'batches: for batch in batch_rx.iter() {
                let size = batch.elements.len();
                let mut partitions: Vec<Vec<Element>> =
                    (0..parallelism).map(|_| Vec::with_capacity(size / parallelism + 1)).collect();
                for (i, e) in batch.elements.into_iter().enumerate() {
                    partitions[i % parallelism].push(e);
                }
                for (tx, part) in task_txs.iter().zip(partitions) {
                    if tx.send(part).is_err() {
                        failure.get_or_insert(DataflowError::WorkerPanicked("partition worker exited".into()));
                        break 'batches;
                    }
                }
                let mut stats = BatchStats {
                    batch_index: batch.index,
                    size,
                    ..Default::default()
                };
                for _ in 0..parallelism {
                    match done_rx.recv() {
                        Ok(PartitionDone { result: Ok(range) }) => {
                            if let Some((lo, hi)) = range {
                                stats.first_output_offset =
                                    Some(stats.first_output_offset.map_or(lo, |f| f.min(lo)));
                                stats.last_output_offset =
                                    Some(stats.last_output_offset.map_or(hi, |l| l.max(hi)));
                            }
                        }
                        Ok(PartitionDone { result: Err(e) }) => {
                            failure.get_or_insert(e);
                        }
                        Err(_) => {
                            failure.get_or_insert(DataflowError::WorkerPanicked("partition worker exited".into()));
                            break;
                        }
                    }
                }
                if failure.is_some() {
                    break;
                }
                batches.push(stats);
            }
            if failure.is_some() {
                abort.store(true, Ordering::Relaxed);
            }
            drop(batch_rx);
            drop(task_txs);

            let mut total = LaneCounters::new(ops.len());
            for w in workers {
                match w.join() {
                    Ok(c) => total.absorb(&c),
                    Err(p) => {
                        failure.get_or_insert(DataflowError::WorkerPanicked(panic_message(p)));
                    }
                }
            }
            let former_result = former
                .join()
                .map_err(|p| DataflowError::WorkerPanicked(panic_message(p)))
                .and_then(|r| r);
            if let Some(e) = failure {
                return Err(e);
            }
            let records_in = former_result?;
            let mut report = JobReport::from_counters(topology, records_in, &total, parallelism);
            report.batches = batches;
            Ok(report)
        })
    }
}
