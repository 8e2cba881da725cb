//! Tuple-at-a-time engine.
//!
//! A single reader pulls the bounded source range and deals elements
//! round-robin to `p` lanes. Every lane owns the whole operator chain and runs
//! it fused: one element is pushed through all operators before the next one
//! is taken. Sinks append straight to the broker.

use std::sync::atomic::{AtomicBool, Ordering};

use crossbeam_channel::bounded;

use crate::dataflow::{
    panic_message, Chain, DataflowError, Datum, Element, ExecutionPlan, JobReport, LaneCounters,
    Result, Topology, TopologyBuilder,
};
use crate::minilog::TopicHandle;

pub type TupleTopology = Topology;

pub const ENGINE_NAME: &str = "tuple";

/// Starts a topology reading offsets `[0, end_offset)` of `source`.
pub fn build(source: TopicHandle, end_offset: u64) -> TopologyBuilder {
    TopologyBuilder::new(source, end_offset)
}

pub fn plan(topology: &TupleTopology, parallelism: usize) -> ExecutionPlan {
    topology.plan(ENGINE_NAME, parallelism, None)
}

#[derive(Debug, Clone)]
pub struct TupleEngine {
    read_chunk: usize,
    dispatch_chunk: usize,
    channel_depth: usize,
}

impl Default for TupleEngine {
    fn default() -> Self {
        Self {
            read_chunk: 512,
            dispatch_chunk: 64,
            channel_depth: 16,
        }
    }
}

impl TupleEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn execute(&mut self, topology: &TupleTopology, parallelism: usize) -> Result<JobReport> {
        if parallelism == 0 {
            return Err(DataflowError::InvalidParallelism);
        }
        let source = topology.source();
        let end = source.end_offset;
        let ops = topology.operators();
        let abort = AtomicBool::new(false);
        let (read_chunk, dispatch_chunk) = (self.read_chunk, self.dispatch_chunk);

        let (txs, rxs): (Vec<_>, Vec<_>) = (0..parallelism)
            .map(|_| bounded::<Vec<Element>>(self.channel_depth))
            .unzip();

        let (reader_result, lane_results) = std::thread::scope(|s| {
            let lanes: Vec<_> = rxs
                .into_iter()
                .map(|rx| {
                    let abort = &abort;
                    s.spawn(move || -> Result<LaneCounters> {
                        let mut chain = Chain::new(ops);
                        for chunk in rx {
                            if abort.load(Ordering::Relaxed) {
                                break;
                            }
                            chain.counters.handoffs += chunk.len() as u64;
                            for elem in chunk {
                                if let Err(e) = chain.push(elem) {
                                    abort.store(true, Ordering::Relaxed);
                                    return Err(e);
                                }
                            }
                        }
                        if let Err(e) = chain.finish() {
                            abort.store(true, Ordering::Relaxed);
                            return Err(e);
                        }
                        Ok(chain.counters)
                    })
                })
                .collect();

            let reader = {
                let abort = &abort;
                let topic = source.topic.clone();
                s.spawn(move || -> Result<u64> {
                    let mut buffers: Vec<Vec<Element>> = vec![Vec::with_capacity(dispatch_chunk); parallelism];
                    let mut next = 0u64;
                    let mut lane = 0usize;
                    'read: while next < end {
                        if abort.load(Ordering::Relaxed) {
                            break;
                        }
                        let want = read_chunk.min((end - next) as usize);
                        let entries = topic.read(0, next, want)?;
                        if entries.is_empty() {
                            break;
                        }
                        for entry in entries {
                            buffers[lane].push(Element {
                                index: entry.offset,
                                ts: entry.append_ts,
                                datum: Datum::Bytes(entry.payload),
                            });
                            next += 1;
                            if buffers[lane].len() >= dispatch_chunk {
                                let full = std::mem::replace(&mut buffers[lane], Vec::with_capacity(dispatch_chunk));
                                if txs[lane].send(full).is_err() {
                                    break 'read;
                                }
                            }
                            lane = (lane + 1) % parallelism;
                        }
                    }
                    for (tx, buf) in txs.iter().zip(buffers) {
                        if !buf.is_empty() {
                            let _ = tx.send(buf);
                        }
                    }
                    drop(txs);
                    Ok(next)
                })
            };

            let reader_result = reader
                .join()
                .map_err(|p| DataflowError::WorkerPanicked(panic_message(p)))
                .and_then(|r| r);
            let lane_results: Vec<Result<LaneCounters>> = lanes
                .into_iter()
                .map(|h| {
                    h.join()
                        .map_err(|p| DataflowError::WorkerPanicked(panic_message(p)))
                        .and_then(|r| r)
                })
                .collect();
            (reader_result, lane_results)
        });

        let mut total = LaneCounters::new(ops.len());
        for r in lane_results {
            total.absorb(&r?);
        }
        let records_in = reader_result?;
        Ok(JobReport::from_counters(topology, records_in, &total, parallelism))
    }
}
