use std::sync::Arc;

use bytes::Bytes;

use super::{Application, DoFn, PTransform, Pipeline, Result, UnifiedError};
use crate::dataflow::{
    Datum, Element, ExecutionPlan, FlatMapFn, KeyValue, OpError, OperatorFn, RecordEnvelope,
};
use crate::engine::{microbatch, tuple, BatchPolicy, NativeJob};
use crate::minilog::TopicHandle;

pub const SOURCE_NODE: &str = "Source:PTransformTranslation.UnknownRawPTransform";
pub const ENVELOPE_NODE: &str = "FlatMap";
pub const WITHOUT_METADATA_NODE: &str = "ParDoTranslation.RawParDo/withoutMetadata";
pub const VALUES_NODE: &str = "ParDoTranslation.RawParDo/Values";
pub const SERIALIZE_NODE: &str = "ParDoTranslation.RawParDo/Serialize";
pub const WRITE_NODE: &str = "ParDoTranslation.RawParDo/WriteToLog";

/// Target engine of a translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Runner {
    Tuple,
    Microbatch(BatchPolicy),
}

pub struct Translation {
    pub job: NativeJob,
    pub plan: ExecutionPlan,
}

enum Stage {
    ParDo { name: String, func: DoFn },
    Group { size: usize },
    Flatten { branches: Vec<Vec<DoFn>> },
}

fn find_one<'a>(pipeline: &'a Pipeline, what: &str, pred: impl Fn(&PTransform) -> bool) -> Result<&'a Application> {
    let mut found = pipeline.applications().iter().filter(|a| pred(&a.transform));
    match (found.next(), found.next()) {
        (Some(a), None) => Ok(a),
        (None, _) => Err(UnifiedError::Unsupported(format!("pipeline has no {what}"))),
        (Some(_), Some(_)) => Err(UnifiedError::Unsupported(format!("pipeline has more than one {what}"))),
    }
}

/// Walks back from `collection` through ParDos until it reaches a collection
/// read by more than one transform (a fork) or produced by something else.
/// Returns that collection and the ParDo functions in upstream-first order.
fn branch(pipeline: &Pipeline, collection: usize) -> (usize, Vec<DoFn>) {
    let mut fns = Vec::new();
    let mut cur = collection;
    while pipeline.consumer_count(cur) <= 1 {
        let app = pipeline.producer(cur);
        match &app.transform {
            PTransform::ParDo(p) => {
                fns.push(p.func.clone());
                cur = app.inputs[0];
            }
            _ => break,
        }
    }
    fns.reverse();
    (cur, fns)
}

fn lower(pipeline: &Pipeline, collection: usize, stages: &mut Vec<Stage>) -> Result<()> {
    let app = pipeline.producer(collection);
    match &app.transform {
        PTransform::ReadFromLog { .. } => Ok(()),
        PTransform::ParDo(p) => {
            lower(pipeline, app.inputs[0], stages)?;
            stages.push(Stage::ParDo {
                name: p.name.clone(),
                func: p.func.clone(),
            });
            Ok(())
        }
        PTransform::GroupByKey { window } => {
            lower(pipeline, app.inputs[0], stages)?;
            let size = window.ok_or(UnifiedError::UnwindowedGroupByKey)?.size();
            stages.push(Stage::Group { size });
            Ok(())
        }
        PTransform::Flatten => {
            let mut fork = None;
            let mut branches = Vec::with_capacity(app.inputs.len());
            for &input in &app.inputs {
                let (at, fns) = branch(pipeline, input);
                match fork {
                    None => fork = Some(at),
                    Some(f) if f != at => {
                        return Err(UnifiedError::Unsupported(
                            "Flatten inputs must fork from one collection through ParDo chains".into(),
                        ))
                    }
                    Some(_) => {}
                }
                branches.push(fns);
            }
            lower(pipeline, fork.expect("flatten has inputs"), stages)?;
            stages.push(Stage::Flatten { branches });
            Ok(())
        }
        PTransform::WriteToLog { .. } => Err(UnifiedError::TerminalInput),
    }
}

fn run_branch(fns: &[DoFn], elem: Element, out: &mut Vec<Element>) -> Result<(), OpError> {
    let Some((first, rest)) = fns.split_first() else {
        out.push(elem);
        return Ok(());
    };
    let mut produced = Vec::new();
    first(elem, &mut produced)?;
    for e in produced {
        run_branch(rest, e, out)?;
    }
    Ok(())
}

fn envelope_fn(topic_name: Arc<str>) -> FlatMapFn {
    Arc::new(move |elem: Element, out: &mut Vec<Element>| {
        let payload = elem.datum.as_bytes()?;
        // deserialize into an owned value and attach the broker metadata
        let value = Bytes::copy_from_slice(payload);
        let envelope = RecordEnvelope {
            topic: topic_name.to_string(),
            partition: 0,
            offset: elem.index,
            timestamp: elem.ts,
            kv: KeyValue {
                key: Bytes::new(),
                value,
            },
        };
        out.push(elem.with_datum(Datum::Envelope(Box::new(envelope))));
        Ok(())
    })
}

fn without_metadata(elem: Element) -> Result<Element, OpError> {
    match elem.datum {
        Datum::Envelope(env) => Ok(Element {
            index: elem.index,
            ts: elem.ts,
            datum: Datum::KeyValue(env.kv),
        }),
        other => Err(OpError(format!("withoutMetadata expects an envelope, got {}", other.kind_name()))),
    }
}

fn values(elem: Element) -> Result<Element, OpError> {
    match elem.datum {
        Datum::KeyValue(kv) => Ok(Element {
            index: elem.index,
            ts: elem.ts,
            datum: Datum::Bytes(kv.value),
        }),
        other => Err(OpError(format!("Values expects a key-value, got {}", other.kind_name()))),
    }
}

fn serialize(elem: Element) -> Result<Element, OpError> {
    let bytes = elem.datum.as_bytes()?;
    let encoded = Bytes::copy_from_slice(bytes);
    Ok(elem.with_datum(Datum::Bytes(encoded)))
}

fn operators(stages: Vec<Stage>, source: &TopicHandle, sink: TopicHandle) -> Vec<(String, OperatorFn)> {
    let mut ops: Vec<(String, OperatorFn)> = vec![
        (ENVELOPE_NODE.into(), OperatorFn::FlatMap(envelope_fn(Arc::from(source.name())))),
        (WITHOUT_METADATA_NODE.into(), OperatorFn::Map(Arc::new(without_metadata))),
        (VALUES_NODE.into(), OperatorFn::Map(Arc::new(values))),
    ];
    for (i, stage) in stages.into_iter().enumerate() {
        match stage {
            Stage::ParDo { name, func } => {
                ops.push((format!("ParDoTranslation.RawParDo/{name}"), OperatorFn::FlatMap(func)));
            }
            Stage::Group { size } => {
                ops.push((format!("GroupByKey/TumblingCount({size})#{i}"), OperatorFn::GroupWindow { size }));
            }
            Stage::Flatten { branches } => {
                let f: FlatMapFn = Arc::new(move |elem: Element, out: &mut Vec<Element>| {
                    for fns in &branches {
                        run_branch(fns, elem.clone(), out)?;
                    }
                    Ok(())
                });
                ops.push((format!("Flatten#{i}"), OperatorFn::FlatMap(f)));
            }
        }
    }
    ops.push((SERIALIZE_NODE.into(), OperatorFn::Map(Arc::new(serialize))));
    ops.push((WRITE_NODE.into(), OperatorFn::SinkWrite(sink)));
    ops
}

/// Lowers `pipeline` onto the chosen native engine at parallelism `p`.
///
/// Supported shapes: one `ReadFromLog`, one `WriteToLog`, and in between any
/// chain of ParDo and GroupByKey, where a Flatten may merge ParDo branches
/// that fork from a common collection.
pub fn translate(pipeline: &Pipeline, runner: Runner, parallelism: usize) -> Result<Translation> {
    if parallelism == 0 {
        return Err(crate::dataflow::DataflowError::InvalidParallelism.into());
    }
    let read = find_one(pipeline, "ReadFromLog", |t| matches!(t, PTransform::ReadFromLog { .. }))?;
    let write = find_one(pipeline, "WriteToLog", |t| matches!(t, PTransform::WriteToLog { .. }))?;
    let (source, end_offset) = match &read.transform {
        PTransform::ReadFromLog { topic, end_offset } => (topic.clone(), *end_offset),
        _ => unreachable!(),
    };
    let sink = match &write.transform {
        PTransform::WriteToLog { topic } => topic.clone(),
        _ => unreachable!(),
    };

    let mut stages = Vec::new();
    lower(pipeline, write.inputs[0], &mut stages)?;

    if let Runner::Microbatch(policy) = runner {
        for stage in &stages {
            if let Stage::Group { size } = stage {
                if *size > policy.max_batch_size {
                    return Err(UnifiedError::Unsupported(format!(
                        "window of {size} elements spans micro-batches of at most {}",
                        policy.max_batch_size
                    )));
                }
            }
        }
    }

    let ops = operators(stages, &source, sink);
    let job = match runner {
        Runner::Tuple => {
            let mut b = tuple::build(source, end_offset).source_name(SOURCE_NODE);
            for (name, f) in ops {
                b = b.operator(name, f);
            }
            NativeJob::Tuple {
                topology: b.finalize()?,
                parallelism,
            }
        }
        Runner::Microbatch(policy) => {
            let mut b = microbatch::build(source, end_offset, policy)?.source_name(SOURCE_NODE);
            for (name, f) in ops {
                b = b.operator(name, f);
            }
            NativeJob::Microbatch {
                topology: b.finalize()?,
                parallelism,
            }
        }
    };
    let plan = job.plan();
    Ok(Translation { job, plan })
}
