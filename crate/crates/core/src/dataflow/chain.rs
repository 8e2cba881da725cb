use crate::minilog::AckMode;

use super::{
    group_window, DataflowError, Datum, Element, KeyValue, LaneCounters, OpError, OperatorFn,
    OperatorSpec, Result,
};

struct Pending {
    index: u64,
    ts: u64,
    kv: KeyValue,
}

/// Fused execution of an operator chain inside one lane. Each element is
/// pushed through all operators by direct calls; there is no queue between
/// operators.
pub(crate) struct Chain<'t> {
    ops: &'t [OperatorSpec],
    windows: Vec<Vec<Pending>>,
    scratch: Vec<Vec<Element>>,
    pub counters: LaneCounters,
    sink_range: Option<(u64, u64)>,
}

impl<'t> Chain<'t> {
    pub fn new(ops: &'t [OperatorSpec]) -> Self {
        Self {
            ops,
            windows: ops.iter().map(|_| Vec::new()).collect(),
            scratch: ops.iter().map(|_| Vec::new()).collect(),
            counters: LaneCounters::new(ops.len()),
            sink_range: None,
        }
    }

    pub fn push(&mut self, elem: Element) -> Result<()> {
        self.push_at(0, elem)
    }

    fn fail(&self, stage: usize, e: OpError) -> DataflowError {
        DataflowError::Operator {
            node: self.ops[stage].name.clone(),
            message: e.0,
        }
    }

    fn push_at(&mut self, stage: usize, elem: Element) -> Result<()> {
        let Some(op) = self.ops.get(stage) else {
            return Ok(());
        };
        self.counters.invocations[stage] += 1;
        match &op.func {
            OperatorFn::Map(f) => {
                let out = f(elem).map_err(|e| self.fail(stage, e))?;
                self.push_at(stage + 1, out)
            }
            OperatorFn::Filter(f) => {
                if f(&elem).map_err(|e| self.fail(stage, e))? {
                    self.push_at(stage + 1, elem)
                } else {
                    Ok(())
                }
            }
            OperatorFn::FlatMap(f) => {
                let mut out = std::mem::take(&mut self.scratch[stage]);
                if let Err(e) = f(elem, &mut out) {
                    return Err(self.fail(stage, e));
                }
                let mut result = Ok(());
                for e in out.drain(..) {
                    if result.is_ok() {
                        result = self.push_at(stage + 1, e);
                    }
                }
                self.scratch[stage] = out;
                result
            }
            OperatorFn::GroupWindow { size } => {
                let size = *size;
                let kv = match elem.datum {
                    Datum::KeyValue(kv) => kv,
                    other => {
                        let msg = OpError(format!("group window expects key-value, got {}", other.kind_name()));
                        return Err(self.fail(stage, msg));
                    }
                };
                self.windows[stage].push(Pending {
                    index: elem.index,
                    ts: elem.ts,
                    kv,
                });
                if self.windows[stage].len() >= size {
                    self.fire_window(stage)?;
                }
                Ok(())
            }
            OperatorFn::SinkWrite(topic) => {
                let bytes = elem.datum.into_bytes().map_err(|e| self.fail(stage, e))?;
                let ack = topic.append(0, bytes, AckMode::Confirmed)?;
                self.counters.records_out += 1;
                self.sink_range = Some(match self.sink_range {
                    None => (ack.offset, ack.offset),
                    Some((lo, hi)) => (lo.min(ack.offset), hi.max(ack.offset)),
                });
                Ok(())
            }
        }
    }

    fn fire_window(&mut self, stage: usize) -> Result<()> {
        let pending = std::mem::take(&mut self.windows[stage]);
        if pending.is_empty() {
            return Ok(());
        }
        // each group inherits position metadata of its first value
        let mut firsts: std::collections::HashMap<bytes::Bytes, (u64, u64)> = Default::default();
        let mut kvs = Vec::with_capacity(pending.len());
        for p in pending {
            firsts.entry(p.kv.key.clone()).or_insert((p.index, p.ts));
            kvs.push(p.kv);
        }
        for group in group_window(kvs) {
            let (index, ts) = firsts[&group.key];
            self.push_at(
                stage + 1,
                Element {
                    index,
                    ts,
                    datum: Datum::KeyedGroup(group),
                },
            )?;
        }
        Ok(())
    }

    /// Flushes partial windows, upstream first.
    pub fn finish(&mut self) -> Result<()> {
        for stage in 0..self.ops.len() {
            self.fire_window(stage)?;
        }
        Ok(())
    }

    /// Sink offsets written since the last call.
    pub fn take_sink_range(&mut self) -> Option<(u64, u64)> {
        self.sink_range.take()
    }
}
