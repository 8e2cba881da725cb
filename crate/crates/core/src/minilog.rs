//! Embedded append-only log broker.
//!
//! Topics hold one or more partitions. Every append is assigned a dense
//! offset and a broker-side append timestamp (milliseconds on a single
//! process-wide monotonic clock). Offset and timestamp are assigned under the
//! same partition lock, so timestamp order never contradicts offset order.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use bytes::Bytes;
use parking_lot::RwLock;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LogError {
    #[error("topic `{0}` already exists")]
    DuplicateTopic(String),
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("topic `{topic}` has no partition {partition} (partitions: {count})")]
    InvalidPartition {
        topic: String,
        partition: u32,
        count: u32,
    },
    #[error("topic `{topic}` partition {partition} is empty")]
    EmptyPartition { topic: String, partition: u32 },
    #[error("topic `{0}` must have at least one partition")]
    ZeroPartitions(String),
}

pub type Result<T, E = LogError> = std::result::Result<T, E>;

static EPOCH: OnceLock<Instant> = OnceLock::new();

/// Milliseconds elapsed on the process-wide monotonic clock.
pub fn clock_ms() -> u64 {
    let epoch = EPOCH.get_or_init(Instant::now);
    epoch.elapsed().as_millis() as u64
}

/// Producer acknowledgement level.
///
/// Storage is in memory and appends are synchronous, so both modes return
/// after the offset and timestamp have been assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AckMode {
    FireAndForget,
    #[default]
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicConfig {
    pub name: String,
    pub partitions: u32,
    pub ack_mode: AckMode,
}

impl TopicConfig {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            partitions: 1,
            ack_mode: AckMode::Confirmed,
        }
    }

    pub fn with_partitions(mut self, partitions: u32) -> Self {
        self.partitions = partitions;
        self
    }
}

/// One appended record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub offset: u64,
    pub append_ts: u64,
    pub payload: Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendAck {
    pub offset: u64,
    pub append_ts: u64,
}

#[derive(Default)]
struct Partition {
    entries: RwLock<Vec<LogEntry>>,
}

struct TopicInner {
    config: TopicConfig,
    partitions: Vec<Partition>,
}

/// Cheap, cloneable handle to a topic.
#[derive(Clone)]
pub struct TopicHandle {
    inner: Arc<TopicInner>,
}

impl fmt::Debug for TopicHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TopicHandle")
            .field("name", &self.inner.config.name)
            .field("partitions", &self.inner.partitions.len())
            .finish()
    }
}

impl TopicHandle {
    pub fn name(&self) -> &str {
        &self.inner.config.name
    }

    pub fn config(&self) -> &TopicConfig {
        &self.inner.config
    }

    pub fn partition_count(&self) -> u32 {
        self.inner.partitions.len() as u32
    }

    fn partition(&self, partition: u32) -> Result<&Partition> {
        self.inner
            .partitions
            .get(partition as usize)
            .ok_or_else(|| LogError::InvalidPartition {
                topic: self.name().to_string(),
                partition,
                count: self.partition_count(),
            })
    }

    /// Appends `payload`, returning its offset and append timestamp.
    pub fn append(&self, partition: u32, payload: impl Into<Bytes>, _ack: AckMode) -> Result<AppendAck> {
        let part = self.partition(partition)?;
        let payload = payload.into();
        let mut entries = part.entries.write();
        // clock read happens under the write lock
        let append_ts = clock_ms();
        let offset = entries.len() as u64;
        entries.push(LogEntry {
            offset,
            append_ts,
            payload,
        });
        Ok(AppendAck { offset, append_ts })
    }

    /// Appends a batch under one lock acquisition. Returns the acks in order.
    pub fn append_all<I>(&self, partition: u32, payloads: I) -> Result<Vec<AppendAck>>
    where
        I: IntoIterator<Item = Bytes>,
    {
        let part = self.partition(partition)?;
        let mut entries = part.entries.write();
        let acks = payloads
            .into_iter()
            .map(|payload| {
                let append_ts = clock_ms();
                let offset = entries.len() as u64;
                entries.push(LogEntry {
                    offset,
                    append_ts,
                    payload,
                });
                AppendAck { offset, append_ts }
            })
            .collect();
        Ok(acks)
    }

    /// Returns entries `[from_offset, min(from_offset + max_count, len))`.
    pub fn read(&self, partition: u32, from_offset: u64, max_count: usize) -> Result<Vec<LogEntry>> {
        let part = self.partition(partition)?;
        let entries = part.entries.read();
        let len = entries.len() as u64;
        if from_offset >= len {
            return Ok(Vec::new());
        }
        let end = from_offset.saturating_add(max_count as u64).min(len);
        Ok(entries[from_offset as usize..end as usize].to_vec())
    }

    pub fn high_water_mark(&self, partition: u32) -> Result<u64> {
        let part = self.partition(partition)?;
        Ok(part.entries.read().len() as u64)
    }

    /// Append timestamps of the first and last entry of a partition.
    pub fn boundary_timestamps(&self, partition: u32) -> Result<(u64, u64)> {
        let part = self.partition(partition)?;
        let entries = part.entries.read();
        match (entries.first(), entries.last()) {
            (Some(first), Some(last)) => Ok((first.append_ts, last.append_ts)),
            _ => Err(LogError::EmptyPartition {
                topic: self.name().to_string(),
                partition,
            }),
        }
    }
}

/// A single-node, in-memory broker.
#[derive(Default)]
pub struct Broker {
    topics: RwLock<HashMap<String, TopicHandle>>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_topic(&self, config: TopicConfig) -> Result<TopicHandle> {
        if config.partitions == 0 {
            return Err(LogError::ZeroPartitions(config.name));
        }
        let mut topics = self.topics.write();
        if topics.contains_key(&config.name) {
            return Err(LogError::DuplicateTopic(config.name));
        }
        let partitions = (0..config.partitions).map(|_| Partition::default()).collect();
        let handle = TopicHandle {
            inner: Arc::new(TopicInner {
                config: config.clone(),
                partitions,
            }),
        };
        topics.insert(config.name, handle.clone());
        Ok(handle)
    }

    pub fn topic(&self, name: &str) -> Result<TopicHandle> {
        self.topics
            .read()
            .get(name)
            .cloned()
            .ok_or_else(|| LogError::UnknownTopic(name.to_string()))
    }

    pub fn has_topic(&self, name: &str) -> bool {
        self.topics.read().contains_key(name)
    }

    /// Sorted topic names.
    pub fn topic_names(&self) -> Vec<String> {
        let mut names: Vec<_> = self.topics.read().keys().cloned().collect();
        names.sort();
        names
    }

    pub fn append(&self, topic: &str, partition: u32, payload: impl Into<Bytes>, ack: AckMode) -> Result<AppendAck> {
        self.topic(topic)?.append(partition, payload, ack)
    }

    pub fn read(&self, topic: &str, partition: u32, from_offset: u64, max_count: usize) -> Result<Vec<LogEntry>> {
        self.topic(topic)?.read(partition, from_offset, max_count)
    }

    pub fn high_water_mark(&self, topic: &str, partition: u32) -> Result<u64> {
        self.topic(topic)?.high_water_mark(partition)
    }

    pub fn boundary_timestamps(&self, topic: &str, partition: u32) -> Result<(u64, u64)> {
        self.topic(topic)?.boundary_timestamps(partition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::thread;

    fn check_coherent(handle: &TopicHandle) {
        let all = handle.read(0, 0, usize::MAX).unwrap();
        for (i, pair) in all.windows(2).enumerate() {
            assert_eq!(pair[0].offset, i as u64);
            assert_eq!(pair[1].offset, i as u64 + 1);
            assert!(pair[0].append_ts <= pair[1].append_ts);
        }
    }

    #[test]
    fn create_topic_is_empty() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("input")).unwrap();
        assert_eq!(t.high_water_mark(0).unwrap(), 0);
        assert_eq!(broker.high_water_mark("input", 0).unwrap(), 0);
    }

    #[test]
    fn duplicate_topic_rejected() {
        let broker = Broker::new();
        broker.create_topic(TopicConfig::new("input")).unwrap();
        let err = broker.create_topic(TopicConfig::new("input")).unwrap_err();
        assert_eq!(err, LogError::DuplicateTopic("input".into()));
    }

    #[test]
    fn dense_offsets_after_five_appends() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("out-run-3")).unwrap();
        let offsets: Vec<u64> = (0..5)
            .map(|i| t.append(0, vec![i as u8], AckMode::Confirmed).unwrap().offset)
            .collect();
        assert_eq!(offsets, vec![0, 1, 2, 3, 4]);
        assert_eq!(t.high_water_mark(0).unwrap(), 5);
    }

    #[test]
    fn sequential_appends_are_monotonic() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        let a = t.append(0, &b"a"[..], AckMode::Confirmed).unwrap();
        let b = t.append(0, &b"b"[..], AckMode::FireAndForget).unwrap();
        assert_eq!((a.offset, b.offset), (0, 1));
        assert!(a.append_ts <= b.append_ts);
    }

    #[test]
    fn unknown_topic_and_partition() {
        let broker = Broker::new();
        assert_eq!(
            broker.append("nope", 0, &b"x"[..], AckMode::Confirmed).unwrap_err(),
            LogError::UnknownTopic("nope".into())
        );
        assert!(broker.read("nope", 0, 0, 1).is_err());
        assert!(broker.high_water_mark("nope", 0).is_err());
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        assert!(matches!(
            t.append(1, &b"x"[..], AckMode::Confirmed),
            Err(LogError::InvalidPartition { partition: 1, .. })
        ));
        assert!(matches!(
            broker.create_topic(TopicConfig::new("z").with_partitions(0)),
            Err(LogError::ZeroPartitions(_))
        ));
    }

    #[test]
    fn read_ranges() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        for p in ["a", "b", "c"] {
            t.append(0, p.as_bytes().to_vec(), AckMode::Confirmed).unwrap();
        }
        let all = t.read(0, 0, 10).unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all.iter().map(|e| e.offset).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(&all[1].payload[..], b"b");
        assert!(t.read(0, 3, 10).unwrap().is_empty());
        assert_eq!(t.read(0, 1, 1).unwrap().len(), 1);
    }

    #[test]
    fn boundary_timestamps_cases() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        assert!(matches!(t.boundary_timestamps(0), Err(LogError::EmptyPartition { .. })));
        let ack = t.append(0, &b"x"[..], AckMode::Confirmed).unwrap();
        assert_eq!(t.boundary_timestamps(0).unwrap(), (ack.append_ts, ack.append_ts));
    }

    #[test]
    fn boundary_timestamps_match_full_read() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        for i in 0..50u32 {
            t.append(0, i.to_le_bytes().to_vec(), AckMode::Confirmed).unwrap();
            if i % 10 == 0 {
                thread::sleep(std::time::Duration::from_millis(2));
            }
        }
        let all = t.read(0, 0, usize::MAX).unwrap();
        let expected = (all[0].append_ts, all[all.len() - 1].append_ts);
        assert_eq!(t.boundary_timestamps(0).unwrap(), expected);
        assert!(expected.1 > expected.0);
    }

    #[test]
    fn concurrent_producers_dense_offsets() {
        let broker = Arc::new(Broker::new());
        let t = broker.create_topic(TopicConfig::new("stress")).unwrap();
        let handles: Vec<_> = (0..4u32)
            .map(|producer| {
                let t = t.clone();
                thread::spawn(move || {
                    let mut last = None;
                    for i in 0..2500u32 {
                        let mut payload = producer.to_le_bytes().to_vec();
                        payload.extend_from_slice(&i.to_le_bytes());
                        let ack = t.append(0, payload, AckMode::Confirmed).unwrap();
                        // a single producer's appends are ordered
                        if let Some(prev) = last {
                            assert!(ack.offset > prev);
                        }
                        last = Some(ack.offset);
                    }
                })
            })
            .collect();
        // concurrent reader: high-water mark never goes backwards
        let reader = {
            let t = t.clone();
            thread::spawn(move || {
                let mut prev = 0;
                while prev < 10_000 {
                    let hwm = t.high_water_mark(0).unwrap();
                    assert!(hwm >= prev);
                    prev = hwm;
                }
            })
        };
        for h in handles {
            h.join().unwrap();
        }
        reader.join().unwrap();
        let all = t.read(0, 0, usize::MAX).unwrap();
        let offsets: BTreeSet<u64> = all.iter().map(|e| e.offset).collect();
        assert_eq!(offsets, (0..10_000).collect());
        check_coherent(&t);
        // per-producer read order equals append order
        for producer in 0..4u32 {
            let seq: Vec<u32> = all
                .iter()
                .filter(|e| e.payload[..4] == producer.to_le_bytes())
                .map(|e| u32::from_le_bytes(e.payload[4..8].try_into().unwrap()))
                .collect();
            assert_eq!(seq, (0..2500).collect::<Vec<_>>());
        }
    }

    #[test]
    fn append_all_is_dense() {
        let broker = Broker::new();
        let t = broker.create_topic(TopicConfig::new("t")).unwrap();
        t.append(0, &b"first"[..], AckMode::Confirmed).unwrap();
        let acks = t
            .append_all(0, (0..4u8).map(|i| Bytes::from(vec![i])))
            .unwrap();
        assert_eq!(acks.iter().map(|a| a.offset).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        check_coherent(&t);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        #[derive(Debug, Clone)]
        enum Step {
            Append(Vec<u8>),
            Read(usize),
        }

        fn step() -> impl Strategy<Value = Step> {
            prop_oneof![
                proptest::collection::vec(any::<u8>(), 0..16).prop_map(Step::Append),
                (1usize..8).prop_map(Step::Read),
            ]
        }

        proptest! {
            // Replays random append/read interleavings against a Vec model;
            // a cursor-driven consumer sees every entry exactly once.
            #[test]
            fn interleaved_reads_match_model(steps in proptest::collection::vec(step(), 1..80)) {
                let broker = Broker::new();
                let t = broker.create_topic(TopicConfig::new("m")).unwrap();
                let mut model: Vec<Vec<u8>> = Vec::new();
                let mut cursor = 0u64;
                let mut seen: Vec<Vec<u8>> = Vec::new();
                for s in steps {
                    match s {
                        Step::Append(p) => {
                            let ack = t.append(0, p.clone(), AckMode::Confirmed).unwrap();
                            prop_assert_eq!(ack.offset, model.len() as u64);
                            model.push(p);
                        }
                        Step::Read(n) => {
                            let got = t.read(0, cursor, n).unwrap();
                            let want = model.len().saturating_sub(cursor as usize).min(n);
                            prop_assert_eq!(got.len(), want);
                            for e in got {
                                prop_assert_eq!(e.offset, cursor);
                                seen.push(e.payload.to_vec());
                                cursor += 1;
                            }
                        }
                    }
                }
                let rest = t.read(0, cursor, usize::MAX).unwrap();
                seen.extend(rest.into_iter().map(|e| e.payload.to_vec()));
                prop_assert_eq!(seen, model);
            }
        }
    }
}
