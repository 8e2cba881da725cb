#![allow(dead_code)]

use std::collections::BTreeMap;

use bytes::Bytes;
use streamlab::corpus::{self, CorpusSpec, IngestRate, SearchLogRecord};
use streamlab::dataflow::{ExecutionPlan, JobReport};
use streamlab::engine::{BatchPolicy, EngineKind};
use streamlab::minilog::{AckMode, Broker, TopicConfig, TopicHandle};
use streamlab::queries::{self, ApiKind, QuerySpec, QueryTarget};

pub struct Lab {
    pub broker: Broker,
    pub input: TopicHandle,
    pub records: Vec<SearchLogRecord>,
}

impl Lab {
    pub fn new(n_records: u64, seed: u64) -> Self {
        let broker = Broker::new();
        let input = broker.create_topic(TopicConfig::new("input")).unwrap();
        let records = corpus::generate_corpus(&CorpusSpec::new(n_records, seed)).unwrap();
        corpus::send(&records, &input, IngestRate::Unlimited, AckMode::Confirmed).unwrap();
        Lab { broker, input, records }
    }

    pub fn lines(&self) -> Vec<Bytes> {
        self.records.iter().map(corpus::serialize_record).collect()
    }

    pub fn target(&self, out: &str) -> QueryTarget {
        QueryTarget {
            input: self.input.clone(),
            end_offset: self.input.high_water_mark(0).unwrap(),
            output: self.broker.create_topic(TopicConfig::new(out)).unwrap(),
            batch_policy: BatchPolicy::default(),
        }
    }

    /// Runs one query job and returns the output payloads in log order.
    pub fn run(
        &self,
        spec: &QuerySpec,
        api: ApiKind,
        engine: EngineKind,
        p: usize,
        out: &str,
    ) -> (Vec<Bytes>, JobReport, ExecutionPlan) {
        let target = self.target(out);
        let job = queries::build_query(spec, api, engine, p, &target).unwrap();
        let report = job.job.execute().unwrap();
        (payloads(&target.output), report, job.plan)
    }
}

pub fn payloads(topic: &TopicHandle) -> Vec<Bytes> {
    let n = topic.high_water_mark(0).unwrap() as usize;
    topic.read(0, 0, n).unwrap().into_iter().map(|e| e.payload).collect()
}

pub fn multiset<I: IntoIterator<Item = Bytes>>(items: I) -> BTreeMap<Bytes, usize> {
    let mut m = BTreeMap::new();
    for b in items {
        *m.entry(b).or_insert(0) += 1;
    }
    m
}

/// Sequential SplitMix64 generator, independent of the sampler under test.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Offsets kept by a Bernoulli(p) sampler driven by one sequential stream.
pub fn sample_oracle(seed: u64, p: f64, n: usize) -> Vec<usize> {
    let mut rng = SplitMix64(seed);
    (0..n).filter(|_| rng.next_f64() < p).collect()
}

pub fn first_column(line: &[u8]) -> Bytes {
    let s = std::str::from_utf8(line).unwrap();
    Bytes::from(s.split('\t').next().unwrap().to_string())
}
