//! Synthetic search-log workload and the rate-controlled data sender.
//!
//! Records follow the five-column, tab-separated layout of a web search query
//! log: user id, query text, query time, clicked rank, clicked url. The last
//! two columns are optional and serialize as empty strings when absent.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use bytes::Bytes;
use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilog::{AckMode, LogError, TopicHandle};

/// Row count of the full-size workload.
pub const FULL_SCALE_RECORDS: u64 = 1_000_001;
/// Grep matches in the full-size workload.
pub const FULL_SCALE_GREP_MATCHES: u64 = 3_003;
/// Desk-scale row count (full size scaled down by 100).
pub const DESK_SCALE_RECORDS: u64 = 10_001;

pub const DEFAULT_NEEDLE: &str = "test";

const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
    #[error("malformed record: expected 5 tab-separated columns, found {columns}")]
    ColumnCount { columns: usize },
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("topic `{topic}` is not empty ({len} entries)")]
    NonEmptyTopic { topic: String, len: u64 },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SearchLogRecord {
    pub user_id: String,
    pub query_text: String,
    pub query_time: String,
    pub click_rank: Option<u32>,
    pub click_url: Option<String>,
}

impl SearchLogRecord {
    pub fn to_line(&self) -> String {
        let rank = self.click_rank.map(|r| r.to_string()).unwrap_or_default();
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.user_id,
            self.query_text,
            self.query_time,
            rank,
            self.click_url.as_deref().unwrap_or("")
        )
    }
}

/// Serializes a record as five tab-joined UTF-8 columns.
pub fn serialize_record(record: &SearchLogRecord) -> Bytes {
    Bytes::from(record.to_line())
}

pub fn parse_record(bytes: &[u8]) -> Result<SearchLogRecord, CorpusError> {
    let line = std::str::from_utf8(bytes).map_err(|e| CorpusError::Malformed(e.to_string()))?;
    let columns: Vec<&str> = line.split('\t').collect();
    if columns.len() != 5 {
        return Err(CorpusError::ColumnCount {
            columns: columns.len(),
        });
    }
    let click_rank = match columns[3] {
        "" => None,
        s => match s.parse::<u32>() {
            Ok(r) if r > 0 => Some(r),
            _ => return Err(CorpusError::Malformed(format!("bad click rank `{s}`"))),
        },
    };
    let click_url = match columns[4] {
        "" => None,
        s => Some(s.to_string()),
    };
    Ok(SearchLogRecord {
        user_id: columns[0].to_string(),
        query_text: columns[1].to_string(),
        query_time: columns[2].to_string(),
        click_rank,
        click_url,
    })
}

fn default_needle() -> String {
    DEFAULT_NEEDLE.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_records: u64,
    pub grep_needle: String,
    /// Defaults to the full-size match ratio applied to `n_records`.
    pub grep_match_count: Option<u64>,
    pub rng_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self::new(DESK_SCALE_RECORDS, 42)
    }
}

impl CorpusSpec {
    pub fn new(n_records: u64, rng_seed: u64) -> Self {
        Self {
            n_records,
            grep_needle: default_needle(),
            grep_match_count: None,
            rng_seed,
        }
    }

    /// `round(n * 3003 / 1000001)`, in integer arithmetic.
    pub fn default_match_count(n_records: u64) -> u64 {
        let num = n_records as u128 * FULL_SCALE_GREP_MATCHES as u128;
        let den = FULL_SCALE_RECORDS as u128;
        ((2 * num + den) / (2 * den)) as u64
    }

    pub fn effective_match_count(&self) -> u64 {
        self.grep_match_count
            .unwrap_or_else(|| Self::default_match_count(self.n_records))
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.n_records == 0 {
            return Err(CorpusError::InvalidSpec("n_records must be positive".into()));
        }
        if self.grep_needle.is_empty() {
            return Err(CorpusError::InvalidSpec("grep_needle must not be empty".into()));
        }
        if self.grep_needle.contains(['\t', '\n', '\r']) {
            return Err(CorpusError::InvalidSpec(
                "grep_needle must not contain tabs or newlines".into(),
            ));
        }
        let k = self.effective_match_count();
        if k > self.n_records {
            return Err(CorpusError::InvalidSpec(format!(
                "grep_match_count {k} exceeds n_records {}",
                self.n_records
            )));
        }
        Ok(())
    }
}

const VOCABULARY: &[&str] = &[
    "weather", "flowers", "cheap", "flights", "hotel", "recipes", "chicken", "lyrics", "music",
    "free", "games", "online", "maps", "news", "sports", "scores", "car", "rental", "insurance",
    "bank", "jobs", "school", "college", "football", "basketball", "movie", "times", "pictures",
    "dogs", "cats", "garden", "home", "depot", "health", "diet", "pizza", "delivery", "coupons",
    "mortgage", "rates", "real", "estate", "county", "library", "florida", "texas", "ohio",
    "york", "city", "beach", "vacation", "cruise", "airline", "tickets", "concert", "shoes",
    "dress", "wedding", "baby", "names", "horoscope", "bible", "church", "used", "trucks",
    "parts", "repair", "windows", "computer", "software", "download", "email", "yahoo", "ebay",
    "craigslist", "directions", "zip", "code", "phone", "number", "white", "pages", "pets",
    "medical", "symptoms", "pharmacy", "lottery", "results", "stock", "quotes", "tax", "forms",
    "salary", "resume", "apartment", "furniture", "kitchen", "paint", "camping", "fishing",
];

const DOMAINS: &[&str] = &[
    "com", "org", "net", "edu", "gov",
];

/// Generates the workload described by `spec`. Output is a pure function of
/// the spec.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Vec<SearchLogRecord>, CorpusError> {
    spec.validate()?;
    let needle = spec.grep_needle.as_str();
    let vocab: Vec<&str> = VOCABULARY
        .iter()
        .copied()
        .filter(|w| !w.contains(needle))
        .collect();
    if vocab.is_empty() {
        return Err(CorpusError::InvalidSpec(format!(
            "needle `{needle}` occurs in every vocabulary word"
        )));
    }

    let n = spec.n_records as usize;
    let k = spec.effective_match_count() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut planted = vec![false; n];
    for &i in &order[..k] {
        planted[i] = true;
    }
    drop(order);

    let base = NaiveDate::from_ymd_opt(2006, 3, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid base date");
    let mut clock_secs: i64 = 0;

    let mut records = Vec::with_capacity(n);
    for is_planted in planted {
        clock_secs += rng.random_range(0..20);
        let query_time = (base + chrono::Duration::seconds(clock_secs))
            .format("%Y-%m-%d %H:%M:%S")
            .to_string();

        let mut attempt = 0;
        let record = loop {
            let user_id = rng.random_range(100..10_000_000u32).to_string();
            let n_words = rng.random_range(1..=4);
            let mut words: Vec<&str> = (0..n_words)
                .map(|_| vocab[rng.random_range(0..vocab.len())])
                .collect();
            if is_planted {
                let at = rng.random_range(0..=words.len());
                words.insert(at, needle);
            }
            let (click_rank, click_url) = if rng.random_bool(0.5) {
                let word = vocab[rng.random_range(0..vocab.len())];
                let tld = DOMAINS[rng.random_range(0..DOMAINS.len())];
                (
                    Some(rng.random_range(1..=10)),
                    Some(format!("http://www.{word}.{tld}")),
                )
            } else {
                (None, None)
            };
            let record = SearchLogRecord {
                user_id,
                query_text: words.join(" "),
                query_time: query_time.clone(),
                click_rank,
                click_url,
            };
            // a planted needle must be the only occurrence source; the rest of
            // the line must stay needle-free
            let clean = if is_planted {
                let mut probe = record.clone();
                probe.query_text = probe.query_text.replace(needle, "\t");
                !probe.to_line().contains(needle)
            } else {
                !record.to_line().contains(needle)
            };
            if clean {
                break record;
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLES {
                return Err(CorpusError::InvalidSpec(format!(
                    "cannot generate records free of needle `{needle}`"
                )));
            }
        };
        records.push(record);
    }
    Ok(records)
}

/// Writes the corpus as newline-delimited lines, byte-identical to the
/// payloads the sender appends.
pub fn export_corpus(records: &[SearchLogRecord], path: &Path) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        out.write_all(&serialize_record(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestRate {
    #[default]
    Unlimited,
    PerSecond(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestSummary {
    pub count: u64,
    pub first_ts: u64,
    pub last_ts: u64,
}

/// Appends every record, in order, to partition 0 of `topic`.
pub fn send(
    records: &[SearchLogRecord],
    topic: &TopicHandle,
    rate: IngestRate,
    ack: AckMode,
) -> Result<IngestSummary, CorpusError> {
    let len = topic.high_water_mark(0)?;
    if len != 0 {
        return Err(CorpusError::NonEmptyTopic {
            topic: topic.name().to_string(),
            len,
        });
    }
    let interval = match rate {
        IngestRate::Unlimited => None,
        IngestRate::PerSecond(r) if r > 0.0 && r.is_finite() => Some(1.0 / r),
        IngestRate::PerSecond(r) => {
            return Err(CorpusError::InvalidSpec(format!("ingest rate {r} must be positive")))
        }
    };
    let start = Instant::now();
    let mut first_ts = None;
    let mut last_ts = 0;
    for (i, r) in records.iter().enumerate() {
        if let Some(secs) = interval {
            let due = start + Duration::from_secs_f64(secs * i as f64);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        let ack = topic.append(0, serialize_record(r), ack)?;
        first_ts.get_or_insert(ack.append_ts);
        last_ts = ack.append_ts;
    }
    Ok(IngestSummary {
        count: records.len() as u64,
        first_ts: first_ts.unwrap_or(0),
        last_ts,
    })
}
