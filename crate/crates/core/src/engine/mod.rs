//! Native mini engines: tuple-at-a-time with operator chaining, and
//! micro-batch over discretized input.

pub mod microbatch;
pub mod tuple;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataflow::{ExecutionPlan, JobReport, Result};
use crate::minilog::TopicHandle;

pub use microbatch::{BatchPolicy, MicrobatchEngine, MicrobatchTopology};
pub use tuple::{TupleEngine, TupleTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Tuple,
    Microbatch,
}

impl EngineKind {
    pub const ALL: [EngineKind; 2] = [EngineKind::Tuple, EngineKind::Microbatch];

    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::Tuple => "tuple",
            EngineKind::Microbatch => "microbatch",
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tuple" => Ok(EngineKind::Tuple),
            "microbatch" => Ok(EngineKind::Microbatch),
            other => Err(format!("unknown engine `{other}` (expected tuple | microbatch)")),
        }
    }
}

/// A topology bound to an engine and a parallelism, ready to run.
#[derive(Clone, Debug)]
pub enum NativeJob {
    Tuple {
        topology: TupleTopology,
        parallelism: usize,
    },
    Microbatch {
        topology: MicrobatchTopology,
        parallelism: usize,
    },
}

impl NativeJob {
    pub fn engine(&self) -> EngineKind {
        match self {
            NativeJob::Tuple { .. } => EngineKind::Tuple,
            NativeJob::Microbatch { .. } => EngineKind::Microbatch,
        }
    }

    pub fn parallelism(&self) -> usize {
        match self {
            NativeJob::Tuple { parallelism, .. } | NativeJob::Microbatch { parallelism, .. } => *parallelism,
        }
    }

    pub fn plan(&self) -> ExecutionPlan {
        match self {
            NativeJob::Tuple { topology, parallelism } => tuple::plan(topology, *parallelism),
            NativeJob::Microbatch { topology, parallelism } => microbatch::plan(topology, *parallelism),
        }
    }

    pub fn sink(&self) -> &TopicHandle {
        match self {
            NativeJob::Tuple { topology, .. } => topology.sink(),
            NativeJob::Microbatch { topology, .. } => topology.topology().sink(),
        }
    }

    /// Runs the job on a freshly constructed engine instance.
    pub fn execute(&self) -> Result<JobReport> {
        match self {
            NativeJob::Tuple { topology, parallelism } => TupleEngine::new().execute(topology, *parallelism),
            NativeJob::Microbatch { topology, parallelism } => {
                MicrobatchEngine::new().execute(topology, *parallelism)
            }
        }
    }
}
