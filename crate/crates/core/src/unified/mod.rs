//! Portable pipeline model and runners that translate it onto the native
//! engines.
//!
//! A [`Pipeline`] is a DAG of transform applications over typed
//! [`PCollection`]s. [`translate`] lowers it into a native job and always
//! wraps the user transforms in the same fixed chain of wrapper stages the
//! reference runner emits around a log source and sink:
//!
//! ```text
//! UnknownRawPTransform -> FlatMap (envelope) -> withoutMetadata -> Values
//!     -> <user transforms> -> Serialize -> WriteToLog
//! ```
//!
//! The wrapper stages are never fused away; they are exactly the overhead
//! being measured.

mod runner;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::dataflow::{DataflowError, Element, OpError};
use crate::minilog::TopicHandle;

pub use runner::{translate, Runner, Translation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UnifiedError {
    #[error("{transform}: expected {expected:?} input, found {found:?}")]
    TypeMismatch {
        transform: String,
        expected: ElementKind,
        found: ElementKind,
    },
    #[error("GroupByKey requires a key-value collection, found {0:?}")]
    GroupByKeyOnUnkeyed(ElementKind),
    #[error("GroupByKey requires a window")]
    UnwindowedGroupByKey,
    #[error("window size must be at least 1")]
    InvalidWindow,
    #[error("ReadFromLog can only be applied at the pipeline root")]
    ReadNotAtRoot,
    #[error("{0} cannot be applied at the pipeline root")]
    NeedsInput(String),
    #[error("{0} takes exactly one input collection")]
    SingleInputExpected(String),
    #[error("cannot apply a transform to the output of WriteToLog")]
    TerminalInput,
    #[error("Flatten inputs must share an element kind")]
    FlattenKindMismatch,
    #[error("collection {0} does not belong to this pipeline")]
    UnknownCollection(usize),
    #[error("unsupported pipeline: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
}

pub type Result<T, E = UnifiedError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Bytes,
    KeyValue,
    KeyedGroup,
}

/// Handle to a collection registered in a [`Pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PCollection {
    pub id: usize,
    pub element_kind: ElementKind,
    pub bounded: bool,
    terminal: bool,
}

impl PCollection {
    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    TumblingCount(usize),
}

impl WindowSpec {
    pub fn size(&self) -> usize {
        match self {
            WindowSpec::TumblingCount(n) => *n,
        }
    }
}

/// Element function of a ParDo: zero or more outputs per input.
pub type DoFn = Arc<dyn Fn(Element, &mut Vec<Element>) -> Result<(), OpError> + Send + Sync>;

#[derive(Clone)]
pub struct ParDo {
    pub name: String,
    pub input_kind: ElementKind,
    pub output_kind: ElementKind,
    pub func: DoFn,
}

impl fmt::Debug for ParDo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParDo")
            .field("name", &self.name)
            .field("input_kind", &self.input_kind)
            .field("output_kind", &self.output_kind)
            .finish()
    }
}

#[derive(Clone, Debug)]
pub enum PTransform {
    ReadFromLog { topic: TopicHandle, end_offset: u64 },
    ParDo(ParDo),
    GroupByKey { window: Option<WindowSpec> },
    Flatten,
    WriteToLog { topic: TopicHandle },
}

impl PTransform {
    pub fn read_from_log(topic: TopicHandle, end_offset: u64) -> Self {
        PTransform::ReadFromLog { topic, end_offset }
    }

    pub fn par_do<F>(name: impl Into<String>, input_kind: ElementKind, output_kind: ElementKind, f: F) -> Self
    where
        F: Fn(Element, &mut Vec<Element>) -> Result<(), OpError> + Send + Sync + 'static,
    {
        PTransform::ParDo(ParDo {
            name: name.into(),
            input_kind,
            output_kind,
            func: Arc::new(f),
        })
    }

    pub fn group_by_key(window: WindowSpec) -> Self {
        PTransform::GroupByKey { window: Some(window) }
    }

    pub fn write_to_log(topic: TopicHandle) -> Self {
        PTransform::WriteToLog { topic }
    }

    pub fn label(&self) -> String {
        match self {
            PTransform::ReadFromLog { .. } => "ReadFromLog".into(),
            PTransform::ParDo(p) => format!("ParDo({})", p.name),
            PTransform::GroupByKey { .. } => "GroupByKey".into(),
            PTransform::Flatten => "Flatten".into(),
            PTransform::WriteToLog { .. } => "WriteToLog".into(),
        }
    }
}

/// Where a transform is applied.
#[derive(Debug, Clone)]
pub enum Input {
    Root,
    One(PCollection),
    Many(Vec<PCollection>),
}

impl From<PCollection> for Input {
    fn from(pc: PCollection) -> Self {
        Input::One(pc)
    }
}

impl From<Vec<PCollection>> for Input {
    fn from(pcs: Vec<PCollection>) -> Self {
        Input::Many(pcs)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Application {
    pub transform: PTransform,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Pipeline {
    seed: u64,
    applications: Vec<Application>,
    collections: Vec<(PCollection, usize)>,
}

impl Pipeline {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn transform_count(&self) -> usize {
        self.applications.len()
    }

    pub fn collections(&self) -> impl Iterator<Item = &PCollection> {
        self.collections.iter().map(|(pc, _)| pc)
    }

    pub(crate) fn applications(&self) -> &[Application] {
        &self.applications
    }

    pub(crate) fn producer(&self, collection: usize) -> &Application {
        &self.applications[self.collections[collection].1]
    }

    fn resolve(&self, pc: &PCollection) -> Result<PCollection> {
        match self.collections.get(pc.id) {
            Some((known, _)) if known == pc => {
                if known.terminal {
                    Err(UnifiedError::TerminalInput)
                } else {
                    Ok(*known)
                }
            }
            _ => Err(UnifiedError::UnknownCollection(pc.id)),
        }
    }

    fn single(&self, input: &Input, label: &str) -> Result<PCollection> {
        match input {
            Input::Root => Err(UnifiedError::NeedsInput(label.to_string())),
            Input::One(pc) => self.resolve(pc),
            Input::Many(pcs) if pcs.len() == 1 => self.resolve(&pcs[0]),
            Input::Many(_) => Err(UnifiedError::SingleInputExpected(label.to_string())),
        }
    }

    /// Applies `transform` to `input`, returning the produced collection.
    pub fn apply(&mut self, input: impl Into<Input>, transform: PTransform) -> Result<PCollection> {
        let input = input.into();
        let label = transform.label();
        let (inputs, kind, bounded, terminal) = match &transform {
            PTransform::ReadFromLog { .. } => {
                if !matches!(input, Input::Root) {
                    return Err(UnifiedError::ReadNotAtRoot);
                }
                // unbounded model over a finite source range
                (vec![], ElementKind::Bytes, false, false)
            }
            PTransform::ParDo(p) => {
                let pc = self.single(&input, &label)?;
                if pc.element_kind != p.input_kind {
                    return Err(UnifiedError::TypeMismatch {
                        transform: label,
                        expected: p.input_kind,
                        found: pc.element_kind,
                    });
                }
                (vec![pc.id], p.output_kind, pc.bounded, false)
            }
            PTransform::GroupByKey { window } => {
                let pc = self.single(&input, &label)?;
                if pc.element_kind != ElementKind::KeyValue {
                    return Err(UnifiedError::GroupByKeyOnUnkeyed(pc.element_kind));
                }
                match window {
                    None => return Err(UnifiedError::UnwindowedGroupByKey),
                    Some(w) if w.size() == 0 => return Err(UnifiedError::InvalidWindow),
                    Some(_) => {}
                }
                (vec![pc.id], ElementKind::KeyedGroup, pc.bounded, false)
            }
            PTransform::Flatten => {
                let pcs = match &input {
                    Input::Root => return Err(UnifiedError::NeedsInput(label)),
                    Input::One(pc) => vec![*pc],
                    Input::Many(pcs) if pcs.is_empty() => return Err(UnifiedError::NeedsInput(label)),
                    Input::Many(pcs) => pcs.clone(),
                };
                let resolved = pcs.iter().map(|pc| self.resolve(pc)).collect::<Result<Vec<_>>>()?;
                let kind = resolved[0].element_kind;
                if resolved.iter().any(|pc| pc.element_kind != kind) {
                    return Err(UnifiedError::FlattenKindMismatch);
                }
                let bounded = resolved.iter().all(|pc| pc.bounded);
                (resolved.iter().map(|pc| pc.id).collect(), kind, bounded, false)
            }
            PTransform::WriteToLog { .. } => {
                let pc = self.single(&input, &label)?;
                if pc.element_kind != ElementKind::Bytes {
                    return Err(UnifiedError::TypeMismatch {
                        transform: label,
                        expected: ElementKind::Bytes,
                        found: pc.element_kind,
                    });
                }
                (vec![pc.id], ElementKind::Bytes, pc.bounded, true)
            }
        };
        let output = PCollection {
            id: self.collections.len(),
            element_kind: kind,
            bounded,
            terminal,
        };
        self.collections.push((output, self.applications.len()));
        self.applications.push(Application { transform, inputs });
        Ok(output)
    }

    /// Number of application input slots reading `collection`.
    pub(crate) fn consumer_count(&self, collection: usize) -> usize {
        self.applications
            .iter()
            .flat_map(|a| a.inputs.iter())
            .filter(|&&c| c == collection)
            .count()
    }
}
