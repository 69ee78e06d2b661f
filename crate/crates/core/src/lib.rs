//! Slot-filling data augmentation.
//!
//! The crate turns a BIO-tagged slot-filling corpus into extra labeled
//! training data in one of two ways:
//!
//! * **value augmentation** masks one slot value with a `_ description _`
//!   region and asks a generator for sentences with the same context but a
//!   new value;
//! * **context augmentation** serializes the intent and slots as
//!   `intent ( type = value ; ... )` and asks for new sentences that carry
//!   exactly those values.
//!
//! Generated candidates are filtered and relabeled in [`filterlabel`], scored
//! with the diversity and entity-F1 measures in [`metrics`], and driven end
//! to end by [`pipeline`]. The [`loss`] module is a reference implementation
//! of the slot-aware label smoothing objective used to train generators.
//!
//! Batch work (filtering, metrics, loss rows, mock generation) runs on rayon
//! when the `parallel` feature is enabled (the default); see [`Execution`].

pub mod corpus;
pub mod filterlabel;
pub mod generator;
pub mod loss;
pub mod metrics;
mod par;
pub mod pipeline;
pub mod transform;

pub use corpus::{Dataset, SlotDictionary, SlotFrame, Span, Utterance};
pub use filterlabel::{AugmentedExample, FilterReport, Rejection};
pub use generator::{GenerationCandidate, GenerationRequest, Generator, GeneratorError};
pub use par::Execution;
pub use pipeline::{PipelineConfig, PipelineOutput};
pub use transform::{AugmentationInput, Mode, SlotDescriptionMap, TrainingPair};
