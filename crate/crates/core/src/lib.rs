//! Training-free coreset selection for visual instruction tuning data.
//!
//! Samples are described by three signals computed from a reference model's
//! internals: multimodal gain (how much the image lowers answer-token
//! cross-entropy), bridging relevance (how strongly and how narrowly answer
//! tokens attend to visual tokens), and a skill-neuron signature (the top FFN
//! neurons per layer). [`scoring`] turns signal records into those signals;
//! [`selection`] turns scored samples into a budgeted, behavior-balanced
//! coreset manifest.

pub mod config;
pub mod error;
pub mod par;
pub mod record;
pub mod scoring;
pub mod selection;
pub mod synth;

pub use config::{LayerId, SelectionConfig, RAW_TOP_NEURONS};
pub use error::{Error, Result};
pub use par::Exec;
pub use record::{parse_record, reduce_to_compact, CompactRecord, FfnSummary, Format, Record, SignalRecord};
pub use scoring::{score_batch, score_record, ScoreRow, SkillSignature};
pub use selection::{run_selection, CoresetManifest, ManifestEntry, SelectionOutcome, Stage};
