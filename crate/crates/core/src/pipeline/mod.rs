//! End-to-end orchestration: configuration, annotations, extraction
//! storage, training, prediction, smoothing, evaluation and synthetic data.

pub mod annotations;
pub mod config;
pub mod evaluate;
pub mod model;
pub mod store;
pub mod synth;
pub mod texture;

pub use annotations::{ActionAnnotation, Segment, BACKGROUND};
pub use config::PipelineConfig;
pub use evaluate::{evaluate, segment, EvalReport, LabelTrack, Segmentation};
pub use model::{predict_extracted, predict_frames, train, ModelBundle, Prediction, TrainingSet};
pub use store::{extract_to_dir, for_each_window, ExtractionReader, ExtractionSummary};
pub use synth::{render, ActionSpec, MotionKind, SyntheticSpec, SyntheticVideo};
