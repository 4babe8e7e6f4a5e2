//! Experiment scaffolding: synthetic corpus, configuration, training
//! orchestration and checkpoint selection.

mod config;
mod dataset;
mod downstream;
mod extract;
mod frames;
mod motif;
mod pipeline;
mod select;
mod synth;

pub use config::{ConfigFile, EncoderProfile, ExperimentConfig, Task, HYBRID_STAGES};
pub use dataset::{load_frames, Dataset, FoulIncident, Segment, Split};
pub use downstream::{
    caption_examples, evaluate_commentary, evaluate_event, evaluate_foul, event_examples, foul_examples,
    teacher_forced_accuracy, train_commentary_head, train_event_head, train_foul_head, CaptionExample, CommentaryModel,
    EventExample, EventModel, FeatureSet, FoulExample, FoulModel, HeadTrainConfig, Prediction, Trained,
};
pub use extract::{extract_features, load_pretrained};
pub use frames::{frames_from_bytes, frames_to_bytes, read_frames, write_frames, FRAMES_MAGIC, FRAMES_VERSION};
pub use motif::{render_motif, MotifStyle};
pub use pipeline::{
    caption_metrics, evaluate_predictions, pretrain_on_dataset, run_pipeline, train_and_evaluate_heads, write_predictions,
    MetricReport, PipelineConfig, PredictionLine,
};
pub use select::{select_best_checkpoint, SelectionTask, ValidationRecord};
pub use synth::{
    default_templates, foul_view_path, gen_synthetic, match_id, segment_path, synthetic_labels, FoulIndexEntry,
    SyntheticCorpusSpec, SyntheticSummary, FOUL_CLASS_NAMES, SEVERITY_NAMES,
};
