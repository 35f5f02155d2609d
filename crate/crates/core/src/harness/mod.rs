//! Training, evaluation, sweeps and artifact export.

pub mod ablation;
pub mod config;
pub mod eval;
pub mod export;
pub mod metrics;
pub mod optim;
pub mod train;

pub use ablation::{ablation_run, AblationRow, AblationRun, AblationTable, Variant};
pub use config::{PromptMode, Schedule, TrainConfig};
pub use eval::{
    evaluate, frame_auc, read_scores_csv, report_from_scores, robustness_sweep, score_split, write_scores_csv,
    EvalReport, FrameScore, MethodMetrics, RobustnessCell, RobustnessReport,
};
pub use export::{augment_preview, export_intensity_maps, ground_truth_map};
pub use metrics::{accuracy, auc, group_scores};
pub use optim::{cosine_lr, AdamW};
pub use train::{materialize, train, EpochRecord, TrainOutcome};
