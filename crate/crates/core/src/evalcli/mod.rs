//! Metrics, evaluation reports, prediction files and exports.

pub mod export;
pub mod metrics;
pub mod predictions;
pub mod report;

pub use export::{
    export_action_schedule, export_hm_features, ActionSchedule, GripperAction, GripperEvent,
};
pub use metrics::{
    ade, error_curve, extract_transitions, fde, mae_transitions, Transition, TransitionKind,
};
pub use predictions::{cvh_all, forecast_all, Prediction, PredictionSet};
pub use report::{
    evaluate, ground_truth_from_clips, ground_truth_from_predictions, EvalReport, GroundTruth,
    TargetMetrics,
};
