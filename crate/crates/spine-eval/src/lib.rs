//! Model-agnostic evaluation harness for spine-radiograph abnormality
//! classifiers and lesion detectors.
//!
//! The library consumes model predictions as JSONL files and provides:
//!
//! - [`model`] — label taxonomy, boxes, image records, ground-truth sets
//! - [`dataset`] — file I/O, dataset statistics, study-level stratified split
//! - [`classify`] — ROC/AUROC, confusion metrics, Youden-optimal cutoff,
//!   score ensembling
//! - [`detect`] — IoU, greedy matching, 101-point AP and mAP@0.5
//! - [`bootstrap`] — deterministic percentile bootstrap CIs
//! - [`fusion`] — classifier-gated detections and detector-boosted scores
//! - [`cli`] / [`report`] — the `spine-eval` command-line surface
//!
//! See the crate examples for a runnable walkthrough of each capability.

pub mod bootstrap;
pub mod classify;
pub mod cli;
pub mod dataset;
pub mod detect;
pub mod fusion;
pub mod model;
pub mod report;

pub use classify::{auroc, confusion_at, ensemble_average, roc_curve, youden_optimal, LabeledScores};
pub use dataset::{compute_stats, parse_annotations, stratified_split};
pub use detect::{average_precision, iou, match_class, mean_ap};
pub use fusion::{boost_classifier, fuse_dataset, gate_detections, FusionConfig};
pub use model::{
    BoundingBox, Detection, DetectionLabel, GroundTruthSet, ImageRecord, LesionLabel,
    OperatingPoint,
};
