//! Lesion detection metrics: IoU, greedy one-to-one matching at a fixed IoU
//! threshold, 101-point interpolated average precision per class, and
//! mAP@0.5 pooled over a dataset.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{BoundingBox, Detection, DetectionLabel, GroundTruthSet, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectionError {
    #[error("box has non-positive area")]
    DegenerateBox,
    #[error("boxes of more than one class passed to single-class matching")]
    MixedClasses,
    #[error("detections of more than one image passed to single-image matching")]
    MixedImages,
    #[error("iou threshold {0} outside (0, 1]")]
    InvalidIouThreshold(f64),
    #[error("average precision undefined with zero ground-truth boxes")]
    NoGroundTruth,
    #[error("prediction references image {0:?} absent from the ground truth")]
    UnknownImage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Intersection over union of two half-open boxes. Labels are ignored.
pub fn iou<L>(a: &BoundingBox<L>, b: &BoundingBox<L>) -> Result<f64, DetectionError> {
    if a.area() <= 0.0 || b.area() <= 0.0 {
        return Err(DetectionError::DegenerateBox);
    }
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    Ok(inter / union)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchEntry {
    pub confidence: f64,
    pub is_true_positive: bool,
}

/// Outcome of matching one class: scored predictions in confidence-descending
/// order plus the ground-truth box count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub n_gt: usize,
}

/// Greedy one-to-one matching for one class on one image. Predictions are
/// processed in confidence-descending order (ties by input order); each takes
/// the unmatched ground-truth box of highest IoU when that IoU reaches the
/// threshold, otherwise it is a false positive.
pub fn match_class(
    gt_boxes: &[BoundingBox<DetectionLabel>],
    predictions: &[Detection],
    iou_threshold: f64,
) -> Result<MatchResult, DetectionError> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(DetectionError::InvalidIouThreshold(iou_threshold));
    }
    let mut labels = gt_boxes.iter().map(|b| b.label);
    let class = labels.next().or_else(|| predictions.first().map(|d| d.bbox.label));
    if labels.any(|l| Some(l) != class)
        || predictions.iter().any(|d| Some(d.bbox.label) != class)
    {
        return Err(DetectionError::MixedClasses);
    }
    if let Some(first) = predictions.first() {
        if predictions.iter().any(|d| d.image_id != first.image_id) {
            return Err(DetectionError::MixedImages);
        }
    }

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b].confidence.partial_cmp(&predictions[a].confidence).unwrap()
    });

    let mut gt_taken = vec![false; gt_boxes.len()];
    let mut entries = Vec::with_capacity(predictions.len());
    for &pi in &order {
        let pred = &predictions[pi];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gt_boxes.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let overlap = iou(gt, &pred.bbox)?;
            if overlap >= iou_threshold && best.map_or(true, |(_, b)| overlap > b) {
                best = Some((gi, overlap));
            }
        }
        let is_tp = match best {
            Some((gi, _)) => {
                gt_taken[gi] = true;
                true
            }
            None => false,
        };
        entries.push(MatchEntry { confidence: pred.confidence, is_true_positive: is_tp });
    }
    Ok(MatchResult { entries, n_gt: gt_boxes.len() })
}

/// Cumulative (recall, precision) points over confidence-sorted predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

pub fn pr_curve(matches: &MatchResult) -> Result<PrCurve, DetectionError> {
    if matches.n_gt == 0 {
        return Err(DetectionError::NoGroundTruth);
    }
    let mut points = Vec::with_capacity(matches.entries.len());
    let mut tp = 0usize;
    for (i, e) in matches.entries.iter().enumerate() {
        if e.is_true_positive {
            tp += 1;
        }
        points.push((tp as f64 / matches.n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    Ok(PrCurve { points })
}

/// 101-point interpolated average precision: at each recall grid point
/// t in {0.00, 0.01, ..., 1.00} take max{p(r) : r >= t} over the PR curve
/// (0 when no point reaches t), then average the 101 values.
pub fn average_precision(matches: &MatchResult) -> Result<f64, DetectionError> {
    let curve = pr_curve(matches)?;
    // running max of precision from the high-recall end
    let n = curve.points.len();
    let mut interp = vec![0.0f64; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(curve.points[i].1);
        interp[i] = running;
    }
    let mut sum = 0.0;
    let mut idx = 0usize;
    for grid in 0..=100u32 {
        let t = f64::from(grid) / 100.0;
        while idx < n && curve.points[idx].0 < t {
            idx += 1;
        }
        if idx < n {
            sum += interp[idx];
        }
    }
    Ok(sum / 101.0)
}

/// Per-class APs over the evaluated dataset plus their unweighted mean.
/// Classes with zero ground-truth boxes are absent from `per_class` and
/// excluded from the mean rather than reported as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub per_class: BTreeMap<DetectionLabel, f64>,
    pub n_gt_per_class: BTreeMap<DetectionLabel, usize>,
    pub map: f64,
}

/// mAP@iou_threshold over a ground-truth set. Ground-truth labels are
/// remapped onto the 7-class detection vocabulary; matching runs per image
/// and per class, then the per-class PR is pooled over all images by merging
/// entries in confidence order (ties keep image order, so the result is
/// deterministic and independent of parallelism).
pub fn mean_ap(
    gt: &GroundTruthSet,
    predictions: &BTreeMap<String, Vec<Detection>>,
    iou_threshold: f64,
) -> Result<MapReport, DetectionError> {
    for image_id in predictions.keys() {
        if !gt.contains(image_id) {
            return Err(DetectionError::UnknownImage(image_id.clone()));
        }
    }
    static EMPTY: Vec<Detection> = Vec::new();
    let per_image: Vec<BTreeMap<DetectionLabel, MatchResult>> = gt
        .records()
        .par_iter()
        .map(|record| {
            let mut gt_by_class: BTreeMap<DetectionLabel, Vec<BoundingBox<DetectionLabel>>> =
                BTreeMap::new();
            for b in &record.boxes {
                let label = b.label.detection_target()?;
                gt_by_class.entry(label).or_default().push(BoundingBox {
                    label,
                    x_min: b.x_min,
                    y_min: b.y_min,
                    x_max: b.x_max,
                    y_max: b.y_max,
                });
            }
            let dets = predictions.get(&record.image_id).unwrap_or(&EMPTY);
            let mut det_by_class: BTreeMap<DetectionLabel, Vec<Detection>> = BTreeMap::new();
            for d in dets {
                det_by_class.entry(d.bbox.label).or_default().push(d.clone());
            }
            let mut classes: Vec<DetectionLabel> = gt_by_class.keys().copied().collect();
            classes.extend(det_by_class.keys().copied());
            classes.sort_unstable();
            classes.dedup();
            let mut out = BTreeMap::new();
            for class in classes {
                let gt_boxes = gt_by_class.get(&class).map_or(&[][..], |v| v.as_slice());
                let preds = det_by_class.get(&class).map_or(&[][..], |v| v.as_slice());
                out.insert(class, match_class(gt_boxes, preds, iou_threshold)?);
            }
            Ok(out)
        })
        .collect::<Result<_, DetectionError>>()?;

    // pool per class across images, in image record order
    let mut pooled: BTreeMap<DetectionLabel, MatchResult> = BTreeMap::new();
    for image_result in per_image {
        for (class, m) in image_result {
            let slot = pooled.entry(class).or_default();
            slot.n_gt += m.n_gt;
            slot.entries.extend(m.entries);
        }
    }

    let mut per_class = BTreeMap::new();
    let mut n_gt_per_class = BTreeMap::new();
    for (class, mut m) in pooled {
        if m.n_gt == 0 {
            continue; // AP undefined; class reported as absent
        }
        m.entries.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap());
        n_gt_per_class.insert(class, m.n_gt);
        per_class.insert(class, average_precision(&m)?);
    }
    if per_class.is_empty() {
        return Err(DetectionError::NoGroundTruth);
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { per_class, n_gt_per_class, map })
}
