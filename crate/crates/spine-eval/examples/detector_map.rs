//! Detection scoring end to end: IoU, greedy matching at IoU >= 0.5,
//! 101-point AP for one class, and dataset-level mAP over the 7-class
//! vocabulary.
//!
//! Run with: cargo run --example detector_map

use std::collections::BTreeMap;

use spine_eval::detect::{average_precision, iou, match_class, mean_ap};
use spine_eval::model::{
    BoundingBox, Detection, DetectionLabel, GroundTruthSet, ImageRecord, LesionLabel,
};

fn det(image_id: &str, label: DetectionLabel, confidence: f64, rect: [f64; 4]) -> Detection {
    Detection {
        image_id: image_id.to_string(),
        bbox: BoundingBox { label, x_min: rect[0], y_min: rect[1], x_max: rect[2], y_max: rect[3] },
        confidence,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt_box = BoundingBox {
        label: DetectionLabel::Osteophytes,
        x_min: 0.0,
        y_min: 0.0,
        x_max: 10.0,
        y_max: 10.0,
    };
    let shifted = BoundingBox { x_min: 5.0, x_max: 15.0, ..gt_box };
    println!("IoU of half-overlapping boxes: {:.4}", iou(&gt_box, &shifted)?);

    // two predictions on the same lesion: the confident one is the TP,
    // the duplicate becomes a FP
    let preds = vec![
        det("img0", DetectionLabel::Osteophytes, 0.9, [1.0, 0.0, 11.0, 10.0]),
        det("img0", DetectionLabel::Osteophytes, 0.7, [0.0, 0.0, 10.0, 10.0]),
    ];
    let matches = match_class(&[gt_box], &preds, 0.5)?;
    for e in &matches.entries {
        println!("confidence {:.1} -> {}", e.confidence, if e.is_true_positive { "TP" } else { "FP" });
    }
    println!("AP for this class: {:.5}", average_precision(&matches)?);

    // a tiny dataset: one Osteophytes lesion found, one Fracture lesion
    // (evaluated as "Other lesions") missed
    let mut gt = GroundTruthSet::new();
    gt.push(ImageRecord {
        image_id: "img0".into(),
        study_id: "s0".into(),
        width: 100,
        height: 100,
        boxes: vec![
            BoundingBox::new(LesionLabel::Osteophytes, 0.0, 0.0, 10.0, 10.0)?,
            BoundingBox::new(LesionLabel::Fracture, 50.0, 50.0, 70.0, 70.0)?,
        ],
        age: None,
        sex: None,
    })?;
    let mut by_image = BTreeMap::new();
    by_image.insert("img0".to_string(), preds);
    let report = mean_ap(&gt, &by_image, 0.5)?;
    for (class, ap) in &report.per_class {
        println!("{:<5} {:<20} AP {:.4}", class.lt_code(), class.name(), ap);
    }
    println!("mAP@0.5: {:.4}", report.map);
    Ok(())
}
