//! The two mutual-ensemble rules: gating detector boxes by the classifier
//! score, and boosting the classifier score with the best box confidence.
//!
//! Run with: cargo run --example decision_fusion

use std::collections::BTreeMap;

use spine_eval::fusion::{
    boost_classifier, fuse_dataset, gate_detections, Direction, FusedPredictions, FusionConfig,
};
use spine_eval::model::{BoundingBox, Detection, DetectionLabel};

fn det(image_id: &str, confidence: f64) -> Detection {
    Detection {
        image_id: image_id.to_string(),
        bbox: BoundingBox {
            label: DetectionLabel::SurgicalImplant,
            x_min: 0.0,
            y_min: 0.0,
            x_max: 20.0,
            y_max: 20.0,
        },
        confidence,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = FusionConfig::new(0.2808, 0.5)?;

    // above the cutoff every box survives; below it only confident ones do
    let boxes = vec![det("a", 0.9), det("a", 0.4)];
    println!("score 0.30 keeps {} of 2 boxes", gate_detections(0.30, &boxes, &config).len());
    println!("score 0.10 keeps {} of 2 boxes", gate_detections(0.10, &boxes, &config).len());

    // reverse rule: average with the best box confidence (0 if no boxes)
    println!("boost(0.6, best box 0.9) = {:.2}", boost_classifier(0.6, &boxes));
    println!("boost(0.6, no boxes)     = {:.2}", boost_classifier(0.6, &[]));

    // dataset-level fusion produces prediction maps in the same shape as
    // the input files, so they can be re-evaluated by the same metrics
    let scores = BTreeMap::from([("a".to_string(), 0.10), ("b".to_string(), 0.80)]);
    let detections = BTreeMap::from([
        ("a".to_string(), vec![det("a", 0.9), det("a", 0.4)]),
        ("b".to_string(), vec![det("b", 0.3)]),
    ]);
    if let FusedPredictions::Detections(gated) =
        fuse_dataset(&scores, &detections, &config, Direction::Gate)?
    {
        for (image, dets) in &gated {
            println!("gated {image}: {} box(es)", dets.len());
        }
    }
    if let FusedPredictions::Scores(boosted) =
        fuse_dataset(&scores, &detections, &config, Direction::Boost)?
    {
        for (image, score) in &boosted {
            println!("boosted {image}: {score:.2}");
        }
    }
    Ok(())
}
