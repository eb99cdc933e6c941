//! The two mutual-ensemble rules between classifier and detector.
//!
//! Forward ("gate"): when the classifier score falls below the operating
//! cutoff, only detector boxes with confidence strictly above the floor
//! survive; otherwise all boxes are retained. Reverse ("boost"): the
//! classifier score is averaged with the highest box confidence, taking 0
//! for detection-free images.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("cutoff {0} outside [0, 1]")]
    InvalidCutoff(f64),
    #[error("floor {0} outside [0, 1]")]
    InvalidFloor(f64),
    #[error("no classifier score for detected image {0:?}")]
    MissingClassifierScore(String),
    #[error("unknown fusion direction {0:?} (expected \"gate\" or \"boost\")")]
    UnknownDirection(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Classifier operating cutoff c*.
    pub cutoff: f64,
    /// Confidence floor applied to boxes on below-cutoff images.
    pub floor: f64,
}

impl FusionConfig {
    pub fn new(cutoff: f64, floor: f64) -> Result<Self, FusionError> {
        if !(0.0..=1.0).contains(&cutoff) || cutoff.is_nan() {
            return Err(FusionError::InvalidCutoff(cutoff));
        }
        if !(0.0..=1.0).contains(&floor) || floor.is_nan() {
            return Err(FusionError::InvalidFloor(floor));
        }
        Ok(FusionConfig { cutoff, floor })
    }
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { cutoff: 0.5, floor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Gate,
    Boost,
}

impl FromStr for Direction {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, FusionError> {
        match s {
            "gate" => Ok(Direction::Gate),
            "boost" => Ok(Direction::Boost),
            other => Err(FusionError::UnknownDirection(other.to_string())),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Gate => "gate",
            Direction::Boost => "boost",
        })
    }
}

/// Apply the forward rule to one image. Order is preserved; boxes at
/// confidence exactly equal to the floor are dropped (strictly greater
/// survives).
pub fn gate_detections(
    score: f64,
    detections: &[Detection],
    config: &FusionConfig,
) -> Vec<Detection> {
    if score >= config.cutoff {
        detections.to_vec()
    } else {
        detections.iter().filter(|d| d.confidence > config.floor).cloned().collect()
    }
}

/// Apply the reverse rule to one image: average the classifier score with
/// the maximum box confidence (0 when there are no boxes).
pub fn boost_classifier(score: f64, detections: &[Detection]) -> f64 {
    let max_confidence = detections.iter().map(|d| d.confidence).fold(0.0f64, f64::max);
    (score + max_confidence) / 2.0
}

/// Dataset-level fusion output, in the same shape as the prediction files
/// so it can be re-evaluated by the metric commands.
#[derive(Debug, Clone, PartialEq)]
pub enum FusedPredictions {
    Detections(BTreeMap<String, Vec<Detection>>),
    Scores(BTreeMap<String, f64>),
}

/// Apply the per-image rule across the dataset. Gate requires a classifier
/// score for every detected image; boost treats images absent from the
/// detector file as having zero detections.
pub fn fuse_dataset(
    classifier_scores: &BTreeMap<String, f64>,
    detections: &BTreeMap<String, Vec<Detection>>,
    config: &FusionConfig,
    direction: Direction,
) -> Result<FusedPredictions, FusionError> {
    match direction {
        Direction::Gate => {
            let mut out = BTreeMap::new();
            for (image_id, dets) in detections {
                let score = classifier_scores
                    .get(image_id)
                    .copied()
                    .ok_or_else(|| FusionError::MissingClassifierScore(image_id.clone()))?;
                out.insert(image_id.clone(), gate_detections(score, dets, config));
            }
            Ok(FusedPredictions::Detections(out))
        }
        Direction::Boost => {
            static EMPTY: Vec<Detection> = Vec::new();
            let mut out = BTreeMap::new();
            for (image_id, &score) in classifier_scores {
                let dets = detections.get(image_id).unwrap_or(&EMPTY);
                out.insert(image_id.clone(), boost_classifier(score, dets));
            }
            Ok(FusedPredictions::Scores(out))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, DetectionLabel};
    use proptest::prelude::*;

    fn det(confidence: f64) -> Detection {
        Detection {
            image_id: "img".to_string(),
            bbox: BoundingBox {
                label: DetectionLabel::Osteophytes,
                x_min: 0.0,
                y_min: 0.0,
                x_max: 10.0,
                y_max: 10.0,
            },
            confidence,
        }
    }

    #[test]
    fn above_cutoff_keeps_everything() {
        let config = FusionConfig::new(0.2808, 0.5).unwrap();
        let dets = vec![det(0.2), det(0.9)];
        assert_eq!(gate_detections(0.30, &dets, &config), dets);
    }

    #[test]
    fn below_cutoff_applies_strict_floor() {
        let config = FusionConfig::new(0.2808, 0.5).unwrap();
        let kept = gate_detections(0.10, &[det(0.7), det(0.4)], &config);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.7);

        // confidence exactly at the floor is dropped
        let at_floor = gate_detections(0.10, &[det(0.5)], &config);
        assert!(at_floor.is_empty());

        assert!(gate_detections(0.10, &[], &config).is_empty());
    }

    #[test]
    fn boost_rule_values() {
        assert!((boost_classifier(0.6, &[det(0.8), det(0.3)]) - 0.7).abs() < 1e-12);
        assert!((boost_classifier(0.6, &[]) - 0.3).abs() < 1e-12);
        assert_eq!(boost_classifier(1.0, &[det(1.0)]), 1.0);
    }

    #[test]
    fn gate_with_zero_cutoff_is_identity() {
        let config = FusionConfig::new(0.0, 0.5).unwrap();
        let dets = BTreeMap::from([("a".to_string(), vec![det(0.1), det(0.9)])]);
        let cls = BTreeMap::from([("a".to_string(), 0.0)]);
        match fuse_dataset(&cls, &dets, &config, Direction::Gate).unwrap() {
            FusedPredictions::Detections(out) => assert_eq!(out, dets),
            _ => panic!("expected detections"),
        }
    }

    #[test]
    fn gate_requires_scores_for_detected_images() {
        let config = FusionConfig::default();
        let dets = BTreeMap::from([("a".to_string(), vec![det(0.9)])]);
        assert_eq!(
            fuse_dataset(&BTreeMap::new(), &dets, &config, Direction::Gate),
            Err(FusionError::MissingClassifierScore("a".to_string()))
        );
    }

    #[test]
    fn boost_without_detections_halves_scores() {
        let cls = BTreeMap::from([("a".to_string(), 0.8), ("b".to_string(), 0.2)]);
        match fuse_dataset(&cls, &BTreeMap::new(), &FusionConfig::default(), Direction::Boost)
            .unwrap()
        {
            FusedPredictions::Scores(out) => {
                assert_eq!(out["a"], 0.4);
                assert_eq!(out["b"], 0.1);
            }
            _ => panic!("expected scores"),
        }
    }

    proptest! {
        #[test]
        fn gate_output_is_idempotent_subsequence(
            score in 0.0f64..=1.0,
            cutoff in 0.0f64..=1.0,
            floor in 0.0f64..=1.0,
            confidences in prop::collection::vec(0.0f64..=1.0, 0..12),
        ) {
            let config = FusionConfig::new(cutoff, floor).unwrap();
            let dets: Vec<Detection> = confidences.iter().map(|&c| det(c)).collect();
            let once = gate_detections(score, &dets, &config);
            // subsequence of the input
            let mut it = dets.iter();
            for kept in &once {
                prop_assert!(it.any(|d| d == kept));
            }
            // idempotent
            let twice = gate_detections(score, &once, &config);
            prop_assert_eq!(&twice, &once);
            // raising the floor never grows the output
            let higher = FusionConfig::new(cutoff, (floor + 0.1).min(1.0)).unwrap();
            prop_assert!(gate_detections(score, &dets, &higher).len() <= once.len());
        }

        #[test]
        fn boost_stays_in_unit_interval(
            score in 0.0f64..=1.0,
            confidences in prop::collection::vec(0.0f64..=1.0, 0..12),
        ) {
            let dets: Vec<Detection> = confidences.iter().map(|&c| det(c)).collect();
            let boosted = boost_classifier(score, &dets);
            prop_assert!((0.0..=1.0).contains(&boosted));
            let max_conf = confidences.iter().cloned().fold(0.0f64, f64::max);
            prop_assert_eq!(boosted == score, score == max_conf);
        }
    }
}
