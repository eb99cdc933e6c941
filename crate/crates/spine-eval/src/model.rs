//! Domain types shared by every other module: the label taxonomy, boxes,
//! image records and the ground-truth collection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("\"No finding\" has no box-level meaning")]
    NoFindingNotMappable,
    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),
    #[error("box {index}: {reason}")]
    InvalidBox { index: usize, reason: String },
}

/// One box-level validation failure; `validate_record` reports all of them,
/// not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxViolation {
    pub index: usize,
    pub reason: String,
}

impl fmt::Display for BoxViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "box {}: {}", self.index, self.reason)
    }
}

/// The 13 abnormal finding categories plus "No finding".
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LesionLabel {
    #[serde(rename = "Ankylosis")]
    Ankylosis,
    #[serde(rename = "Disc space narrowing")]
    DiscSpaceNarrowing,
    #[serde(rename = "Enthesophytes")]
    Enthesophytes,
    #[serde(rename = "Foraminal stenosis")]
    ForaminalStenosis,
    #[serde(rename = "Fracture")]
    Fracture,
    #[serde(rename = "Osteophytes")]
    Osteophytes,
    #[serde(rename = "Sclerotic lesion")]
    ScleroticLesion,
    #[serde(rename = "Spondylolysthesis")]
    Spondylolysthesis,
    #[serde(rename = "Subchondral sclerosis")]
    SubchondralSclerosis,
    #[serde(rename = "Surgical implant")]
    SurgicalImplant,
    #[serde(rename = "Vertebral collapse")]
    VertebralCollapse,
    #[serde(rename = "Foreign body")]
    ForeignBody,
    #[serde(rename = "Other lesions")]
    OtherLesions,
    #[serde(rename = "No finding")]
    NoFinding,
}

impl LesionLabel {
    pub const ALL: [LesionLabel; 14] = [
        LesionLabel::Ankylosis,
        LesionLabel::DiscSpaceNarrowing,
        LesionLabel::Enthesophytes,
        LesionLabel::ForaminalStenosis,
        LesionLabel::Fracture,
        LesionLabel::Osteophytes,
        LesionLabel::ScleroticLesion,
        LesionLabel::Spondylolysthesis,
        LesionLabel::SubchondralSclerosis,
        LesionLabel::SurgicalImplant,
        LesionLabel::VertebralCollapse,
        LesionLabel::ForeignBody,
        LesionLabel::OtherLesions,
        LesionLabel::NoFinding,
    ];

    /// The 13 box-level labels, i.e. everything except "No finding".
    pub const ABNORMAL: [LesionLabel; 13] = [
        LesionLabel::Ankylosis,
        LesionLabel::DiscSpaceNarrowing,
        LesionLabel::Enthesophytes,
        LesionLabel::ForaminalStenosis,
        LesionLabel::Fracture,
        LesionLabel::Osteophytes,
        LesionLabel::ScleroticLesion,
        LesionLabel::Spondylolysthesis,
        LesionLabel::SubchondralSclerosis,
        LesionLabel::SurgicalImplant,
        LesionLabel::VertebralCollapse,
        LesionLabel::ForeignBody,
        LesionLabel::OtherLesions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LesionLabel::Ankylosis => "Ankylosis",
            LesionLabel::DiscSpaceNarrowing => "Disc space narrowing",
            LesionLabel::Enthesophytes => "Enthesophytes",
            LesionLabel::ForaminalStenosis => "Foraminal stenosis",
            LesionLabel::Fracture => "Fracture",
            LesionLabel::Osteophytes => "Osteophytes",
            LesionLabel::ScleroticLesion => "Sclerotic lesion",
            LesionLabel::Spondylolysthesis => "Spondylolysthesis",
            LesionLabel::SubchondralSclerosis => "Subchondral sclerosis",
            LesionLabel::SurgicalImplant => "Surgical implant",
            LesionLabel::VertebralCollapse => "Vertebral collapse",
            LesionLabel::ForeignBody => "Foreign body",
            LesionLabel::OtherLesions => "Other lesions",
            LesionLabel::NoFinding => "No finding",
        }
    }

    /// Parse a raw string into a canonical label. Whitespace is trimmed and
    /// the first letter is case-folded; the rest must match exactly.
    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let canonical = canonicalize(raw);
        Self::ALL
            .into_iter()
            .find(|l| l.name() == canonical)
            .ok_or_else(|| ModelError::UnknownLabel(raw.to_string()))
    }

    /// Map an abnormal label onto the 7-class detection vocabulary. The
    /// seven detection targets map to themselves; the six rare labels
    /// collapse into "Other lesions".
    pub fn detection_target(self) -> Result<DetectionLabel, ModelError> {
        match self {
            LesionLabel::DiscSpaceNarrowing => Ok(DetectionLabel::DiscSpaceNarrowing),
            LesionLabel::ForaminalStenosis => Ok(DetectionLabel::ForaminalStenosis),
            LesionLabel::Osteophytes => Ok(DetectionLabel::Osteophytes),
            LesionLabel::Spondylolysthesis => Ok(DetectionLabel::Spondylolysthesis),
            LesionLabel::SurgicalImplant => Ok(DetectionLabel::SurgicalImplant),
            LesionLabel::VertebralCollapse => Ok(DetectionLabel::VertebralCollapse),
            LesionLabel::NoFinding => Err(ModelError::NoFindingNotMappable),
            _ => Ok(DetectionLabel::OtherLesions),
        }
    }
}

impl fmt::Display for LesionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The 7 lesion categories the detector targets, in LT-code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectionLabel {
    #[serde(rename = "Disc space narrowing")]
    DiscSpaceNarrowing,
    #[serde(rename = "Foraminal stenosis")]
    ForaminalStenosis,
    #[serde(rename = "Osteophytes")]
    Osteophytes,
    #[serde(rename = "Spondylolysthesis")]
    Spondylolysthesis,
    #[serde(rename = "Surgical implant")]
    SurgicalImplant,
    #[serde(rename = "Vertebral collapse")]
    VertebralCollapse,
    #[serde(rename = "Other lesions")]
    OtherLesions,
}

impl DetectionLabel {
    pub const ALL: [DetectionLabel; 7] = [
        DetectionLabel::DiscSpaceNarrowing,
        DetectionLabel::ForaminalStenosis,
        DetectionLabel::Osteophytes,
        DetectionLabel::Spondylolysthesis,
        DetectionLabel::SurgicalImplant,
        DetectionLabel::VertebralCollapse,
        DetectionLabel::OtherLesions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectionLabel::DiscSpaceNarrowing => "Disc space narrowing",
            DetectionLabel::ForaminalStenosis => "Foraminal stenosis",
            DetectionLabel::Osteophytes => "Osteophytes",
            DetectionLabel::Spondylolysthesis => "Spondylolysthesis",
            DetectionLabel::SurgicalImplant => "Surgical implant",
            DetectionLabel::VertebralCollapse => "Vertebral collapse",
            DetectionLabel::OtherLesions => "Other lesions",
        }
    }

    /// The LT index used by the report tables.
    pub fn lt_code(self) -> &'static str {
        match self {
            DetectionLabel::DiscSpaceNarrowing => "LT2",
            DetectionLabel::ForaminalStenosis => "LT4",
            DetectionLabel::Osteophytes => "LT6",
            DetectionLabel::Spondylolysthesis => "LT8",
            DetectionLabel::SurgicalImplant => "LT10",
            DetectionLabel::VertebralCollapse => "LT11",
            DetectionLabel::OtherLesions => "LT13",
        }
    }

    pub fn parse(raw: &str) -> Result<Self, ModelError> {
        let canonical = canonicalize(raw);
        Self::ALL
            .into_iter()
            .find(|l| l.name() == canonical)
            .ok_or_else(|| ModelError::UnknownLabel(raw.to_string()))
    }
}

impl fmt::Display for DetectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn canonicalize(raw: &str) -> String {
    let trimmed = raw.trim();
    let mut chars = trimmed.chars();
    match chars.next() {
        Some(first) => first.to_ascii_uppercase().to_string() + chars.as_str(),
        None => String::new(),
    }
}

/// Axis-aligned half-open pixel rectangle [x_min, x_max) x [y_min, y_max)
/// carrying a label. Adjacent boxes under this convention do not overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox<L> {
    pub label: L,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl<L> BoundingBox<L> {
    pub fn new(label: L, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, ModelError> {
        let b = BoundingBox { label, x_min, y_min, x_max, y_max };
        if let Some(reason) = b.geometry_violation() {
            return Err(ModelError::InvalidBox { index: 0, reason });
        }
        Ok(b)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// None when the geometry is valid, otherwise a human-readable reason.
    pub fn geometry_violation(&self) -> Option<String> {
        if !(self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite())
        {
            return Some("non-finite coordinate".to_string());
        }
        if self.x_min < 0.0 || self.y_min < 0.0 {
            return Some(format!("negative coordinate ({}, {})", self.x_min, self.y_min));
        }
        if self.x_min >= self.x_max {
            return Some(format!("zero or negative width (x_min {} >= x_max {})", self.x_min, self.x_max));
        }
        if self.y_min >= self.y_max {
            return Some(format!("zero or negative height (y_min {} >= y_max {})", self.y_min, self.y_max));
        }
        None
    }
}

/// A ground-truth box: lesion label plus geometry.
pub type GtBox = BoundingBox<LesionLabel>;

/// Patient sex, when the study metadata carries it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sex {
    M,
    F,
}

/// One radiograph: identity, study linkage, pixel dimensions and its
/// ground-truth boxes. An empty box list means "No finding".
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub study_id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<GtBox>,
    pub age: Option<u32>,
    pub sex: Option<Sex>,
}

impl ImageRecord {
    pub fn is_abnormal(&self) -> bool {
        !self.boxes.is_empty()
    }
}

/// Check every box invariant of a record: strictly positive area,
/// non-negative coordinates, containment in the image, and no "No finding"
/// label on a box. All violations are collected.
pub fn validate_record(record: &ImageRecord) -> Result<(), Vec<BoxViolation>> {
    let mut violations = Vec::new();
    for (index, b) in record.boxes.iter().enumerate() {
        if let Some(reason) = b.geometry_violation() {
            violations.push(BoxViolation { index, reason });
            continue;
        }
        if b.label == LesionLabel::NoFinding {
            violations.push(BoxViolation {
                index,
                reason: "\"No finding\" never appears on a bounding box".to_string(),
            });
        }
        if b.x_max > f64::from(record.width) || b.y_max > f64::from(record.height) {
            violations.push(BoxViolation {
                index,
                reason: format!(
                    "box ({}, {}, {}, {}) exceeds image bounds {}x{}",
                    b.x_min, b.y_min, b.x_max, b.y_max, record.width, record.height
                ),
            });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// A validated collection of image records with a study index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    records: Vec<ImageRecord>,
    by_id: BTreeMap<String, usize>,
}

impl GroundTruthSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a record, rejecting duplicate image ids.
    pub fn push(&mut self, record: ImageRecord) -> Result<(), ModelError> {
        if self.by_id.contains_key(&record.image_id) {
            return Err(ModelError::DuplicateImageId(record.image_id));
        }
        self.by_id.insert(record.image_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Records in insertion (file) order.
    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.by_id.get(image_id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.by_id.contains_key(image_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// study_id -> images of that study, in insertion order.
    pub fn studies(&self) -> BTreeMap<&str, Vec<&ImageRecord>> {
        let mut map: BTreeMap<&str, Vec<&ImageRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.study_id.as_str()).or_default().push(r);
        }
        map
    }
}

/// A detector output: one box with a detection-vocabulary label and a
/// confidence score, tied to an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox<DetectionLabel>,
    pub confidence: f64,
}

/// A classification cutoff together with the sensitivity/specificity it
/// induces and the resulting Youden index J = q + r - 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub cutoff: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub youden: f64,
}

impl OperatingPoint {
    pub fn new(cutoff: f64, sensitivity: f64, specificity: f64) -> Self {
        OperatingPoint {
            cutoff,
            sensitivity,
            specificity,
            youden: sensitivity + specificity - 1.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_label_identity_and_casefold() {
        assert_eq!(LesionLabel::parse("Osteophytes").unwrap(), LesionLabel::Osteophytes);
        assert_eq!(LesionLabel::parse("no finding").unwrap(), LesionLabel::NoFinding);
        assert_eq!(LesionLabel::parse("  Fracture ").unwrap(), LesionLabel::Fracture);
        assert_eq!(
            LesionLabel::parse("Osteophyte"),
            Err(ModelError::UnknownLabel("Osteophyte".to_string()))
        );
    }

    #[test]
    fn parse_roundtrips_all_canonical_names() {
        for label in LesionLabel::ALL {
            assert_eq!(LesionLabel::parse(label.name()).unwrap(), label);
        }
        for label in DetectionLabel::ALL {
            assert_eq!(DetectionLabel::parse(label.name()).unwrap(), label);
        }
    }

    #[test]
    fn remap_covers_all_abnormal_labels() {
        for label in LesionLabel::ABNORMAL {
            let target = label.detection_target().unwrap();
            // idempotent on the 7-class vocabulary
            let back = LesionLabel::parse(target.name()).unwrap();
            assert_eq!(back.detection_target().unwrap(), target);
        }
        assert_eq!(
            LesionLabel::Fracture.detection_target().unwrap(),
            DetectionLabel::OtherLesions
        );
        assert_eq!(
            LesionLabel::Osteophytes.detection_target().unwrap(),
            DetectionLabel::Osteophytes
        );
        assert_eq!(
            LesionLabel::NoFinding.detection_target(),
            Err(ModelError::NoFindingNotMappable)
        );
    }

    #[test]
    fn detection_label_rejects_fracture() {
        assert!(DetectionLabel::parse("Fracture").is_err());
        assert_eq!(DetectionLabel::parse("other lesions").unwrap(), DetectionLabel::OtherLesions);
    }

    fn record_with_box(b: GtBox) -> ImageRecord {
        ImageRecord {
            image_id: "img".into(),
            study_id: "s".into(),
            width: 100,
            height: 100,
            boxes: vec![b],
            age: None,
            sex: None,
        }
    }

    #[test]
    fn validate_record_accepts_contained_box() {
        let b = BoundingBox::new(LesionLabel::Osteophytes, 0.0, 0.0, 10.0, 10.0).unwrap();
        assert!(validate_record(&record_with_box(b)).is_ok());
    }

    #[test]
    fn validate_record_rejects_zero_width() {
        let b = BoundingBox { label: LesionLabel::Osteophytes, x_min: 10.0, y_min: 10.0, x_max: 10.0, y_max: 20.0 };
        let violations = validate_record(&record_with_box(b)).unwrap_err();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].reason.contains("width"));
    }

    #[test]
    fn validate_record_rejects_out_of_bounds() {
        let b = BoundingBox { label: LesionLabel::Osteophytes, x_min: 0.0, y_min: 0.0, x_max: 150.0, y_max: 10.0 };
        let violations = validate_record(&record_with_box(b)).unwrap_err();
        assert!(violations[0].reason.contains("exceeds image bounds"));
    }

    #[test]
    fn validate_record_collects_every_violation() {
        let mut record = record_with_box(BoundingBox {
            label: LesionLabel::NoFinding,
            x_min: 0.0,
            y_min: 0.0,
            x_max: 10.0,
            y_max: 10.0,
        });
        record.boxes.push(BoundingBox {
            label: LesionLabel::Fracture,
            x_min: 5.0,
            y_min: 5.0,
            x_max: 5.0,
            y_max: 5.0,
        });
        let violations = validate_record(&record).unwrap_err();
        assert_eq!(violations.len(), 2);
    }

    #[test]
    fn ground_truth_set_rejects_duplicates() {
        let mut gt = GroundTruthSet::new();
        let r = record_with_box(BoundingBox::new(LesionLabel::Osteophytes, 0.0, 0.0, 1.0, 1.0).unwrap());
        gt.push(r.clone()).unwrap();
        assert_eq!(gt.push(r), Err(ModelError::DuplicateImageId("img".to_string())));
    }

    #[test]
    fn operating_point_holds_youden_identity() {
        let p = OperatingPoint::new(0.3, 0.8, 0.7);
        assert!((p.youden - (p.sensitivity + p.specificity - 1.0)).abs() < 1e-12);
    }
}
