//! Ground-truth and prediction file I/O, dataset statistics, and the
//! study-level stratified split.
//!
//! All files are JSONL (one object per line, UTF-8, LF). Schemas:
//!
//! ```text
//! annotations: {"image_id", "study_id", "width", "height",
//!               "boxes": [{"label", "x_min", "y_min", "x_max", "y_max"}],
//!               "age"?, "sex"?}
//! classifier predictions: {"image_id", "score"}
//! detector predictions:   {"image_id", "detections":
//!               [{"label", "confidence", "x_min", "y_min", "x_max", "y_max"}]}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    BoundingBox, BoxViolation, Detection, DetectionLabel, GroundTruthSet, ImageRecord,
    LesionLabel, Sex,
};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    MalformedJson { line: usize, message: String },
    #[error("line {line}: unknown label {raw:?}")]
    UnknownLabel { line: usize, raw: String },
    #[error("line {line}: invalid boxes: {}", format_violations(.violations))]
    InvalidBoxes { line: usize, violations: Vec<BoxViolation> },
    #[error("line {line}: duplicate image_id {image_id:?}")]
    DuplicateImageId { line: usize, image_id: String },
    #[error("line {line}: score {score} for {image_id:?} outside [0, 1]")]
    ScoreOutOfRange { line: usize, image_id: String, score: f64 },
    #[error("line {line}: confidence {confidence} for {image_id:?} outside [0, 1]")]
    ConfidenceOutOfRange { line: usize, image_id: String, confidence: f64 },
    #[error("dataset contains no studies")]
    EmptyDataset,
    #[error("train fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
}

fn format_violations(violations: &[BoxViolation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Wire structs

#[derive(Serialize, Deserialize)]
struct GtLine {
    image_id: String,
    study_id: String,
    width: u32,
    height: u32,
    boxes: Vec<GtBoxLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    age: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sex: Option<Sex>,
}

#[derive(Serialize, Deserialize)]
struct GtBoxLine {
    label: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

#[derive(Serialize, Deserialize)]
struct ClsLine {
    image_id: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct DetLine {
    image_id: String,
    detections: Vec<DetBoxLine>,
}

#[derive(Serialize, Deserialize)]
struct DetBoxLine {
    label: String,
    confidence: f64,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

// ---------------------------------------------------------------------------
// Parsing

/// Iterate non-empty lines with their 1-based line numbers.
fn lines_of<R: Read>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    BufReader::new(reader)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => !s.trim().is_empty(),
            Err(_) => true,
        })
}

pub fn parse_annotations(path: &Path) -> Result<GroundTruthSet, DatasetError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    parse_annotations_reader(file, path)
}

fn parse_annotations_reader<R: Read>(reader: R, path: &Path) -> Result<GroundTruthSet, DatasetError> {
    let mut gt = GroundTruthSet::new();
    for (line_no, line) in lines_of(reader) {
        let line = line.map_err(|e| io_err(path, e))?;
        let raw: GtLine = serde_json::from_str(&line)
            .map_err(|e| DatasetError::MalformedJson { line: line_no, message: e.to_string() })?;
        let mut boxes = Vec::with_capacity(raw.boxes.len());
        for b in &raw.boxes {
            let label = LesionLabel::parse(&b.label)
                .map_err(|_| DatasetError::UnknownLabel { line: line_no, raw: b.label.clone() })?;
            boxes.push(BoundingBox {
                label,
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            });
        }
        let record = ImageRecord {
            image_id: raw.image_id,
            study_id: raw.study_id,
            width: raw.width,
            height: raw.height,
            boxes,
            age: raw.age,
            sex: raw.sex,
        };
        crate::model::validate_record(&record)
            .map_err(|violations| DatasetError::InvalidBoxes { line: line_no, violations })?;
        gt.push(record).map_err(|e| match e {
            crate::model::ModelError::DuplicateImageId(id) => {
                DatasetError::DuplicateImageId { line: line_no, image_id: id }
            }
            other => DatasetError::MalformedJson { line: line_no, message: other.to_string() },
        })?;
    }
    Ok(gt)
}

pub fn parse_classifier_predictions(path: &Path) -> Result<BTreeMap<String, f64>, DatasetError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut scores = BTreeMap::new();
    for (line_no, line) in lines_of(file) {
        let line = line.map_err(|e| io_err(path, e))?;
        let raw: ClsLine = serde_json::from_str(&line)
            .map_err(|e| DatasetError::MalformedJson { line: line_no, message: e.to_string() })?;
        if !(0.0..=1.0).contains(&raw.score) || raw.score.is_nan() {
            return Err(DatasetError::ScoreOutOfRange {
                line: line_no,
                image_id: raw.image_id,
                score: raw.score,
            });
        }
        if scores.insert(raw.image_id.clone(), raw.score).is_some() {
            return Err(DatasetError::DuplicateImageId { line: line_no, image_id: raw.image_id });
        }
    }
    Ok(scores)
}

pub fn parse_detector_predictions(
    path: &Path,
) -> Result<BTreeMap<String, Vec<Detection>>, DatasetError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut detections: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (line_no, line) in lines_of(file) {
        let line = line.map_err(|e| io_err(path, e))?;
        let raw: DetLine = serde_json::from_str(&line)
            .map_err(|e| DatasetError::MalformedJson { line: line_no, message: e.to_string() })?;
        if detections.contains_key(&raw.image_id) {
            return Err(DatasetError::DuplicateImageId { line: line_no, image_id: raw.image_id });
        }
        let mut dets = Vec::with_capacity(raw.detections.len());
        let mut violations = Vec::new();
        for (index, d) in raw.detections.iter().enumerate() {
            let label = DetectionLabel::parse(&d.label)
                .map_err(|_| DatasetError::UnknownLabel { line: line_no, raw: d.label.clone() })?;
            if !(0.0..=1.0).contains(&d.confidence) || d.confidence.is_nan() {
                return Err(DatasetError::ConfidenceOutOfRange {
                    line: line_no,
                    image_id: raw.image_id,
                    confidence: d.confidence,
                });
            }
            let bbox = BoundingBox {
                label,
                x_min: d.x_min,
                y_min: d.y_min,
                x_max: d.x_max,
                y_max: d.y_max,
            };
            if let Some(reason) = bbox.geometry_violation() {
                violations.push(BoxViolation { index, reason });
                continue;
            }
            dets.push(Detection { image_id: raw.image_id.clone(), bbox, confidence: d.confidence });
        }
        if !violations.is_empty() {
            return Err(DatasetError::InvalidBoxes { line: line_no, violations });
        }
        detections.insert(raw.image_id, dets);
    }
    Ok(detections)
}

// ---------------------------------------------------------------------------
// Serialization

pub fn write_annotations<W: Write>(gt: &GroundTruthSet, mut w: W) -> std::io::Result<()> {
    for r in gt.records() {
        let line = GtLine {
            image_id: r.image_id.clone(),
            study_id: r.study_id.clone(),
            width: r.width,
            height: r.height,
            boxes: r
                .boxes
                .iter()
                .map(|b| GtBoxLine {
                    label: b.label.name().to_string(),
                    x_min: b.x_min,
                    y_min: b.y_min,
                    x_max: b.x_max,
                    y_max: b.y_max,
                })
                .collect(),
            age: r.age,
            sex: r.sex,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_classifier_predictions<W: Write>(
    scores: &BTreeMap<String, f64>,
    mut w: W,
) -> std::io::Result<()> {
    for (image_id, &score) in scores {
        serde_json::to_writer(&mut w, &ClsLine { image_id: image_id.clone(), score })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_detector_predictions<W: Write>(
    detections: &BTreeMap<String, Vec<Detection>>,
    mut w: W,
) -> std::io::Result<()> {
    for (image_id, dets) in detections {
        let line = DetLine {
            image_id: image_id.clone(),
            detections: dets
                .iter()
                .map(|d| DetBoxLine {
                    label: d.bbox.label.name().to_string(),
                    confidence: d.confidence,
                    x_min: d.bbox.x_min,
                    y_min: d.bbox.y_min,
                    x_max: d.bbox.x_max,
                    y_max: d.bbox.y_max,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Statistics

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LabelBoxCount {
    pub label: LesionLabel,
    pub boxes: usize,
}

/// Dataset characteristics: image/study counts, normal vs abnormal
/// prevalence, and per-label box counts. Demographics are summarized only
/// where the optional age/sex fields are present.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StatsReport {
    pub images: usize,
    pub studies: usize,
    pub normal_images: usize,
    pub abnormal_images: usize,
    pub total_boxes: usize,
    pub box_counts: Vec<LabelBoxCount>,
    pub images_with_age: usize,
    pub mean_age: Option<f64>,
    pub male_images: usize,
    pub female_images: usize,
}

pub fn compute_stats(gt: &GroundTruthSet) -> StatsReport {
    let mut per_label: BTreeMap<LesionLabel, usize> = BTreeMap::new();
    let mut normal = 0usize;
    let mut age_sum = 0u64;
    let mut with_age = 0usize;
    let mut male = 0usize;
    let mut female = 0usize;
    for r in gt.records() {
        if r.is_abnormal() {
            for b in &r.boxes {
                *per_label.entry(b.label).or_insert(0) += 1;
            }
        } else {
            normal += 1;
        }
        if let Some(age) = r.age {
            with_age += 1;
            age_sum += u64::from(age);
        }
        match r.sex {
            Some(Sex::M) => male += 1,
            Some(Sex::F) => female += 1,
            None => {}
        }
    }
    let box_counts: Vec<LabelBoxCount> = LesionLabel::ABNORMAL
        .into_iter()
        .map(|label| LabelBoxCount { label, boxes: per_label.get(&label).copied().unwrap_or(0) })
        .collect();
    StatsReport {
        images: gt.len(),
        studies: gt.studies().len(),
        normal_images: normal,
        abnormal_images: gt.len() - normal,
        total_boxes: box_counts.iter().map(|c| c.boxes).sum(),
        box_counts,
        images_with_age: with_age,
        mean_age: (with_age > 0).then(|| age_sum as f64 / with_age as f64),
        male_images: male,
        female_images: female,
    }
}

// ---------------------------------------------------------------------------
// Stratified split

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Study-level train/test assignment, reproducible from (input, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub seed: u64,
    pub train_fraction: f64,
}

impl SplitAssignment {
    pub fn train_count(&self) -> usize {
        self.assignment.values().filter(|&&s| s == Split::Train).count()
    }

    pub fn test_count(&self) -> usize {
        self.assignment.values().filter(|&&s| s == Split::Test).count()
    }

    /// Two-column CSV `study_id,split` with header, rows in study_id order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"study_id,split\n")?;
        for (study_id, split) in &self.assignment {
            writeln!(w, "{},{}", study_id, split.as_str())?;
        }
        Ok(())
    }
}

/// Split at study level, stratified on study abnormality (a study is
/// abnormal if any of its images is abnormal).
pub fn stratified_split(
    gt: &GroundTruthSet,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    stratified_split_by(gt, train_fraction, seed, |images| {
        images.iter().any(|r| r.is_abnormal())
    })
}

/// Split at study level with a caller-supplied stratum function, so that
/// stratification variables other than abnormality can be reproduced.
///
/// Within each stratum, study ids are sorted lexicographically and then
/// Fisher-Yates shuffled with a ChaCha stream seeded from `seed`, so the
/// assignment is independent of input line order and platform. Train sizes
/// use floor quotas per stratum with largest-remainder rounding so that the
/// total train count is exactly floor(n_studies * train_fraction).
pub fn stratified_split_by<K, F>(
    gt: &GroundTruthSet,
    train_fraction: f64,
    seed: u64,
    stratum_of: F,
) -> Result<SplitAssignment, DatasetError>
where
    K: Ord,
    F: Fn(&[&ImageRecord]) -> K,
{
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let studies = gt.studies();
    if studies.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut strata: BTreeMap<K, Vec<&str>> = BTreeMap::new();
    for (study_id, images) in &studies {
        strata.entry(stratum_of(images)).or_default().push(study_id);
    }
    let total = studies.len();
    let train_total = (total as f64 * train_fraction).floor() as usize;

    // Per-stratum floor quotas, then largest fractional remainder gets the
    // leftover train slots (ties by stratum order).
    let sizes: Vec<usize> = strata.values().map(|s| s.len()).collect();
    let quotas: Vec<f64> = sizes.iter().map(|&n| n as f64 * train_fraction).collect();
    let mut train_counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = train_counts.iter().sum();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(train_total.saturating_sub(assigned)) {
        // a stratum never receives more train slots than it has studies
        debug_assert!(train_counts[i] < sizes[i]);
        train_counts[i] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for (stratum_idx, ids) in strata.values().enumerate() {
        let mut ids: Vec<&str> = ids.clone();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < train_counts[stratum_idx] { Split::Train } else { Split::Test };
            assignment.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment { assignment, seed, train_fraction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse_str(s: &str) -> Result<GroundTruthSet, DatasetError> {
        parse_annotations_reader(Cursor::new(s.as_bytes()), Path::new("<test>"))
    }

    const TWO_LINES: &str = concat!(
        r#"{"image_id":"a","study_id":"s1","width":100,"height":100,"boxes":[{"label":"Osteophytes","x_min":0,"y_min":0,"x_max":10,"y_max":10}]}"#,
        "\n",
        r#"{"image_id":"b","study_id":"s1","width":50,"height":50,"boxes":[]}"#,
        "\n",
    );

    #[test]
    fn parses_valid_annotations() {
        let gt = parse_str(TWO_LINES).unwrap();
        assert_eq!(gt.len(), 2);
        assert!(gt.get("a").unwrap().is_abnormal());
        assert!(!gt.get("b").unwrap().is_abnormal());
    }

    #[test]
    fn rejects_inverted_box_with_line_number() {
        let bad = r#"{"image_id":"a","study_id":"s","width":100,"height":100,"boxes":[{"label":"Fracture","x_min":20,"y_min":0,"x_max":10,"y_max":10}]}"#;
        match parse_str(bad).unwrap_err() {
            DatasetError::InvalidBoxes { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_image_id() {
        let dup = format!("{0}{0}", r#"{"image_id":"a","study_id":"s","width":10,"height":10,"boxes":[]}"#.to_owned() + "\n");
        match parse_str(&dup).unwrap_err() {
            DatasetError::DuplicateImageId { line, image_id } => {
                assert_eq!(line, 2);
                assert_eq!(image_id, "a");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn annotation_roundtrip_is_exact() {
        let gt = parse_str(TWO_LINES).unwrap();
        let mut buf = Vec::new();
        write_annotations(&gt, &mut buf).unwrap();
        let reparsed =
            parse_annotations_reader(Cursor::new(&buf), Path::new("<roundtrip>")).unwrap();
        assert_eq!(gt, reparsed);
    }

    #[test]
    fn stats_on_empty_set_are_zero() {
        let stats = compute_stats(&GroundTruthSet::new());
        assert_eq!(stats.images, 0);
        assert_eq!(stats.studies, 0);
        assert_eq!(stats.total_boxes, 0);
        assert!(stats.box_counts.iter().all(|c| c.boxes == 0));
    }

    #[test]
    fn stats_count_labels_and_normals() {
        let gt = parse_str(TWO_LINES).unwrap();
        let stats = compute_stats(&gt);
        assert_eq!(stats.images, 2);
        assert_eq!(stats.studies, 1);
        assert_eq!(stats.normal_images, 1);
        assert_eq!(stats.abnormal_images, 1);
        let osteo = stats
            .box_counts
            .iter()
            .find(|c| c.label == LesionLabel::Osteophytes)
            .unwrap();
        assert_eq!(osteo.boxes, 1);
        assert_eq!(stats.total_boxes, 1);
    }

    fn synthetic_gt(n_studies: usize, abnormal_every: usize) -> GroundTruthSet {
        let mut gt = GroundTruthSet::new();
        for i in 0..n_studies {
            let abnormal = i % abnormal_every == 0;
            let boxes = if abnormal {
                vec![BoundingBox::new(LesionLabel::Osteophytes, 0.0, 0.0, 5.0, 5.0).unwrap()]
            } else {
                vec![]
            };
            gt.push(ImageRecord {
                image_id: format!("img{i:05}"),
                study_id: format!("study{i:05}"),
                width: 100,
                height: 100,
                boxes,
                age: None,
                sex: None,
            })
            .unwrap();
        }
        gt
    }

    #[test]
    fn split_is_deterministic_and_exact() {
        let gt = synthetic_gt(5000, 3);
        let a = stratified_split(&gt, 0.8, 42).unwrap();
        let b = stratified_split(&gt, 0.8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train_count(), 4000);
        assert_eq!(a.test_count(), 1000);
        let c = stratified_split(&gt, 0.8, 43).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn split_fraction_one_puts_everything_in_train() {
        let gt = synthetic_gt(10, 2);
        let s = stratified_split(&gt, 1.0, 0).unwrap();
        assert_eq!(s.train_count(), 10);
        assert_eq!(s.test_count(), 0);
    }

    #[test]
    fn split_rejects_bad_inputs() {
        let gt = synthetic_gt(10, 2);
        assert!(matches!(stratified_split(&gt, 1.5, 0), Err(DatasetError::InvalidFraction(_))));
        assert!(matches!(stratified_split(&gt, 0.0, 0), Err(DatasetError::InvalidFraction(_))));
        assert!(matches!(
            stratified_split(&GroundTruthSet::new(), 0.8, 0),
            Err(DatasetError::EmptyDataset)
        ));
    }

    #[test]
    fn split_independent_of_record_order() {
        let gt = synthetic_gt(100, 4);
        let mut reversed = GroundTruthSet::new();
        for r in gt.records().iter().rev() {
            reversed.push(r.clone()).unwrap();
        }
        let a = stratified_split(&gt, 0.8, 7).unwrap();
        let b = stratified_split(&reversed, 0.8, 7).unwrap();
        assert_eq!(a.assignment, b.assignment);
    }

    #[test]
    fn score_parsing_rejects_out_of_range_and_duplicates() {
        let dir = std::env::temp_dir();
        let p = dir.join("spine_eval_cls_test.jsonl");
        std::fs::write(&p, "{\"image_id\":\"a\",\"score\":1.2}\n").unwrap();
        assert!(matches!(
            parse_classifier_predictions(&p),
            Err(DatasetError::ScoreOutOfRange { .. })
        ));
        std::fs::write(&p, "{\"image_id\":\"a\",\"score\":0.5}\n{\"image_id\":\"a\",\"score\":0.4}\n")
            .unwrap();
        assert!(matches!(
            parse_classifier_predictions(&p),
            Err(DatasetError::DuplicateImageId { .. })
        ));
        std::fs::remove_file(&p).ok();
    }

    #[test]
    fn detector_parsing_rejects_non_detection_labels() {
        let dir = std::env::temp_dir();
        let p = dir.join("spine_eval_det_test.jsonl");
        std::fs::write(
            &p,
            "{\"image_id\":\"a\",\"detections\":[{\"label\":\"Fracture\",\"confidence\":0.5,\"x_min\":0,\"y_min\":0,\"x_max\":1,\"y_max\":1}]}\n",
        )
        .unwrap();
        assert!(matches!(parse_detector_predictions(&p), Err(DatasetError::UnknownLabel { .. })));
        std::fs::remove_file(&p).ok();
    }
}
