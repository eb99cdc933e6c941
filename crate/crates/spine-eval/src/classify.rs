//! ROC analysis for the normal-vs-abnormal task: curve construction, AUROC,
//! threshold-dependent confusion metrics, the Youden-optimal operating point,
//! and score ensembling.
//!
//! The decision rule throughout is non-strict: an image is predicted
//! abnormal iff its score is >= the cutoff, so a published cutoff can be
//! applied verbatim.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{GroundTruthSet, OperatingPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassificationError {
    #[error("no scores supplied")]
    Empty,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("metric undefined with a single class only")]
    SingleClassOnly,
    #[error("ensemble inputs cover different image sets")]
    MismatchedImageSets,
    #[error("ensemble of zero models")]
    EmptyEnsemble,
    #[error("no prediction score for annotated image {0:?}")]
    MissingScore(String),
}

/// Binary labels (true = abnormal) paired with scores in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    items: Vec<(bool, f64)>,
}

impl LabeledScores {
    pub fn from_pairs(items: Vec<(bool, f64)>) -> Result<Self, ClassificationError> {
        if items.is_empty() {
            return Err(ClassificationError::Empty);
        }
        for &(_, s) in &items {
            if !(0.0..=1.0).contains(&s) || s.is_nan() {
                return Err(ClassificationError::ScoreOutOfRange(s));
            }
        }
        Ok(LabeledScores { items })
    }

    /// Used by the bootstrap: resampled items are drawn from an already
    /// validated instance, so range checks are skipped (a resample may
    /// still be single-class; the metrics report that themselves).
    pub(crate) fn from_pairs_unchecked(items: Vec<(bool, f64)>) -> Self {
        LabeledScores { items }
    }

    /// Join ground truth with a score map, in ground-truth record order.
    /// Every annotated image must have a score; ids present only in the
    /// score map are returned for the caller to warn about or reject.
    pub fn join(
        gt: &GroundTruthSet,
        scores: &BTreeMap<String, f64>,
    ) -> Result<(Self, Vec<String>), ClassificationError> {
        let mut items = Vec::with_capacity(gt.len());
        for r in gt.records() {
            let score = scores
                .get(&r.image_id)
                .copied()
                .ok_or_else(|| ClassificationError::MissingScore(r.image_id.clone()))?;
            items.push((r.is_abnormal(), score));
        }
        let extras = scores.keys().filter(|id| !gt.contains(id)).cloned().collect();
        Ok((Self::from_pairs(items)?, extras))
    }

    pub fn items(&self) -> &[(bool, f64)] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|(l, _)| *l).count()
    }

    pub fn negatives(&self) -> usize {
        self.items.len() - self.positives()
    }

    fn require_both_classes(&self) -> Result<(usize, usize), ClassificationError> {
        let p = self.positives();
        let n = self.len() - p;
        if p == 0 || n == 0 {
            return Err(ClassificationError::SingleClassOnly);
        }
        Ok((p, n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// The cutoff inducing this vertex under the >= rule; +inf at (0, 0).
    pub threshold: f64,
}

/// ROC curve vertices from (0,0) to (1,1), thresholds descending. Tied
/// scores collapse to a single vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc_curve(data: &LabeledScores) -> Result<RocCurve, ClassificationError> {
    let (pos, neg) = data.require_both_classes()?;
    let mut sorted: Vec<(bool, f64)> = data.items().to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].1;
        while i < sorted.len() && sorted[i].1 == threshold {
            if sorted[i].0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the ROC curve; with tied scores collapsed this
/// equals the Mann-Whitney concordance probability with ties counted 1/2.
pub fn auroc(data: &LabeledScores) -> Result<f64, ClassificationError> {
    let curve = roc_curve(data)?;
    let mut area = 0.0;
    for pair in curve.points.windows(2) {
        area += (pair[1].fpr - pair[0].fpr) * (pair[1].tpr + pair[0].tpr) / 2.0;
    }
    Ok(area)
}

/// Confusion counts and derived metrics at a fixed cutoff (>= rule).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
}

pub fn confusion_at(data: &LabeledScores, cutoff: f64) -> Result<Confusion, ClassificationError> {
    data.require_both_classes()?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for &(label, score) in data.items() {
        match (label, score >= cutoff) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let sensitivity = tp as f64 / (tp + fn_) as f64;
    let specificity = tn as f64 / (tn + fp) as f64;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    Ok(Confusion { tp, fp, tn, fn_, sensitivity, specificity, precision, f1 })
}

/// The cutoff maximizing Youden's J = sensitivity + specificity - 1, swept
/// over the distinct observed scores plus a +inf sentinel. Ties on J go to
/// the smallest cutoff, which maximizes sensitivity at equal J.
pub fn youden_optimal(data: &LabeledScores) -> Result<OperatingPoint, ClassificationError> {
    let (pos, neg) = data.require_both_classes()?;
    let mut sorted: Vec<(bool, f64)> = data.items().to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());

    // sweep candidates from the +inf sentinel down through the distinct
    // scores, keeping integer confusion counts so J matches a direct
    // per-cutoff evaluation bit for bit
    let point = |cutoff: f64, tp: usize, fp: usize| {
        OperatingPoint::new(cutoff, tp as f64 / pos as f64, (neg - fp) as f64 / neg as f64)
    };
    let mut best = point(f64::INFINITY, 0, 0);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let cutoff = sorted[i].1;
        while i < sorted.len() && sorted[i].1 == cutoff {
            if sorted[i].0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let candidate = point(cutoff, tp, fp);
        // equal J: later candidates carry smaller cutoffs, so replace
        if candidate.youden >= best.youden {
            best = candidate;
        }
    }
    Ok(best)
}

/// Per-image unweighted arithmetic mean over an ensemble of score maps.
pub fn ensemble_average(
    per_model_scores: &[BTreeMap<String, f64>],
) -> Result<BTreeMap<String, f64>, ClassificationError> {
    let first = per_model_scores.first().ok_or(ClassificationError::EmptyEnsemble)?;
    for other in &per_model_scores[1..] {
        if other.len() != first.len() || !other.keys().eq(first.keys()) {
            return Err(ClassificationError::MismatchedImageSets);
        }
    }
    let n = per_model_scores.len() as f64;
    let mut out = BTreeMap::new();
    for id in first.keys() {
        let sum: f64 = per_model_scores.iter().map(|m| m[id]).sum();
        out.insert(id.clone(), sum / n);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scores(pos: &[f64], neg: &[f64]) -> LabeledScores {
        let mut items: Vec<(bool, f64)> = pos.iter().map(|&s| (true, s)).collect();
        items.extend(neg.iter().map(|&s| (false, s)));
        LabeledScores::from_pairs(items).unwrap()
    }

    #[test]
    fn roc_perfect_separation() {
        let curve = roc_curve(&scores(&[0.9], &[0.1])).unwrap();
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn roc_total_ties_is_diagonal() {
        let curve = roc_curve(&scores(&[0.5, 0.5], &[0.5])).unwrap();
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auroc(&scores(&[0.5, 0.5], &[0.5])).unwrap(), 0.5);
    }

    #[test]
    fn roc_interior_step_has_five_vertices() {
        let curve = roc_curve(&scores(&[0.8, 0.4], &[0.6, 0.2])).unwrap();
        assert_eq!(curve.points.len(), 5);
    }

    #[test]
    fn auroc_values() {
        assert_eq!(auroc(&scores(&[0.9, 0.8], &[0.2, 0.1])).unwrap(), 1.0);
        // 3 concordant pairs of 4
        assert_eq!(auroc(&scores(&[0.8, 0.4], &[0.6, 0.2])).unwrap(), 0.75);
    }

    #[test]
    fn auroc_requires_both_classes() {
        let single = LabeledScores::from_pairs(vec![(true, 0.4), (true, 0.9)]).unwrap();
        assert_eq!(auroc(&single), Err(ClassificationError::SingleClassOnly));
    }

    #[test]
    fn confusion_hand_counted() {
        let data = LabeledScores::from_pairs(vec![
            (true, 0.9),
            (true, 0.3),
            (false, 0.6),
            (false, 0.1),
        ])
        .unwrap();
        let c = confusion_at(&data, 0.5).unwrap();
        assert_eq!((c.tp, c.fn_, c.fp, c.tn), (1, 1, 1, 1));
        assert_eq!(c.sensitivity, 0.5);
        assert_eq!(c.specificity, 0.5);
        assert_eq!(c.f1, 0.5);
    }

    #[test]
    fn confusion_boundary_cutoffs() {
        let data = scores(&[0.9, 0.3], &[0.6, 0.1]);
        let low = confusion_at(&data, 0.0).unwrap();
        assert_eq!((low.sensitivity, low.specificity), (1.0, 0.0));
        let high = confusion_at(&data, 0.95).unwrap();
        assert_eq!((high.sensitivity, high.specificity), (0.0, 1.0));
    }

    #[test]
    fn youden_on_separable_data() {
        let p = youden_optimal(&scores(&[0.9, 0.8], &[0.2, 0.1])).unwrap();
        assert_eq!(p.cutoff, 0.8);
        assert_eq!(p.youden, 1.0);
    }

    #[test]
    fn youden_requires_both_classes() {
        let single = LabeledScores::from_pairs(vec![(true, 0.4)]).unwrap();
        assert_eq!(youden_optimal(&single).unwrap_err(), ClassificationError::SingleClassOnly);
    }

    #[test]
    fn youden_tie_break_prefers_smallest_cutoff() {
        // cutoffs 0.9 and 0.5 both give J = 0.5; the smaller wins
        let data = scores(&[0.9, 0.5], &[0.7, 0.1]);
        let p = youden_optimal(&data).unwrap();
        assert_eq!(p.cutoff, 0.5);
        assert_eq!(p.sensitivity, 1.0);
    }

    #[test]
    fn ensemble_mean_and_errors() {
        let maps = vec![
            BTreeMap::from([("a".to_string(), 0.8)]),
            BTreeMap::from([("a".to_string(), 0.6)]),
            BTreeMap::from([("a".to_string(), 0.7)]),
        ];
        let avg = ensemble_average(&maps).unwrap();
        assert!((avg["a"] - 0.7).abs() < 1e-12);

        let single = ensemble_average(&maps[..1]).unwrap();
        assert_eq!(single["a"], 0.8);

        let mismatched = vec![
            BTreeMap::from([("a".to_string(), 0.8)]),
            BTreeMap::from([("b".to_string(), 0.6)]),
        ];
        assert_eq!(
            ensemble_average(&mismatched),
            Err(ClassificationError::MismatchedImageSets)
        );
        assert_eq!(ensemble_average(&[]), Err(ClassificationError::EmptyEnsemble));
    }

    fn arb_scores() -> impl Strategy<Value = LabeledScores> {
        // small score grid forces plenty of ties
        (
            prop::collection::vec((0u8..=10).prop_map(|v| f64::from(v) / 10.0), 1..40),
            prop::collection::vec((0u8..=10).prop_map(|v| f64::from(v) / 10.0), 1..40),
        )
            .prop_map(|(pos, neg)| scores(&pos, &neg))
    }

    proptest! {
        #[test]
        fn auroc_label_flip_symmetry(data in arb_scores()) {
            let flipped = LabeledScores::from_pairs(
                data.items().iter().map(|&(l, s)| (!l, s)).collect(),
            ).unwrap();
            let a = auroc(&data).unwrap();
            let b = auroc(&flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(data in arb_scores()) {
            // x -> x/2 + x^2/4 is strictly increasing on [0,1] and stays in [0,1]
            let transformed = LabeledScores::from_pairs(
                data.items().iter().map(|&(l, s)| (l, s / 2.0 + s * s / 4.0)).collect(),
            ).unwrap();
            let a = auroc(&data).unwrap();
            let b = auroc(&transformed).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn sensitivity_specificity_monotone_in_cutoff(data in arb_scores()) {
            let cutoffs: Vec<f64> = (0..=10).map(|i| f64::from(i) / 10.0).collect();
            let mut prev: Option<Confusion> = None;
            for &c in &cutoffs {
                let cur = confusion_at(&data, c).unwrap();
                if let Some(p) = prev {
                    prop_assert!(cur.sensitivity <= p.sensitivity + 1e-12);
                    prop_assert!(cur.specificity >= p.specificity - 1e-12);
                }
                prev = Some(cur);
            }
        }

        #[test]
        fn youden_dominates_every_candidate(data in arb_scores()) {
            let best = youden_optimal(&data).unwrap();
            let mut candidates: Vec<f64> =
                data.items().iter().map(|&(_, s)| s).collect();
            candidates.push(f64::INFINITY);
            for c in candidates {
                let conf = confusion_at(&data, c).unwrap();
                prop_assert!(best.youden >= conf.sensitivity + conf.specificity - 1.0 - 1e-12);
            }
        }

        #[test]
        fn ensemble_output_bounded_by_inputs(
            values in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..20)
        ) {
            let mut maps = vec![BTreeMap::new(), BTreeMap::new(), BTreeMap::new()];
            for (i, &(a, b, c)) in values.iter().enumerate() {
                let id = format!("img{i}");
                maps[0].insert(id.clone(), a);
                maps[1].insert(id.clone(), b);
                maps[2].insert(id, c);
            }
            let avg = ensemble_average(&maps).unwrap();
            for (id, &v) in &avg {
                let vals = [maps[0][id], maps[1][id], maps[2][id]];
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
