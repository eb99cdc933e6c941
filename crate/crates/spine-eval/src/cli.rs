//! Command-line surface: `spine-eval <stats|split|eval-cls|eval-det|fuse>`.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input. Given identical
//! inputs and flags (seeds included) every command writes byte-identical
//! output; internal parallelism is bounded by `--threads` without affecting
//! results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use crate::bootstrap::{bootstrap_scores_ci, BootstrapEstimate};
use crate::classify::{auroc, confusion_at, ensemble_average, youden_optimal, LabeledScores};
use crate::dataset::{
    compute_stats, parse_annotations, parse_classifier_predictions, parse_detector_predictions,
    stratified_split, write_classifier_predictions, write_detector_predictions, Split,
};
use crate::detect::mean_ap;
use crate::fusion::{fuse_dataset, Direction, FusedPredictions, FusionConfig};
use crate::model::{DetectionLabel, GroundTruthSet};
use crate::report::{percent, percent_with_ci, Format, Table};

#[derive(Debug)]
pub enum CliError {
    /// Anything traceable to the inputs: missing files, malformed lines,
    /// mismatched image sets, out-of-range flags.
    BadInput(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::BadInput(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::BadInput(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

macro_rules! bad_input_from {
    ($($ty:ty),*) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::BadInput(e.to_string())
            }
        })*
    };
}
bad_input_from!(
    crate::dataset::DatasetError,
    crate::classify::ClassificationError,
    crate::detect::DetectionError,
    crate::fusion::FusionError,
    crate::bootstrap::BootstrapError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "spine-eval", version, about = "Evaluation harness for spine X-ray classifiers and lesion detectors")]
pub struct Cli {
    /// Worker threads for bootstrap resampling and per-image matching
    /// (default: available parallelism). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy)]
enum CutoffArg {
    Auto,
    Value(f64),
}

impl FromStr for CutoffArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(CutoffArg::Auto);
        }
        let v: f64 = s.parse().map_err(|_| format!("expected a float or \"auto\", got {s:?}"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("cutoff {v} outside [0, 1]"));
        }
        Ok(CutoffArg::Value(v))
    }
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Report format.
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dataset characteristics: image/study counts and per-label box counts.
    Stats {
        /// Ground-truth annotations (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Study-level stratified train/test split.
    Split {
        #[arg(long)]
        annotations: PathBuf,
        /// Fraction of studies assigned to train, in (0, 1].
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Destination for the `study_id,split` CSV (default stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classification report: AUROC/sensitivity/specificity/F1 with
    /// bootstrap CIs, one row per prediction file plus an ensemble row.
    EvalCls {
        #[arg(long)]
        annotations: PathBuf,
        /// Classifier prediction file (repeatable; multiple files are also
        /// averaged into an "Ensemble" row).
        #[arg(long = "preds", required = true)]
        preds: Vec<PathBuf>,
        /// Decision cutoff, a float in [0, 1] or "auto" for the
        /// Youden-optimal point of each row.
        #[arg(long, default_value = "auto")]
        cutoff: CutoffArg,
        /// Number of bootstrap resamples.
        #[arg(long, default_value_t = 10_000)]
        bootstrap: u32,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Abort when predictions cover images absent from the annotations;
        /// pass --strict=false to ignore them with a warning.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        strict: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Detection report: per-class AP (LT columns) and mAP at the IoU
    /// threshold.
    EvalDet {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long = "det-preds")]
        det_preds: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        strict: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Combine classifier and detector outputs; the fused file is readable
    /// by eval-det (gate) or eval-cls (boost).
    Fuse {
        #[arg(long = "cls-preds")]
        cls_preds: PathBuf,
        #[arg(long = "det-preds")]
        det_preds: PathBuf,
        /// Classifier operating cutoff c*.
        #[arg(long)]
        cutoff: f64,
        /// Confidence floor for boxes on below-cutoff images.
        #[arg(long, default_value_t = 0.5)]
        floor: f64,
        /// "gate" filters detections by the classifier score; "boost"
        /// averages the classifier score with the best box confidence.
        #[arg(long, value_parser = Direction::from_str)]
        direction: Direction,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn main() -> i32 {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore the error when a pool already exists (tests call this twice)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Stats { annotations, output } => cmd_stats(&annotations, &output),
        Command::Split { annotations, fraction, seed, out } => {
            cmd_split(&annotations, fraction, seed, out.as_deref())
        }
        Command::EvalCls { annotations, preds, cutoff, bootstrap, alpha, seed, strict, output } => {
            cmd_eval_cls(&annotations, &preds, cutoff, bootstrap, alpha, seed, strict, &output)
        }
        Command::EvalDet { annotations, det_preds, iou, strict, output } => {
            cmd_eval_det(&annotations, &det_preds, iou, strict, &output)
        }
        Command::Fuse { cls_preds, det_preds, cutoff, floor, direction, out } => {
            cmd_fuse(&cls_preds, &det_preds, cutoff, floor, direction, out.as_deref())
        }
    }
}

fn write_output(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut f = File::create(path)
                .map_err(|e| CliError::BadInput(format!("{}: {e}", path.display())))?;
            f.write_all(content.as_bytes())?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn cmd_stats(annotations: &Path, output: &OutputArgs) -> Result<(), CliError> {
    let gt = parse_annotations(annotations)?;
    let stats = compute_stats(&gt);
    let content = match output.format {
        Format::Json => serde_json::to_string_pretty(&stats).map_err(|e| CliError::Internal(e.to_string()))? + "\n",
        Format::Csv | Format::Markdown => {
            let mut table = Table::new(vec!["Characteristic", "Value"]);
            table.push_row(vec!["Images".to_string(), stats.images.to_string()]);
            table.push_row(vec!["Studies".to_string(), stats.studies.to_string()]);
            table.push_row(vec!["Normal images".to_string(), stats.normal_images.to_string()]);
            table.push_row(vec!["Abnormal images".to_string(), stats.abnormal_images.to_string()]);
            for c in &stats.box_counts {
                table.push_row(vec![format!("{} boxes", c.label), c.boxes.to_string()]);
            }
            table.push_row(vec!["Total boxes".to_string(), stats.total_boxes.to_string()]);
            if let Some(mean_age) = stats.mean_age {
                table.push_row(vec![
                    format!("Mean age ({} images)", stats.images_with_age),
                    format!("{mean_age:.1}"),
                ]);
            }
            if stats.male_images + stats.female_images > 0 {
                table.push_row(vec!["Male images".to_string(), stats.male_images.to_string()]);
                table.push_row(vec!["Female images".to_string(), stats.female_images.to_string()]);
            }
            match output.format {
                Format::Csv => table.to_csv(),
                _ => table.to_markdown(),
            }
        }
    };
    write_output(output.out.as_deref(), &content)
}

fn cmd_split(
    annotations: &Path,
    fraction: f64,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let gt = parse_annotations(annotations)?;
    let assignment = stratified_split(&gt, fraction, seed)?;

    let mut csv = Vec::new();
    assignment.write_csv(&mut csv)?;
    let csv = String::from_utf8(csv).expect("csv is utf-8");
    write_output(out, &csv)?;

    // stratum balance summary
    let studies = gt.studies();
    let abnormal = |split: Option<Split>| {
        studies
            .iter()
            .filter(|(id, _)| split.map_or(true, |s| assignment.assignment[**id] == s))
            .filter(|(_, images)| images.iter().any(|r| r.is_abnormal()))
            .count()
    };
    let count = |split: Split| assignment.assignment.values().filter(|&&s| s == split).count();
    let (n_train, n_test) = (count(Split::Train), count(Split::Test));
    let frac = |abn: usize, n: usize| if n == 0 { 0.0 } else { abn as f64 / n as f64 };
    eprintln!(
        "split: {} studies -> {} train / {} test (seed {seed}, fraction {fraction})",
        studies.len(),
        n_train,
        n_test,
    );
    eprintln!(
        "abnormal studies: all {:.4}, train {:.4}, test {:.4}",
        frac(abnormal(None), studies.len()),
        frac(abnormal(Some(Split::Train)), n_train),
        frac(abnormal(Some(Split::Test)), n_test),
    );
    Ok(())
}

/// Restrict a score map to annotated images, honoring --strict for ids the
/// annotations do not cover.
fn restrict_to_gt(
    name: &str,
    scores: BTreeMap<String, f64>,
    gt: &GroundTruthSet,
    strict: bool,
) -> Result<BTreeMap<String, f64>, CliError> {
    let extras: Vec<&String> = scores.keys().filter(|id| !gt.contains(id)).collect();
    if extras.is_empty() {
        return Ok(scores);
    }
    if strict {
        return Err(CliError::BadInput(format!(
            "{name}: {} prediction(s) for images absent from the annotations (first: {:?}); \
             pass --strict=false to ignore them",
            extras.len(),
            extras[0]
        )));
    }
    eprintln!(
        "warning: {name}: ignoring {} prediction(s) for images absent from the annotations",
        extras.len()
    );
    Ok(scores.into_iter().filter(|(id, _)| gt.contains(id)).collect())
}

#[derive(Serialize)]
struct ClsRow {
    model: String,
    cutoff: f64,
    youden: f64,
    auroc: BootstrapEstimate,
    sensitivity: BootstrapEstimate,
    specificity: BootstrapEstimate,
    f1: BootstrapEstimate,
}

#[derive(Serialize)]
struct ClsReport {
    n_images: usize,
    n_resamples: u32,
    alpha: f64,
    seed: u64,
    rows: Vec<ClsRow>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval_cls(
    annotations: &Path,
    preds: &[PathBuf],
    cutoff: CutoffArg,
    n_resamples: u32,
    alpha: f64,
    seed: u64,
    strict: bool,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let gt = parse_annotations(annotations)?;
    let mut models: Vec<(String, BTreeMap<String, f64>)> = Vec::new();
    for path in preds {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let scores = restrict_to_gt(&name, parse_classifier_predictions(path)?, &gt, strict)?;
        models.push((name, scores));
    }
    if models.len() > 1 {
        let maps: Vec<BTreeMap<String, f64>> = models.iter().map(|(_, m)| m.clone()).collect();
        models.push(("Ensemble".to_string(), ensemble_average(&maps)?));
    }

    let mut rows = Vec::new();
    for (name, scores) in &models {
        let (data, _) = LabeledScores::join(&gt, scores)?;
        let point = match cutoff {
            CutoffArg::Value(c) => {
                let conf = confusion_at(&data, c)?;
                crate::model::OperatingPoint::new(c, conf.sensitivity, conf.specificity)
            }
            CutoffArg::Auto => {
                let p = youden_optimal(&data)?;
                eprintln!("{name}: Youden-optimal cutoff c* = {:.4} (J = {:.4})", p.cutoff, p.youden);
                p
            }
        };
        let c = point.cutoff;
        let auroc_est = bootstrap_scores_ci(|d| auroc(d).ok(), &data, n_resamples, alpha, seed)?;
        let sens_est = bootstrap_scores_ci(
            |d| confusion_at(d, c).ok().map(|x| x.sensitivity),
            &data,
            n_resamples,
            alpha,
            seed,
        )?;
        let spec_est = bootstrap_scores_ci(
            |d| confusion_at(d, c).ok().map(|x| x.specificity),
            &data,
            n_resamples,
            alpha,
            seed,
        )?;
        let f1_est = bootstrap_scores_ci(
            |d| confusion_at(d, c).ok().map(|x| x.f1),
            &data,
            n_resamples,
            alpha,
            seed,
        )?;
        rows.push(ClsRow {
            model: name.clone(),
            cutoff: c,
            youden: point.youden,
            auroc: auroc_est,
            sensitivity: sens_est,
            specificity: spec_est,
            f1: f1_est,
        });
    }

    let content = match output.format {
        Format::Json => {
            let report =
                ClsReport { n_images: gt.len(), n_resamples, alpha, seed, rows };
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
                + "\n"
        }
        Format::Csv | Format::Markdown => {
            let mut table =
                Table::new(vec!["Model", "Cutoff", "AUROC", "Sensitivity", "Specificity", "F1"]);
            for row in &rows {
                let ci = |e: &BootstrapEstimate| percent_with_ci(e.point, e.ci_low, e.ci_high);
                table.push_row(vec![
                    row.model.clone(),
                    format!("{:.4}", row.cutoff),
                    ci(&row.auroc),
                    ci(&row.sensitivity),
                    ci(&row.specificity),
                    ci(&row.f1),
                ]);
            }
            match output.format {
                Format::Csv => table.to_csv(),
                _ => table.to_markdown(),
            }
        }
    };
    write_output(output.out.as_deref(), &content)
}

#[derive(Serialize)]
struct DetReport {
    iou_threshold: f64,
    /// LT code -> AP, absent when the class has no ground-truth boxes.
    per_class: BTreeMap<String, f64>,
    map: f64,
}

fn cmd_eval_det(
    annotations: &Path,
    det_preds: &Path,
    iou: f64,
    strict: bool,
    output: &OutputArgs,
) -> Result<(), CliError> {
    let gt = parse_annotations(annotations)?;
    let mut detections = parse_detector_predictions(det_preds)?;
    let extras: Vec<String> =
        detections.keys().filter(|id| !gt.contains(id)).cloned().collect();
    if !extras.is_empty() {
        if strict {
            return Err(CliError::BadInput(format!(
                "{} detection line(s) for images absent from the annotations (first: {:?}); \
                 pass --strict=false to ignore them",
                extras.len(),
                extras[0]
            )));
        }
        eprintln!(
            "warning: ignoring {} detection line(s) for images absent from the annotations",
            extras.len()
        );
        for id in &extras {
            detections.remove(id);
        }
    }
    let report = mean_ap(&gt, &detections, iou)?;

    let content = match output.format {
        Format::Json => {
            let per_class = report
                .per_class
                .iter()
                .map(|(label, &ap)| (label.lt_code().to_string(), ap))
                .collect();
            let json = DetReport { iou_threshold: iou, per_class, map: report.map };
            serde_json::to_string_pretty(&json).map_err(|e| CliError::Internal(e.to_string()))?
                + "\n"
        }
        Format::Csv | Format::Markdown => {
            let mut headers: Vec<String> =
                DetectionLabel::ALL.iter().map(|l| l.lt_code().to_string()).collect();
            headers.push(format!("mAP@{iou}"));
            let mut table = Table::new(headers);
            let mut row: Vec<String> = DetectionLabel::ALL
                .iter()
                .map(|l| report.per_class.get(l).map_or("-".to_string(), |&ap| percent(ap)))
                .collect();
            row.push(percent(report.map));
            table.push_row(row);
            match output.format {
                Format::Csv => table.to_csv(),
                _ => table.to_markdown(),
            }
        }
    };
    write_output(output.out.as_deref(), &content)
}

fn cmd_fuse(
    cls_preds: &Path,
    det_preds: &Path,
    cutoff: f64,
    floor: f64,
    direction: Direction,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let scores = parse_classifier_predictions(cls_preds)?;
    let detections = parse_detector_predictions(det_preds)?;
    let config = FusionConfig::new(cutoff, floor)?;
    let fused = fuse_dataset(&scores, &detections, &config, direction)?;
    let mut buf = Vec::new();
    match &fused {
        FusedPredictions::Detections(d) => write_detector_predictions(d, &mut buf)?,
        FusedPredictions::Scores(s) => write_classifier_predictions(s, &mut buf)?,
    }
    write_output(out, &String::from_utf8(buf).expect("jsonl is utf-8"))
}
