//! ROC analysis of a synthetic abnormality classifier: AUROC with a
//! bootstrap CI, the Youden-optimal operating point, and the confusion
//! metrics it induces.
//!
//! Run with: cargo run --example classifier_metrics

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spine_eval::bootstrap::bootstrap_scores_ci;
use spine_eval::classify::{auroc, confusion_at, youden_optimal, LabeledScores};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // abnormal images score higher on average
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut items = Vec::new();
    for _ in 0..500 {
        items.push((true, rng.gen::<f64>().max(rng.gen::<f64>())));
        items.push((false, rng.gen::<f64>() * rng.gen::<f64>()));
    }
    let data = LabeledScores::from_pairs(items)?;

    println!("AUROC: {:.4}", auroc(&data)?);

    let est = bootstrap_scores_ci(|d| auroc(d).ok(), &data, 10_000, 0.05, 0)?;
    println!(
        "AUROC with 95% bootstrap CI: {:.4} ({:.4}, {:.4}), {} resamples, {} skipped",
        est.point, est.ci_low, est.ci_high, est.n_resamples, est.skipped
    );

    let opt = youden_optimal(&data)?;
    println!(
        "Youden-optimal cutoff c* = {:.4} (J = {:.4}, sensitivity {:.4}, specificity {:.4})",
        opt.cutoff, opt.youden, opt.sensitivity, opt.specificity
    );

    let conf = confusion_at(&data, opt.cutoff)?;
    println!(
        "at c*: TP {} FP {} TN {} FN {}, F1 {:.4}",
        conf.tp, conf.fp, conf.tn, conf.fn_, conf.f1
    );
    Ok(())
}
