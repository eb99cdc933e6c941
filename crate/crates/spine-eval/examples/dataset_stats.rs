//! Build a small synthetic annotation file, parse it back, and print the
//! dataset characteristics table.
//!
//! Run with: cargo run --example dataset_stats

use spine_eval::dataset::{compute_stats, parse_annotations, write_annotations};
use spine_eval::model::{BoundingBox, GroundTruthSet, ImageRecord, LesionLabel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut gt = GroundTruthSet::new();
    for i in 0..20 {
        let abnormal = i % 2 == 0;
        let boxes = if abnormal {
            vec![
                BoundingBox::new(LesionLabel::Osteophytes, 10.0, 10.0, 60.0, 60.0)?,
                BoundingBox::new(LesionLabel::Fracture, 70.0, 70.0, 90.0, 95.0)?,
            ]
        } else {
            vec![]
        };
        gt.push(ImageRecord {
            image_id: format!("img{i:02}"),
            study_id: format!("study{:02}", i / 2),
            width: 512,
            height: 1024,
            boxes,
            age: Some(40 + i),
            sex: None,
        })?;
    }

    // round-trip through the JSONL schema
    let path = std::env::temp_dir().join("spine_eval_example_annotations.jsonl");
    write_annotations(&gt, std::fs::File::create(&path)?)?;
    let reparsed = parse_annotations(&path)?;
    assert_eq!(gt, reparsed);
    println!("wrote and reparsed {}", path.display());

    let stats = compute_stats(&reparsed);
    println!("images:   {}", stats.images);
    println!("studies:  {}", stats.studies);
    println!("normal:   {}", stats.normal_images);
    println!("abnormal: {}", stats.abnormal_images);
    for c in &stats.box_counts {
        if c.boxes > 0 {
            println!("{:<25} {:>4} boxes", c.label.name(), c.boxes);
        }
    }
    std::fs::remove_file(&path).ok();
    Ok(())
}
