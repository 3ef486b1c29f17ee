//! Segments an in-memory phantom and scores the result against its truth.

use nucseg::evaluate::{match_labels, score_with_classes, EvalParams};
use nucseg::fusion::CellClass;
use nucseg::io::PipelineConfig;
use nucseg::phantom::{generate, PhantomSpec};
use nucseg::pipeline::segment_channels;

fn main() -> nucseg::Result<()> {
    let spec = PhantomSpec {
        touching_pairs: 2,
        seed: 3,
        ..PhantomSpec::default()
    };
    let (channels, truth) = generate(&spec)?;
    let config = PipelineConfig {
        spacing: spec.spacing,
        ..PipelineConfig::default()
    };
    let seg = segment_channels(&channels, &config)?;

    println!("{} nuclei found, {} in the truth", seg.blobs.len(), truth.nuclei.len());
    for class in CellClass::ALL {
        println!("{:>13}: found {:>2}, truth {:>2}", class.name(), seg.count(class), truth.count(class));
    }
    let r = &seg.reconstruct_stats;
    println!(
        "linked {} blobs, split {}, dropped {} small",
        r.linked_blobs, r.split_blobs, r.removed_small
    );

    let assoc = match_labels(&seg.labels(), &truth.labels, &EvalParams::default())?;
    let report = score_with_classes(&assoc, |l| truth.class_of(l));
    print!("{}", report.to_table());
    Ok(())
}
