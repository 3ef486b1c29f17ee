//! Error taxonomy on hand-built label rows.

use nucseg::evaluate::{evaluate, EvalParams};
use nucseg::volume::{Dims, LabelVolume};

fn row(labels: &[u32]) -> LabelVolume {
    LabelVolume::from_vec(Dims::new(labels.len(), 1, 1), labels.to_vec()).unwrap()
}

fn main() -> nucseg::Result<()> {
    // Truth: four cells of four voxels each.
    let gt = row(&[1, 1, 1, 1, 0, 2, 2, 2, 2, 0, 3, 3, 3, 3, 4, 4, 4, 4, 0, 0, 0, 0]);
    // Cell 1 found, cell 2 cut in two, cells 3 and 4 merged, plus a blob of noise.
    let pred = row(&[1, 1, 1, 1, 0, 2, 2, 3, 3, 0, 4, 4, 4, 4, 4, 4, 4, 4, 0, 5, 5, 0]);

    let report = evaluate(&pred, &gt, &EvalParams::default())?;
    print!("{}", report.to_table());
    for (label, outcome) in &report.outcomes {
        println!("truth {label}: {outcome:?}");
    }
    println!("predictions matching nothing: {:?}", report.noise_labels);
    Ok(())
}
