//! Per-cell measurements and stereological counting in a sub-volume.

use nucseg::morphometry::{counting_frame_filter, measure_labels, CountingFrame};
use nucseg::phantom::{generate, PhantomSpec};

fn main() -> nucseg::Result<()> {
    let spec = PhantomSpec::default().clean();
    let (_, truth) = generate(&spec)?;
    let cells = measure_labels(&truth.labels, spec.spacing);

    println!("label  volume µm³  Feret µm  planes  centroid µm");
    for c in &cells {
        println!(
            "{:>5}  {:>10.1}  {:>8.2}  {:>6}  ({:.1}, {:.1}, {:.1})",
            c.label, c.volume_um3, c.feret_um, c.z_extent, c.centroid_um[0], c.centroid_um[1], c.centroid_um[2]
        );
    }

    // Four frames over the left/right and front/back halves.
    let whole = CountingFrame::whole(truth.labels.dims(), spec.spacing);
    let [mx, my, mz] = whole.max;
    let mut total = 0;
    for (x0, x1) in [(0.0, mx / 2.0), (mx / 2.0, mx)] {
        for (y0, y1) in [(0.0, my / 2.0), (my / 2.0, my)] {
            let frame = CountingFrame::new([x0, y0, 0.0], [x1, y1, mz])?;
            let n = counting_frame_filter(&cells, &frame, spec.spacing).len();
            println!("frame x {x0:.0}..{x1:.0} y {y0:.0}..{y1:.0}: {n} cells");
            total += n;
        }
    }
    println!("{total} counted over the tiling, {} cells in the volume", cells.len());
    Ok(())
}
