//! Two-pass binarization of a single plane: a global threshold, then a
//! per-object re-threshold on a padded box around each object.

use nucseg::binarize::{global_binarize, local_refine, BinarizeParams, PlaneView};
use nucseg::phantom::{plan, PhantomSpec};
use nucseg::segment2d::extract_objects;
use nucseg::volume::BitDepth;

fn main() -> nucseg::Result<()> {
    let spec = PhantomSpec { seed: 2, ..PhantomSpec::default() };
    let phantom = plan(&spec)?;
    let d = spec.dims;
    let plane = phantom.render_plane(d.nz / 2).nuclei;
    let view = PlaneView::new(&plane, d.nx, d.ny, BitDepth::Eight);
    let params = BinarizeParams::default();

    let g = global_binarize(view, &params);
    match g.threshold {
        Some(t) => println!("global threshold {} (separation {:.1})", t.threshold, t.separation),
        None => println!("plane has no usable threshold"),
    }
    for obj in extract_objects(&g.mask, d.nz / 2, params.connectivity, 0) {
        let r = local_refine(view, &obj, &params);
        println!(
            "object {:>2}: {:>5} px -> {:>5} px ({})",
            obj.id,
            obj.area(),
            r.pixels.len(),
            r.action.name()
        );
    }
    Ok(())
}
