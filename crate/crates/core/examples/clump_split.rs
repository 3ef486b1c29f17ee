//! Two touching nuclei link into one blob; clump splitting separates them.

use nucseg::io::PipelineConfig;
use nucseg::phantom::{generate_touching_pair, TouchingPairSpec};
use nucseg::pipeline::{reconstruct, segment_planes};
use nucseg::reconstruct::Blob3D;

fn main() -> nucseg::Result<()> {
    let spec = TouchingPairSpec {
        angle: Some(0.6),
        ..TouchingPairSpec::default()
    };
    let (channels, truth) = generate_touching_pair(&spec)?;
    let grid = &channels.nuclei;
    let config = PipelineConfig {
        spacing: spec.spacing,
        ..PipelineConfig::default()
    };

    let (objects, _) = segment_planes(|z| Ok(grid.plane(z).to_vec()), grid.dims(), grid.depth(), &config.binarize, 4, |_| Ok(()))?;
    let show = |stage: &str, blobs: &[Blob3D]| {
        let sizes: Vec<usize> = blobs.iter().map(|b| b.voxel_count()).collect();
        println!("{stage:>6}: {} blob(s), voxels {sizes:?}", blobs.len());
        Ok(())
    };
    let (blobs, stats) = reconstruct(objects, grid.dims(), &config, show)?;

    println!("{} blob(s) split", stats.split_blobs);
    for n in &truth.nuclei {
        println!("truth {}: {} voxels", n.label, n.voxel_count);
    }
    for b in &blobs {
        println!("found {}: {} voxels over {} planes", b.label, b.voxel_count(), b.z_extent());
    }
    Ok(())
}
