//! Channel fusion: nuclei overlapping the marker become neurons, nuclei
//! close to a vessel are set aside as perivascular.

use nucseg::fusion::{classify_counts, CellClass, FusionParams};
use nucseg::io::PipelineConfig;
use nucseg::phantom::{generate, PhantomSpec};
use nucseg::pipeline::segment_channels;

fn main() -> nucseg::Result<()> {
    let params = FusionParams::default();
    for (voxels, vessel, marker) in [(1000, 300, 900), (1000, 0, 900), (1000, 100, 200)] {
        let class = classify_counts(voxels, vessel, marker, &params);
        println!("{voxels} voxels, {vessel} near a vessel, {marker} under marker -> {}", class.name());
    }

    let spec = PhantomSpec { seed: 11, ..PhantomSpec::default() };
    let (channels, truth) = generate(&spec)?;
    let config = PipelineConfig { spacing: spec.spacing, ..PipelineConfig::default() };
    let seg = segment_channels(&channels, &config)?;
    let classes = seg.classes.as_ref().expect("all three channels were given");
    println!("label  class          vessel  marker");
    for c in classes {
        println!("{:>5}  {:<13}  {:>6.2}  {:>6.2}", c.label, c.class.name(), c.vessel_fraction, c.marker_fraction);
    }
    let neurons = seg.class_labels(CellClass::Neuron);
    println!("neuron volume holds {} labels; truth has {} neurons", neurons.label_count(), truth.count(CellClass::Neuron));
    Ok(())
}
