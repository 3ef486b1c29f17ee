//! Full file-based run: three TIFF stacks in, label stacks and tables out.
//!
//! cargo run --release --example segment_stacks -- nuclei.tif marker.tif vessel.tif out/
//!
//! Without arguments a phantom is written to a temporary directory first.

use std::path::PathBuf;

use nucseg::io::PipelineConfig;
use nucseg::phantom::{generate_to_dir, PhantomSpec};
use nucseg::pipeline::{run_segment, RunOptions, SegmentInputs};

fn main() -> nucseg::Result<()> {
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let scratch = std::env::temp_dir().join("nucseg-segment-stacks");
    let (inputs, out) = if let [n, m, v, out] = args.as_slice() {
        let inputs = SegmentInputs { nuclei: n.clone(), marker: m.clone(), vessel: v.clone() };
        (inputs, out.clone())
    } else {
        let dir = scratch.join("phantom");
        generate_to_dir(&PhantomSpec::default(), &dir)?;
        let inputs = SegmentInputs {
            nuclei: dir.join("nuclei.tif"),
            marker: dir.join("marker.tif"),
            vessel: dir.join("vessel.tif"),
        };
        (inputs, scratch.join("out"))
    };

    let opts = RunOptions {
        out_dir: out,
        threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
        debug_stages: false,
    };
    let manifest = run_segment(&inputs, &PipelineConfig::default(), &opts)?;
    for t in &manifest.timings {
        println!("{:<16} {:>8.3} s", t.stage, t.seconds);
    }
    if let (Some(peak), Some(budget)) = (manifest.peak_rss_bytes, manifest.memory_budget_bytes) {
        println!("peak memory {} MiB of {} MiB budget", peak >> 20, budget >> 20);
    }
    for f in &manifest.outputs {
        println!("wrote {}", f.display());
    }
    Ok(())
}
