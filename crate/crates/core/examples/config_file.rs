//! Reads a `key = value` parameter file and shows how errors are reported.

use nucseg::io::{PipelineConfig, CONFIG_KEYS};

fn main() {
    let text = "\
# coarser z-steps
spacing = 0.21, 0.21, 0.42
max_clusters = 4
min_voxels = 8000
";
    let cfg = PipelineConfig::parse(text).expect("valid config");
    println!("{} keys; effective configuration:", CONFIG_KEYS.len());
    print!("{}", cfg.to_text());

    for bad in ["gamma = 1.5", "min_voxel = 10", "delta1 0.2"] {
        let e = PipelineConfig::parse(bad).unwrap_err();
        println!("{bad:<16} -> {e} (exit status {})", e.exit_code());
    }
}
