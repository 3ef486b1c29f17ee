//! Writes a synthetic three-channel stack with its ground truth.
//!
//! cargo run --example phantom_to_disk -- /tmp/phantom [seed]

use std::path::PathBuf;

use nucseg::fusion::CellClass;
use nucseg::phantom::{generate_to_dir, PhantomSpec, PHANTOM_FILES};

fn main() -> nucseg::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "phantom".into()));
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let spec = PhantomSpec {
        touching_pairs: 2,
        seed,
        ..PhantomSpec::default()
    };
    let truth = generate_to_dir(&spec, &dir)?;

    for class in CellClass::ALL {
        let n = truth.iter().filter(|t| t.class == class).count();
        println!("{:>13}: {n}", class.name());
    }
    for t in truth.iter().take(3) {
        println!(
            "label {} at ({:.1}, {:.1}, {:.1}) µm, {} voxels",
            t.label, t.center_um[0], t.center_um[1], t.center_um[2], t.voxel_count
        );
    }
    println!("files in {}: {}", dir.display(), PHANTOM_FILES.join(", "));
    Ok(())
}
