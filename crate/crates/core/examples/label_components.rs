//! Connected components in 2D and 3D, and morphological opening.

use nucseg::volume::{
    connected_components_2d, connected_components_3d, opening, BinaryMask, Connectivity2d, Connectivity3d, Dims,
    StructuringElement,
};

fn main() {
    // Two diagonal bars on plane 0 and a bridge on plane 1 joining them in 3D.
    let dims = Dims::new(8, 8, 2);
    let mask = BinaryMask::from_fn(dims, |x, y, z| match z {
        0 => (x == y && x < 3) || (x == y && x > 4),
        _ => x == y && (2..=5).contains(&x),
    });

    for conn in [Connectivity2d::Four, Connectivity2d::Eight] {
        let (_, n) = connected_components_2d(&mask, conn);
        println!("2D {conn:?}: {n} components over both planes");
    }
    for conn in [Connectivity3d::Six, Connectivity3d::TwentySix] {
        let (labels, n) = connected_components_3d(&mask, conn);
        println!("3D {conn:?}: {n} components, max label {}", labels.max_label());
    }

    let blob = BinaryMask::from_fn(Dims::new(9, 9, 1), |x, y, _| (2..7).contains(&x) && (2..7).contains(&y) || (x, y) == (7, 4));
    let opened = opening(&blob, &StructuringElement::disk(1));
    println!("opening removes the spur: {} -> {} pixels", blob.count(), opened.count());
}
