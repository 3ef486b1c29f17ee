//! Measured 2D objects: the per-plane atoms that 3D blobs are built from.

use serde::{Deserialize, Serialize};

use crate::volume::{connected_components_2d, sorted_intersection_len, BinaryMask, Connectivity2d};

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox2 {
    pub xmin: usize,
    pub ymin: usize,
    pub xmax: usize,
    pub ymax: usize,
}

impl BBox2 {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.xmin as f64 && x <= self.xmax as f64 && y >= self.ymin as f64 && y <= self.ymax as f64
    }
}

/// A connected pixel region on one z-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane2DObject {
    pub id: usize,
    pub z: usize,
    /// Width of the plane the pixel indices refer to.
    pub width: usize,
    /// Sorted in-plane linear indices `x + width * y`.
    pub pixels: Vec<u32>,
    /// Mean pixel center, in voxel units.
    pub centroid: (f64, f64),
    pub bbox: BBox2,
}

impl Plane2DObject {
    /// Measures a region from its (unsorted) pixel indices.
    ///
    /// Panics on an empty pixel list.
    pub fn from_pixels(id: usize, z: usize, width: usize, mut pixels: Vec<u32>) -> Self {
        assert!(!pixels.is_empty(), "2D object needs at least one pixel");
        pixels.sort_unstable();
        pixels.dedup();
        let (mut sx, mut sy) = (0.0, 0.0);
        let mut bbox = BBox2 {
            xmin: usize::MAX,
            ymin: usize::MAX,
            xmax: 0,
            ymax: 0,
        };
        for &p in &pixels {
            let (x, y) = (p as usize % width, p as usize / width);
            sx += x as f64;
            sy += y as f64;
            bbox.xmin = bbox.xmin.min(x);
            bbox.xmax = bbox.xmax.max(x);
            bbox.ymin = bbox.ymin.min(y);
            bbox.ymax = bbox.ymax.max(y);
        }
        let n = pixels.len() as f64;
        Plane2DObject {
            id,
            z,
            width,
            pixels,
            centroid: (sx / n, sy / n),
            bbox,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn xy(&self, pixel: u32) -> (usize, usize) {
        (pixel as usize % self.width, pixel as usize / self.width)
    }

    /// Shared pixel count with another object, compared in xy only.
    pub fn intersection(&self, other: &Plane2DObject) -> usize {
        debug_assert_eq!(self.width, other.width);
        let disjoint = self.bbox.xmax < other.bbox.xmin
            || other.bbox.xmax < self.bbox.xmin
            || self.bbox.ymax < other.bbox.ymin
            || other.bbox.ymax < self.bbox.ymin;
        if disjoint {
            return 0;
        }
        sorted_intersection_len(&self.pixels, &other.pixels)
    }
}

/// Normalization used when scoring the overlap of two objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum OverlapMode {
    /// `|a ∩ b| / min(|a|, |b|)`
    #[default]
    Min,
    /// `|a ∩ b| / |a ∪ b|`
    Iou,
}

/// One object per connected component of `plane_mask`, in raster order of
/// each component's first pixel. Ids start at `first_id`.
pub fn extract_objects(
    plane_mask: &BinaryMask,
    z: usize,
    connectivity: Connectivity2d,
    first_id: usize,
) -> Vec<Plane2DObject> {
    let dims = plane_mask.dims();
    assert_eq!(dims.nz, 1, "extract_objects takes a single plane");
    let (labels, n) = connected_components_2d(plane_mask, connectivity);
    let mut pixels: Vec<Vec<u32>> = vec![Vec::new(); n];
    for (i, &l) in labels.data().iter().enumerate() {
        if l != 0 {
            pixels[l as usize - 1].push(i as u32);
        }
    }
    pixels
        .into_iter()
        .enumerate()
        .map(|(k, px)| Plane2DObject::from_pixels(first_id + k, z, dims.nx, px))
        .collect()
}

/// Overlap of two objects, min-normalized.
pub fn object_overlap_fraction(a: &Plane2DObject, b: &Plane2DObject) -> f64 {
    overlap_fraction_with(a, b, OverlapMode::Min)
}

pub fn overlap_fraction_with(a: &Plane2DObject, b: &Plane2DObject, mode: OverlapMode) -> f64 {
    let inter = a.intersection(b);
    if inter == 0 {
        return 0.0;
    }
    let denom = match mode {
        OverlapMode::Min => a.area().min(b.area()),
        OverlapMode::Iou => a.area() + b.area() - inter,
    };
    inter as f64 / denom as f64
}
