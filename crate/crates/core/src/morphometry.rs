//! Per-cell measurements in physical units and the counting frame.
//!
//! Voxel `(i, j, k)` has its center at `(i·sx, j·sy, k·sz)` µm. Feret
//! diameters are center-to-center.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fusion::CellClass;
use crate::reconstruct::Blob3D;
use crate::volume::{Dims, LabelVolume, VoxelSpacing};
use crate::{Error, Result};

/// Inclusive voxel-index bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox3 {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub label: u32,
    /// `None` when channel fusion was not run.
    pub class: Option<CellClass>,
    pub centroid_um: [f64; 3],
    pub voxel_count: usize,
    pub volume_um3: f64,
    pub feret_um: f64,
    /// Distinct z planes.
    pub z_extent: usize,
    pub bbox: BBox3,
}

impl CellRecord {
    pub fn class_name(&self) -> &'static str {
        self.class.map_or("unknown", CellClass::name)
    }
}

fn d2(a: [usize; 3], b: [usize; 3], s: [f64; 3]) -> f64 {
    let mut t = 0.0;
    for i in 0..3 {
        let d = (a[i] as f64 - b[i] as f64) * s[i];
        t += d * d;
    }
    t
}

/// Max center-to-center distance over all pairs, O(n²).
pub fn feret_diameter_brute(voxels: &[[usize; 3]], spacing: VoxelSpacing) -> f64 {
    let s = spacing.as_array();
    let mut best = 0.0f64;
    for (i, &a) in voxels.iter().enumerate() {
        for &b in &voxels[i + 1..] {
            best = best.max(d2(a, b, s));
        }
    }
    best.sqrt()
}

/// Voxels that are the first or last object voxel along each of their x, y
/// and z grid lines. Every convex-hull vertex is among them.
pub fn hull_candidates(voxels: &[[usize; 3]]) -> Vec<[usize; 3]> {
    let mut lines: [HashMap<(usize, usize), (usize, usize)>; 3] = Default::default();
    let key = |v: [usize; 3], axis: usize| match axis {
        0 => (v[1], v[2]),
        1 => (v[0], v[2]),
        _ => (v[0], v[1]),
    };
    for &v in voxels {
        for (axis, map) in lines.iter_mut().enumerate() {
            let e = map.entry(key(v, axis)).or_insert((v[axis], v[axis]));
            e.0 = e.0.min(v[axis]);
            e.1 = e.1.max(v[axis]);
        }
    }
    voxels
        .iter()
        .copied()
        .filter(|&v| {
            (0..3).all(|axis| {
                let (lo, hi) = lines[axis][&key(v, axis)];
                v[axis] == lo || v[axis] == hi
            })
        })
        .collect()
}

/// Max center-to-center distance in µm.
pub fn feret_diameter(voxels: &[[usize; 3]], spacing: VoxelSpacing) -> f64 {
    feret_diameter_brute(&hull_candidates(voxels), spacing)
}

/// Measures one object from its voxel coordinates.
pub fn measure_voxels(label: u32, class: Option<CellClass>, voxels: &[[usize; 3]], spacing: VoxelSpacing) -> CellRecord {
    assert!(!voxels.is_empty(), "cannot measure an empty object");
    let mut sum = [0u128; 3];
    let mut min = voxels[0];
    let mut max = voxels[0];
    let mut planes: Vec<usize> = Vec::new();
    for &v in voxels {
        for i in 0..3 {
            sum[i] += v[i] as u128;
            min[i] = min[i].min(v[i]);
            max[i] = max[i].max(v[i]);
        }
        planes.push(v[2]);
    }
    planes.sort_unstable();
    planes.dedup();
    let n = voxels.len();
    let s = spacing.as_array();
    CellRecord {
        label,
        class,
        centroid_um: std::array::from_fn(|i| sum[i] as f64 / n as f64 * s[i]),
        voxel_count: n,
        volume_um3: n as f64 * spacing.voxel_volume(),
        feret_um: feret_diameter(voxels, spacing),
        z_extent: planes.len(),
        bbox: BBox3 { min, max },
    }
}

pub fn blob_voxels(blob: &Blob3D) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(blob.voxel_count());
    for m in &blob.members {
        out.extend(m.pixels.iter().map(|&p| {
            let (x, y) = m.xy(p);
            [x, y, m.z]
        }));
    }
    out
}

pub fn measure(blob: &Blob3D, class: Option<CellClass>, spacing: VoxelSpacing) -> CellRecord {
    measure_voxels(blob.label, class, &blob_voxels(blob), spacing)
}

/// Measures blobs in parallel; `classes[i]` belongs to `blobs[i]`.
pub fn measure_all(blobs: &[Blob3D], classes: Option<&[CellClass]>, spacing: VoxelSpacing) -> Vec<CellRecord> {
    blobs
        .par_iter()
        .enumerate()
        .map(|(i, b)| measure(b, classes.map(|c| c[i]), spacing))
        .collect()
}

/// One record per nonzero label, in label order.
pub fn measure_labels(labels: &LabelVolume, spacing: VoxelSpacing) -> Vec<CellRecord> {
    let dims = labels.dims();
    let mut by_label: HashMap<u32, Vec<[usize; 3]>> = HashMap::new();
    for (i, &l) in labels.data().iter().enumerate() {
        if l != 0 {
            let (x, y, z) = dims.coords(i);
            by_label.entry(l).or_default().push([x, y, z]);
        }
    }
    let mut groups: Vec<(u32, Vec<[usize; 3]>)> = by_label.into_iter().collect();
    groups.sort_unstable_by_key(|g| g.0);
    groups
        .par_iter()
        .map(|(l, v)| measure_voxels(*l, None, v, spacing))
        .collect()
}

/// Rectangular prism in µm. The low faces `x0`, `y0`, `z0` exclude, the high
/// faces accept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountingFrame {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl CountingFrame {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for i in 0..3 {
            if !(min[i].is_finite() && max[i].is_finite() && min[i] < max[i]) {
                return Err(Error::Invalid(format!("counting frame axis {i}: need min < max, got {} and {}", min[i], max[i])));
            }
        }
        Ok(CountingFrame { min, max })
    }

    /// The whole volume: `[0, n·s)` on each axis.
    pub fn whole(dims: Dims, spacing: VoxelSpacing) -> Self {
        let s = spacing.as_array();
        let n = [dims.nx, dims.ny, dims.nz];
        CountingFrame {
            min: [0.0; 3],
            max: std::array::from_fn(|i| n[i] as f64 * s[i]),
        }
    }

    /// Errors unless the frame lies inside the volume.
    pub fn check_within(&self, dims: Dims, spacing: VoxelSpacing) -> Result<()> {
        let whole = Self::whole(dims, spacing);
        for i in 0..3 {
            if self.min[i] < 0.0 || self.max[i] > whole.max[i] + 1e-9 {
                return Err(Error::Invalid(format!("counting frame exceeds the volume on axis {i}")));
            }
        }
        Ok(())
    }

    /// A cell counts when the low corner of its bounding box lies in the
    /// half-open prism `[min, max)`.
    pub fn counts(&self, cell: &CellRecord, spacing: VoxelSpacing) -> bool {
        let s = spacing.as_array();
        (0..3).all(|i| {
            let c = cell.bbox.min[i] as f64 * s[i];
            self.min[i] <= c && c < self.max[i]
        })
    }
}

pub fn counting_frame_filter<'a>(
    cells: &'a [CellRecord],
    frame: &CountingFrame,
    spacing: VoxelSpacing,
) -> Vec<&'a CellRecord> {
    cells.iter().filter(|c| frame.counts(c, spacing)).collect()
}
