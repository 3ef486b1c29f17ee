//! 3D reconstruction: slice linking, blob assembly, clump splitting and the
//! small-object filter.

mod blobs;
mod link;
mod split;

use serde::{Deserialize, Serialize};

use crate::segment2d::{OverlapMode, Plane2DObject};
use crate::volume::{Dims, VoxelSet};

pub use blobs::{build_blobs, maybe_split_at_slice, split_decision, EventKind, SliceDecision, SliceEvent};
pub use link::{link_planes, Link, LinkGraph, LinkKind};
pub use split::{kmeans, split_clump, KMeansResult, SplitContext, SplitOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Competing overlaps within this distance of the best are ambiguous.
    pub delta1: f64,
    /// Smallest overlap fraction that creates a link.
    pub delta2: f64,
    pub overlap_mode: OverlapMode,
    /// Allow a link to skip one empty plane.
    pub bridge_gaps: bool,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            delta1: 0.2,
            delta2: 0.2,
            overlap_mode: OverlapMode::Min,
            bridge_gaps: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub max_clusters: usize,
    /// Minimum member slices (distinct planes) per cluster.
    pub alpha: usize,
    /// Minimum smallest/largest size ratio, for clusters and slice pieces.
    pub beta: f64,
    /// Maximum xy-footprint overlap between two clusters.
    pub gamma: f64,
    pub kmeans_restarts: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            max_clusters: 3,
            alpha: 3,
            beta: 0.3,
            gamma: 0.65,
            kmeans_restarts: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterParams {
    pub min_planes: usize,
    pub min_voxels: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_planes: 3,
            min_voxels: 10_000,
        }
    }
}

/// Linked 2D objects forming one candidate nucleus.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob3D {
    pub label: u32,
    /// Sorted by `(z, id)`.
    pub members: Vec<Plane2DObject>,
    /// Member index pairs `(lower z, higher z)`.
    pub links: Vec<(usize, usize)>,
    pub events: Vec<SliceEvent>,
}

impl Blob3D {
    pub fn voxel_count(&self) -> usize {
        self.members.iter().map(|m| m.area()).sum()
    }

    /// Number of distinct planes.
    pub fn z_extent(&self) -> usize {
        let mut n = 0;
        let mut last = None;
        for m in &self.members {
            if last != Some(m.z) {
                n += 1;
                last = Some(m.z);
            }
        }
        n
    }

    pub fn z_range(&self) -> Option<(usize, usize)> {
        Some((self.members.first()?.z, self.members.last()?.z))
    }

    /// Global linear voxel indices in a volume of `dims`.
    pub fn voxels(&self, dims: Dims) -> VoxelSet {
        let plane = dims.plane_len();
        let mut out = Vec::with_capacity(self.voxel_count());
        for m in &self.members {
            out.extend(m.pixels.iter().map(|&p| m.z * plane + p as usize));
        }
        VoxelSet::from_unsorted(out)
    }

    /// Smallest global linear index; orders blobs by first voxel.
    pub fn first_voxel(&self, dims: Dims) -> usize {
        let m = &self.members[0];
        m.z * dims.plane_len() + m.pixels[0] as usize
    }
}

/// Keeps blobs spanning at least `min_planes` planes with at least
/// `min_voxels` voxels.
pub fn remove_small_blobs(blobs: Vec<Blob3D>, filter: &FilterParams) -> Vec<Blob3D> {
    blobs
        .into_iter()
        .filter(|b| b.z_extent() >= filter.min_planes && b.voxel_count() >= filter.min_voxels)
        .collect()
}

/// Orders blobs by first voxel, relabels them 1..K and renumbers member ids
/// sequentially.
pub fn finalize_labels(mut blobs: Vec<Blob3D>, dims: Dims) -> Vec<Blob3D> {
    blobs.sort_by_key(|b| b.first_voxel(dims));
    let mut next_id = 0;
    for (i, b) in blobs.iter_mut().enumerate() {
        b.label = i as u32 + 1;
        for m in &mut b.members {
            m.id = next_id;
            next_id += 1;
        }
    }
    blobs
}

/// Which blob members lie on each plane, for plane-at-a-time passes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaneIndex {
    /// `(blob index, member index)` per plane.
    pub planes: Vec<Vec<(u32, u32)>>,
}

impl PlaneIndex {
    pub fn new(blobs: &[Blob3D], nz: usize) -> Self {
        let mut planes = vec![Vec::new(); nz];
        for (b, blob) in blobs.iter().enumerate() {
            for (m, member) in blob.members.iter().enumerate() {
                planes[member.z].push((b as u32, m as u32));
            }
        }
        PlaneIndex { planes }
    }

    /// Label plane for blobs accepted by `keep`; voxels carry `Blob3D::label`.
    pub fn render(&self, blobs: &[Blob3D], z: usize, plane_len: usize, keep: impl Fn(usize) -> bool) -> Vec<u32> {
        let mut out = vec![0u32; plane_len];
        for &(b, m) in &self.planes[z] {
            if !keep(b as usize) {
                continue;
            }
            let blob = &blobs[b as usize];
            for &p in &blob.members[m as usize].pixels {
                out[p as usize] = blob.label;
            }
        }
        out
    }
}

/// Whole label volume for the blobs accepted by `keep`.
pub fn render_labels(blobs: &[Blob3D], dims: Dims, keep: impl Fn(usize) -> bool) -> crate::volume::LabelVolume {
    let index = PlaneIndex::new(blobs, dims.nz);
    let mut data = Vec::with_capacity(dims.len());
    for z in 0..dims.nz {
        data.extend(index.render(blobs, z, dims.plane_len(), &keep));
    }
    crate::volume::LabelVolume::from_vec(dims, data).expect("rendered to dims")
}
