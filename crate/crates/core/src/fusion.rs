//! Channel fusion: vessel and neuronal-marker masks against 3D blobs.
//!
//! Each support channel is thresholded plane by plane with the same selector
//! as the nuclei channel and opened with a radius-1 disk. The vessel mask is
//! then dilated by a physical radius. A blob is perivascular when enough of
//! its voxels fall in the dilated vessel mask, a neuron when enough fall in
//! the marker mask, and non-neuronal otherwise. The vessel test goes first.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::binarize::{global_binarize, BinarizeParams, PlaneView};
use crate::io::ChannelSet;
use crate::reconstruct::{render_labels, Blob3D, PlaneIndex};
use crate::volume::{opening, BinaryMask, Dims, LabelVolume, PlaneDilator, StructuringElement, VoxelGrid};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub vessel_dilation_um: f64,
    pub perivascular_min_overlap: f64,
    pub neuron_min_overlap: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            vessel_dilation_um: 2.0,
            perivascular_min_overlap: 0.25,
            neuron_min_overlap: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellClass {
    Neuron,
    NonNeuronal,
    Perivascular,
}

impl CellClass {
    pub const ALL: [CellClass; 3] = [CellClass::Neuron, CellClass::NonNeuronal, CellClass::Perivascular];

    pub fn name(self) -> &'static str {
        match self {
            CellClass::Neuron => "neuron",
            CellClass::NonNeuronal => "non-neuronal",
            CellClass::Perivascular => "perivascular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CellClass::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One support-channel plane: global threshold then opening with a radius-1
/// disk. Returns the mask and whether the plane was degenerate.
pub fn binarize_support_plane(plane: PlaneView<'_>, params: &BinarizeParams) -> (BinaryMask, bool) {
    let g = global_binarize(plane, params);
    if g.degenerate {
        return (g.mask, true);
    }
    (opening(&g.mask, &StructuringElement::disk(1)), false)
}

/// Support mask of a whole channel; `dilation_um` is applied when given
/// (vessel channel).
pub fn binarize_support_channel(grid: &VoxelGrid, params: &BinarizeParams, dilation_um: Option<f64>) -> BinaryMask {
    let dims = grid.dims();
    let mut out = BinaryMask::new(dims);
    let mut dilator = dilation_um.map(|r| PlaneDilator::new(dims, grid.spacing(), r));
    for z in 0..dims.nz {
        let (m, _) = binarize_support_plane(PlaneView::new(grid.plane(z), dims.nx, dims.ny, grid.depth()), params);
        match dilator.as_mut() {
            None => out.plane_mut(z).copy_from_slice(m.data()),
            Some(d) => {
                for (oz, p) in d.push(m.data()) {
                    out.plane_mut(oz).copy_from_slice(&p);
                }
            }
        }
    }
    out
}

/// Rule applied to overlap counts.
pub fn classify_counts(voxel_count: usize, vessel_hits: usize, marker_hits: usize, params: &FusionParams) -> CellClass {
    let n = voxel_count.max(1) as f64;
    if vessel_hits as f64 / n >= params.perivascular_min_overlap {
        CellClass::Perivascular
    } else if marker_hits as f64 / n >= params.neuron_min_overlap {
        CellClass::Neuron
    } else {
        CellClass::NonNeuronal
    }
}

fn hits(blob: &Blob3D, mask: &BinaryMask) -> usize {
    let plane = mask.dims().plane_len();
    blob.members
        .iter()
        .map(|m| m.pixels.iter().filter(|&&p| mask.data()[m.z * plane + p as usize]).count())
        .sum()
}

pub fn classify_blob(blob: &Blob3D, vessel_mask: &BinaryMask, marker_mask: &BinaryMask, params: &FusionParams) -> CellClass {
    classify_counts(blob.voxel_count(), hits(blob, vessel_mask), hits(blob, marker_mask), params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classified {
    pub label: u32,
    pub class: CellClass,
    pub vessel_fraction: f64,
    pub marker_fraction: f64,
}

/// Per-blob hit counters filled one mask plane at a time.
#[derive(Debug, Clone)]
pub struct OverlapTally {
    index: PlaneIndex,
    vessel: Vec<usize>,
    marker: Vec<usize>,
}

impl OverlapTally {
    pub fn new(blobs: &[Blob3D], nz: usize) -> Self {
        OverlapTally {
            index: PlaneIndex::new(blobs, nz),
            vessel: vec![0; blobs.len()],
            marker: vec![0; blobs.len()],
        }
    }

    fn count(index: &PlaneIndex, counter: &mut [usize], blobs: &[Blob3D], z: usize, plane: &[bool]) {
        for &(b, m) in &index.planes[z] {
            let member = &blobs[b as usize].members[m as usize];
            counter[b as usize] += member.pixels.iter().filter(|&&p| plane[p as usize]).count();
        }
    }

    pub fn add_vessel_plane(&mut self, blobs: &[Blob3D], z: usize, plane: &[bool]) {
        Self::count(&self.index, &mut self.vessel, blobs, z, plane);
    }

    pub fn add_marker_plane(&mut self, blobs: &[Blob3D], z: usize, plane: &[bool]) {
        Self::count(&self.index, &mut self.marker, blobs, z, plane);
    }

    pub fn plane_index(&self) -> &PlaneIndex {
        &self.index
    }

    pub fn classify(&self, blobs: &[Blob3D], params: &FusionParams) -> Vec<Classified> {
        blobs
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let n = b.voxel_count().max(1) as f64;
                Classified {
                    label: b.label,
                    class: classify_counts(b.voxel_count(), self.vessel[i], self.marker[i], params),
                    vessel_fraction: self.vessel[i] as f64 / n,
                    marker_fraction: self.marker[i] as f64 / n,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub cells: Vec<Classified>,
    pub neurons: LabelVolume,
    pub non_neuronal: LabelVolume,
    pub perivascular: LabelVolume,
}

impl FusionResult {
    pub fn volume(&self, class: CellClass) -> &LabelVolume {
        match class {
            CellClass::Neuron => &self.neurons,
            CellClass::NonNeuronal => &self.non_neuronal,
            CellClass::Perivascular => &self.perivascular,
        }
    }
}

/// In-memory fusion of blobs found in a volume of `dims` with both support
/// channels.
pub fn apply_fusion(
    blobs: &[Blob3D],
    dims: Dims,
    channels: &ChannelSet,
    binarize: &BinarizeParams,
    params: &FusionParams,
) -> Result<FusionResult> {
    if channels.dims() != dims {
        return Err(Error::DimMismatch(format!("blobs come from {dims}, channels are {}", channels.dims())));
    }
    let vessel = binarize_support_channel(&channels.vessel, binarize, Some(params.vessel_dilation_um));
    let marker = binarize_support_channel(&channels.marker, binarize, None);
    let mut tally = OverlapTally::new(blobs, dims.nz);
    for z in 0..dims.nz {
        tally.add_vessel_plane(blobs, z, vessel.plane(z));
        tally.add_marker_plane(blobs, z, marker.plane(z));
    }
    let cells = tally.classify(blobs, params);
    let volume = |class| render_labels(blobs, dims, |i| cells[i].class == class);
    Ok(FusionResult {
        neurons: volume(CellClass::Neuron),
        non_neuronal: volume(CellClass::NonNeuronal),
        perivascular: volume(CellClass::Perivascular),
        cells,
    })
}
