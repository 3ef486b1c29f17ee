//! Voxel containers and the morphology / connectivity primitives the rest of
//! the pipeline is built on.
//!
//! Layout is x-fastest: voxel `(x, y, z)` lives at `x + nx * (y + ny * z)`.
//! A single z-plane is therefore a contiguous `nx * ny` slice.

mod components;
mod distance;
mod morphology;

pub use components::{
    connected_components_2d, connected_components_3d, Connectivity2d, Connectivity3d,
};
pub use distance::{dilate_physical, squared_distance_2d, PlaneDilator};
pub use morphology::{dilate, erode, opening, StructuringElement};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Volume extent in voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    /// A single plane of `nx * ny` pixels.
    pub fn plane(nx: usize, ny: usize) -> Self {
        Dims { nx, ny, nz: 1 }
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let x = index % self.nx;
        let rest = index / self.nx;
        (x, rest % self.ny, rest / self.ny)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Physical voxel size in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelSpacing {
    pub sx: f64,
    pub sy: f64,
    pub sz: f64,
}

impl VoxelSpacing {
    pub fn new(sx: f64, sy: f64, sz: f64) -> Result<Self> {
        for (name, v) in [("sx", sx), ("sy", sy), ("sz", sz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Invalid(format!(
                    "voxel spacing {name} must be a positive number, got {v}"
                )));
            }
        }
        Ok(VoxelSpacing { sx, sy, sz })
    }

    pub fn isotropic(s: f64) -> Result<Self> {
        Self::new(s, s, s)
    }

    /// Volume of one voxel in µm³.
    pub fn voxel_volume(&self) -> f64 {
        self.sx * self.sy * self.sz
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.sx, self.sy, self.sz]
    }
}

impl Default for VoxelSpacing {
    /// 0.21 µm on every axis, the confocal pixel size and z-step the
    /// defaults are calibrated for.
    fn default() -> Self {
        VoxelSpacing {
            sx: 0.21,
            sy: 0.21,
            sz: 0.21,
        }
    }
}

/// Sample width of an intensity stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    pub fn histogram_bins(self) -> usize {
        self.max_value() as usize + 1
    }

    pub fn bits(self) -> u8 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

/// Scalar intensity volume for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: Dims,
    spacing: VoxelSpacing,
    depth: BitDepth,
    values: Vec<u16>,
}

impl VoxelGrid {
    pub fn new(dims: Dims, spacing: VoxelSpacing, depth: BitDepth, values: Vec<u16>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "grid {dims} needs {} values, got {}",
                dims.len(),
                values.len()
            )));
        }
        if dims.is_empty() {
            return Err(Error::Invalid(format!("grid dims {dims} must be positive")));
        }
        if depth == BitDepth::Eight {
            if let Some(v) = values.iter().find(|&&v| v > 255) {
                return Err(Error::Invalid(format!("8-bit grid holds value {v}")));
            }
        }
        Ok(VoxelGrid {
            dims,
            spacing,
            depth,
            values,
        })
    }

    pub fn filled(dims: Dims, spacing: VoxelSpacing, depth: BitDepth, value: u16) -> Self {
        VoxelGrid {
            dims,
            spacing,
            depth,
            values: vec![value.min(depth.max_value()); dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> VoxelSpacing {
        self.spacing
    }

    pub fn with_spacing(mut self, spacing: VoxelSpacing) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.values[self.dims.index(x, y, z)]
    }

    pub fn plane(&self, z: usize) -> &[u16] {
        let n = self.dims.plane_len();
        &self.values[z * n..(z + 1) * n]
    }

    pub fn into_values(self) -> Vec<u16> {
        self.values
    }
}

/// Boolean voxel (or pixel, with `nz == 1`) mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(dims: Dims) -> Self {
        BinaryMask {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "mask {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(BinaryMask { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        BinaryMask { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<bool> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn plane(&self, z: usize) -> &[bool] {
        let n = self.dims.plane_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn plane_mut(&mut self, z: usize) -> &mut [bool] {
        let n = self.dims.plane_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            data: self.data.iter().map(|v| !v).collect(),
        }
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Sorted linear indices of the set voxels.
    pub fn voxel_set(&self) -> VoxelSet {
        VoxelSet(
            self.data
                .iter()
                .enumerate()
                .filter_map(|(i, &v)| v.then_some(i))
                .collect(),
        )
    }
}

/// Integer label per voxel, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    dims: Dims,
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: Dims) -> Self {
        LabelVolume {
            dims,
            data: vec![0; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<u32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::DimMismatch(format!(
                "label volume {dims} needs {} values, got {}",
                dims.len(),
                data.len()
            )));
        }
        Ok(LabelVolume { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u32 {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn plane(&self, z: usize) -> &[u32] {
        let n = self.dims.plane_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Number of distinct nonzero labels.
    pub fn label_count(&self) -> usize {
        let mut seen: Vec<u32> = self.data.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Renumbers labels to 1..K in raster order of first occurrence.
    pub fn compact(&self) -> LabelVolume {
        let mut remap = std::collections::HashMap::new();
        let mut next = 0u32;
        let data = self
            .data
            .iter()
            .map(|&l| {
                if l == 0 {
                    0
                } else {
                    *remap.entry(l).or_insert_with(|| {
                        next += 1;
                        next
                    })
                }
            })
            .collect();
        LabelVolume {
            dims: self.dims,
            data,
        }
    }

    /// Sorted voxel sets per label, indexed by `label - 1`.
    pub fn voxel_sets(&self) -> Vec<VoxelSet> {
        let max = self.max_label() as usize;
        let mut sets = vec![Vec::new(); max];
        for (i, &l) in self.data.iter().enumerate() {
            if l != 0 {
                sets[l as usize - 1].push(i);
            }
        }
        sets.into_iter().map(VoxelSet).collect()
    }

    pub fn mask(&self) -> BinaryMask {
        BinaryMask {
            dims: self.dims,
            data: self.data.iter().map(|&l| l != 0).collect(),
        }
    }
}

/// Sorted, duplicate-free linear voxel indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoxelSet(Vec<usize>);

impl VoxelSet {
    pub fn from_unsorted(mut v: Vec<usize>) -> Self {
        v.sort_unstable();
        v.dedup();
        VoxelSet(v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.0.binary_search(&index).is_ok()
    }
}

/// Size of the intersection of two sorted index sets.
pub fn overlap_voxels(a: &VoxelSet, b: &VoxelSet) -> usize {
    sorted_intersection_len(a.as_slice(), b.as_slice())
}

pub fn sorted_intersection_len<T: Ord>(a: &[T], b: &[T]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}
