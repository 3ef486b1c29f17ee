//! Binary erosion, dilation and opening with flat structuring elements.
//!
//! Voxels outside the volume count as background for every operation.

use super::{BinaryMask, Dims, VoxelSpacing};

/// Flat structuring element, symmetric about its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StructuringElement {
    /// Digital disk in the xy-plane: `dx² + dy² <= r²`, `dz = 0`.
    Disk(u32),
    /// Digital ball: `dx² + dy² + dz² <= r²`, radii in voxels.
    Ball(u32),
    /// Physical ball of `radius_um` on an anisotropic grid:
    /// `(dx·sx)² + (dy·sy)² + (dz·sz)² <= radius_um²`.
    Ellipsoid { radius_um: f64, spacing: VoxelSpacing },
}

/// Slack on physical radius comparisons so that lattice points lying exactly
/// on the sphere are inside regardless of rounding order.
pub(crate) const RADIUS_EPS: f64 = 1e-9;

impl StructuringElement {
    pub fn disk(radius: u32) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement::Disk(radius)
    }

    pub fn ball(radius: u32) -> Self {
        assert!(radius >= 1, "structuring element radius must be >= 1");
        StructuringElement::Ball(radius)
    }

    /// Per-axis integer reach of the element.
    pub fn reach(&self) -> [i64; 3] {
        match *self {
            StructuringElement::Disk(r) => [r as i64, r as i64, 0],
            StructuringElement::Ball(r) => [r as i64; 3],
            StructuringElement::Ellipsoid { radius_um, spacing } => {
                let f = |s: f64| ((radius_um + RADIUS_EPS) / s).floor() as i64;
                [f(spacing.sx), f(spacing.sy), f(spacing.sz)]
            }
        }
    }

    /// All member offsets `(dx, dy, dz)`, in z-y-x raster order.
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let [rx, ry, rz] = self.reach();
        let mut out = Vec::new();
        for dz in -rz..=rz {
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    if self.contains(dx, dy, dz) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    pub fn contains(&self, dx: i64, dy: i64, dz: i64) -> bool {
        match *self {
            StructuringElement::Disk(r) => dz == 0 && dx * dx + dy * dy <= (r as i64).pow(2),
            StructuringElement::Ball(r) => dx * dx + dy * dy + dz * dz <= (r as i64).pow(2),
            StructuringElement::Ellipsoid { radius_um, spacing } => {
                let d2 = physical_d2(dx, dy, dz, spacing);
                d2 <= radius_um * radius_um + RADIUS_EPS
            }
        }
    }
}

/// `wx·dx² + wy·dy² + wz·dz²`, evaluated in the same order as the distance
/// transform so both routes round identically.
pub(crate) fn physical_d2(dx: i64, dy: i64, dz: i64, s: VoxelSpacing) -> f64 {
    let (wx, wy, wz) = (s.sx * s.sx, s.sy * s.sy, s.sz * s.sz);
    let (fx, fy, fz) = (dx as f64, dy as f64, dz as f64);
    wx * (fx * fx) + wy * (fy * fy) + wz * (fz * fz)
}

fn shifted(dims: Dims, x: usize, y: usize, z: usize, o: [i64; 3]) -> Option<usize> {
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);
    let (px, py, pz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
    if px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny || pz >= nz {
        None
    } else {
        Some(dims.index(px as usize, py as usize, pz as usize))
    }
}

/// True at `p` iff the element centered at `p` lies entirely in the mask.
pub fn erode(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let dims = mask.dims();
    let offsets = se.offsets();
    let src = mask.data();
    let mut out = BinaryMask::new(dims);
    let dst = out.data_mut();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !src[i] {
                    continue;
                }
                dst[i] = offsets
                    .iter()
                    .all(|&o| shifted(dims, x, y, z, o).is_some_and(|j| src[j]));
            }
        }
    }
    out
}

/// True at `p` iff the element centered at `p` touches the mask.
pub fn dilate(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    let dims = mask.dims();
    let offsets = se.offsets();
    let src = mask.data();
    let mut out = BinaryMask::new(dims);
    let dst = out.data_mut();
    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                if !src[dims.index(x, y, z)] {
                    continue;
                }
                // The element is symmetric, so painting it around each set
                // voxel equals the reflected-element definition.
                for &o in &offsets {
                    if let Some(j) = shifted(dims, x, y, z, o) {
                        dst[j] = true;
                    }
                }
            }
        }
    }
    out
}

/// Erosion followed by dilation with the same element.
pub fn opening(mask: &BinaryMask, se: &StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}
