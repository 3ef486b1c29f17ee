//! Two-pass union-find connected-component labeling.
//!
//! Labels are assigned 1..K in raster order of each component's first voxel,
//! which makes the output independent of any traversal detail.

use super::{BinaryMask, Dims, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity2d {
    Four,
    #[default]
    Eight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Connectivity3d {
    Six,
    #[default]
    TwentySix,
}

impl Connectivity2d {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity2d::Four),
            8 => Some(Connectivity2d::Eight),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity2d::Four => 4,
            Connectivity2d::Eight => 8,
        }
    }

    /// Neighbor offsets that precede a pixel in raster order.
    pub(crate) fn backward(self) -> &'static [[i64; 3]] {
        match self {
            Connectivity2d::Four => &[[-1, 0, 0], [0, -1, 0]],
            Connectivity2d::Eight => &[[-1, 0, 0], [-1, -1, 0], [0, -1, 0], [1, -1, 0]],
        }
    }

    /// All neighbor offsets `[dx, dy]`.
    pub fn offsets(self) -> &'static [[i64; 2]] {
        match self {
            Connectivity2d::Four => &[[-1, 0], [1, 0], [0, -1], [0, 1]],
            Connectivity2d::Eight => &[
                [-1, -1],
                [0, -1],
                [1, -1],
                [-1, 0],
                [1, 0],
                [-1, 1],
                [0, 1],
                [1, 1],
            ],
        }
    }
}

impl Connectivity3d {
    fn backward(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1..=0i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    // Strictly before (0,0,0) in z-y-x raster order.
                    let before = dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0)));
                    if !before {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if self == Connectivity3d::Six && manhattan != 1 {
                        continue;
                    }
                    out.push([dx, dy, dz]);
                }
            }
        }
        out
    }
}

struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    fn new() -> Self {
        // Slot 0 is unused so provisional labels start at 1.
        DisjointSets { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut a: u32) -> u32 {
        while self.parent[a as usize] != a {
            let grand = self.parent[self.parent[a as usize] as usize];
            self.parent[a as usize] = grand;
            a = grand;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

fn label_with(mask: &BinaryMask, backward: &[[i64; 3]]) -> (LabelVolume, usize) {
    let dims = mask.dims();
    let src = mask.data();
    let mut labels = vec![0u32; dims.len()];
    let mut sets = DisjointSets::new();
    let (nx, ny) = (dims.nx as i64, dims.ny as i64);

    for z in 0..dims.nz {
        for y in 0..dims.ny {
            for x in 0..dims.nx {
                let i = dims.index(x, y, z);
                if !src[i] {
                    continue;
                }
                let mut current = 0u32;
                for o in backward {
                    let (px, py, pz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                    if px < 0 || py < 0 || pz < 0 || px >= nx || py >= ny {
                        continue;
                    }
                    let n = labels[dims.index(px as usize, py as usize, pz as usize)];
                    if n == 0 {
                        continue;
                    }
                    current = if current == 0 { n } else { sets.union(current, n) };
                }
                labels[i] = if current == 0 { sets.make() } else { current };
            }
        }
    }

    let mut final_of = vec![0u32; sets.parent.len()];
    let mut count = 0u32;
    for l in labels.iter_mut() {
        if *l == 0 {
            continue;
        }
        let root = sets.find(*l) as usize;
        if final_of[root] == 0 {
            count += 1;
            final_of[root] = count;
        }
        *l = final_of[root];
    }
    (
        LabelVolume::from_vec(dims, labels).expect("labels sized from mask"),
        count as usize,
    )
}

/// Labels each z-plane of `plane` independently; meant for single planes.
/// Returns the labeled plane and the number of components.
pub fn connected_components_2d(plane: &BinaryMask, connectivity: Connectivity2d) -> (LabelVolume, usize) {
    if plane.dims().nz == 1 {
        return label_with(plane, connectivity.backward());
    }
    // Multi-plane input: label plane by plane with one running counter.
    let dims = plane.dims();
    let mut out = vec![0u32; dims.len()];
    let mut total = 0u32;
    for z in 0..dims.nz {
        let single = BinaryMask::from_vec(Dims::plane(dims.nx, dims.ny), plane.plane(z).to_vec())
            .expect("plane sized from mask");
        let (labels, n) = label_with(&single, connectivity.backward());
        for (dst, &l) in out[z * dims.plane_len()..].iter_mut().zip(labels.data()) {
            *dst = if l == 0 { 0 } else { l + total };
        }
        total += n as u32;
    }
    (LabelVolume::from_vec(dims, out).expect("sized"), total as usize)
}

pub fn connected_components_3d(mask: &BinaryMask, connectivity: Connectivity3d) -> (LabelVolume, usize) {
    label_with(mask, &connectivity.backward())
}
