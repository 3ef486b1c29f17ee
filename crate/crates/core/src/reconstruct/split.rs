//! Clump splitting.
//!
//! A blob made of several touching nuclei shows up in the link graph as
//! separate pieces that merge into shared slices and separate again. Each
//! member slice gets an estimated nucleus count from a bottom-up and a
//! top-down sweep; slices estimated to hold two or more nuclei in both
//! sweeps are cut between the surrounding single-nucleus tracks by a
//! breadth-first front. The resulting slice pieces ("atoms") are clustered
//! by their centroids with seeded k-means, the largest valid k is kept, and
//! the blob's voxels are finally reassigned to the nearest cluster center.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blobs::{adjacency, find_events, split_decision, SliceDecision};
use super::{Blob3D, SplitParams};
use crate::segment2d::{extract_objects, Plane2DObject};
use crate::volume::{BinaryMask, Connectivity2d, Dims, VoxelSpacing};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitContext {
    pub spacing: VoxelSpacing,
    /// Connectivity of the 2D pieces of split blobs.
    pub connectivity: Connectivity2d,
    pub seed: u64,
}

/// Result of [`split_clump`] with the per-k validity log.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub blobs: Vec<Blob3D>,
    pub accepted_k: Option<usize>,
    /// `(k, valid)` for every k that was tried.
    pub tried: Vec<(usize, bool)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Cluster per point, relabeled in order of first appearance.
    pub assignment: Vec<usize>,
    pub centers: Vec<[f64; 3]>,
    pub sse: f64,
}

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn nearest(p: &[f64; 3], centers: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = d2(p, c);
        if d < bd {
            bd = d;
            best = j;
        }
    }
    best
}

fn plus_plus(points: &[[f64; 3]], k: usize, rng: &mut impl Rng) -> Option<Vec<[f64; 3]>> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let dist: Vec<f64> = points.iter().map(|p| d2(p, &centers[nearest(p, &centers)])).collect();
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = points.len() - 1;
        for (i, d) in dist.iter().enumerate() {
            acc += d;
            if acc > r {
                pick = i;
                break;
            }
        }
        centers.push(points[pick]);
    }
    Some(centers)
}

fn lloyd(points: &[[f64; 3]], mut centers: Vec<[f64; 3]>) -> Option<KMeansResult> {
    let k = centers.len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let j = nearest(p, &centers);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        let mut sum = vec![[0.0; 3]; k];
        let mut n = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            n[a] += 1;
            for c in 0..3 {
                sum[a][c] += p[c];
            }
        }
        if n.contains(&0) {
            return None;
        }
        for j in 0..k {
            centers[j] = [sum[j][0] / n[j] as f64, sum[j][1] / n[j] as f64, sum[j][2] / n[j] as f64];
        }
        if !changed {
            break;
        }
    }
    let sse = assignment.iter().zip(points).map(|(&a, p)| d2(p, &centers[a])).sum();
    Some(KMeansResult {
        assignment,
        centers,
        sse,
    })
}

/// Seeded k-means++ with restarts; the lowest within-cluster sum of squares
/// wins, earlier restarts on ties. `None` if no restart yields k non-empty
/// clusters.
pub fn kmeans(points: &[[f64; 3]], k: usize, restarts: usize, rng: &mut impl Rng) -> Option<KMeansResult> {
    if k == 0 || points.len() < k {
        return None;
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let Some(init) = plus_plus(points, k, rng) else {
            continue;
        };
        let Some(r) = lloyd(points, init) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| r.sse < b.sse) {
            best = Some(r);
        }
    }
    best.map(|mut r| {
        let mut map = vec![usize::MAX; k];
        let mut next = 0;
        for a in &r.assignment {
            if map[*a] == usize::MAX {
                map[*a] = next;
                next += 1;
            }
        }
        let mut centers = vec![[0.0; 3]; k];
        for (old, &new) in map.iter().enumerate() {
            centers[new] = r.centers[old];
        }
        for a in r.assignment.iter_mut() {
            *a = map[*a];
        }
        r.centers = centers;
        r
    })
}

/// Estimated nuclei per member: minimum of a bottom-up and a top-down count.
fn nucleus_estimates(blob: &Blob3D, params: &SplitParams) -> Vec<usize> {
    let n = blob.members.len();
    let (preds, succs) = adjacency(n, &blob.links);
    let areas = |ids: &[usize]| ids.iter().map(|&i| blob.members[i].area()).collect::<Vec<_>>();
    let sweep = |order: &mut dyn Iterator<Item = usize>, back: &[Vec<usize>], fwd: &[Vec<usize>]| {
        let mut count = vec![0usize; n];
        for m in order {
            let contrib = |p: usize, count: &[usize]| {
                let out = &fwd[p];
                if out.len() >= 2 && split_decision(&areas(out), params.beta) == SliceDecision::Split {
                    count[p].saturating_sub(out.len() - 1).max(1)
                } else {
                    count[p]
                }
            };
            let ins = &back[m];
            count[m] = match ins.len() {
                0 => 1,
                1 => contrib(ins[0], &count),
                _ => {
                    let c = ins.iter().map(|&p| contrib(p, &count));
                    if split_decision(&areas(ins), params.beta) == SliceDecision::Split {
                        c.sum()
                    } else {
                        c.max().unwrap_or(1)
                    }
                }
            };
        }
        count
    };
    let up = sweep(&mut (0..n), &preds, &succs);
    let down = sweep(&mut (0..n).rev(), &succs, &preds);
    up.into_iter().zip(down).map(|(a, b)| a.min(b)).collect()
}

struct Grid {
    x0: usize,
    y0: usize,
    z0: usize,
    bx: usize,
    by: usize,
    bz: usize,
    width: usize,
}

impl Grid {
    fn of(blob: &Blob3D) -> Grid {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for m in &blob.members {
            x0 = x0.min(m.bbox.xmin);
            y0 = y0.min(m.bbox.ymin);
            x1 = x1.max(m.bbox.xmax);
            y1 = y1.max(m.bbox.ymax);
        }
        let (z0, z1) = blob.z_range().expect("nonempty blob");
        Grid {
            x0,
            y0,
            z0,
            bx: x1 - x0 + 1,
            by: y1 - y0 + 1,
            bz: z1 - z0 + 1,
            width: blob.members[0].width,
        }
    }

    fn len(&self) -> usize {
        self.bx * self.by * self.bz
    }

    fn local(&self, z: usize, pixel: u32) -> usize {
        let (x, y) = (pixel as usize % self.width, pixel as usize / self.width);
        (x - self.x0) + self.bx * ((y - self.y0) + self.by * (z - self.z0))
    }

    /// `(global z, in-plane pixel)` of a local index.
    fn global(&self, i: usize) -> (usize, u32) {
        let x = i % self.bx;
        let y = (i / self.bx) % self.by;
        let z = i / (self.bx * self.by);
        (z + self.z0, ((x + self.x0) + self.width * (y + self.y0)) as u32)
    }

    fn footprint_index(&self, i: usize) -> usize {
        i % (self.bx * self.by)
    }

    fn microns(&self, i: usize, s: &VoxelSpacing) -> [f64; 3] {
        let x = (i % self.bx + self.x0) as f64;
        let y = ((i / self.bx) % self.by + self.y0) as f64;
        let z = (i / (self.bx * self.by) + self.z0) as f64;
        [x * s.sx, y * s.sy, z * s.sz]
    }
}

struct Atom {
    z: usize,
    /// Local grid indices.
    voxels: Vec<usize>,
    centroid: [f64; 3],
}

const NONE: u32 = u32::MAX;

/// Cuts the blob into single-nucleus slice pieces. `None` when no member is
/// estimated to hold more than one nucleus.
fn atomize(blob: &Blob3D, grid: &Grid, params: &SplitParams, spacing: &VoxelSpacing) -> Option<Vec<Atom>> {
    let est = nucleus_estimates(blob, params);
    if est.iter().all(|&e| e < 2) {
        return None;
    }
    let n = blob.members.len();
    let merged: Vec<bool> = est.iter().map(|&e| e >= 2).collect();

    // Tracks: components of single-nucleus members.
    let mut track = vec![NONE; n];
    let (preds, succs) = adjacency(n, &blob.links);
    let mut next_track = 0u32;
    for start in 0..n {
        if merged[start] || track[start] != NONE {
            continue;
        }
        let mut stack = vec![start];
        track[start] = next_track;
        while let Some(m) = stack.pop() {
            for &o in preds[m].iter().chain(&succs[m]) {
                if !merged[o] && track[o] == NONE {
                    track[o] = next_track;
                    stack.push(o);
                }
            }
        }
        next_track += 1;
    }

    let mut member_of = vec![NONE; grid.len()];
    let mut label = vec![NONE; grid.len()];
    for (mi, m) in blob.members.iter().enumerate() {
        for &p in &m.pixels {
            let i = grid.local(m.z, p);
            member_of[i] = mi as u32;
            label[i] = track[mi];
        }
    }

    let mut queue: VecDeque<usize> = (0..grid.len()).filter(|&i| label[i] != NONE).collect();
    let (bx, by, bz) = (grid.bx as i64, grid.by as i64, grid.bz as i64);
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = ((i % grid.bx) as i64, ((i / grid.bx) % grid.by) as i64, (i / (grid.bx * grid.by)) as i64);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (px, py, pz) = (x + dx, y + dy, z + dz);
                    if px < 0 || py < 0 || pz < 0 || px >= bx || py >= by || pz >= bz {
                        continue;
                    }
                    let j = (px + bx * (py + by * pz)) as usize;
                    if member_of[j] != NONE && label[j] == NONE {
                        label[j] = label[i];
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    // Voxels no front reached stay with their own member.
    for i in 0..grid.len() {
        if member_of[i] != NONE && label[i] == NONE {
            label[i] = next_track + member_of[i];
        }
    }

    let mut keyed: Vec<((u32, u32), usize)> = (0..grid.len())
        .filter(|&i| member_of[i] != NONE)
        .map(|i| ((member_of[i], label[i]), i))
        .collect();
    keyed.sort_unstable();
    let mut atoms: Vec<Atom> = Vec::new();
    let mut last = None;
    for (key, i) in keyed {
        if last != Some(key) {
            atoms.push(Atom {
                z: blob.members[key.0 as usize].z,
                voxels: Vec::new(),
                centroid: [0.0; 3],
            });
            last = Some(key);
        }
        atoms.last_mut().expect("pushed").voxels.push(i);
    }
    for a in &mut atoms {
        let mut c = [0.0; 3];
        for &i in &a.voxels {
            let p = grid.microns(i, spacing);
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        let n = a.voxels.len() as f64;
        a.centroid = [c[0] / n, c[1] / n, c[2] / n];
    }
    Some(atoms)
}

fn clusters_valid(atoms: &[Atom], assignment: &[usize], k: usize, grid: &Grid, params: &SplitParams) -> bool {
    let mut planes: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut footprint = vec![vec![false; grid.bx * grid.by]; k];
    for (a, &c) in atoms.iter().zip(assignment) {
        planes[c].push(a.z);
        for &i in &a.voxels {
            footprint[c][grid.footprint_index(i)] = true;
        }
    }
    let sizes: Vec<usize> = planes
        .iter_mut()
        .map(|p| {
            p.sort_unstable();
            p.dedup();
            p.len()
        })
        .collect();
    let (min, max) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
    if min < params.alpha || (min as f64) < params.beta * max as f64 - 1e-9 {
        return false;
    }
    let area: Vec<usize> = footprint.iter().map(|f| f.iter().filter(|&&b| b).count()).collect();
    for i in 0..k {
        for j in i + 1..k {
            let inter = footprint[i].iter().zip(&footprint[j]).filter(|(a, b)| **a && **b).count();
            if inter as f64 > params.gamma * area[i].min(area[j]) as f64 + 1e-9 {
                return false;
            }
        }
    }
    true
}

fn rng_for(seed: u64, first_voxel: usize, k: usize) -> ChaCha8Rng {
    let mix = seed ^ (first_voxel as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((k as u64) << 56);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Reassigns every blob voxel to its nearest cluster center until stable.
fn refine_voxels(atoms: &[Atom], assignment: &[usize], k: usize, grid: &Grid, spacing: &VoxelSpacing) -> Vec<(usize, usize)> {
    let mut voxels: Vec<(usize, usize)> = atoms
        .iter()
        .zip(assignment)
        .flat_map(|(a, &c)| a.voxels.iter().map(move |&i| (i, c)))
        .collect();
    voxels.sort_unstable();
    let pos: Vec<[f64; 3]> = voxels.iter().map(|&(i, _)| grid.microns(i, spacing)).collect();
    let initial = voxels.clone();
    for _ in 0..100 {
        let mut sum = vec![[0.0; 3]; k];
        let mut n = vec![0usize; k];
        for (&(_, c), p) in voxels.iter().zip(&pos) {
            n[c] += 1;
            for d in 0..3 {
                sum[c][d] += p[d];
            }
        }
        if n.contains(&0) {
            return initial;
        }
        let centers: Vec<[f64; 3]> = (0..k)
            .map(|j| [sum[j][0] / n[j] as f64, sum[j][1] / n[j] as f64, sum[j][2] / n[j] as f64])
            .collect();
        let mut changed = false;
        for (v, p) in voxels.iter_mut().zip(&pos) {
            let j = nearest(p, &centers);
            if v.1 != j {
                v.1 = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if (0..k).any(|j| !voxels.iter().any(|v| v.1 == j)) {
        return initial;
    }
    voxels
}

fn assemble(
    blob: &Blob3D,
    voxels: &[(usize, usize)],
    k: usize,
    grid: &Grid,
    params: &SplitParams,
    connectivity: Connectivity2d,
) -> Vec<Blob3D> {
    let plane = grid.bx * grid.by;
    let mut per: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); grid.bz]; k];
    for &(i, c) in voxels {
        per[c][i / plane].push(i % plane);
    }
    per.into_iter()
        .map(|planes| {
            let mut members: Vec<Plane2DObject> = Vec::new();
            let mut mask = BinaryMask::new(Dims::plane(grid.bx, grid.by));
            for (lz, local) in planes.into_iter().enumerate() {
                if local.is_empty() {
                    continue;
                }
                mask.data_mut().fill(false);
                for &i in &local {
                    mask.data_mut()[i] = true;
                }
                for o in extract_objects(&mask, 0, connectivity, 0) {
                    let px = o
                        .pixels
                        .iter()
                        .map(|&p| grid.global(p as usize + lz * plane).1)
                        .collect();
                    members.push(Plane2DObject::from_pixels(0, lz + grid.z0, grid.width, px));
                }
            }
            let mut links = Vec::new();
            for a in 0..members.len() {
                for b in a + 1..members.len() {
                    if members[b].z == members[a].z + 1 && members[a].intersection(&members[b]) > 0 {
                        links.push((a, b));
                    }
                }
            }
            let events = find_events(&members, &links, params);
            Blob3D {
                label: blob.label,
                members,
                links,
                events,
            }
        })
        .filter(|b| !b.members.is_empty())
        .collect()
}

/// Splits a blob of touching nuclei; returns it unchanged when no k in
/// `2..=max_clusters` gives valid clusters.
pub fn split_clump(blob: &Blob3D, params: &SplitParams, ctx: &SplitContext) -> SplitOutcome {
    let unchanged = |tried| SplitOutcome {
        blobs: vec![blob.clone()],
        accepted_k: None,
        tried,
    };
    if blob.members.is_empty() {
        return unchanged(vec![]);
    }
    let grid = Grid::of(blob);
    let Some(atoms) = atomize(blob, &grid, params, &ctx.spacing) else {
        return unchanged(vec![]);
    };
    let points: Vec<[f64; 3]> = atoms.iter().map(|a| a.centroid).collect();
    let first = (blob.members[0].z << 32) | blob.members[0].pixels[0] as usize;
    let mut tried = Vec::new();
    let mut accepted: Option<(usize, Vec<usize>)> = None;
    for k in 2..=params.max_clusters {
        let mut rng = rng_for(ctx.seed, first, k);
        let valid = match kmeans(&points, k, params.kmeans_restarts, &mut rng) {
            Some(r) if clusters_valid(&atoms, &r.assignment, k, &grid, params) => {
                accepted = Some((k, r.assignment));
                true
            }
            _ => false,
        };
        tried.push((k, valid));
    }
    let Some((k, assignment)) = accepted else {
        return unchanged(tried);
    };
    let voxels = refine_voxels(&atoms, &assignment, k, &grid, &ctx.spacing);
    SplitOutcome {
        blobs: assemble(blob, &voxels, k, &grid, params, ctx.connectivity),
        accepted_k: Some(k),
        tried,
    }
}
