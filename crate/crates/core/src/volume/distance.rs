//! Exact Euclidean dilation by a physical radius, computed one plane at a time.
//!
//! Each input plane gets an anisotropic squared distance transform
//! (lower envelope of parabolas, separable in x then y). An output plane is
//! the union over the planes within reach in z of `d²(p) + (dz·sz)² <= r²`.
//! Only `2·rz + 1` boolean planes are ever held, so a whole stack can be
//! dilated while streaming it from disk.

use std::collections::VecDeque;

use super::morphology::RADIUS_EPS;
use super::{BinaryMask, Dims, VoxelSpacing};

/// Squared distance along one line to the nearest finite site.
fn envelope_1d(f: &[f64], w: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    let n = f.len();
    sites.clear();
    bounds.clear();
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w * (q as f64) * (q as f64);
        loop {
            match sites.last() {
                None => {
                    sites.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&v) => {
                    let fv = f[v] + w * (v as f64) * (v as f64);
                    let s = (fq - fv) / (2.0 * w * (q as f64 - v as f64));
                    if s <= *bounds.last().unwrap() {
                        sites.pop();
                        bounds.pop();
                    } else {
                        sites.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < q as f64 {
            k += 1;
        }
        let v = sites[k];
        let d = q as f64 - v as f64;
        *o = f[v] + w * (d * d);
    }
}

/// Squared physical distance from every pixel to the nearest set pixel of
/// an `nx * ny` plane (`+inf` when the plane is empty).
pub fn squared_distance_2d(plane: &[bool], nx: usize, ny: usize, spacing: VoxelSpacing) -> Vec<f64> {
    assert_eq!(plane.len(), nx * ny);
    let (wx, wy) = (spacing.sx * spacing.sx, spacing.sy * spacing.sy);
    let mut sites = Vec::new();
    let mut bounds = Vec::new();

    let mut rows = vec![f64::INFINITY; nx * ny];
    let mut f = vec![0.0; nx.max(ny)];
    for y in 0..ny {
        let row = &plane[y * nx..(y + 1) * nx];
        for (dst, &v) in f[..nx].iter_mut().zip(row) {
            *dst = if v { 0.0 } else { f64::INFINITY };
        }
        envelope_1d(&f[..nx], wx, &mut rows[y * nx..(y + 1) * nx], &mut sites, &mut bounds);
    }

    let mut out = vec![f64::INFINITY; nx * ny];
    let mut col = vec![0.0; ny];
    for x in 0..nx {
        for y in 0..ny {
            f[y] = rows[y * nx + x];
        }
        envelope_1d(&f[..ny], wy, &mut col, &mut sites, &mut bounds);
        for y in 0..ny {
            out[y * nx + x] = col[y];
        }
    }
    out
}

/// Streaming dilation of a stack by a ball of `radius_um` micrometers.
///
/// Push input planes in z order; completed output planes are returned as
/// soon as no later input can touch them.
pub struct PlaneDilator {
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: VoxelSpacing,
    radius_um: f64,
    reach_z: usize,
    next_input: usize,
    /// Output planes `first_pending..` still accumulating.
    pending: VecDeque<Vec<bool>>,
    first_pending: usize,
}

impl PlaneDilator {
    pub fn new(dims: Dims, spacing: VoxelSpacing, radius_um: f64) -> Self {
        assert!(radius_um >= 0.0 && radius_um.is_finite());
        let reach_z = ((radius_um + RADIUS_EPS) / spacing.sz).floor() as usize;
        PlaneDilator {
            nx: dims.nx,
            ny: dims.ny,
            nz: dims.nz,
            spacing,
            radius_um,
            reach_z,
            next_input: 0,
            pending: VecDeque::new(),
            first_pending: 0,
        }
    }

    /// Number of output planes held at most, for memory accounting.
    pub fn window_planes(&self) -> usize {
        2 * self.reach_z + 1
    }

    pub fn push(&mut self, plane: &[bool]) -> Vec<(usize, Vec<bool>)> {
        assert_eq!(plane.len(), self.nx * self.ny);
        assert!(self.next_input < self.nz, "more planes pushed than the stack holds");
        let z = self.next_input;
        self.next_input += 1;

        let last_out = (z + self.reach_z).min(self.nz - 1);
        while self.first_pending + self.pending.len() <= last_out {
            self.pending.push_back(vec![false; self.nx * self.ny]);
        }

        if plane.iter().any(|&v| v) {
            let d2 = squared_distance_2d(plane, self.nx, self.ny, self.spacing);
            let r2 = self.radius_um * self.radius_um + RADIUS_EPS;
            let wz = self.spacing.sz * self.spacing.sz;
            let lo = z.saturating_sub(self.reach_z);
            for out_z in lo..=last_out {
                let dz = out_z as f64 - z as f64;
                let extra = wz * (dz * dz);
                let dst = &mut self.pending[out_z - self.first_pending];
                for (o, &d) in dst.iter_mut().zip(&d2) {
                    if !*o && d + extra <= r2 {
                        *o = true;
                    }
                }
            }
        }

        let mut done = Vec::new();
        while self.first_pending + self.reach_z <= z && !self.pending.is_empty() {
            done.push((self.first_pending, self.pending.pop_front().unwrap()));
            self.first_pending += 1;
        }
        if self.next_input == self.nz {
            done.extend(self.drain());
        }
        done
    }

    fn drain(&mut self) -> Vec<(usize, Vec<bool>)> {
        let mut done = Vec::new();
        while let Some(p) = self.pending.pop_front() {
            done.push((self.first_pending, p));
            self.first_pending += 1;
        }
        done
    }
}

/// In-memory dilation by a physical radius, via [`PlaneDilator`].
pub fn dilate_physical(mask: &BinaryMask, spacing: VoxelSpacing, radius_um: f64) -> BinaryMask {
    let dims = mask.dims();
    let mut out = BinaryMask::new(dims);
    let mut dilator = PlaneDilator::new(dims, spacing, radius_um);
    for z in 0..dims.nz {
        for (oz, plane) in dilator.push(mask.plane(z)) {
            out.plane_mut(oz).copy_from_slice(&plane);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{dilate, StructuringElement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spacing = VoxelSpacing::new(0.21, 0.35, 1.0).unwrap();
        let (nx, ny) = (23, 17);
        for _ in 0..20 {
            let plane: Vec<bool> = (0..nx * ny).map(|_| rng.random_bool(0.05)).collect();
            let d2 = squared_distance_2d(&plane, nx, ny, spacing);
            for y in 0..ny {
                for x in 0..nx {
                    let mut best = f64::INFINITY;
                    for qy in 0..ny {
                        for qx in 0..nx {
                            if plane[qy * nx + qx] {
                                let (dx, dy) = (x as f64 - qx as f64, y as f64 - qy as f64);
                                best = best.min(0.21 * 0.21 * (dx * dx) + 0.35 * 0.35 * (dy * dy));
                            }
                        }
                    }
                    let got = d2[y * nx + x];
                    assert!(
                        (got - best).abs() <= 1e-9 * best.max(1.0) || (got.is_infinite() && best.is_infinite()),
                        "({x},{y}): {got} vs {best}"
                    );
                }
            }
        }
    }

    #[test]
    fn streaming_dilation_equals_brute_force_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = Dims::new(20, 18, 12);
        for spacing in [
            VoxelSpacing::isotropic(1.0).unwrap(),
            VoxelSpacing::new(0.21, 0.21, 0.42).unwrap(),
        ] {
            for radius in [0.0, 1.0, 2.0, 0.9] {
                let mask = BinaryMask::from_fn(dims, |_, _, _| rng.random_bool(0.02));
                let se = StructuringElement::Ellipsoid {
                    radius_um: radius,
                    spacing,
                };
                let expected = dilate(&mask, &se);
                assert_eq!(dilate_physical(&mask, spacing, radius), expected, "r={radius}");
            }
        }
    }

    #[test]
    fn window_is_bounded() {
        let s = VoxelSpacing::default();
        let d = PlaneDilator::new(Dims::new(4, 4, 100), s, 2.0);
        assert_eq!(d.window_planes(), 2 * 9 + 1);
    }
}
