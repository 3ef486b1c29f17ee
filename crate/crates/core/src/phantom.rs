//! Synthetic three-channel stacks with exact ground truth.
//!
//! Nuclei are ellipsoids cut at `|dz| <= z_truncation * c`, with each
//! cross-section opened by a radius-1 disk by default. Vessels are
//! straight tubes, and neurons carry a marker halo: the nucleus ellipsoid
//! grown by `halo_um` on every semi-axis. Randomness comes from ChaCha8 seeded
//! with the spec seed; noise uses one ChaCha8 stream per (channel, plane), so
//! any plane can be rendered on its own and results do not depend on the
//! order planes are produced in.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fusion::CellClass;
use crate::io::{label_page, write_json, ChannelSet, StackWriter};
use crate::volume::{opening, BinaryMask, BitDepth, Dims, LabelVolume, StructuringElement, VoxelGrid, VoxelSpacing};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Placement {
    /// Random sequential placement with bounded retries.
    Random,
    /// Nuclei of radius `radius_um` centered in randomly chosen cells of a
    /// grid of `slot`-voxel cells.
    Lattice { slot: [usize; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
    pub neurons: usize,
    pub plain: usize,
    pub perivascular: usize,
    /// Pairs of touching nuclei, taken from the neuron and plain counts.
    pub touching_pairs: usize,
    pub radius_um: f64,
    /// Radii are drawn uniformly from `radius_um ± radius_jitter_um`.
    pub radius_jitter_um: f64,
    /// Each semi-axis is scaled by a factor in `1 ± axis_jitter`.
    pub axis_jitter: f64,
    pub z_truncation: f64,
    /// Open every nucleus cross-section with a radius-1 disk, which removes
    /// the one-pixel spurs of digitized ellipses.
    pub open_sections: bool,
    /// Minimum surface-to-surface gap in voxels between untouching nuclei.
    pub gap_voxels: f64,
    pub placement: Placement,
    pub vessels: usize,
    pub vessel_radius_um: f64,
    /// Largest lateral drift of a vessel axis per µm of depth.
    pub vessel_tilt: f64,
    /// Extra clearance between non-perivascular nuclei and vessel walls.
    pub vessel_clearance_um: f64,
    pub halo_um: f64,
    pub background: u16,
    pub nucleus_level: u16,
    pub vessel_level: u16,
    pub marker_level: u16,
    pub noise_sigma: f64,
    /// Fraction of the intensity left on the last plane. Intensities are
    /// multiplied by `exp(-λ·z)`, z in µm, with λ chosen to reach it; 1 turns
    /// attenuation off.
    pub intensity_at_max_z: f64,
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let dims = Dims::new(384, 384, 60);
        let spacing = VoxelSpacing::default();
        PhantomSpec {
            dims,
            spacing,
            neurons: 10,
            plain: 5,
            perivascular: 3,
            touching_pairs: 0,
            radius_um: 4.5,
            radius_jitter_um: 0.3,
            axis_jitter: 0.05,
            z_truncation: 0.9,
            open_sections: true,
            gap_voxels: 2.0,
            placement: Placement::Random,
            vessels: 2,
            vessel_radius_um: 3.0,
            vessel_tilt: 0.3,
            vessel_clearance_um: 3.0,
            halo_um: 1.0,
            background: 20,
            nucleus_level: 180,
            vessel_level: 200,
            marker_level: 160,
            noise_sigma: 5.0,
            intensity_at_max_z: 0.6,
            max_attempts: 20_000,
            seed: 0,
        }
    }
}

/// λ that leaves `fraction` of the intensity on the last plane.
pub fn lambda_for(fraction: f64, dims: Dims, spacing: VoxelSpacing) -> f64 {
    let depth = dims.nz.saturating_sub(1) as f64 * spacing.sz;
    if depth == 0.0 || fraction >= 1.0 {
        0.0
    } else {
        -fraction.ln() / depth
    }
}

impl PhantomSpec {
    /// No noise, no attenuation.
    pub fn clean(mut self) -> Self {
        self.noise_sigma = 0.0;
        self.intensity_at_max_z = 1.0;
        self
    }

    /// λ of the z-attenuation, per µm.
    pub fn attenuation_per_um(&self) -> f64 {
        lambda_for(self.intensity_at_max_z, self.dims, self.spacing)
    }

    pub fn nucleus_count(&self) -> usize {
        self.neurons + self.plain + self.perivascular
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("phantom spec: {m}")));
        if self.dims.is_empty() {
            return bad("dims must be nonzero");
        }
        let positive = [
            ("radius_um", self.radius_um),
            ("vessel_radius_um", self.vessel_radius_um),
            ("z_truncation", self.z_truncation),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        let nonneg = [
            ("radius_jitter_um", self.radius_jitter_um),
            ("axis_jitter", self.axis_jitter),
            ("gap_voxels", self.gap_voxels),
            ("vessel_tilt", self.vessel_tilt),
            ("vessel_clearance_um", self.vessel_clearance_um),
            ("halo_um", self.halo_um),
            ("noise_sigma", self.noise_sigma),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(&format!("{name} must be >= 0"));
            }
        }
        if self.radius_jitter_um >= self.radius_um || self.axis_jitter >= 1.0 {
            return bad("jitter must leave every semi-axis positive");
        }
        if !(self.intensity_at_max_z > 0.0 && self.intensity_at_max_z <= 1.0) {
            return bad("intensity_at_max_z must be in (0, 1]");
        }
        if self.z_truncation > 1.0 {
            return bad("z_truncation must be in (0, 1]");
        }
        if 2 * self.touching_pairs > self.neurons + self.plain {
            return bad("touching pairs need two neuron or plain nuclei each");
        }
        if let Placement::Lattice { slot } = self.placement {
            if self.perivascular > 0 || self.touching_pairs > 0 || self.vessels > 0 {
                return bad("lattice placement supports neither vessels nor touching pairs");
            }
            if slot.contains(&0) {
                return bad("lattice slots must be nonzero");
            }
        }
        Ok(())
    }
}

/// Straight tube through `origin` along unit vector `dir`, in µm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub radius_um: f64,
}

impl Tube {
    pub fn distance(&self, p: [f64; 3]) -> f64 {
        let v = sub(p, self.origin);
        let t = dot(v, self.dir);
        norm(sub(v, scale(self.dir, t)))
    }

    /// Axis point at depth `z` µm.
    pub fn at_z(&self, z: f64) -> [f64; 3] {
        let t = (z - self.origin[2]) / self.dir[2];
        add(self.origin, scale(self.dir, t))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}
fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// One placed nucleus and what was rendered for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleusTruth {
    pub label: u32,
    pub class: CellClass,
    pub center_um: [f64; 3],
    pub semi_axes_um: [f64; 3],
    /// Label of the touching partner, if any.
    pub partner: Option<u32>,
    pub voxel_count: usize,
    /// Centroid of the rendered label region.
    pub centroid_um: [f64; 3],
}

impl NucleusTruth {
    fn bounding_radius(&self) -> f64 {
        self.semi_axes_um.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub labels: LabelVolume,
    pub nuclei: Vec<NucleusTruth>,
}

impl GroundTruth {
    pub fn class_of(&self, label: u32) -> Option<CellClass> {
        self.nuclei.get(label as usize - 1).map(|n| n.class)
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.nuclei.iter().filter(|n| n.class == class).count()
    }
}

/// Placed geometry, ready to be rendered plane by plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomPlan {
    pub spec: PhantomSpec,
    pub tubes: Vec<Tube>,
    /// Label `i + 1` is `nuclei[i]`.
    pub nuclei: Vec<NucleusTruth>,
}

/// Rendered values of one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePhantom {
    pub nuclei: Vec<u16>,
    pub marker: Vec<u16>,
    pub vessel: Vec<u16>,
    pub labels: Vec<u32>,
}

struct Placer<'a> {
    spec: &'a PhantomSpec,
    rng: ChaCha8Rng,
    placed: Vec<NucleusTruth>,
    tubes: Vec<Tube>,
    gap_um: f64,
    extent: [f64; 3],
}

impl Placer<'_> {
    fn draw_axes(&mut self) -> [f64; 3] {
        let s = self.spec;
        let r = if s.radius_jitter_um > 0.0 {
            self.rng.random_range(s.radius_um - s.radius_jitter_um..=s.radius_um + s.radius_jitter_um)
        } else {
            s.radius_um
        };
        std::array::from_fn(|_| {
            if s.axis_jitter > 0.0 {
                r * self.rng.random_range(1.0 - s.axis_jitter..=1.0 + s.axis_jitter)
            } else {
                r
            }
        })
    }

    /// Center range on each axis that keeps the nucleus inside the volume.
    fn center_range(&self, axes: [f64; 3]) -> Option<[(f64, f64); 3]> {
        let sp = self.spec.spacing.as_array();
        let reach = [axes[0], axes[1], axes[2] * self.spec.z_truncation];
        let mut out = [(0.0, 0.0); 3];
        for i in 0..3 {
            let lo = reach[i] + sp[i] + self.gap_um;
            let hi = self.extent[i] - reach[i] - sp[i] - self.gap_um;
            if lo > hi {
                return None;
            }
            out[i] = (lo, hi);
        }
        Some(out)
    }

    fn inside(&self, c: [f64; 3], axes: [f64; 3]) -> bool {
        self.center_range(axes)
            .is_some_and(|r| (0..3).all(|i| r[i].0 <= c[i] && c[i] <= r[i].1))
    }

    fn clear_of_nuclei(&self, c: [f64; 3], radius: f64, skip: Option<usize>) -> bool {
        self.placed.iter().enumerate().all(|(i, n)| {
            Some(i) == skip || norm(sub(c, n.center_um)) >= radius + n.bounding_radius() + self.gap_um
        })
    }

    fn clear_of_tubes(&self, c: [f64; 3], radius: f64, skip: Option<usize>) -> bool {
        self.tubes.iter().enumerate().all(|(i, t)| {
            Some(i) == skip || t.distance(c) >= t.radius_um + radius + self.spec.vessel_clearance_um
        })
    }

    fn push(&mut self, class: CellClass, center: [f64; 3], axes: [f64; 3]) -> usize {
        self.placed.push(NucleusTruth {
            label: self.placed.len() as u32 + 1,
            class,
            center_um: center,
            semi_axes_um: axes,
            partner: None,
            voxel_count: 0,
            centroid_um: [0.0; 3],
        });
        self.placed.len() - 1
    }

    fn infeasible(&self, what: &str) -> Error {
        Error::Infeasible(format!(
            "could not place {what} after {} attempts ({} nuclei placed)",
            self.spec.max_attempts,
            self.placed.len()
        ))
    }

    fn draw_tube(&mut self) -> Tube {
        let [ex, ey, _] = self.extent;
        let origin = [
            self.rng.random_range(0.2 * ex..=0.8 * ex),
            self.rng.random_range(0.2 * ey..=0.8 * ey),
            0.0,
        ];
        let t = self.spec.vessel_tilt;
        let (tx, ty) = if t > 0.0 {
            (self.rng.random_range(-t..=t), self.rng.random_range(-t..=t))
        } else {
            (0.0, 0.0)
        };
        let d = [tx, ty, 1.0];
        Tube {
            origin,
            dir: scale(d, 1.0 / norm(d)),
            radius_um: self.spec.vessel_radius_um,
        }
    }

    /// Vessels are kept far enough apart that a nucleus fits around each;
    /// when the volume is too small for that the last draw is used anyway.
    fn place_tubes(&mut self) {
        let s = self.spec;
        let sep = 2.0 * (s.vessel_radius_um + 2.0 * (s.radius_um + s.radius_jitter_um) + s.vessel_clearance_um);
        let depth = self.extent[2];
        for _ in 0..s.vessels {
            let mut tube = self.draw_tube();
            for _ in 0..s.max_attempts {
                // The lateral offset between two axes is linear in z, so its
                // smallest length over the depth has a closed form.
                let apart = self.tubes.iter().all(|o| {
                    let u = sub(tube.at_z(0.0), o.at_z(0.0));
                    let v = sub(sub(tube.at_z(1.0), o.at_z(1.0)), u);
                    let vv = v[0] * v[0] + v[1] * v[1];
                    let z = if vv > 0.0 {
                        (-(u[0] * v[0] + u[1] * v[1]) / vv).clamp(0.0, depth)
                    } else {
                        0.0
                    };
                    (u[0] + z * v[0]).hypot(u[1] + z * v[1]) >= sep
                });
                if apart {
                    break;
                }
                tube = self.draw_tube();
            }
            self.tubes.push(tube);
        }
    }

    fn place_perivascular(&mut self) -> Result<()> {
        if self.spec.perivascular > 0 && self.tubes.is_empty() {
            return Err(Error::Invalid("phantom spec: perivascular nuclei need at least one vessel".into()));
        }
        for k in 0..self.spec.perivascular {
            let mut done = false;
            for attempt in 0..self.spec.max_attempts {
                // Start round-robin, then let any vessel take the nucleus.
                let ti = if attempt < self.spec.max_attempts / 2 {
                    k % self.tubes.len()
                } else {
                    self.rng.random_range(0..self.tubes.len())
                };
                let axes = self.draw_axes();
                let Some(range) = self.center_range(axes) else { continue };
                let tube = self.tubes[ti];
                let z = self.rng.random_range(range[2].0..=range[2].1);
                let a = tube.at_z(z);
                let e1 = {
                    let c = cross(tube.dir, [0.0, 0.0, 1.0]);
                    if norm(c) < 1e-9 {
                        [1.0, 0.0, 0.0]
                    } else {
                        scale(c, 1.0 / norm(c))
                    }
                };
                let e2 = cross(tube.dir, e1);
                let phi = self.rng.random_range(0.0..2.0 * PI);
                let mean_r = (axes[0] + axes[1]) / 2.0;
                let dist = tube.radius_um + 0.5 * mean_r;
                let c = add(a, add(scale(e1, dist * phi.cos()), scale(e2, dist * phi.sin())));
                let r = axes.iter().copied().fold(0.0, f64::max);
                if self.inside(c, axes) && self.clear_of_nuclei(c, r, None) && self.clear_of_tubes(c, r, Some(ti)) {
                    self.push(CellClass::Perivascular, c, axes);
                    done = true;
                    break;
                }
            }
            if !done {
                return Err(self.infeasible("a perivascular nucleus"));
            }
        }
        Ok(())
    }

    fn place_pair(&mut self, classes: [CellClass; 2]) -> Result<()> {
        for _ in 0..self.spec.max_attempts {
            let axes = self.draw_axes();
            let r = (axes[0] + axes[1] + axes[2]) / 3.0;
            let phi = self.rng.random_range(0.0..2.0 * PI);
            let half = [0.75 * r * phi.cos(), 0.75 * r * phi.sin(), 0.125 * r];
            let range = [0, 1, 2].map(|i| (0.0, self.extent[i]));
            let mid: [f64; 3] = std::array::from_fn(|i| self.rng.random_range(range[i].0..=range[i].1));
            let cs = [sub(mid, half), add(mid, half)];
            let br = axes.iter().copied().fold(0.0, f64::max);
            if cs.iter().all(|&c| self.inside(c, axes) && self.clear_of_nuclei(c, br, None) && self.clear_of_tubes(c, br, None)) {
                let a = self.push(classes[0], cs[0], axes);
                let b = self.push(classes[1], cs[1], axes);
                self.placed[a].partner = Some(b as u32 + 1);
                self.placed[b].partner = Some(a as u32 + 1);
                return Ok(());
            }
        }
        Err(self.infeasible("a touching pair"))
    }

    fn place_single(&mut self, class: CellClass) -> Result<()> {
        for _ in 0..self.spec.max_attempts {
            let axes = self.draw_axes();
            let Some(range) = self.center_range(axes) else { continue };
            let c: [f64; 3] = std::array::from_fn(|i| self.rng.random_range(range[i].0..=range[i].1));
            let br = axes.iter().copied().fold(0.0, f64::max);
            if self.clear_of_nuclei(c, br, None) && self.clear_of_tubes(c, br, None) {
                self.push(class, c, axes);
                return Ok(());
            }
        }
        Err(self.infeasible(&format!("a {} nucleus", class.name())))
    }

    fn place_lattice(&mut self, slot: [usize; 3], classes: &[CellClass]) -> Result<()> {
        let d = self.spec.dims;
        let sp = self.spec.spacing.as_array();
        let n = [d.nx / slot[0], d.ny / slot[1], d.nz / slot[2]];
        let total = n[0] * n[1] * n[2];
        if classes.len() > total {
            return Err(Error::Infeasible(format!(
                "{} nuclei requested but the lattice has {total} slots",
                classes.len()
            )));
        }
        let r = self.spec.radius_um;
        let need = [2.0 * r / sp[0], 2.0 * r / sp[1], 2.0 * r * self.spec.z_truncation / sp[2]];
        for i in 0..3 {
            if need[i] + 1.0 + self.spec.gap_voxels > slot[i] as f64 {
                return Err(Error::Infeasible(format!(
                    "lattice slot of {} voxels on axis {i} cannot hold a nucleus of radius {r} µm with the gap",
                    slot[i]
                )));
            }
        }
        let mut chosen = sample(&mut self.rng, total, classes.len()).into_vec();
        chosen.sort_unstable();
        for (&class, idx) in classes.iter().zip(chosen) {
            let ijk = [idx % n[0], (idx / n[0]) % n[1], idx / (n[0] * n[1])];
            let c = std::array::from_fn(|i| (ijk[i] * slot[i]) as f64 * sp[i] + (slot[i] as f64 - 1.0) / 2.0 * sp[i]);
            self.push(class, c, [r; 3]);
        }
        Ok(())
    }
}

/// Places vessels and nuclei for `spec`.
pub fn plan(spec: &PhantomSpec) -> Result<PhantomPlan> {
    spec.validate()?;
    let sp = spec.spacing.as_array();
    let d = spec.dims;
    let mut p = Placer {
        spec,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        placed: Vec::new(),
        tubes: Vec::new(),
        gap_um: spec.gap_voxels * sp.iter().copied().fold(0.0, f64::max),
        extent: [
            (d.nx - 1) as f64 * sp[0],
            (d.ny - 1) as f64 * sp[1],
            (d.nz - 1) as f64 * sp[2],
        ],
    };
    let mut classes: Vec<CellClass> = std::iter::repeat_n(CellClass::Neuron, spec.neurons)
        .chain(std::iter::repeat_n(CellClass::NonNeuronal, spec.plain))
        .collect();
    // Fisher-Yates via the plan generator so pair classes vary with the seed.
    for i in (1..classes.len()).rev() {
        let j = p.rng.random_range(0..=i);
        classes.swap(i, j);
    }
    match spec.placement {
        Placement::Lattice { slot } => p.place_lattice(slot, &classes)?,
        Placement::Random => {
            p.place_tubes();
            p.place_perivascular()?;
            let (pairs, singles) = classes.split_at(2 * spec.touching_pairs);
            for c in pairs.chunks(2) {
                p.place_pair([c[0], c[1]])?;
            }
            for &c in singles {
                p.place_single(c)?;
            }
        }
    }
    Ok(PhantomPlan {
        spec: spec.clone(),
        tubes: p.tubes,
        nuclei: p.placed,
    })
}

fn noise_rng(seed: u64, channel: u64, z: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + (channel << 40) + z as u64);
    rng
}

impl PhantomPlan {
    pub fn dims(&self) -> Dims {
        self.spec.dims
    }

    /// Normalized squared ellipsoid radius of voxel center `p` for nucleus
    /// `n` grown by `grow` µm, or `None` outside the truncated shape.
    fn inside(n: &NucleusTruth, p: [f64; 3], grow: f64, trunc: f64) -> Option<f64> {
        let d = sub(p, n.center_um);
        let ax = n.semi_axes_um.map(|a| a + grow);
        if d[2].abs() > trunc * n.semi_axes_um[2] + grow {
            return None;
        }
        let q = (d[0] / ax[0]).powi(2) + (d[1] / ax[1]).powi(2) + (d[2] / ax[2]).powi(2);
        (q <= 1.0).then_some(q)
    }

    /// Pixel window `[x0, x1) x [y0, y1)` covering a disk of `r` µm at `c`.
    fn window(&self, c: [f64; 3], r: f64) -> (usize, usize, usize, usize) {
        let d = self.spec.dims;
        let s = self.spec.spacing;
        let lo = |v: f64, sp: f64| ((v - r) / sp).floor().max(0.0) as usize;
        let hi = |v: f64, sp: f64, n: usize| (((v + r) / sp).ceil() as i64 + 1).clamp(0, n as i64) as usize;
        (lo(c[0], s.sx), hi(c[0], s.sx, d.nx), lo(c[1], s.sy), hi(c[1], s.sy, d.ny))
    }

    fn finish_channel(&self, mut base: Vec<f64>, channel: u64, z: usize) -> Vec<u16> {
        let spec = &self.spec;
        let att = (-spec.attenuation_per_um() * z as f64 * spec.spacing.sz).exp();
        if spec.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
            let mut rng = noise_rng(spec.seed, channel, z);
            for v in &mut base {
                *v = *v * att + normal.sample(&mut rng);
            }
        } else {
            for v in &mut base {
                *v *= att;
            }
        }
        base.into_iter().map(|v| v.round().clamp(0.0, 255.0) as u16).collect()
    }

    /// Renders plane `z` of all three channels and the truth labels.
    pub fn render_plane(&self, z: usize) -> PlanePhantom {
        let spec = &self.spec;
        let d = spec.dims;
        let s = spec.spacing;
        let zu = z as f64 * s.sz;
        let plen = d.plane_len();
        let bg = spec.background as f64;
        let trunc = spec.z_truncation;

        let mut labels = vec![0u32; plen];
        let mut best = vec![f64::INFINITY; plen];
        let mut marker = vec![bg; plen];
        for n in &self.nuclei {
            let r = n.bounding_radius() + spec.halo_um;
            if (zu - n.center_um[2]).abs() > r {
                continue;
            }
            let (x0, x1, y0, y1) = self.window(n.center_um, r);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = [x as f64 * s.sx, y as f64 * s.sy, zu];
                    let i = x + d.nx * y;
                    if let Some(q) = Self::inside(n, p, 0.0, trunc) {
                        if q < best[i] {
                            best[i] = q;
                            labels[i] = n.label;
                        }
                    }
                    if n.class == CellClass::Neuron && Self::inside(n, p, spec.halo_um, trunc).is_some() {
                        marker[i] = spec.marker_level as f64;
                    }
                }
            }
        }
        if spec.open_sections {
            let mask = BinaryMask::from_vec(Dims::plane(d.nx, d.ny), labels.iter().map(|&l| l != 0).collect())
                .expect("plane sized");
            let opened = opening(&mask, &StructuringElement::disk(1));
            for (l, &keep) in labels.iter_mut().zip(opened.data()) {
                if !keep {
                    *l = 0;
                }
            }
        }
        let nuclei: Vec<f64> = labels
            .iter()
            .map(|&l| if l == 0 { bg } else { spec.nucleus_level as f64 })
            .collect();

        let mut vessel = vec![bg; plen];
        for t in &self.tubes {
            let c = t.at_z(zu);
            let r = t.radius_um / t.dir[2].abs().max(1e-6);
            let (x0, x1, y0, y1) = self.window(c, r);
            for y in y0..y1 {
                for x in x0..x1 {
                    if t.distance([x as f64 * s.sx, y as f64 * s.sy, zu]) <= t.radius_um {
                        vessel[x + d.nx * y] = spec.vessel_level as f64;
                    }
                }
            }
        }

        PlanePhantom {
            nuclei: self.finish_channel(nuclei, 0, z),
            marker: self.finish_channel(marker, 1, z),
            vessel: self.finish_channel(vessel, 2, z),
            labels,
        }
    }

    fn tally(&self) -> Tally {
        Tally {
            count: vec![0; self.nuclei.len()],
            sum: vec![[0; 3]; self.nuclei.len()],
        }
    }

    /// Renders everything into memory.
    pub fn render(&self) -> Result<(ChannelSet, GroundTruth)> {
        let d = self.dims();
        let mut ch = [Vec::with_capacity(d.len()), Vec::with_capacity(d.len()), Vec::with_capacity(d.len())];
        let mut labels = Vec::with_capacity(d.len());
        let mut tally = self.tally();
        for z in 0..d.nz {
            let p = self.render_plane(z);
            tally.add(&p.labels, d.nx, z);
            ch[0].extend_from_slice(&p.nuclei);
            ch[1].extend_from_slice(&p.marker);
            ch[2].extend_from_slice(&p.vessel);
            labels.extend_from_slice(&p.labels);
        }
        let [n, m, v] = ch;
        let grid = |values| VoxelGrid::new(d, self.spec.spacing, BitDepth::Eight, values);
        let channels = ChannelSet::new(grid(n)?, grid(m)?, grid(v)?)?;
        Ok((
            channels,
            GroundTruth {
                labels: LabelVolume::from_vec(d, labels)?,
                nuclei: tally.finish(&self.nuclei, self.spec.spacing),
            },
        ))
    }

    /// Streams the phantom to `dir` one plane at a time and returns the
    /// truth records.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<NucleusTruth>> {
        if self.nuclei.len() > u16::MAX as usize {
            return Err(Error::TooManyLabels(self.nuclei.len()));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let d = self.dims();
        let mut writers = Vec::new();
        for (name, depth) in [
            (PHANTOM_FILES[0], BitDepth::Eight),
            (PHANTOM_FILES[1], BitDepth::Eight),
            (PHANTOM_FILES[2], BitDepth::Eight),
            (PHANTOM_FILES[3], BitDepth::Sixteen),
        ] {
            writers.push(StackWriter::create(dir.join(name), d.nx, d.ny, depth)?);
        }
        let mut tally = self.tally();
        for z in 0..d.nz {
            let p = self.render_plane(z);
            tally.add(&p.labels, d.nx, z);
            writers[0].write_plane(&p.nuclei)?;
            writers[1].write_plane(&p.marker)?;
            writers[2].write_plane(&p.vessel)?;
            writers[3].write_plane(&label_page(&p.labels)?)?;
        }
        for w in writers {
            w.finish()?;
        }
        let truth = tally.finish(&self.nuclei, self.spec.spacing);
        write_truth_table(&dir.join(PHANTOM_FILES[4]), &truth)?;
        write_json(
            dir.join(PHANTOM_FILES[5]),
            &serde_json::json!({
                "spec": self.spec,
                "tubes": self.tubes,
                "counts": {
                    "neuron": truth.iter().filter(|n| n.class == CellClass::Neuron).count(),
                    "non-neuronal": truth.iter().filter(|n| n.class == CellClass::NonNeuronal).count(),
                    "perivascular": truth.iter().filter(|n| n.class == CellClass::Perivascular).count(),
                },
            }),
        )?;
        Ok(truth)
    }
}

/// Output file names of [`PhantomPlan::write_to_dir`].
pub const PHANTOM_FILES: [&str; 6] = [
    "nuclei.tif",
    "marker.tif",
    "vessel.tif",
    "truth_labels.tif",
    "truth.csv",
    "phantom.json",
];

struct Tally {
    count: Vec<usize>,
    sum: Vec<[u64; 3]>,
}

impl Tally {
    fn add(&mut self, labels: &[u32], nx: usize, z: usize) {
        for (i, &l) in labels.iter().enumerate() {
            if l != 0 {
                let k = l as usize - 1;
                self.count[k] += 1;
                self.sum[k][0] += (i % nx) as u64;
                self.sum[k][1] += (i / nx) as u64;
                self.sum[k][2] += z as u64;
            }
        }
    }

    fn finish(self, nuclei: &[NucleusTruth], spacing: VoxelSpacing) -> Vec<NucleusTruth> {
        let s = spacing.as_array();
        nuclei
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let c = self.count[k].max(1) as f64;
                NucleusTruth {
                    voxel_count: self.count[k],
                    centroid_um: std::array::from_fn(|i| self.sum[k][i] as f64 / c * s[i]),
                    ..n.clone()
                }
            })
            .collect()
    }
}

fn write_truth_table(path: &Path, truth: &[NucleusTruth]) -> Result<()> {
    let err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record([
        "label",
        "class",
        "center_x_um",
        "center_y_um",
        "center_z_um",
        "semi_a_um",
        "semi_b_um",
        "semi_c_um",
        "voxel_count",
        "centroid_x_um",
        "centroid_y_um",
        "centroid_z_um",
    ])
    .map_err(err)?;
    for n in truth {
        let mut row = vec![n.label.to_string(), n.class.name().to_string()];
        row.extend(n.center_um.iter().chain(&n.semi_axes_um).map(|v| v.to_string()));
        row.push(n.voxel_count.to_string());
        row.extend(n.centroid_um.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plans and renders `spec` in memory.
pub fn generate(spec: &PhantomSpec) -> Result<(ChannelSet, GroundTruth)> {
    plan(spec)?.render()
}

/// Plans `spec` and streams it to `dir`.
pub fn generate_to_dir(spec: &PhantomSpec, dir: &Path) -> Result<Vec<NucleusTruth>> {
    plan(spec)?.write_to_dir(dir)
}

/// Two equal spheres offset laterally by `lateral_factor · r` and in z by
/// `z_factor · r`, in a volume just large enough to hold them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TouchingPairSpec {
    pub radius_um: f64,
    pub lateral_factor: f64,
    pub z_factor: f64,
    /// Direction of the lateral offset in radians; drawn from the seed when
    /// absent.
    pub angle: Option<f64>,
    pub spacing: VoxelSpacing,
    pub margin_um: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TouchingPairSpec {
    fn default() -> Self {
        TouchingPairSpec {
            radius_um: 4.5,
            lateral_factor: 1.5,
            z_factor: 0.25,
            angle: None,
            spacing: VoxelSpacing::default(),
            margin_um: 3.0,
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

/// Plan for a touching pair; the pair midpoint sits at a random sub-voxel
/// offset so digitization varies with the seed.
pub fn touching_pair_plan(p: &TouchingPairSpec) -> Result<PhantomPlan> {
    if !(p.radius_um > 0.0 && p.lateral_factor >= 0.0 && p.margin_um >= 0.0) {
        return Err(Error::Invalid("touching pair: radius must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let angle = p.angle.unwrap_or_else(|| rng.random_range(0.0..2.0 * PI));
    let r = p.radius_um;
    let half = [0.5 * p.lateral_factor * r * angle.cos(), 0.5 * p.lateral_factor * r * angle.sin(), 0.5 * p.z_factor * r];
    let s = p.spacing.as_array();
    let reach: [f64; 3] = std::array::from_fn(|i| half[i].abs() + r + p.margin_um + s[i]);
    let n: [usize; 3] = std::array::from_fn(|i| (2.0 * reach[i] / s[i]).ceil() as usize + 2);
    let jitter: [f64; 3] = std::array::from_fn(|i| rng.random_range(0.0..s[i]));
    let mid: [f64; 3] = std::array::from_fn(|i| reach[i] + jitter[i]);
    let spec = PhantomSpec {
        dims: Dims::new(n[0], n[1], n[2]),
        spacing: p.spacing,
        neurons: 0,
        plain: 2,
        perivascular: 0,
        touching_pairs: 1,
        radius_jitter_um: 0.0,
        axis_jitter: 0.0,
        z_truncation: 1.0,
        radius_um: r,
        vessels: 0,
        noise_sigma: p.noise_sigma,
        intensity_at_max_z: 1.0,
        seed: p.seed,
        ..PhantomSpec::default()
    };
    let mk = |label: u32, c: [f64; 3], partner: u32| NucleusTruth {
        label,
        class: CellClass::NonNeuronal,
        center_um: c,
        semi_axes_um: [r; 3],
        partner: Some(partner),
        voxel_count: 0,
        centroid_um: [0.0; 3],
    };
    Ok(PhantomPlan {
        spec,
        tubes: Vec::new(),
        nuclei: vec![mk(1, sub(mid, half), 2), mk(2, add(mid, half), 1)],
    })
}

pub fn generate_touching_pair(p: &TouchingPairSpec) -> Result<(ChannelSet, GroundTruth)> {
    touching_pair_plan(p)?.render()
}

/// Reads a JSON phantom spec; absent fields take their defaults.
pub fn parse_spec(text: &str) -> Result<PhantomSpec> {
    let spec: PhantomSpec =
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("phantom spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            dims: Dims::new(160, 160, 50),
            neurons: 2,
            plain: 1,
            perivascular: 1,
            radius_um: 3.0,
            radius_jitter_um: 0.2,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn empty_spec_is_constant_background() {
        let spec = PhantomSpec {
            dims: Dims::new(16, 16, 4),
            neurons: 0,
            plain: 0,
            perivascular: 0,
            vessels: 0,
            ..PhantomSpec::default()
        }
        .clean();
        let (ch, gt) = generate(&spec).unwrap();
        for g in [&ch.nuclei, &ch.marker, &ch.vessel] {
            assert!(g.values().iter().all(|&v| v == 20));
        }
        assert_eq!(gt.labels.label_count(), 0);
        assert!(gt.nuclei.is_empty());
    }

    #[test]
    fn same_seed_bit_identical() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&PhantomSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0.nuclei, c.0.nuclei);
    }

    #[test]
    fn sphere_volume_close_to_analytic() {
        let spec = PhantomSpec {
            dims: Dims::new(64, 64, 64),
            neurons: 0,
            plain: 1,
            perivascular: 0,
            vessels: 0,
            radius_jitter_um: 0.0,
            axis_jitter: 0.0,
            ..PhantomSpec::default()
        }
        .clean();
        let (_, gt) = generate(&spec).unwrap();
        let v = gt.nuclei[0].voxel_count as f64;
        let analytic = 4.0 / 3.0 * PI * 4.5f64.powi(3) / spec.spacing.voxel_volume();
        assert!((v - analytic).abs() / analytic < 0.05, "{v} vs {analytic}");
    }

    #[test]
    fn labels_disjoint_and_match_records() {
        let (_, gt) = generate(&PhantomSpec { touching_pairs: 1, ..small() }).unwrap();
        assert_eq!(gt.labels.label_count(), gt.nuclei.len());
        let sets = gt.labels.voxel_sets();
        for (n, s) in gt.nuclei.iter().zip(&sets) {
            assert_eq!(n.voxel_count, s.len());
        }
        assert_eq!(gt.count(CellClass::Perivascular), 1);
        assert!(gt.nuclei.iter().filter(|n| n.partner.is_some()).count() == 2);
    }

    #[test]
    fn rendering_order_does_not_matter() {
        let p = plan(&small()).unwrap();
        let last = p.render_plane(49);
        for z in (0..49).rev() {
            p.render_plane(z);
        }
        assert_eq!(p.render_plane(49), last);
    }

    #[test]
    fn separation_and_vessel_clearance() {
        let p = plan(&small()).unwrap();
        let gap = 2.0 * 0.21;
        for (i, a) in p.nuclei.iter().enumerate() {
            for b in &p.nuclei[i + 1..] {
                let d = norm(sub(a.center_um, b.center_um));
                assert!(d >= a.bounding_radius() + b.bounding_radius() + gap - 1e-9);
            }
            let t = &p.tubes[0];
            let d = t.distance(a.center_um);
            if a.class == CellClass::Perivascular {
                assert!(d < t.radius_um + a.bounding_radius());
            } else {
                assert!(d >= t.radius_um + a.bounding_radius() + 3.0);
            }
        }
    }

    #[test]
    fn infeasible_is_reported() {
        let spec = PhantomSpec {
            dims: Dims::new(40, 40, 40),
            neurons: 50,
            max_attempts: 200,
            ..small()
        };
        assert!(matches!(generate(&spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn attenuation_reaches_sixty_percent() {
        let spec = PhantomSpec {
            dims: Dims::new(8, 8, 11),
            neurons: 0,
            plain: 0,
            perivascular: 0,
            vessels: 0,
            background: 200,
            noise_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let (ch, _) = generate(&spec).unwrap();
        assert_eq!(ch.nuclei.plane(0)[0], 200);
        assert_eq!(ch.nuclei.plane(10)[0], 120);
    }

    #[test]
    fn touching_pair_touches_and_control_is_disjoint() {
        let contact = |factor: f64| {
            let (_, gt) = generate_touching_pair(&TouchingPairSpec {
                lateral_factor: factor,
                seed: 4,
                ..TouchingPairSpec::default()
            })
            .unwrap();
            let d = gt.labels.dims();
            let mut touching = 0;
            for i in 0..d.len() {
                let (x, y, z) = d.coords(i);
                if gt.labels.data()[i] == 1 && x + 1 < d.nx && gt.labels.get(x + 1, y, z) == 2 {
                    touching += 1;
                }
                if gt.labels.data()[i] == 1 && y + 1 < d.ny && gt.labels.get(x, y + 1, z) == 2 {
                    touching += 1;
                }
                if gt.labels.data()[i] == 2 && x + 1 < d.nx && gt.labels.get(x + 1, y, z) == 1 {
                    touching += 1;
                }
                if gt.labels.data()[i] == 2 && y + 1 < d.ny && gt.labels.get(x, y + 1, z) == 1 {
                    touching += 1;
                }
            }
            (gt.labels.label_count(), touching)
        };
        let (n, t) = contact(1.5);
        assert_eq!(n, 2);
        assert!(t > 100);
        assert_eq!(contact(3.0), (2, 0));
    }

    #[test]
    fn spec_json_round_trip() {
        let s = small();
        let back = parse_spec(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(parse_spec("{}").unwrap(), PhantomSpec::default());
        assert!(parse_spec(r#"{"bogus": 1}"#).is_err());
        let lattice = parse_spec(r#"{"placement": {"mode": "lattice", "slot": [32, 32, 30]}, "vessels": 0, "perivascular": 0}"#).unwrap();
        assert_eq!(lattice.placement, Placement::Lattice { slot: [32, 32, 30] });
    }
}
