//! End-to-end segmentation.
//!
//! The nuclei stack is read once, a batch of planes at a time; only the 2D
//! objects of each plane are kept. The marker and vessel stacks are then
//! streamed through the support binarization and the per-blob overlap
//! counters, and label volumes are written one page at a time. Peak memory is
//! therefore a few planes plus the object pixel lists, not whole volumes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binarize::{global_binarize, local_refine, remove_small_2d, BinarizeParams, PlaneView, RefineAction};
use crate::fusion::{binarize_support_plane, CellClass, Classified, OverlapTally};
use crate::io::{
    label_page, write_cell_table, write_json, ChannelSet, PipelineConfig, StackReader, StackWriter,
};
use crate::morphometry::{measure_all, CellRecord};
use crate::reconstruct::{
    build_blobs, finalize_labels, link_planes, remove_small_blobs, render_labels, split_clump, Blob3D, PlaneIndex,
    SplitContext,
};
use crate::segment2d::{extract_objects, Plane2DObject};
use crate::volume::{BinaryMask, BitDepth, Dims, LabelVolume, PlaneDilator, VoxelGrid, VoxelSpacing};
use crate::{Error, Result};

/// Stage results of one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSegmentation {
    pub z: usize,
    pub global: BinaryMask,
    pub refined: BinaryMask,
    /// Objects after refinement and small-object removal.
    pub objects: Vec<Plane2DObject>,
    pub degenerate: bool,
    /// Refinement outcomes: refined, main kept, aborted.
    pub actions: [usize; 3],
}

/// Global threshold, per-object refinement, 2D labeling and small-object
/// removal of one nuclei plane.
pub fn segment_plane(plane: PlaneView<'_>, z: usize, params: &BinarizeParams) -> PlaneSegmentation {
    let dims = Dims::plane(plane.nx, plane.ny);
    let g = global_binarize(plane, params);
    let mut refined = BinaryMask::new(dims);
    let mut actions = [0; 3];
    if !g.degenerate {
        for obj in extract_objects(&g.mask, z, params.connectivity, 0) {
            let r = local_refine(plane, &obj, params);
            actions[match r.action {
                RefineAction::Refined => 0,
                RefineAction::MainKept => 1,
                RefineAction::Aborted => 2,
            }] += 1;
            let data = refined.data_mut();
            for p in r.pixels {
                data[p as usize] = true;
            }
        }
    }
    let objects = remove_small_2d(extract_objects(&refined, z, params.connectivity, 0), params.min_area_2d);
    PlaneSegmentation {
        z,
        global: g.mask,
        refined,
        objects,
        degenerate: g.degenerate,
        actions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlaneStats {
    pub planes: usize,
    pub degenerate_planes: usize,
    pub objects_2d: usize,
    pub refined: usize,
    pub main_kept: usize,
    pub aborted: usize,
}

/// Segments planes pulled from `next_plane` in parallel batches of `batch`
/// planes. `inspect` sees every plane result in z order.
pub fn segment_planes(
    mut next_plane: impl FnMut(usize) -> Result<Vec<u16>>,
    dims: Dims,
    depth: BitDepth,
    params: &BinarizeParams,
    batch: usize,
    mut inspect: impl FnMut(&PlaneSegmentation) -> Result<()>,
) -> Result<(Vec<Vec<Plane2DObject>>, PlaneStats)> {
    let batch = batch.max(1);
    let mut objects = Vec::with_capacity(dims.nz);
    let mut stats = PlaneStats {
        planes: dims.nz,
        ..PlaneStats::default()
    };
    let mut z0 = 0;
    while z0 < dims.nz {
        let z1 = (z0 + batch).min(dims.nz);
        let planes = (z0..z1).map(&mut next_plane).collect::<Result<Vec<_>>>()?;
        let results: Vec<PlaneSegmentation> = planes
            .par_iter()
            .enumerate()
            .map(|(i, v)| segment_plane(PlaneView::new(v, dims.nx, dims.ny, depth), z0 + i, params))
            .collect();
        for r in results {
            inspect(&r)?;
            stats.degenerate_planes += r.degenerate as usize;
            stats.objects_2d += r.objects.len();
            stats.refined += r.actions[0];
            stats.main_kept += r.actions[1];
            stats.aborted += r.actions[2];
            objects.push(r.objects);
        }
        z0 = z1;
    }
    Ok((objects, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconstructStats {
    pub linked_blobs: usize,
    /// Blobs replaced by two or more pieces.
    pub split_blobs: usize,
    pub blobs_after_split: usize,
    pub removed_small: usize,
    pub final_blobs: usize,
}

/// Links plane objects into blobs, splits clumps, removes small blobs and
/// assigns final labels. `inspect` receives the blobs after linking and
/// after splitting.
pub fn reconstruct(
    objects: Vec<Vec<Plane2DObject>>,
    dims: Dims,
    config: &PipelineConfig,
    mut inspect: impl FnMut(&str, &[Blob3D]) -> Result<()>,
) -> Result<(Vec<Blob3D>, ReconstructStats)> {
    let graph = link_planes(objects, &config.link);
    let linked = build_blobs(graph, &config.split);
    inspect("linked", &linked)?;
    let ctx = SplitContext {
        spacing: config.spacing,
        connectivity: config.binarize.connectivity,
        seed: config.seed,
    };
    let outcomes: Vec<Vec<Blob3D>> = linked
        .par_iter()
        .map(|b| split_clump(b, &config.split, &ctx).blobs)
        .collect();
    let split_blobs = outcomes.iter().filter(|o| o.len() > 1).count();
    let split: Vec<Blob3D> = outcomes.into_iter().flatten().collect();
    inspect("split", &split)?;
    let after_split = split.len();
    let kept = remove_small_blobs(split, &config.filter);
    let removed = after_split - kept.len();
    let blobs = finalize_labels(kept, dims);
    Ok((
        blobs.clone(),
        ReconstructStats {
            linked_blobs: linked.len(),
            split_blobs,
            blobs_after_split: after_split,
            removed_small: removed,
            final_blobs: blobs.len(),
        },
    ))
}

/// Streams the two support channels through binarization and counts blob
/// overlaps. Planes are pulled in z order.
pub fn fuse_streams(
    blobs: &[Blob3D],
    dims: Dims,
    spacing: VoxelSpacing,
    marker: (BitDepth, &mut dyn FnMut(usize) -> Result<Vec<u16>>),
    vessel: (BitDepth, &mut dyn FnMut(usize) -> Result<Vec<u16>>),
    config: &PipelineConfig,
) -> Result<Vec<Classified>> {
    let mut tally = OverlapTally::new(blobs, dims.nz);
    let mut dilator = PlaneDilator::new(dims, spacing, config.fusion.vessel_dilation_um);
    let params = &config.binarize;
    for z in 0..dims.nz {
        let m = (marker.1)(z)?;
        let v = (vessel.1)(z)?;
        let (mm, vm) = rayon::join(
            || binarize_support_plane(PlaneView::new(&m, dims.nx, dims.ny, marker.0), params).0,
            || binarize_support_plane(PlaneView::new(&v, dims.nx, dims.ny, vessel.0), params).0,
        );
        tally.add_marker_plane(blobs, z, mm.data());
        for (oz, plane) in dilator.push(vm.data()) {
            tally.add_vessel_plane(blobs, oz, &plane);
        }
    }
    Ok(tally.classify(blobs, &config.fusion))
}

/// Result of an in-memory run.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
    pub blobs: Vec<Blob3D>,
    /// Absent when only the nuclei channel was processed.
    pub classes: Option<Vec<Classified>>,
    pub cells: Vec<CellRecord>,
    pub plane_stats: PlaneStats,
    pub reconstruct_stats: ReconstructStats,
}

impl Segmentation {
    pub fn labels(&self) -> LabelVolume {
        render_labels(&self.blobs, self.dims, |_| true)
    }

    /// Label volume of one class; empty when fusion was not run.
    pub fn class_labels(&self, class: CellClass) -> LabelVolume {
        match &self.classes {
            Some(c) => render_labels(&self.blobs, self.dims, |i| c[i].class == class),
            None => LabelVolume::new(self.dims),
        }
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.classes
            .as_ref()
            .map_or(0, |c| c.iter().filter(|k| k.class == class).count())
    }
}

fn grid_source(g: &VoxelGrid) -> impl FnMut(usize) -> Result<Vec<u16>> + '_ {
    move |z| Ok(g.plane(z).to_vec())
}

fn default_batch() -> usize {
    2 * rayon::current_num_threads()
}

/// Nuclei channel only: every cell has class `None`. Spacing comes from
/// `config`.
pub fn segment_nuclei(nuclei: &VoxelGrid, config: &PipelineConfig) -> Result<Segmentation> {
    config.validate()?;
    let dims = nuclei.dims();
    let (objects, plane_stats) = segment_planes(
        grid_source(nuclei),
        dims,
        nuclei.depth(),
        &config.binarize,
        default_batch(),
        |_| Ok(()),
    )?;
    let (blobs, reconstruct_stats) = reconstruct(objects, dims, config, |_, _| Ok(()))?;
    check_blobs(&blobs, dims)?;
    let cells = measure_all(&blobs, None, config.spacing);
    Ok(Segmentation {
        dims,
        spacing: config.spacing,
        blobs,
        classes: None,
        cells,
        plane_stats,
        reconstruct_stats,
    })
}

/// All three channels in memory. Spacing comes from `config`.
pub fn segment_channels(channels: &ChannelSet, config: &PipelineConfig) -> Result<Segmentation> {
    let mut s = segment_nuclei(&channels.nuclei, config)?;
    let classes = fuse_streams(
        &s.blobs,
        s.dims,
        config.spacing,
        (channels.marker.depth(), &mut grid_source(&channels.marker)),
        (channels.vessel.depth(), &mut grid_source(&channels.vessel)),
        config,
    )?;
    let kinds: Vec<CellClass> = classes.iter().map(|c| c.class).collect();
    s.cells = measure_all(&s.blobs, Some(&kinds), config.spacing);
    s.classes = Some(classes);
    Ok(s)
}

/// Structural checks on final blobs: labels `1..=K` in order, members inside
/// the volume, and no voxel claimed twice.
pub fn check_blobs(blobs: &[Blob3D], dims: Dims) -> Result<()> {
    let index = PlaneIndex::new(blobs, dims.nz);
    for (i, b) in blobs.iter().enumerate() {
        if b.label as usize != i + 1 {
            return Err(Error::Invariant(format!("blob {i} carries label {}", b.label)));
        }
        if b.members.is_empty() {
            return Err(Error::Invariant(format!("blob {} is empty", b.label)));
        }
        for m in &b.members {
            if m.z >= dims.nz || m.pixels.last().is_some_and(|&p| p as usize >= dims.plane_len()) {
                return Err(Error::Invariant(format!("blob {} has voxels outside {dims}", b.label)));
            }
        }
    }
    let mut seen = vec![false; dims.plane_len()];
    for z in 0..dims.nz {
        seen.iter_mut().for_each(|s| *s = false);
        for &(b, m) in &index.planes[z] {
            for &p in &blobs[b as usize].members[m as usize].pixels {
                if std::mem::replace(&mut seen[p as usize], true) {
                    return Err(Error::Invariant(format!("voxel {p} of plane {z} belongs to two objects")));
                }
            }
        }
    }
    Ok(())
}

/// Peak resident set size of this process, from `/proc/self/status`.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Fixed allowance added to the per-channel memory budget.
pub const MEMORY_OVERHEAD_BYTES: u64 = 512 * 1024 * 1024;

pub const OUTPUT_FILES: [&str; 7] = [
    "labels.tif",
    "neurons.tif",
    "non_neuronal.tif",
    "perivascular.tif",
    "cells.csv",
    "summary.json",
    "manifest.json",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentInputs {
    pub nuclei: PathBuf,
    pub marker: PathBuf,
    pub vessel: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: usize,
    /// Write intermediate masks and label stacks under `stages/`.
    pub debug_stages: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub status: String,
    pub error: Option<String>,
    pub inputs: SegmentInputs,
    pub outputs: Vec<PathBuf>,
    pub config: PipelineConfig,
    pub seed: u64,
    pub threads: usize,
    pub dims: Option<Dims>,
    pub timings: Vec<StageTiming>,
    pub peak_rss_bytes: Option<u64>,
    /// Three times the nuclei stack's size plus the fixed overhead.
    pub memory_budget_bytes: Option<u64>,
    pub within_memory_budget: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dims: Dims,
    pub spacing: VoxelSpacing,
    pub total: usize,
    pub neuron_count: usize,
    pub non_neuronal_count: usize,
    pub perivascular_count: usize,
    pub planes: PlaneStats,
    pub reconstruction: ReconstructStats,
    pub parameters: PipelineConfig,
}

struct Timer {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Timer {
    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

fn reader_source(r: &mut StackReader) -> impl FnMut(usize) -> Result<Vec<u16>> + '_ {
    move |z| {
        r.next_plane()?
            .ok_or_else(|| Error::format(r.path(), format!("stack ended before plane {z}")))
    }
}

fn mask_page(m: &BinaryMask) -> Vec<u16> {
    m.data().iter().map(|&b| if b { 255 } else { 0 }).collect()
}

fn write_debug_labels(path: &Path, blobs: &[Blob3D], dims: Dims) -> Result<()> {
    let index = PlaneIndex::new(blobs, dims.nz);
    // Blob indices wrap at 16 bits so large intermediate sets stay viewable.
    let mut w = StackWriter::create(path, dims.nx, dims.ny, BitDepth::Sixteen)?;
    let mut plane = vec![0u16; dims.plane_len()];
    for z in 0..dims.nz {
        plane.iter_mut().for_each(|v| *v = 0);
        for &(b, m) in &index.planes[z] {
            let v = (b % 65535) as u16 + 1;
            for &p in &blobs[b as usize].members[m as usize].pixels {
                plane[p as usize] = v;
            }
        }
        w.write_plane(&plane)?;
    }
    w.finish()
}

/// Runs the whole pipeline on three stack files and writes every output to
/// `opts.out_dir`. A manifest is written whether or not the run succeeds.
pub fn run_segment(inputs: &SegmentInputs, config: &PipelineConfig, opts: &RunOptions) -> Result<RunManifest> {
    let mut manifest = RunManifest {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: "error".to_string(),
        error: None,
        inputs: inputs.clone(),
        outputs: Vec::new(),
        config: *config,
        seed: config.seed,
        threads: opts.threads,
        dims: None,
        timings: Vec::new(),
        peak_rss_bytes: None,
        memory_budget_bytes: None,
        within_memory_budget: None,
    };
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
        .and_then(|pool| pool.install(|| run_inner(inputs, config, opts, &mut manifest)));
    manifest.peak_rss_bytes = peak_rss_bytes();
    if let (Some(peak), Some(budget)) = (manifest.peak_rss_bytes, manifest.memory_budget_bytes) {
        manifest.within_memory_budget = Some(peak <= budget);
    }
    match &result {
        Ok(()) => manifest.status = "ok".to_string(),
        Err(e) => manifest.error = Some(e.to_string()),
    }
    let manifest_path = opts.out_dir.join("manifest.json");
    manifest.outputs.push(manifest_path.clone());
    write_json(&manifest_path, &manifest)?;
    result.map(|_| manifest)
}

fn run_inner(
    inputs: &SegmentInputs,
    config: &PipelineConfig,
    opts: &RunOptions,
    manifest: &mut RunManifest,
) -> Result<()> {
    config.validate()?;
    let mut timer = Timer {
        timings: Vec::new(),
        last: Instant::now(),
    };
    let out = &opts.out_dir;
    let mut nuclei = StackReader::open(&inputs.nuclei)?;
    let mut marker = StackReader::open(&inputs.marker)?;
    let mut vessel = StackReader::open(&inputs.vessel)?;
    let dims = nuclei.dims();
    for (name, r) in [("marker", &marker), ("vessel", &vessel)] {
        if r.dims() != dims {
            return Err(Error::DimMismatch(format!(
                "{name} stack {} is {}, nuclei stack {} is {dims}",
                r.path().display(),
                r.dims(),
                inputs.nuclei.display()
            )));
        }
    }
    manifest.dims = Some(dims);
    let bytes_per_sample = if nuclei.depth() == BitDepth::Eight { 1 } else { 2 };
    manifest.memory_budget_bytes = Some(3 * (dims.len() * bytes_per_sample) as u64 + MEMORY_OVERHEAD_BYTES);
    timer.lap("open");

    let stages = out.join("stages");
    let mut debug = if opts.debug_stages {
        std::fs::create_dir_all(&stages).map_err(|e| Error::io(&stages, e))?;
        Some([
            StackWriter::create(stages.join("01_global_mask.tif"), dims.nx, dims.ny, BitDepth::Eight)?,
            StackWriter::create(stages.join("02_refined_mask.tif"), dims.nx, dims.ny, BitDepth::Eight)?,
            StackWriter::create(stages.join("03_objects_2d.tif"), dims.nx, dims.ny, BitDepth::Eight)?,
        ])
    } else {
        None
    };
    let depth = nuclei.depth();
    let (objects, plane_stats) = segment_planes(
        reader_source(&mut nuclei),
        dims,
        depth,
        &config.binarize,
        2 * opts.threads.max(1),
        |p| {
            if let Some(w) = debug.as_mut() {
                w[0].write_plane(&mask_page(&p.global))?;
                w[1].write_plane(&mask_page(&p.refined))?;
                let mut kept = vec![0u16; dims.plane_len()];
                for o in &p.objects {
                    for &px in &o.pixels {
                        kept[px as usize] = 255;
                    }
                }
                w[2].write_plane(&kept)?;
            }
            Ok(())
        },
    )?;
    if let Some(ws) = debug {
        for w in ws {
            w.finish()?;
        }
    }
    drop(nuclei);
    timer.lap("binarize_2d");

    let (blobs, reconstruct_stats) = reconstruct(objects, dims, config, |stage, b| {
        if opts.debug_stages {
            let name = if stage == "linked" { "04_linked.tif" } else { "05_split.tif" };
            write_debug_labels(&stages.join(name), b, dims)?;
        }
        Ok(())
    })?;
    check_blobs(&blobs, dims)?;
    if blobs.len() > u16::MAX as usize {
        return Err(Error::TooManyLabels(blobs.len()));
    }
    timer.lap("reconstruct_3d");

    let (md, vd) = (marker.depth(), vessel.depth());
    let classes = fuse_streams(
        &blobs,
        dims,
        config.spacing,
        (md, &mut reader_source(&mut marker)),
        (vd, &mut reader_source(&mut vessel)),
        config,
    )?;
    drop((marker, vessel));
    timer.lap("fusion");

    let index = PlaneIndex::new(&blobs, dims.nz);
    let mut writers = Vec::new();
    for name in &OUTPUT_FILES[..4] {
        let p = out.join(name);
        writers.push(StackWriter::create(&p, dims.nx, dims.ny, BitDepth::Sixteen)?);
        manifest.outputs.push(p);
    }
    let filters: [Option<CellClass>; 4] = [
        None,
        Some(CellClass::Neuron),
        Some(CellClass::NonNeuronal),
        Some(CellClass::Perivascular),
    ];
    for z in 0..dims.nz {
        for (w, f) in writers.iter_mut().zip(filters) {
            let plane = index.render(&blobs, z, dims.plane_len(), |i| f.is_none_or(|c| classes[i].class == c));
            w.write_plane(&label_page(&plane)?)?;
        }
    }
    for w in writers {
        w.finish()?;
    }
    timer.lap("write_labels");

    let kinds: Vec<CellClass> = classes.iter().map(|c| c.class).collect();
    let cells = measure_all(&blobs, Some(&kinds), config.spacing);
    let table = out.join("cells.csv");
    write_cell_table(&table, &cells)?;
    manifest.outputs.push(table);
    let count = |c: CellClass| kinds.iter().filter(|&&k| k == c).count();
    let summary = RunSummary {
        dims,
        spacing: config.spacing,
        total: blobs.len(),
        neuron_count: count(CellClass::Neuron),
        non_neuronal_count: count(CellClass::NonNeuronal),
        perivascular_count: count(CellClass::Perivascular),
        planes: plane_stats,
        reconstruction: reconstruct_stats,
        parameters: *config,
    };
    let sp = out.join("summary.json");
    write_json(&sp, &summary)?;
    manifest.outputs.push(sp);
    timer.lap("morphometry");
    manifest.timings = timer.timings;
    Ok(())
}
