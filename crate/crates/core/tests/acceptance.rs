//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 4 7`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nucseg::evaluate::{match_labels, score_with_classes, EvalParams, EvalReport};
use nucseg::fusion::CellClass;
use nucseg::io::{read_cell_table, read_channel_stack, read_label_volume, write_channel_stack, PipelineConfig};
use nucseg::morphometry::{feret_diameter, measure_labels, measure_voxels, CountingFrame};
use nucseg::phantom::{generate_to_dir, generate_touching_pair, NucleusTruth, PhantomSpec, Placement, TouchingPairSpec};
use nucseg::pipeline::{run_segment, segment_nuclei, RunOptions, SegmentInputs};
use nucseg::reconstruct::{remove_small_blobs, Blob3D, FilterParams};
use nucseg::segment2d::{object_overlap_fraction, overlap_fraction_with, OverlapMode, Plane2DObject};
use nucseg::binarize::remove_small_2d;
use nucseg::volume::{
    connected_components_2d, connected_components_3d, BinaryMask, Connectivity2d, Connectivity3d, Dims, LabelVolume,
    VoxelSpacing,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one criterion: pass flag and a one-line detail.
type Verdict = (bool, String);

fn spacing(s: f64) -> VoxelSpacing {
    VoxelSpacing::isotropic(s).unwrap()
}

fn config_for(s: VoxelSpacing) -> PipelineConfig {
    PipelineConfig {
        spacing: s,
        ..PipelineConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Shared phantom runs

struct PhantomRun {
    _dir: tempfile::TempDir,
    truth: Vec<NucleusTruth>,
    gt: LabelVolume,
    pred: LabelVolume,
    seconds: f64,
    out: std::path::PathBuf,
}

fn phantom_run(spec: &PhantomSpec, threads: usize) -> PhantomRun {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("phantom");
    let out = dir.path().join("out");
    let truth = generate_to_dir(spec, &input).unwrap();
    let inputs = SegmentInputs {
        nuclei: input.join("nuclei.tif"),
        marker: input.join("marker.tif"),
        vessel: input.join("vessel.tif"),
    };
    let opts = RunOptions {
        out_dir: out.clone(),
        threads,
        debug_stages: false,
    };
    let t = Instant::now();
    run_segment(&inputs, &config_for(spec.spacing), &opts).unwrap();
    let seconds = t.elapsed().as_secs_f64();
    PhantomRun {
        gt: read_label_volume(input.join("truth_labels.tif")).unwrap(),
        pred: read_label_volume(out.join("labels.tif")).unwrap(),
        truth,
        seconds,
        out,
        _dir: dir,
    }
}

fn report_of(run: &PhantomRun) -> EvalReport {
    let classes: HashMap<u32, CellClass> = run.truth.iter().map(|n| (n.label, n.class)).collect();
    let a = match_labels(&run.pred, &run.gt, &EvalParams::default()).unwrap();
    score_with_classes(&a, |l| classes.get(&l).copied())
}

/// Pred and truth partition the same voxels with a one-to-one label map.
fn exact_voxel_sets(pred: &LabelVolume, gt: &LabelVolume) -> Result<(), String> {
    let mut fwd: HashMap<u32, u32> = HashMap::new();
    let mut back: HashMap<u32, u32> = HashMap::new();
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        if (p == 0) != (g == 0) {
            return Err(format!("voxel {i}: prediction {p}, truth {g}"));
        }
        if p == 0 {
            continue;
        }
        if *fwd.entry(p).or_insert(g) != g || *back.entry(g).or_insert(p) != p {
            return Err(format!("voxel {i}: prediction {p} and truth {g} are not paired one-to-one"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// 1. Parameters

fn c1_parameters() -> Verdict {
    let c = PipelineConfig::default();
    let checks = [
        ("delta1", c.link.delta1 == 0.2),
        ("delta2", c.link.delta2 == 0.2),
        ("max_clusters", c.split.max_clusters == 3),
        ("alpha", c.split.alpha == 3),
        ("beta", c.split.beta == 0.3),
        ("gamma", c.split.gamma == 0.65),
        ("min_planes", c.filter.min_planes == 3),
        ("min_voxels", c.filter.min_voxels == 10_000),
        ("spacing", c.spacing == spacing(0.21)),
    ];
    let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    // The written form must read back to the same defaults.
    let round_trip = PipelineConfig::parse(&c.to_text()).unwrap() == c;
    (
        bad.is_empty() && round_trip,
        format!("mismatched: {bad:?}, text round trip: {round_trip}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Volume

fn c2_volume() -> Verdict {
    let voxels: Vec<[usize; 3]> = (0..10_000).map(|i| [i % 100, i / 100, 0]).collect();
    let r = measure_voxels(1, None, &voxels, spacing(0.21));
    let mut labels = LabelVolume::new(Dims::new(100, 100, 1));
    labels.data_mut().iter_mut().for_each(|l| *l = 1);
    let from_labels = measure_labels(&labels, spacing(0.21))[0].volume_um3;
    let ok = (r.volume_um3 - 92.61).abs() <= 0.01 && (from_labels - 92.61).abs() <= 0.01;
    (ok, format!("10000 voxels at 0.21 µm -> {:.4} µm³ ({:.4} via label volume)", r.volume_um3, from_labels))
}

// ---------------------------------------------------------------------------
// 3. Oracles

fn neighbor_offsets(dim3: bool, full: bool) -> Vec<[i64; 3]> {
    let zr: &[i64] = if dim3 { &[-1, 0, 1] } else { &[0] };
    let mut out = Vec::new();
    for &dz in zr {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let n = dx.abs() + dy.abs() + dz.abs();
                if n != 0 && (full || n == 1) {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Explicit-stack flood fill; labels in raster order of first voxel. For
/// `dim3 == false` each plane is labeled on its own, planes in order.
fn flood_fill(mask: &BinaryMask, offsets: &[[i64; 3]]) -> Vec<u32> {
    let d = mask.dims();
    let mut labels = vec![0u32; d.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..d.len() {
        if !mask.data()[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y, z) = d.coords(i);
            for o in offsets {
                let (nx, ny, nz) = (x as i64 + o[0], y as i64 + o[1], z as i64 + o[2]);
                if nx < 0 || ny < 0 || nz < 0 || nx >= d.nx as i64 || ny >= d.ny as i64 || nz >= d.nz as i64 {
                    continue;
                }
                let j = d.index(nx as usize, ny as usize, nz as usize);
                if mask.data()[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
    }
    labels
}

fn cc_oracle_suite(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut checked = 0;
    for case in 0..200 {
        let d = Dims::new(rng.random_range(1..=32), rng.random_range(1..=32), rng.random_range(1..=32));
        let p: f64 = rng.random_range(0.1..0.7);
        let mask = BinaryMask::from_fn(d, |_, _, _| rng.random_bool(p));
        let runs = [
            ("2d-4", connected_components_2d(&mask, Connectivity2d::Four).0, neighbor_offsets(false, false)),
            ("2d-8", connected_components_2d(&mask, Connectivity2d::Eight).0, neighbor_offsets(false, true)),
            ("3d-6", connected_components_3d(&mask, Connectivity3d::Six).0, neighbor_offsets(true, false)),
            ("3d-26", connected_components_3d(&mask, Connectivity3d::TwentySix).0, neighbor_offsets(true, true)),
        ];
        for (name, got, offsets) in runs {
            if got.data() != flood_fill(&mask, &offsets).as_slice() {
                return Err(format!("case {case} ({d}, {name}) differs from flood fill"));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn feret_oracle(voxels: &[[usize; 3]], s: VoxelSpacing) -> f64 {
    let s = s.as_array();
    let mut best = 0.0f64;
    for a in voxels {
        for b in voxels {
            let mut t = 0.0;
            for i in 0..3 {
                let d = (a[i] as f64 - b[i] as f64) * s[i];
                t += d * d;
            }
            best = best.max(t);
        }
    }
    best.sqrt()
}

fn random_blob(rng: &mut ChaCha8Rng) -> Vec<[usize; 3]> {
    let mut set = HashSet::new();
    for _ in 0..rng.random_range(1..=4) {
        let c = [0; 3].map(|_| rng.random_range(8.0..32.0));
        let r = [0; 3].map(|_| rng.random_range(1.0..8.0));
        for z in 0..40 {
            for y in 0..40 {
                for x in 0..40 {
                    let q: f64 = [x, y, z].iter().zip(c).zip(r).map(|((&v, c), r)| ((v as f64 - c) / r).powi(2)).sum();
                    if q <= 1.0 {
                        set.insert([x, y, z]);
                    }
                }
            }
        }
    }
    let mut v: Vec<[usize; 3]> = set.into_iter().collect();
    v.sort_unstable();
    if v.is_empty() {
        v.push([0, 0, 0]);
    }
    v.truncate(10_000);
    v
}

fn feret_suite(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    for case in 0..100 {
        let v = random_blob(rng);
        let s = VoxelSpacing::new(rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)).unwrap();
        let (got, want) = (feret_diameter(&v, s), feret_oracle(&v, s));
        if got != want {
            return Err(format!("case {case} ({} voxels): feret {got} vs brute force {want}", v.len()));
        }
    }
    Ok(100)
}

fn random_object(rng: &mut ChaCha8Rng, id: usize, z: usize, width: usize) -> Plane2DObject {
    let n = rng.random_range(1..60);
    let px: Vec<u32> = (0..n).map(|_| rng.random_range(0..(width * width) as u32)).collect();
    Plane2DObject::from_pixels(id, z, width, px)
}

fn filter_suite(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    for case in 0..200 {
        let objs: Vec<Plane2DObject> = (0..rng.random_range(0..20)).map(|i| random_object(rng, i, 0, 12)).collect();
        let min_area = rng.random_range(0..50);
        let want: Vec<usize> = objs.iter().filter(|o| HashSet::<u32>::from_iter(o.pixels.iter().copied()).len() >= min_area).map(|o| o.id).collect();
        let got: Vec<usize> = remove_small_2d(objs, min_area).iter().map(|o| o.id).collect();
        if got != want {
            return Err(format!("2D case {case}: kept {got:?}, predicate keeps {want:?}"));
        }

        let blobs: Vec<Blob3D> = (0..rng.random_range(0..12))
            .map(|b| {
                let n = rng.random_range(1..6);
                let mut members: Vec<Plane2DObject> = rand::seq::index::sample(rng, 8, n)
                        .into_iter()
                        .enumerate()
                        .map(|(i, z)| random_object(rng, i, z, 12))
                        .collect();
                members.sort_by_key(|m| (m.z, m.id));
                Blob3D { label: b as u32 + 1, members, links: Vec::new(), events: Vec::new() }
            })
            .collect();
        let filter = FilterParams { min_planes: rng.random_range(0..5), min_voxels: rng.random_range(0..200) };
        let want: Vec<u32> = blobs
            .iter()
            .filter(|b| {
                let planes: HashSet<usize> = b.members.iter().map(|m| m.z).collect();
                let voxels: HashSet<(usize, u32)> = b.members.iter().flat_map(|m| m.pixels.iter().map(move |&p| (m.z, p))).collect();
                planes.len() >= filter.min_planes && voxels.len() >= filter.min_voxels
            })
            .map(|b| b.label)
            .collect();
        let got: Vec<u32> = remove_small_blobs(blobs, &filter).iter().map(|b| b.label).collect();
        if got != want {
            return Err(format!("3D case {case}: kept {got:?}, predicate keeps {want:?}"));
        }
    }
    Ok(400)
}

fn overlap_suite(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    for case in 0..500 {
        let a = random_object(rng, 0, 0, 8);
        let b = random_object(rng, 1, 1, 8);
        let sa: HashSet<u32> = a.pixels.iter().copied().collect();
        let sb: HashSet<u32> = b.pixels.iter().copied().collect();
        let inter = sa.intersection(&sb).count();
        let min = inter as f64 / sa.len().min(sb.len()) as f64;
        let iou = inter as f64 / sa.union(&sb).count() as f64;
        if object_overlap_fraction(&a, &b) != min || overlap_fraction_with(&a, &b, OverlapMode::Iou) != iou {
            return Err(format!("case {case}: overlap fractions differ from set enumeration"));
        }
    }
    for case in 0..100 {
        let d = Dims::new(rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..6));
        let pred = LabelVolume::from_vec(d, (0..d.len()).map(|_| rng.random_range(0..5)).collect()).unwrap();
        let gt = LabelVolume::from_vec(d, (0..d.len()).map(|_| rng.random_range(0..5)).collect()).unwrap();
        let sets = |l: &LabelVolume| {
            let mut m: BTreeMap<u32, HashSet<usize>> = BTreeMap::new();
            for (i, &v) in l.data().iter().enumerate() {
                if v != 0 {
                    m.entry(v).or_default().insert(i);
                }
            }
            m
        };
        let (ps, gs) = (sets(&pred), sets(&gt));
        let a = match_labels(&pred, &gt, &EvalParams::default()).unwrap();
        let mut want = Vec::new();
        for (p, pv) in &ps {
            for (g, gv) in &gs {
                let n = pv.intersection(gv).count();
                if n > 0 {
                    want.push((*p, *g, n, n as f64 / pv.union(gv).count() as f64));
                }
            }
        }
        let got: Vec<_> = a.overlaps.iter().map(|o| (o.pred, o.gt, o.intersection, o.iou)).collect();
        if got != want {
            return Err(format!("label case {case}: overlaps differ from set enumeration"));
        }
    }
    Ok(600)
}

fn c3_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Instant::now();
    let r = cc_oracle_suite(&mut rng).and_then(|cc| {
        let f = feret_suite(&mut rng)?;
        let fl = filter_suite(&mut rng)?;
        let ov = overlap_suite(&mut rng)?;
        Ok(format!("{cc} labelings, {f} Feret blobs, {fl} filter cases, {ov} overlap cases"))
    });
    let secs = t.elapsed().as_secs_f64();
    match r {
        Ok(msg) => (secs < 60.0, format!("{msg} agree exactly; {secs:.1} s")),
        Err(e) => (false, e),
    }
}

// ---------------------------------------------------------------------------
// 4. Clean phantom

fn clean_lattice_spec() -> PhantomSpec {
    PhantomSpec {
        dims: Dims::new(256, 256, 60),
        spacing: spacing(0.3),
        neurons: 60,
        plain: 40,
        perivascular: 0,
        vessels: 0,
        radius_um: 4.35,
        radius_jitter_um: 0.0,
        axis_jitter: 0.0,
        placement: Placement::Lattice { slot: [32, 32, 30] },
        seed: 4,
        ..PhantomSpec::default()
    }
    .clean()
}

fn c4_clean() -> Verdict {
    let run = phantom_run(&clean_lattice_spec(), 4);
    let r = report_of(&run);
    let exact = exact_voxel_sets(&run.pred, &run.gt);
    let errors = r.over_segmentation + r.under_segmentation + r.noise_as_cell + r.undetected;
    let ok = r.gt_objects == 100 && r.correct == 100 && errors == 0 && exact.is_ok() && run.seconds < 60.0;
    (
        ok,
        format!(
            "{} of {} correct, type 1/2/3/4 = {}/{}/{}/{}, voxel sets {}, {:.1} s",
            r.correct,
            r.gt_objects,
            r.over_segmentation,
            r.under_segmentation,
            r.noise_as_cell,
            r.undetected,
            match exact {
                Ok(()) => "exact".to_string(),
                Err(e) => e,
            },
            run.seconds
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Stress phantom

fn stress_spec(seed: u64) -> PhantomSpec {
    PhantomSpec {
        dims: Dims::new(448, 448, 60),
        spacing: spacing(0.25),
        neurons: 22,
        plain: 14,
        perivascular: 4,
        touching_pairs: 4,
        vessels: 2,
        noise_sigma: 5.0,
        seed,
        ..PhantomSpec::default()
    }
}

fn c5_stress() -> Verdict {
    let run = phantom_run(&stress_spec(5), 4);
    let r = report_of(&run);
    let split_errors = r.over_segmentation_pct() + r.under_segmentation_pct();
    let ok = r.correct_pct() >= 90.0 && r.undetected == 0 && split_errors <= 8.0;
    (
        ok,
        format!(
            "{} nuclei ({} in touching pairs): correct {:.1}%, type-1 {}, type-2 {}, type-3 {}, type-4 {}",
            r.gt_objects,
            run.truth.iter().filter(|n| n.partner.is_some()).count(),
            r.correct_pct(),
            r.over_segmentation,
            r.under_segmentation,
            r.noise_as_cell,
            r.undetected
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Classification

fn c6_classification() -> Verdict {
    let spec = PhantomSpec {
        dims: Dims::new(320, 320, 60),
        spacing: spacing(0.25),
        neurons: 10,
        plain: 5,
        perivascular: 3,
        seed: 6,
        ..PhantomSpec::default()
    }
    .clean();
    let run = phantom_run(&spec, 4);
    let cells = read_cell_table(run.out.join("cells.csv")).unwrap();
    let count = |c: CellClass| cells.iter().filter(|r| r.class == Some(c)).count();
    let counts = (count(CellClass::Neuron), count(CellClass::NonNeuronal), count(CellClass::Perivascular));
    let neurons = read_label_volume(run.out.join("neurons.tif")).unwrap();
    let periv: HashSet<u32> = run.truth.iter().filter(|n| n.class == CellClass::Perivascular).map(|n| n.label).collect();
    let leaked = neurons.data().iter().zip(run.gt.data()).filter(|(&n, g)| n != 0 && periv.contains(g)).count();
    (
        counts == (10, 5, 3) && leaked == 0,
        format!("(neuron, non-neuronal, perivascular) = {counts:?}, perivascular voxels in neuron volume: {leaked}"),
    )
}

// ---------------------------------------------------------------------------
// 7. Clump splitting

fn centroid_um(voxels: impl Iterator<Item = [usize; 3]>, s: VoxelSpacing) -> [f64; 3] {
    let (mut sum, mut n) = ([0.0; 3], 0.0);
    for v in voxels {
        for i in 0..3 {
            sum[i] += v[i] as f64;
        }
        n += 1.0;
    }
    let s = s.as_array();
    std::array::from_fn(|i| sum[i] / n * s[i])
}

fn within_voxel(a: [f64; 3], b: [f64; 3], s: VoxelSpacing) -> bool {
    let s = s.as_array();
    (0..3).all(|i| (a[i] - b[i]).abs() <= s[i])
}

fn segment_via_file(nuclei: &nucseg::volume::VoxelGrid, cfg: &PipelineConfig) -> nucseg::pipeline::Segmentation {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nuclei.tif");
    write_channel_stack(&path, nuclei).unwrap();
    let grid = read_channel_stack(&path).unwrap();
    segment_nuclei(&grid, cfg).unwrap()
}

fn c7_split() -> Verdict {
    let mut good_pairs = 0;
    for seed in 0..50 {
        let p = TouchingPairSpec { seed, ..TouchingPairSpec::default() };
        let (ch, gt) = generate_touching_pair(&p).unwrap();
        let seg = segment_via_file(&ch.nuclei, &config_for(p.spacing));
        if seg.blobs.len() != 2 {
            continue;
        }
        let truth: Vec<[f64; 3]> = (1..=2u32)
            .map(|l| {
                let d = gt.labels.dims();
                centroid_um(
                    gt.labels.data().iter().enumerate().filter(|(_, &v)| v == l).map(|(i, _)| {
                        let (x, y, z) = d.coords(i);
                        [x, y, z]
                    }),
                    p.spacing,
                )
            })
            .collect();
        let got: Vec<[f64; 3]> = seg.cells.iter().map(|c| c.centroid_um).collect();
        let direct = within_voxel(got[0], truth[0], p.spacing) && within_voxel(got[1], truth[1], p.spacing);
        let swapped = within_voxel(got[0], truth[1], p.spacing) && within_voxel(got[1], truth[0], p.spacing);
        if direct || swapped {
            good_pairs += 1;
        }
    }

    let mut false_splits = 0;
    let mut missed = 0;
    for seed in 0..100 {
        let spec = PhantomSpec {
            dims: Dims::new(64, 64, 56),
            neurons: 0,
            plain: 1,
            perivascular: 0,
            vessels: 0,
            seed: 1000 + seed,
            ..PhantomSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        generate_to_dir(&spec, dir.path()).unwrap();
        let grid = read_channel_stack(dir.path().join("nuclei.tif")).unwrap();
        let seg = segment_nuclei(&grid, &config_for(spec.spacing)).unwrap();
        match seg.blobs.len() {
            0 => missed += 1,
            1 => {}
            _ => false_splits += 1,
        }
    }
    let pct = 100.0 * good_pairs as f64 / 50.0;
    (
        pct >= 95.0 && false_splits == 0,
        format!("{good_pairs}/50 pairs split with centroids within 1 voxel ({pct:.0}%), {false_splits} false splits in 100 singles ({missed} singles lost)"),
    )
}

// ---------------------------------------------------------------------------
// 8. Performance

fn c8_performance() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_nucseg");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("phantom");
    let out = dir.path().join("out");
    let spec = PhantomSpec {
        dims: Dims::new(1024, 1024, 150),
        neurons: 180,
        plain: 120,
        perivascular: 24,
        touching_pairs: 20,
        vessels: 6,
        seed: 8,
        ..PhantomSpec::default()
    };
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let st = Command::new(bin).arg("phantom").arg(&spec_path).arg("--out").arg(&input).stdout(Stdio::null()).status().unwrap();
    if !st.success() {
        return (false, format!("phantom generation failed: {st}"));
    }
    let t = Instant::now();
    let st = Command::new(bin)
        .arg("segment")
        .args(["nuclei.tif", "marker.tif", "vessel.tif"].map(|f| input.join(f)))
        .arg("--out")
        .arg(&out)
        .args(["--threads", "4"])
        .stdout(Stdio::null())
        .status()
        .unwrap();
    let elapsed = t.elapsed();
    if !st.success() {
        return (false, format!("segment failed: {st}"));
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let peak = m["peak_rss_bytes"].as_u64();
    let budget = m["memory_budget_bytes"].as_u64();
    let input_bytes: u64 = ["nuclei.tif", "marker.tif", "vessel.tif"]
        .iter()
        .map(|f| std::fs::metadata(input.join(f)).unwrap().len())
        .sum();
    let found = read_cell_table(out.join("cells.csv")).unwrap().len();
    let mib = |b: Option<u64>| b.map_or("n/a".to_string(), |b| format!("{} MiB", b / (1 << 20)));
    let ok = elapsed < Duration::from_secs(600) && matches!((peak, budget), (Some(p), Some(b)) if p <= b);
    (
        ok,
        format!(
            "1024x1024x150, {} MiB input, {found} of {} nuclei found, {} threads on {} cpus: {:.0} s, peak {} of budget {}",
            input_bytes / (1 << 20),
            spec.nucleus_count(),
            4,
            std::thread::available_parallelism().map_or(1, |n| n.get()),
            elapsed.as_secs_f64(),
            mib(peak),
            mib(budget)
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Determinism

fn c9_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_nucseg");
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("phantom");
    let spec = PhantomSpec { touching_pairs: 2, seed: 9, ..PhantomSpec::default() };
    generate_to_dir(&spec, &input).unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("out{threads}"));
        let st = Command::new(bin)
            .arg("segment")
            .args(["nuclei.tif", "marker.tif", "vessel.tif"].map(|f| input.join(f)))
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads, "--seed", "17", "--spacing", "0.21,0.21,0.21"])
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(st.success(), "segment with {threads} threads failed");
        out
    };
    let (a, b) = (run("1"), run("4"));
    let same = |f: &str| std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
    let files = ["labels.tif", "neurons.tif", "non_neuronal.tif", "perivascular.tif", "cells.csv"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    let cells = read_cell_table(a.join("cells.csv")).unwrap().len();
    (differing.is_empty(), format!("threads 1 vs 4 on {cells} cells; differing files: {differing:?}"))
}

// ---------------------------------------------------------------------------
// 10. Counting frame

fn cuts(rng: &mut ChaCha8Rng, extent: f64) -> Vec<f64> {
    let mut c: Vec<f64> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0.0..extent)).collect();
    c.push(0.0);
    c.push(extent);
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn c10_counting_frame() -> Verdict {
    let spec = PhantomSpec { seed: 10, ..PhantomSpec::default() };
    let dir = tempfile::tempdir().unwrap();
    generate_to_dir(&spec, dir.path()).unwrap();
    let labels = read_label_volume(dir.path().join("truth_labels.tif")).unwrap();
    let cells = measure_labels(&labels, spec.spacing);
    let whole = CountingFrame::whole(labels.dims(), spec.spacing);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut frames_total = 0;
    for tiling in 0..20 {
        let c: Vec<Vec<f64>> = (0..3).map(|i| cuts(&mut rng, whole.max[i])).collect();
        let mut hits = vec![0usize; cells.len()];
        for x in c[0].windows(2) {
            for y in c[1].windows(2) {
                for z in c[2].windows(2) {
                    let f = CountingFrame::new([x[0], y[0], z[0]], [x[1], y[1], z[1]]).unwrap();
                    frames_total += 1;
                    for (h, cell) in hits.iter_mut().zip(&cells) {
                        *h += f.counts(cell, spec.spacing) as usize;
                    }
                }
            }
        }
        if let Some(i) = hits.iter().position(|&h| h != 1) {
            return (false, format!("tiling {tiling}: cell {} counted {} times", cells[i].label, hits[i]));
        }
    }
    (true, format!("{} cells each counted once in all 20 tilings ({frames_total} frames)", cells.len()))
}

// ---------------------------------------------------------------------------

fn main() {
    type Criterion = (usize, &'static str, fn() -> Verdict);
    let criteria: [Criterion; 10] = [
        (1, "parameter defaults", c1_parameters),
        (2, "volume arithmetic", c2_volume),
        (3, "oracle suites", c3_oracles),
        (4, "clean phantom", c4_clean),
        (5, "stress phantom", c5_stress),
        (6, "classification", c6_classification),
        (7, "clump splitting", c7_split),
        (8, "performance and memory", c8_performance),
        (9, "determinism", c9_determinism),
        (10, "counting frame", c10_counting_frame),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // Keep panics from a failing criterion from printing over the report.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += !ok as usize;
        println!(
            "criterion {n:>2} {name}: {} ({detail}) [{:.1} s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
