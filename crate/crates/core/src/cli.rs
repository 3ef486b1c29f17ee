//! Command-line front end. `main.rs` only forwards to [`run`].

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::evaluate::{match_labels, score_with_classes, EvalParams};
use crate::fusion::CellClass;
use crate::io::{load_config, parse_spacing, read_label_volume, write_cell_table, write_json, PipelineConfig};
use crate::morphometry::{counting_frame_filter, measure_labels, CountingFrame};
use crate::phantom::{generate_to_dir, parse_spec, PhantomSpec};
use crate::pipeline::{run_segment, RunOptions, SegmentInputs};
use crate::volume::VoxelSpacing;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nucseg", version, about = "3D nuclei segmentation and classification for confocal stacks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment and classify nuclei from nuclear, marker and vessel stacks.
    Segment(SegmentArgs),
    /// Write a synthetic three-channel stack with ground truth.
    Phantom(PhantomArgs),
    /// Score a predicted label stack against a ground-truth label stack.
    Evaluate(EvaluateArgs),
    /// Tabulate per-object measurements of a label stack.
    Measure(MeasureArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` parameter file; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "NUCSEG_THREADS")]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Voxel size in µm as `sx,sy,sz`; overrides the config.
    #[arg(long)]
    pub spacing: Option<String>,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub nuclei: PathBuf,
    pub marker: PathBuf,
    pub vessel: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write intermediate masks and label stacks under `stages/`.
    #[arg(long)]
    pub debug_stages: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// JSON phantom description; absent fields take defaults.
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop noise and attenuation.
    #[arg(long)]
    pub clean: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// Overlap threshold for matches and containment.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// CSV with `label` and `class` columns giving ground-truth classes.
    #[arg(long)]
    pub truth_csv: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    pub labels: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Keep only cells counted by the frame `x0,y0,z0,x1,y1,z1` (µm).
    #[arg(long)]
    pub frame: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(s) = &self.spacing {
            cfg.spacing = parse_spacing(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn threads(&self) -> Result<usize> {
        match self.threads {
            Some(0) => Err(Error::range("threads", "must be at least 1")),
            Some(n) => Ok(n),
            None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads()?)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))
    }
}

/// Runs one parsed command and returns the process exit status.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Segment(a) => segment(a),
        Command::Phantom(a) => phantom(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Measure(a) => measure(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn segment(a: SegmentArgs) -> Result<()> {
    let cfg = a.common.config()?;
    let opts = RunOptions {
        out_dir: a.out,
        threads: a.common.threads()?,
        debug_stages: a.debug_stages,
    };
    let inputs = SegmentInputs {
        nuclei: a.nuclei,
        marker: a.marker,
        vessel: a.vessel,
    };
    let m = run_segment(&inputs, &cfg, &opts)?;
    println!("wrote {} files to {}", m.outputs.len(), opts.out_dir.display());
    Ok(())
}

/// Phantom specs are configuration, so their errors exit like config errors.
fn spec_error(e: Error) -> Error {
    match e {
        Error::Invalid(msg) => Error::range("phantom", msg),
        other => other,
    }
}

fn phantom(a: PhantomArgs) -> Result<()> {
    let mut spec = match &a.spec {
        None => PhantomSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_spec(&text).map_err(spec_error)?
        }
    };
    if let Some(s) = &a.common.spacing {
        spec.spacing = parse_spacing(s)?;
    }
    if let Some(seed) = a.common.seed {
        spec.seed = seed;
    }
    if a.clean {
        spec = spec.clean();
    }
    spec.validate().map_err(spec_error)?;
    let truth = a.common.pool()?.install(|| generate_to_dir(&spec, &a.out))?;
    println!("wrote {} nuclei to {}", truth.len(), a.out.display());
    Ok(())
}

/// Label-to-class map from any CSV carrying `label` and `class` columns.
pub fn read_class_map(path: &Path) -> Result<HashMap<u32, CellClass>> {
    let err = |msg: String| Error::format(path, msg);
    let mut r = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = r.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(format!("no `{name}` column")))
    };
    let (li, ci) = (col("label")?, col("class")?);
    let mut out = HashMap::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let label = row[li].parse().map_err(|_| err(format!("row {}: bad label", i + 1)))?;
        if let Some(c) = CellClass::parse(&row[ci]) {
            out.insert(label, c);
        }
    }
    Ok(out)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let params = EvalParams::new(a.threshold)?;
    let classes = match &a.truth_csv {
        Some(p) => read_class_map(p)?,
        None => HashMap::new(),
    };
    let pred = read_label_volume(&a.pred)?;
    let gt = read_label_volume(&a.gt)?;
    let report = a.common.pool()?.install(|| -> Result<_> {
        let assoc = match_labels(&pred, &gt, &params)?;
        Ok(score_with_classes(&assoc, |l| classes.get(&l).copied()))
    })?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn parse_frame(s: &str) -> Result<CountingFrame> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Invalid(format!("frame `{s}`: expected six numbers")))?;
    if v.len() != 6 {
        return Err(Error::Invalid(format!("frame `{s}`: expected six numbers")));
    }
    CountingFrame::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
}

fn spacing_of(c: &Common) -> Result<VoxelSpacing> {
    Ok(c.config()?.spacing)
}

fn measure(a: MeasureArgs) -> Result<()> {
    let spacing = spacing_of(&a.common)?;
    let labels = read_label_volume(&a.labels)?;
    let cells = a.common.pool()?.install(|| measure_labels(&labels, spacing));
    let kept: Vec<_> = match &a.frame {
        Some(f) => {
            let frame = parse_frame(f)?;
            frame.check_within(labels.dims(), spacing)?;
            counting_frame_filter(&cells, &frame, spacing).into_iter().cloned().collect()
        }
        None => cells,
    };
    write_cell_table(&a.out, &kept)?;
    println!("measured {} cells", kept.len());
    Ok(())
}
