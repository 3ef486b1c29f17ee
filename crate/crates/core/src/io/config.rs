//! `key = value` pipeline configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binarize::{BinarizeParams, ThresholdMethod};
use crate::fusion::FusionParams;
use crate::reconstruct::{FilterParams, LinkParams, SplitParams};
use crate::segment2d::OverlapMode;
use crate::volume::{Connectivity2d, VoxelSpacing};
use crate::{Error, Result};

/// Every tunable parameter of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spacing: VoxelSpacing,
    pub seed: u64,
    pub binarize: BinarizeParams,
    pub link: LinkParams,
    pub split: SplitParams,
    pub filter: FilterParams,
    pub fusion: FusionParams,
}

pub const CONFIG_KEYS: &[&str] = &[
    "spacing",
    "seed",
    "connectivity_2d",
    "threshold_method",
    "local_pad",
    "opening_radius",
    "min_area_2d",
    "border_abort",
    "min_separation",
    "overlap_mode",
    "delta1",
    "delta2",
    "bridge_gaps",
    "max_clusters",
    "alpha",
    "beta",
    "gamma",
    "kmeans_restarts",
    "min_planes",
    "min_voxels",
    "vessel_dilation_um",
    "perivascular_min_overlap",
    "neuron_min_overlap",
];

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::ConfigParse {
        line,
        msg: format!("`{v}` is not a valid value for {key}"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::ConfigParse {
            line,
            msg: format!("`{v}` is not a boolean for {key}"),
        }),
    }
}

/// Parses `sx,sy,sz`; each must be a positive number.
pub fn parse_spacing(v: &str) -> Result<VoxelSpacing> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let nums: Vec<f64> = parts.iter().filter_map(|p| p.parse().ok()).collect();
    if parts.len() != 3 || nums.len() != 3 {
        return Err(Error::range("spacing", format!("expected sx,sy,sz, got `{v}`")));
    }
    VoxelSpacing::new(nums[0], nums[1], nums[2]).map_err(|e| Error::range("spacing", e.to_string()))
}

impl PipelineConfig {
    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let b = &mut self.binarize;
        match key {
            "spacing" => self.spacing = parse_spacing(v)?,
            "seed" => self.seed = parse_value(line, key, v)?,
            "connectivity_2d" => {
                let n: u32 = parse_value(line, key, v)?;
                b.connectivity = Connectivity2d::from_count(n).ok_or_else(|| Error::range(key, "must be 4 or 8"))?;
            }
            "threshold_method" => {
                b.method = ThresholdMethod::parse(v).ok_or_else(|| Error::range(key, "must be otsu or isodata"))?
            }
            "local_pad" => b.local_pad = parse_value(line, key, v)?,
            "opening_radius" => b.opening_radius = parse_value(line, key, v)?,
            "min_area_2d" => b.min_area_2d = parse_value(line, key, v)?,
            "border_abort" => b.border_abort = parse_bool(line, key, v)?,
            "min_separation" => b.min_separation = parse_value(line, key, v)?,
            "overlap_mode" => {
                self.link.overlap_mode = match v {
                    "min" => OverlapMode::Min,
                    "iou" => OverlapMode::Iou,
                    _ => return Err(Error::range(key, "must be min or iou")),
                }
            }
            "delta1" => self.link.delta1 = parse_value(line, key, v)?,
            "delta2" => self.link.delta2 = parse_value(line, key, v)?,
            "bridge_gaps" => self.link.bridge_gaps = parse_bool(line, key, v)?,
            "max_clusters" => self.split.max_clusters = parse_value(line, key, v)?,
            "alpha" => self.split.alpha = parse_value(line, key, v)?,
            "beta" => self.split.beta = parse_value(line, key, v)?,
            "gamma" => self.split.gamma = parse_value(line, key, v)?,
            "kmeans_restarts" => self.split.kmeans_restarts = parse_value(line, key, v)?,
            "min_planes" => self.filter.min_planes = parse_value(line, key, v)?,
            "min_voxels" => self.filter.min_voxels = parse_value(line, key, v)?,
            "vessel_dilation_um" => self.fusion.vessel_dilation_um = parse_value(line, key, v)?,
            "perivascular_min_overlap" => self.fusion.perivascular_min_overlap = parse_value(line, key, v)?,
            "neuron_min_overlap" => self.fusion.neuron_min_overlap = parse_value(line, key, v)?,
            _ => {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Checks every field against its legal range.
    pub fn validate(&self) -> Result<()> {
        let fraction = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::range(field, format!("{v} is outside [0, 1]")))
            }
        };
        let at_least = |field: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(Error::range(field, format!("{v} is below the minimum {min}")))
            }
        };
        let b = &self.binarize;
        at_least("opening_radius", b.opening_radius as usize, 1)?;
        at_least("min_area_2d", b.min_area_2d, 1)?;
        if !(b.min_separation.is_finite() && b.min_separation >= 0.0) {
            return Err(Error::range("min_separation", "must be a finite number >= 0"));
        }
        fraction("delta1", self.link.delta1)?;
        fraction("delta2", self.link.delta2)?;
        at_least("max_clusters", self.split.max_clusters, 2)?;
        at_least("alpha", self.split.alpha, 1)?;
        fraction("beta", self.split.beta)?;
        fraction("gamma", self.split.gamma)?;
        at_least("kmeans_restarts", self.split.kmeans_restarts, 1)?;
        at_least("min_planes", self.filter.min_planes, 1)?;
        at_least("min_voxels", self.filter.min_voxels, 1)?;
        let f = &self.fusion;
        if !(f.vessel_dilation_um.is_finite() && f.vessel_dilation_um >= 0.0) {
            return Err(Error::range("vessel_dilation_um", "must be a finite number >= 0"));
        }
        fraction("perivascular_min_overlap", f.perivascular_min_overlap)?;
        fraction("neuron_min_overlap", f.neuron_min_overlap)?;
        Ok(())
    }

    /// Parses config text; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k) {
                return Err(Error::ConfigParse {
                    line,
                    msg: format!("duplicate key `{k}`"),
                });
            }
            seen.push(k);
            cfg.set(line, k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its effective value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let b = &self.binarize;
        let s = self.spacing;
        let lines = [
            format!("spacing = {},{},{}", s.sx, s.sy, s.sz),
            format!("seed = {}", self.seed),
            format!("connectivity_2d = {}", b.connectivity.count()),
            format!("threshold_method = {}", b.method.name()),
            format!("local_pad = {}", b.local_pad),
            format!("opening_radius = {}", b.opening_radius),
            format!("min_area_2d = {}", b.min_area_2d),
            format!("border_abort = {}", b.border_abort),
            format!("min_separation = {}", b.min_separation),
            format!(
                "overlap_mode = {}",
                match self.link.overlap_mode {
                    OverlapMode::Min => "min",
                    OverlapMode::Iou => "iou",
                }
            ),
            format!("delta1 = {}", self.link.delta1),
            format!("delta2 = {}", self.link.delta2),
            format!("bridge_gaps = {}", self.link.bridge_gaps),
            format!("max_clusters = {}", self.split.max_clusters),
            format!("alpha = {}", self.split.alpha),
            format!("beta = {}", self.split.beta),
            format!("gamma = {}", self.split.gamma),
            format!("kmeans_restarts = {}", self.split.kmeans_restarts),
            format!("min_planes = {}", self.filter.min_planes),
            format!("min_voxels = {}", self.filter.min_voxels),
            format!("vessel_dilation_um = {}", self.fusion.vessel_dilation_um),
            format!("perivascular_min_overlap = {}", self.fusion.perivascular_min_overlap),
            format!("neuron_min_overlap = {}", self.fusion.neuron_min_overlap),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

/// Config from a file, or defaults when `path` is `None`.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            PipelineConfig::parse(&text)
        }
    }
}
