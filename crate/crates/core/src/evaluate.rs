//! Scoring a predicted label volume against ground truth.
//!
//! With threshold `t`, a pair (p, g) is
//! - an IoU match when `|p∩g| / |p∪g| >= t`,
//! - a part of g when `|p∩g| >= t·|p|` (p lies mostly inside g),
//! - a cover of g when `|p∩g| >= t·|g|` (g lies mostly inside p).
//!
//! Each ground-truth object gets exactly one outcome, checked in order:
//! over-segmented (two or more predictions are parts of it), under-segmented
//! (a prediction covering several objects covers it and it is not that
//! prediction's primary, the one with the largest intersection), correct (an
//! IoU match, or the primary of such a prediction), undetected otherwise.
//! Predictions with no relation to any object are noise.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::fusion::CellClass;
use crate::volume::LabelVolume;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub match_threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { match_threshold: 0.5 }
    }
}

impl EvalParams {
    pub fn new(match_threshold: f64) -> Result<Self> {
        if !(match_threshold > 0.0 && match_threshold <= 1.0) {
            return Err(Error::Invalid(format!("match threshold {match_threshold} is outside (0, 1]")));
        }
        Ok(EvalParams { match_threshold })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub pred: u32,
    pub gt: u32,
    pub intersection: usize,
    pub iou: f64,
}

/// All prediction/truth pairs with nonzero overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub threshold: f64,
    pub pred_sizes: BTreeMap<u32, usize>,
    pub gt_sizes: BTreeMap<u32, usize>,
    /// Sorted by `(pred, gt)`.
    pub overlaps: Vec<Overlap>,
}

impl Association {
    /// Pairs at or above the IoU threshold.
    pub fn matches(&self) -> impl Iterator<Item = &Overlap> {
        self.overlaps.iter().filter(|o| o.iou >= self.threshold)
    }

    fn part_of(&self, o: &Overlap) -> bool {
        o.intersection as f64 >= self.threshold * self.pred_sizes[&o.pred] as f64
    }

    fn covers(&self, o: &Overlap) -> bool {
        o.intersection as f64 >= self.threshold * self.gt_sizes[&o.gt] as f64
    }
}

fn sizes(labels: &LabelVolume) -> BTreeMap<u32, usize> {
    let mut m = BTreeMap::new();
    for &l in labels.data() {
        if l != 0 {
            *m.entry(l).or_insert(0) += 1;
        }
    }
    m
}

/// Builds the association between two label volumes of equal dims.
pub fn match_labels(pred: &LabelVolume, gt: &LabelVolume, params: &EvalParams) -> Result<Association> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction is {}, ground truth is {}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let pred_sizes = sizes(pred);
    let gt_sizes = sizes(gt);
    let mut overlaps: Vec<Overlap> = inter
        .into_iter()
        .map(|((p, g), n)| Overlap {
            pred: p,
            gt: g,
            intersection: n,
            iou: n as f64 / (pred_sizes[&p] + gt_sizes[&g] - n) as f64,
        })
        .collect();
    overlaps.sort_unstable_by_key(|o| (o.pred, o.gt));
    Ok(Association {
        threshold: params.match_threshold,
        pred_sizes,
        gt_sizes,
        overlaps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    OverSegmentation,
    UnderSegmentation,
    Undetected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub total: usize,
    pub correct: usize,
    pub over_segmentation: usize,
    pub under_segmentation: usize,
    pub undetected: usize,
}

impl CategoryCounts {
    fn add(&mut self, o: Outcome) {
        self.total += 1;
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::OverSegmentation => self.over_segmentation += 1,
            Outcome::UnderSegmentation => self.under_segmentation += 1,
            Outcome::Undetected => self.undetected += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_threshold: f64,
    pub gt_objects: usize,
    pub pred_objects: usize,
    pub correct: usize,
    /// Type-1.
    pub over_segmentation: usize,
    /// Type-2.
    pub under_segmentation: usize,
    /// Type-3, counted over predictions.
    pub noise_as_cell: usize,
    /// Type-4.
    pub undetected: usize,
    /// Ground-truth outcomes per class, when classes are known.
    pub per_class: BTreeMap<String, CategoryCounts>,
    pub outcomes: BTreeMap<u32, Outcome>,
    pub noise_labels: Vec<u32>,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

impl EvalReport {
    pub fn correct_pct(&self) -> f64 {
        pct(self.correct, self.gt_objects)
    }

    pub fn over_segmentation_pct(&self) -> f64 {
        pct(self.over_segmentation, self.gt_objects)
    }

    pub fn under_segmentation_pct(&self) -> f64 {
        pct(self.under_segmentation, self.gt_objects)
    }

    pub fn noise_as_cell_pct(&self) -> f64 {
        pct(self.noise_as_cell, self.pred_objects)
    }

    pub fn undetected_pct(&self) -> f64 {
        pct(self.undetected, self.gt_objects)
    }

    /// Aligned text table.
    pub fn to_table(&self) -> String {
        let rows = [
            ("Correct", self.correct, self.correct_pct()),
            ("Type-1 error: Over-segmentation", self.over_segmentation, self.over_segmentation_pct()),
            ("Type-2 error: Under-segmentation", self.under_segmentation, self.under_segmentation_pct()),
            ("Type-3 error: Noise detected as cell", self.noise_as_cell, self.noise_as_cell_pct()),
            ("Type-4 error: Undetected cell", self.undetected, self.undetected_pct()),
        ];
        let mut out = format!(
            "ground-truth objects: {}, predicted objects: {}, IoU threshold {}\n\
             Type-3 is a percentage of predicted objects, every other row of ground-truth objects\n\n",
            self.gt_objects, self.pred_objects, self.match_threshold
        );
        out.push_str(&format!("{:<38}{:>8}{:>10}\n", "Category", "Count", "Percent"));
        for (name, n, p) in rows {
            out.push_str(&format!("{name:<38}{n:>8}{p:>9.2}%\n"));
        }
        if !self.per_class.is_empty() {
            out.push_str(&format!(
                "\n{:<16}{:>8}{:>9}{:>9}{:>9}{:>9}\n",
                "Class", "Total", "Correct", "Type-1", "Type-2", "Type-4"
            ));
            for (c, k) in &self.per_class {
                out.push_str(&format!(
                    "{c:<16}{:>8}{:>9}{:>9}{:>9}{:>9}\n",
                    k.total, k.correct, k.over_segmentation, k.under_segmentation, k.undetected
                ));
            }
        }
        out
    }
}

/// Scores an association; `gt_class` supplies the per-class breakdown.
pub fn score_with_classes(a: &Association, gt_class: impl Fn(u32) -> Option<CellClass>) -> EvalReport {
    let mut parts: HashMap<u32, usize> = HashMap::new();
    let mut iou_matched: HashMap<u32, bool> = HashMap::new();
    let mut covered: BTreeMap<u32, Vec<&Overlap>> = BTreeMap::new();
    let mut related: HashMap<u32, bool> = HashMap::new();
    for o in &a.overlaps {
        let part = a.part_of(o);
        let cover = a.covers(o);
        let m = o.iou >= a.threshold;
        if part {
            *parts.entry(o.gt).or_insert(0) += 1;
        }
        if m {
            iou_matched.insert(o.gt, true);
        }
        if cover {
            covered.entry(o.pred).or_default().push(o);
        }
        if part || cover || m {
            related.insert(o.pred, true);
        }
    }
    // gt -> (is primary of some multi-cover prediction, absorbed by one)
    let mut primary: HashMap<u32, bool> = HashMap::new();
    let mut absorbed: HashMap<u32, bool> = HashMap::new();
    let over = |g: u32| parts.get(&g).copied().unwrap_or(0) >= 2;
    for list in covered.values() {
        let list: Vec<&&Overlap> = list.iter().filter(|o| !over(o.gt)).collect();
        if list.len() < 2 {
            continue;
        }
        let best = list
            .iter()
            .max_by(|x, y| x.intersection.cmp(&y.intersection).then(y.gt.cmp(&x.gt)))
            .expect("nonempty");
        for o in &list {
            if o.gt == best.gt {
                primary.insert(o.gt, true);
            } else {
                absorbed.insert(o.gt, true);
            }
        }
    }

    let mut outcomes = BTreeMap::new();
    let mut per_class: BTreeMap<String, CategoryCounts> = BTreeMap::new();
    let mut totals = CategoryCounts::default();
    for &g in a.gt_sizes.keys() {
        let o = if over(g) {
            Outcome::OverSegmentation
        } else if absorbed.contains_key(&g) && !primary.contains_key(&g) {
            Outcome::UnderSegmentation
        } else if iou_matched.contains_key(&g) || primary.contains_key(&g) {
            Outcome::Correct
        } else {
            Outcome::Undetected
        };
        outcomes.insert(g, o);
        totals.add(o);
        if let Some(c) = gt_class(g) {
            per_class.entry(c.name().to_string()).or_default().add(o);
        }
    }
    let noise_labels: Vec<u32> = a.pred_sizes.keys().copied().filter(|p| !related.contains_key(p)).collect();
    EvalReport {
        match_threshold: a.threshold,
        gt_objects: a.gt_sizes.len(),
        pred_objects: a.pred_sizes.len(),
        correct: totals.correct,
        over_segmentation: totals.over_segmentation,
        under_segmentation: totals.under_segmentation,
        noise_as_cell: noise_labels.len(),
        undetected: totals.undetected,
        per_class,
        outcomes,
        noise_labels,
    }
}

pub fn score(a: &Association) -> EvalReport {
    score_with_classes(a, |_| None)
}

/// Matches and scores in one call.
pub fn evaluate(pred: &LabelVolume, gt: &LabelVolume, params: &EvalParams) -> Result<EvalReport> {
    Ok(score(&match_labels(pred, gt, params)?))
}
