//! Unknown-object detection metrics.
//!
//! Predictions are matched to ground truth per class, with the unknown
//! label treated as one more class. Known verdicts never match unknown
//! objects and vice versa. U-PRE, U-REC and U-F1 come from the unknown-class
//! counts at a single IoU threshold; U-AP uses all-points interpolated AP on
//! the same matching; mAP averages known-class AP over IoU 0.50:0.05:0.95.
//!
//! Any ratio whose denominator is zero is reported as 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::FinalPrediction;

/// Known class index, or the single label shared by every unseen category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Known(usize),
    Unknown,
}

impl Label {
    pub fn is_known(&self) -> bool {
        matches!(self, Label::Known(_))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelRepr {
    Index(usize),
    Name(String),
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Known(k) => LabelRepr::Index(*k),
            Label::Unknown => LabelRepr::Name("unknown".to_string()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LabelRepr::deserialize(d)? {
            LabelRepr::Index(k) => Ok(Label::Known(k)),
            LabelRepr::Name(n) if n == "unknown" => Ok(Label::Unknown),
            LabelRepr::Name(n) => Err(serde::de::Error::custom(format!(
                "label must be a class index or \"unknown\", got {n:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn merge(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// A prediction's confidence and whether it matched a ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedFlag {
    pub confidence: f64,
    pub tp: bool,
}

/// Per-class matching record. Counts and flags merge across scenes by
/// concatenation, so aggregation order only affects flag tie order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassOutcome {
    pub counts: Counts,
    pub num_gt: usize,
    pub flags: Vec<RankedFlag>,
}

impl ClassOutcome {
    fn merge(&mut self, other: &ClassOutcome) {
        self.counts.merge(&other.counts);
        self.num_gt += other.num_gt;
        self.flags.extend_from_slice(&other.flags);
    }

    /// Flags ordered by descending confidence, stable on ties.
    pub fn ranked_flags(&self) -> Vec<bool> {
        let mut flags = self.flags.clone();
        flags.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        flags.into_iter().map(|f| f.tp).collect()
    }

    pub fn average_precision(&self) -> f64 {
        average_precision(&self.ranked_flags(), self.num_gt)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub unknown: ClassOutcome,
    pub known: BTreeMap<usize, ClassOutcome>,
}

impl MatchOutcome {
    pub fn tp_u(&self) -> usize {
        self.unknown.counts.tp
    }

    pub fn fp_u(&self) -> usize {
        self.unknown.counts.fp
    }

    pub fn fn_u(&self) -> usize {
        self.unknown.counts.fn_
    }

    pub fn merge(&mut self, other: &MatchOutcome) {
        self.unknown.merge(&other.unknown);
        for (class, outcome) in &other.known {
            self.known.entry(*class).or_default().merge(outcome);
        }
    }

    pub fn known_counts(&self) -> Counts {
        let mut total = Counts::default();
        for c in self.known.values() {
            total.merge(&c.counts);
        }
        total
    }
}

fn match_class(preds: &[&FinalPrediction], gts: &[&GroundTruthObject], iou_threshold: f64) -> ClassOutcome {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].confidence.total_cmp(&preds[a].confidence));

    let mut matched = vec![false; gts.len()];
    let mut out = ClassOutcome {
        num_gt: gts.len(),
        ..Default::default()
    };
    for i in order {
        let p = preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if matched[j] {
                continue;
            }
            let v = iou(&p.bbox, &g.bbox);
            if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        let tp = match best {
            Some((j, _)) => {
                matched[j] = true;
                out.counts.tp += 1;
                true
            }
            None => {
                out.counts.fp += 1;
                false
            }
        };
        out.flags.push(RankedFlag {
            confidence: p.confidence,
            tp,
        });
    }
    out.counts.fn_ = matched.iter().filter(|m| !**m).count();
    out
}

/// Greedy per-class matching of one scene's predictions against its ground
/// truth. Each prediction, in descending confidence, takes the unmatched
/// same-class ground truth with the highest IoU at or above the threshold.
pub fn match_to_gt(predictions: &[FinalPrediction], gts: &[GroundTruthObject], iou_threshold: f64) -> MatchOutcome {
    let mut labels: Vec<Label> = predictions
        .iter()
        .map(|p| p.verdict)
        .chain(gts.iter().map(|g| g.label))
        .collect();
    labels.sort();
    labels.dedup();

    let mut out = MatchOutcome::default();
    for label in labels {
        let p: Vec<&FinalPrediction> = predictions.iter().filter(|p| p.verdict == label).collect();
        let g: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.label == label).collect();
        let outcome = match_class(&p, &g, iou_threshold);
        match label {
            Label::Unknown => out.unknown = outcome,
            Label::Known(k) => {
                out.known.insert(k, outcome);
            }
        }
    }
    out
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn u_precision(outcome: &MatchOutcome) -> f64 {
    ratio(outcome.tp_u(), outcome.tp_u() + outcome.fp_u())
}

pub fn u_recall(outcome: &MatchOutcome) -> f64 {
    ratio(outcome.tp_u(), outcome.tp_u() + outcome.fn_u())
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn u_f1(outcome: &MatchOutcome) -> f64 {
    f1(u_precision(outcome), u_recall(outcome))
}

/// (recall, precision) after each ranked detection.
pub fn precision_recall_curve(flags: &[bool], total_positives: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(i, &hit)| {
            if hit {
                tp += 1;
            }
            (ratio(tp, total_positives), tp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// All-points interpolated AP: area under the precision envelope of the
/// PR curve, with flags already ranked by descending confidence.
pub fn average_precision(flags: &[bool], total_positives: usize) -> f64 {
    if total_positives == 0 {
        return 0.0;
    }
    let curve = precision_recall_curve(flags, total_positives);
    let mut recall = Vec::with_capacity(curve.len() + 2);
    let mut precision = Vec::with_capacity(curve.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    for (r, p) in curve {
        recall.push(r);
        precision.push(p);
    }
    recall.push(1.0);
    precision.push(0.0);

    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        if recall[i] != recall[i - 1] {
            ap += (recall[i] - recall[i - 1]) * precision[i];
        }
    }
    ap
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (10 + i) as f64 / 20.0)
}

fn known_only(preds: &[FinalPrediction]) -> Vec<FinalPrediction> {
    preds.iter().filter(|p| p.verdict.is_known()).cloned().collect()
}

/// Mean known-class AP averaged over the ten COCO IoU thresholds, pooled
/// over scenes. Classes without ground truth are skipped; no known ground
/// truth at all gives 0.
pub fn map_over_scenes(predictions: &[Vec<FinalPrediction>], gts: &[Vec<GroundTruthObject>]) -> f64 {
    let thresholds = coco_iou_thresholds();
    let mut total = 0.0;
    for &t in &thresholds {
        let mut pooled = MatchOutcome::default();
        for (p, g) in predictions.iter().zip(gts) {
            let g: Vec<GroundTruthObject> = g.iter().filter(|g| g.label.is_known()).cloned().collect();
            pooled.merge(&match_to_gt(&known_only(p), &g, t));
        }
        let aps: Vec<f64> = pooled
            .known
            .values()
            .filter(|c| c.num_gt > 0)
            .map(ClassOutcome::average_precision)
            .collect();
        if !aps.is_empty() {
            total += aps.iter().sum::<f64>() / aps.len() as f64;
        }
    }
    total / thresholds.len() as f64
}

/// Single-scene form of [`map_over_scenes`].
pub fn map_over_thresholds(predictions: &[FinalPrediction], gts: &[GroundTruthObject]) -> f64 {
    map_over_scenes(&[predictions.to_vec()], &[gts.to_vec()])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub iou_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { iou_threshold: 0.5 }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::OutOfRange {
                field: "iou-threshold",
                value: self.iou_threshold,
                expected: "must lie in (0, 1]",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub tp_u: usize,
    pub fp_u: usize,
    pub fn_u: usize,
    pub unknown_gt: usize,
    pub known: Counts,
    pub known_gt: usize,
    pub scenes: usize,
    pub predictions: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub u_ap: f64,
    pub u_pre: f64,
    pub u_rec: f64,
    pub u_f1: f64,
    pub map_known: f64,
    pub counts: ReportCounts,
}

/// Matches every scene, pools the outcomes and computes all metrics.
pub fn evaluate_dataset(
    predictions: &[Vec<FinalPrediction>],
    gts: &[Vec<GroundTruthObject>],
    cfg: &MetricsConfig,
) -> Result<(EvalReport, MatchOutcome)> {
    if predictions.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} prediction scenes vs {} ground-truth scenes",
            predictions.len(),
            gts.len()
        )));
    }
    let mut pooled = MatchOutcome::default();
    for (p, g) in predictions.iter().zip(gts) {
        pooled.merge(&match_to_gt(p, g, cfg.iou_threshold));
    }
    let known_gt = gts.iter().flatten().filter(|g| g.label.is_known()).count();
    let report = EvalReport {
        u_ap: pooled.unknown.average_precision(),
        u_pre: u_precision(&pooled),
        u_rec: u_recall(&pooled),
        u_f1: u_f1(&pooled),
        map_known: map_over_scenes(predictions, gts),
        counts: ReportCounts {
            tp_u: pooled.tp_u(),
            fp_u: pooled.fp_u(),
            fn_u: pooled.fn_u(),
            unknown_gt: pooled.unknown.num_gt,
            known: pooled.known_counts(),
            known_gt,
            scenes: gts.len(),
            predictions: predictions.iter().map(Vec::len).sum(),
        },
    };
    Ok((report, pooled))
}
