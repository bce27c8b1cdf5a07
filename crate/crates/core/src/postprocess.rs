//! IPS-guided post-processing: DIoU non-maximum suppression ranked by
//! instance presence score, then the dual-criteria verdict that sorts
//! survivors into known, unknown and background.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{diou, BBox};
use crate::metrics::Label;
use crate::prob::max_class_prob;

/// One query's output triple: box, per-class logits and IPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub logits: Vec<f64>,
    pub ips: f64,
}

impl Detection {
    pub fn new(bbox: BBox, logits: Vec<f64>, ips: f64) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::OutOfRange {
                field: "logits",
                value: f64::NAN,
                expected: "logits must be finite",
            });
        }
        if !(0.0..=1.0).contains(&ips) {
            return Err(Error::OutOfRange {
                field: "ips",
                value: ips,
                expected: "ips must lie in [0, 1]",
            });
        }
        Ok(Self { bbox, logits, ips })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalPrediction {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub verdict: Label,
    /// Class probability for known verdicts, IPS for unknown ones.
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub nms_diou_threshold: f64,
    pub known_cls_threshold: f64,
    pub ips_threshold: f64,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            nms_diou_threshold: 0.5,
            known_cls_threshold: 0.5,
            ips_threshold: 0.5,
        }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.nms_diou_threshold) {
            return Err(Error::OutOfRange {
                field: "nms-diou",
                value: self.nms_diou_threshold,
                expected: "must lie in [-1, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.known_cls_threshold) {
            return Err(Error::OutOfRange {
                field: "cls-thresh",
                value: self.known_cls_threshold,
                expected: "must lie in [0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.ips_threshold) {
            return Err(Error::OutOfRange {
                field: "ips-thresh",
                value: self.ips_threshold,
                expected: "must lie in [0, 1]",
            });
        }
        Ok(())
    }
}

/// Greedy NMS ranked by IPS. A detection is dropped when its DIoU with an
/// already kept detection exceeds the threshold. Output is in descending
/// IPS order; equal IPS keeps input order.
pub fn ips_guided_nms(detections: &[Detection], cfg: &PostprocessConfig) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].ips.total_cmp(&detections[a].ips));

    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let suppressed = kept
            .iter()
            .any(|&k| diou(&detections[k].bbox, &detections[i].bbox) > cfg.nms_diou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| detections[i].clone()).collect()
}

/// Known when both the best class probability and the IPS clear their
/// thresholds, unknown when only the IPS does, background (`None`)
/// otherwise.
pub fn dual_criteria(detection: &Detection, cfg: &PostprocessConfig) -> Option<FinalPrediction> {
    let (class, p) = max_class_prob(&detection.logits)?;
    if detection.ips < cfg.ips_threshold {
        return None;
    }
    let (verdict, confidence) = if p >= cfg.known_cls_threshold {
        (Label::Known(class), p)
    } else {
        (Label::Unknown, detection.ips)
    };
    Some(FinalPrediction {
        bbox: detection.bbox,
        verdict,
        confidence,
    })
}

pub fn postprocess(detections: &[Detection], cfg: &PostprocessConfig) -> Vec<FinalPrediction> {
    ips_guided_nms(detections, cfg)
        .iter()
        .filter_map(|d| dual_criteria(d, cfg))
        .collect()
}
