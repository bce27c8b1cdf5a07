//! Supervision for the instance presence score.
//!
//! The IPS target of a positive query mixes a positional signal (GIoU of the
//! predicted box against its matched ground truth) and a categorical one
//! (total foreground probability over the known classes). Queries whose GIoU
//! clears `tau` regress toward that mixture; the rest regress toward the
//! constant `c_const`. Each branch is averaged over its own members.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{giou, BBox};
use crate::metrics::{GroundTruthObject, Label};
use crate::postprocess::Detection;
use crate::prob::{log_sigmoid, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisionConfig {
    pub alpha: f64,
    pub beta: f64,
    pub c_const: f64,
    pub tau: f64,
    pub lambda_ips: f64,
    pub lambda_cls: f64,
    pub lambda_box: f64,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            c_const: 0.5,
            tau: 0.6,
            lambda_ips: 3.0,
            lambda_cls: 2.0,
            lambda_box: 5.0,
        }
    }
}

impl SupervisionConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |field, value: f64, ok: bool, expected| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(Error::OutOfRange { field, value, expected })
            }
        };
        range("alpha", self.alpha, self.alpha >= 0.0, "must be >= 0")?;
        range("beta", self.beta, self.beta >= 0.0, "must be >= 0")?;
        range(
            "beta",
            self.beta,
            (self.alpha + self.beta - 1.0).abs() <= 1e-9,
            "alpha + beta must equal 1",
        )?;
        range(
            "c-const",
            self.c_const,
            (0.0..=1.0).contains(&self.c_const),
            "must lie in [0, 1]",
        )?;
        range(
            "tau",
            self.tau,
            self.tau > -1.0 && self.tau <= 1.0,
            "must lie in (-1, 1]",
        )?;
        range("lambda-ips", self.lambda_ips, self.lambda_ips >= 0.0, "must be >= 0")?;
        range("lambda-cls", self.lambda_cls, self.lambda_cls >= 0.0, "must be >= 0")?;
        range("lambda-box", self.lambda_box, self.lambda_box >= 0.0, "must be >= 0")?;
        Ok(())
    }

    /// Target a sample regresses toward: the mixed target above `tau`,
    /// the constant otherwise.
    pub fn branch_target(&self, giou_val: f64, target: f64) -> f64 {
        if giou_val > self.tau {
            target
        } else {
            self.c_const
        }
    }
}

/// GIoU between the matched ground truth and the predicted box.
pub fn positional_objectness(gt_box: &BBox, pred_box: &BBox) -> f64 {
    giou(gt_box, pred_box)
}

/// Foreground probability: summed per-class sigmoid, clamped to 1.
pub fn categorical_objectness(logits: &[f64]) -> f64 {
    logits.iter().map(|&l| sigmoid(l)).sum::<f64>().min(1.0)
}

pub fn supervision_target(giou_val: f64, p_f: f64, cfg: &SupervisionConfig) -> f64 {
    cfg.alpha * giou_val + cfg.beta * p_f
}

/// One positive query's IPS supervision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpsSample {
    pub giou: f64,
    pub target: f64,
    pub ips: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IpsLoss {
    pub high: f64,
    pub low: f64,
    pub total: f64,
}

pub fn ips_loss(samples: &[IpsSample], cfg: &SupervisionConfig) -> IpsLoss {
    let (mut high, mut n_high, mut low, mut n_low) = (0.0, 0usize, 0.0, 0usize);
    for s in samples {
        if s.giou > cfg.tau {
            high += (s.target - s.ips).abs();
            n_high += 1;
        } else {
            low += (cfg.c_const - s.ips).abs();
            n_low += 1;
        }
    }
    let high = if n_high > 0 { high / n_high as f64 } else { 0.0 };
    let low = if n_low > 0 { low / n_low as f64 } else { 0.0 };
    IpsLoss {
        high,
        low,
        total: high + low,
    }
}

const FOCAL_GAMMA: f64 = 2.0;
const FOCAL_ALPHA: f64 = 0.25;
const BOX_L1_WEIGHT: f64 = 5.0;
const BOX_GIOU_WEIGHT: f64 = 2.0;

/// Sigmoid focal loss of one logit against a binary target.
pub fn sigmoid_focal_loss(logit: f64, positive: bool) -> f64 {
    let p = sigmoid(logit);
    // -ln p and -ln(1-p) via log-sigmoid to stay finite for saturated logits
    let (ce, p_t, alpha_t) = if positive {
        (-log_sigmoid(logit), p, FOCAL_ALPHA)
    } else {
        (-log_sigmoid(-logit), 1.0 - p, 1.0 - FOCAL_ALPHA)
    };
    alpha_t * ce * (1.0 - p_t).powf(FOCAL_GAMMA)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionLosses {
    pub l_cls: f64,
    pub l_box: f64,
    /// Mean L1 distance of `(cx, cy, w, h)`, before weighting.
    pub l1: f64,
    /// Mean `1 − GIoU`, before weighting.
    pub giou: f64,
}

/// Classification and box losses over one-to-one matched pairs: mean focal
/// loss over classes and pairs, and mean `5·L1 + 2·(1 − GIoU)` per pair.
pub fn detection_losses(pairs: &[(&Detection, &GroundTruthObject)]) -> Result<DetectionLosses> {
    if pairs.is_empty() {
        return Ok(DetectionLosses::default());
    }
    let mut cls_sum = 0.0;
    let mut cls_terms = 0usize;
    let mut l1_sum = 0.0;
    let mut giou_sum = 0.0;
    for (i, (det, gt)) in pairs.iter().enumerate() {
        let Label::Known(class) = gt.label else {
            return Err(Error::UnknownLabel { index: i });
        };
        if class >= det.logits.len() {
            return Err(Error::ClassOutOfRange {
                class,
                num_classes: det.logits.len(),
            });
        }
        for (k, &l) in det.logits.iter().enumerate() {
            cls_sum += sigmoid_focal_loss(l, k == class);
        }
        cls_terms += det.logits.len();
        let (a, b) = (det.bbox.to_array(), gt.bbox.to_array());
        l1_sum += a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        giou_sum += 1.0 - giou(&det.bbox, &gt.bbox);
    }
    let n = pairs.len() as f64;
    let l1 = l1_sum / n;
    let giou_term = giou_sum / n;
    Ok(DetectionLosses {
        l_cls: cls_sum / cls_terms as f64,
        l_box: BOX_L1_WEIGHT * l1 + BOX_GIOU_WEIGHT * giou_term,
        l1,
        giou: giou_term,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ips_h: f64,
    pub l_ips_l: f64,
    pub l_ips: f64,
    pub l_cls: f64,
    pub l_box: f64,
    pub total: f64,
}

pub fn total_loss(ips: IpsLoss, l_cls: f64, l_box: f64, cfg: &SupervisionConfig) -> LossBreakdown {
    LossBreakdown {
        l_ips_h: ips.high,
        l_ips_l: ips.low,
        l_ips: ips.total,
        l_cls,
        l_box,
        total: cfg.lambda_ips * ips.total + cfg.lambda_cls * l_cls + cfg.lambda_box * l_box,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ips_only(total: f64) -> IpsLoss {
        IpsLoss {
            high: total,
            low: 0.0,
            total,
        }
    }

    #[test]
    fn positional_fixtures() {
        let a = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BBox::from_xyxy(1.0, 1.0, 3.0, 3.0).unwrap();
        assert_eq!(positional_objectness(&a, &a), 1.0);
        assert!((positional_objectness(&a, &b) + 0.079365).abs() < 1e-6);
        let u = BBox::from_xyxy(0.0, 0.0, 1.0, 1.0).unwrap();
        let v = BBox::from_xyxy(2.0, 2.0, 3.0, 3.0).unwrap();
        assert!((positional_objectness(&u, &v) + 0.777778).abs() < 1e-6);
    }

    #[test]
    fn categorical_fixtures() {
        assert_eq!(categorical_objectness(&[f64::NEG_INFINITY; 4]), 0.0);
        assert_eq!(categorical_objectness(&[0.0]), 0.5);
        let logit = |p: f64| (p / (1.0 - p)).ln();
        assert_eq!(categorical_objectness(&[logit(0.9), logit(0.4), logit(0.3)]), 1.0);
        let partial = categorical_objectness(&[logit(0.2), logit(0.3)]);
        assert!((partial - 0.5).abs() < 1e-12);
    }

    #[test]
    fn target_fixtures() {
        let cfg = SupervisionConfig::default();
        assert!((supervision_target(0.8, 0.9, &cfg) - 0.84).abs() < 1e-12);
        assert_eq!(supervision_target(1.0, 1.0, &cfg), 1.0);
        assert!((supervision_target(1.0, 0.0, &cfg) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn ips_loss_branches() {
        let cfg = SupervisionConfig::default();
        let high = ips_loss(
            &[IpsSample {
                giou: 0.8,
                target: 0.84,
                ips: 0.5,
            }],
            &cfg,
        );
        assert!((high.high - 0.34).abs() < 1e-12);
        assert_eq!(high.low, 0.0);
        assert!((high.total - 0.34).abs() < 1e-12);

        let low = ips_loss(
            &[IpsSample {
                giou: 0.5,
                target: 0.9,
                ips: 0.3,
            }],
            &cfg,
        );
        assert_eq!(low.high, 0.0);
        assert!((low.low - 0.2).abs() < 1e-12);

        let exact = ips_loss(
            &[
                IpsSample {
                    giou: 0.9,
                    target: 0.7,
                    ips: 0.7,
                },
                IpsSample {
                    giou: 0.6,
                    target: 0.9,
                    ips: 0.5,
                },
            ],
            &cfg,
        );
        assert_eq!(exact.total, 0.0);
        assert_eq!(ips_loss(&[], &cfg), IpsLoss::default());
    }

    #[test]
    fn branch_means_are_per_branch() {
        let cfg = SupervisionConfig::default();
        let s = [
            IpsSample {
                giou: 0.9,
                target: 0.9,
                ips: 0.5,
            },
            IpsSample {
                giou: 0.9,
                target: 0.9,
                ips: 0.7,
            },
            IpsSample {
                giou: 0.1,
                target: 0.0,
                ips: 0.1,
            },
        ];
        let l = ips_loss(&s, &cfg);
        assert!((l.high - 0.3).abs() < 1e-12);
        assert!((l.low - 0.4).abs() < 1e-12);
    }

    #[test]
    fn total_loss_weights() {
        let cfg = SupervisionConfig::default();
        assert_eq!(total_loss(ips_only(1.0), 1.0, 1.0, &cfg).total, 10.0);
        assert_eq!(total_loss(ips_only(0.0), 0.0, 0.0, &cfg).total, 0.0);
        assert!((total_loss(ips_only(0.34), 0.0, 0.0, &cfg).total - 1.02).abs() < 1e-12);
    }

    fn pair(pred: BBox, gt: BBox, logits: Vec<f64>, class: usize) -> (Detection, GroundTruthObject) {
        (
            Detection::new(pred, logits, 0.5).unwrap(),
            GroundTruthObject {
                bbox: gt,
                label: Label::Known(class),
            },
        )
    }

    #[test]
    fn perfect_prediction_has_no_detection_loss() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.3).unwrap();
        let (d, g) = pair(b, b, vec![-50.0, 50.0, -50.0], 1);
        let l = detection_losses(&[(&d, &g)]).unwrap();
        assert_eq!(l.l_box, 0.0);
        assert!(l.l_cls < 1e-15);
    }

    #[test]
    fn cx_offset_l1() {
        let g = BBox::new(0.5, 0.5, 0.2, 0.3).unwrap();
        let p = BBox::new(0.6, 0.5, 0.2, 0.3).unwrap();
        let (d, gt) = pair(p, g, vec![3.0], 0);
        let l = detection_losses(&[(&d, &gt)]).unwrap();
        assert!((l.l1 - 0.1).abs() < 1e-12);
        let twice = detection_losses(&[(&d, &gt), (&d, &gt)]).unwrap();
        assert!((twice.l_cls - l.l_cls).abs() < 1e-15);
        assert!((twice.l_box - l.l_box).abs() < 1e-15);
    }

    #[test]
    fn focal_loss_reference_values() {
        // alpha * -ln(p) * (1-p)^2 at p = 0.5
        let expected = 0.25 * std::f64::consts::LN_2 * 0.25;
        assert!((sigmoid_focal_loss(0.0, true) - expected).abs() < 1e-15);
        let neg = 0.75 * std::f64::consts::LN_2 * 0.25;
        assert!((sigmoid_focal_loss(0.0, false) - neg).abs() < 1e-15);
        assert!(sigmoid_focal_loss(-1000.0, true).is_finite());
    }

    #[test]
    fn unknown_pairs_rejected() {
        let b = BBox::new(0.5, 0.5, 0.2, 0.3).unwrap();
        let d = Detection::new(b, vec![0.0], 0.5).unwrap();
        let g = GroundTruthObject {
            bbox: b,
            label: Label::Unknown,
        };
        assert!(matches!(
            detection_losses(&[(&d, &g)]),
            Err(Error::UnknownLabel { index: 0 })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(SupervisionConfig::default().validate().is_ok());
        let bad = SupervisionConfig {
            alpha: 0.7,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SupervisionConfig {
            tau: -1.0,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::OutOfRange { field, .. }) => assert_eq!(field, "tau"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
