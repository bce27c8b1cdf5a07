use proptest::prelude::*;
use undetr_core::geometry::BBox;
use undetr_core::metrics::{GroundTruthObject, Label};
use undetr_core::postprocess::Detection;
use undetr_core::supervision::{
    categorical_objectness, detection_losses, ips_loss, sigmoid_focal_loss, supervision_target, total_loss, IpsSample,
    SupervisionConfig,
};

fn sample() -> impl Strategy<Value = IpsSample> {
    (-1.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(giou, target, ips)| IpsSample { giou, target, ips })
}

proptest! {
    #[test]
    fn breakdown_identities(
        samples in prop::collection::vec(sample(), 0..40),
        l_cls in 0.0..5.0f64,
        l_box in 0.0..5.0f64,
    ) {
        let cfg = SupervisionConfig::default();
        let ips = ips_loss(&samples, &cfg);
        prop_assert_eq!(ips.total, ips.high + ips.low);
        let b = total_loss(ips, l_cls, l_box, &cfg);
        prop_assert_eq!(b.l_ips, b.l_ips_h + b.l_ips_l);
        prop_assert_eq!(b.total, 3.0 * b.l_ips + 2.0 * b.l_cls + 5.0 * b.l_box);
        prop_assert!(b.l_ips_h >= 0.0 && b.l_ips_l >= 0.0);
    }

    #[test]
    fn branch_partition_by_tau(samples in prop::collection::vec(sample(), 1..40)) {
        let cfg = SupervisionConfig::default();
        let high: Vec<_> = samples.iter().filter(|s| s.giou > cfg.tau).collect();
        let low: Vec<_> = samples.iter().filter(|s| s.giou <= cfg.tau).collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let h = mean(&high.iter().map(|s| (s.target - s.ips).abs()).collect::<Vec<_>>());
        let l = mean(&low.iter().map(|s| (cfg.c_const - s.ips).abs()).collect::<Vec<_>>());
        let got = ips_loss(&samples, &cfg);
        prop_assert!((got.high - h).abs() < 1e-12);
        prop_assert!((got.low - l).abs() < 1e-12);
    }

    #[test]
    fn zero_loss_at_targets(giou in prop::collection::vec(-1.0..=1.0f64, 1..20), p_f in 0.0..=1.0f64) {
        let cfg = SupervisionConfig::default();
        let samples: Vec<IpsSample> = giou
            .iter()
            .map(|&g| {
                let target = supervision_target(g, p_f, &cfg);
                let ips = if g > cfg.tau { target } else { cfg.c_const };
                IpsSample { giou: g, target, ips }
            })
            .collect();
        prop_assert_eq!(ips_loss(&samples, &cfg).total, 0.0);
    }

    #[test]
    fn categorical_objectness_bounded(logits in prop::collection::vec(-20.0..20.0f64, 0..10)) {
        let p = categorical_objectness(&logits);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn focal_loss_nonnegative_and_monotone(x in -15.0..15.0f64, dx in 0.01..3.0f64) {
        prop_assert!(sigmoid_focal_loss(x, true) >= 0.0);
        prop_assert!(sigmoid_focal_loss(x, false) >= 0.0);
        prop_assert!(sigmoid_focal_loss(x + dx, true) <= sigmoid_focal_loss(x, true));
        prop_assert!(sigmoid_focal_loss(x + dx, false) >= sigmoid_focal_loss(x, false));
    }
}

#[test]
fn default_weights_fixture() {
    let cfg = SupervisionConfig::default();
    let target = supervision_target(0.8, 0.9, &cfg);
    assert!((target - 0.84).abs() < 1e-12);
    let l = ips_loss(
        &[IpsSample {
            giou: 0.8,
            target,
            ips: 0.5,
        }],
        &cfg,
    );
    assert!((l.total - 0.34).abs() < 1e-12);
}

#[test]
fn perfect_detection_has_zero_box_loss() {
    let b = BBox::new(0.4, 0.5, 0.2, 0.3).unwrap();
    let det = Detection::new(b, vec![-3.0, 4.0], 0.9).unwrap();
    let gt = GroundTruthObject {
        bbox: b,
        label: Label::Known(1),
    };
    let l = detection_losses(&[(&det, &gt)]).unwrap();
    assert_eq!(l.l_box, 0.0);
    assert!(l.l_cls > 0.0 && l.l_cls < 0.01);
    let unknown = GroundTruthObject {
        bbox: b,
        label: Label::Unknown,
    };
    assert!(detection_losses(&[(&det, &unknown)]).is_err());
}

#[test]
fn config_validation_names_fields() {
    let bad = SupervisionConfig {
        alpha: 0.7,
        ..SupervisionConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = SupervisionConfig {
        tau: 1.5,
        ..SupervisionConfig::default()
    };
    assert!(bad.validate().unwrap_err().to_string().contains("tau"));
}
