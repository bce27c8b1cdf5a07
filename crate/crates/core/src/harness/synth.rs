//! Seeded synthetic scenes standing in for a trained detector.
//!
//! Each scene plants known objects, unknown objects and background clutter,
//! and emits encoder-style proposals for them: a box, per-class logits and
//! an embedding. A frozen linear teacher maps embeddings to boxes and
//! logits. Embedding layout:
//!
//! | dims                | content                                   |
//! |---------------------|-------------------------------------------|
//! | `0..4`              | proposal box `(cx, cy, w, h)`             |
//! | `4`                 | presence: scales with localization quality |
//! | `5`                 | generic "thing" response                  |
//! | `6..6+K`            | known class codes                         |
//! | `6+K..6+K+NOVEL`    | codes of categories never labeled         |
//! | rest                | nuisance dims, pure noise                 |
//!
//! Known objects light up their class code, so the teacher gives them one
//! confident logit. Unknown objects light up a novel code the teacher has
//! no row for, so their logits stay low and diffuse. Background proposals
//! carry no codes and a low or negative presence response, except for a
//! fraction of "clutter" proposals whose presence looks object-like.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::metrics::{GroundTruthObject, Label};
use crate::postprocess::Detection;

pub const BOX_DIMS: usize = 4;
pub const PRESENCE_DIM: usize = 4;
pub const THING_DIM: usize = 5;
pub const CLASS_OFFSET: usize = 6;
pub const NOVEL_CLASSES: usize = 2;

const PRESENCE_SCALE: f64 = 3.0;
const THING_SCALE: f64 = 1.5;
const CODE_SCALE: f64 = 3.0;
const LOGIT_GAIN: f64 = 2.0;
const THING_GAIN: f64 = 1.0;
const LOGIT_BIAS: f64 = 4.5;
/// Relative growth of each successive duplicate's box about the object center.
const DUPLICATE_SPREAD: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub n_known: usize,
    pub n_unknown: usize,
    pub n_background: usize,
    pub embedding_dim: usize,
    pub k_classes: usize,
    /// Proposals emitted per planted object. Duplicate `d` is the object box
    /// enlarged by `1 + 0.25 d` about its center, then jittered.
    pub duplicates: usize,
    /// Std of box jitter, relative to object size; grows with duplicate rank.
    pub box_noise: f64,
    /// Std of additive logit noise.
    pub logit_noise: f64,
    /// Std of additive embedding noise on every non-box dim.
    pub feature_noise: f64,
    /// Fraction of background proposals with an object-like presence response.
    pub clutter_fraction: f64,
    /// Lower end of the per-object typicality draw, which scales the class
    /// code and thing response. Low values give weak, easily confused
    /// known objects.
    pub min_typicality: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_known: 3,
            n_unknown: 3,
            n_background: 30,
            embedding_dim: 16,
            k_classes: 5,
            duplicates: 3,
            box_noise: 0.0,
            logit_noise: 0.0,
            feature_noise: 0.0,
            clutter_fraction: 0.0,
            min_typicality: 0.7,
        }
    }
}

impl SyntheticSceneSpec {
    /// A harder preset: jittered boxes, noisy logits and features, and
    /// object-like clutter.
    pub fn noisy(seed: u64) -> Self {
        Self {
            seed,
            box_noise: 0.08,
            logit_noise: 0.7,
            feature_noise: 0.4,
            clutter_fraction: 0.15,
            min_typicality: 0.25,
            ..Self::default()
        }
    }

    pub fn min_embedding_dim(k_classes: usize) -> usize {
        CLASS_OFFSET + k_classes + NOVEL_CLASSES
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_classes == 0 {
            return Err(Error::OutOfRange {
                field: "classes",
                value: 0.0,
                expected: "must be >= 1",
            });
        }
        let min_dim = Self::min_embedding_dim(self.k_classes);
        if self.embedding_dim < min_dim {
            return Err(Error::OutOfRange {
                field: "dim",
                value: self.embedding_dim as f64,
                expected: "must be >= 8 + classes",
            });
        }
        if self.duplicates == 0 {
            return Err(Error::OutOfRange {
                field: "duplicates",
                value: 0.0,
                expected: "must be >= 1",
            });
        }
        for (field, v) in [
            ("box-noise", self.box_noise),
            ("logit-noise", self.logit_noise),
            ("feature-noise", self.feature_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange {
                    field,
                    value: v,
                    expected: "must be >= 0",
                });
            }
        }
        if !(0.0..=1.0).contains(&self.min_typicality) {
            return Err(Error::OutOfRange {
                field: "min-typicality",
                value: self.min_typicality,
                expected: "must lie in [0, 1]",
            });
        }
        if !(0.0..=1.0).contains(&self.clutter_fraction) {
            return Err(Error::OutOfRange {
                field: "clutter-fraction",
                value: self.clutter_fraction,
                expected: "must lie in [0, 1]",
            });
        }
        Ok(())
    }
}

/// Frozen linear heads: rows of `logit_map` and `box_map` are dotted with
/// an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub box_map: [Vec<f64>; 4],
    pub logit_map: Vec<Vec<f64>>,
    pub logit_bias: Vec<f64>,
}

impl Teacher {
    pub fn new(embedding_dim: usize, k_classes: usize) -> Self {
        let box_map = std::array::from_fn(|r| {
            let mut row = vec![0.0; embedding_dim];
            row[r] = 1.0;
            row
        });
        let logit_map = (0..k_classes)
            .map(|k| {
                let mut row = vec![0.0; embedding_dim];
                row[CLASS_OFFSET + k] = LOGIT_GAIN;
                row[THING_DIM] = THING_GAIN;
                row
            })
            .collect();
        Self {
            box_map,
            logit_map,
            logit_bias: vec![-LOGIT_BIAS; k_classes],
        }
    }

    pub fn logits(&self, embedding: &[f64]) -> Vec<f64> {
        self.logit_map
            .iter()
            .zip(&self.logit_bias)
            .map(|(row, b)| dot(row, embedding) + b)
            .collect()
    }

    pub fn bbox(&self, embedding: &[f64]) -> [f64; 4] {
        std::array::from_fn(|r| dot(&self.box_map[r], embedding))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encoder proposal. `ips` is filled in once a predictor has scored it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub logits: Vec<f64>,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ips: Option<f64>,
}

impl Proposal {
    /// Detection triple using `ips`, or 0.5 when unscored.
    pub fn to_detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            logits: self.logits.clone(),
            ips: self.ips.unwrap_or(0.5),
        }
    }
}

/// Where a proposal came from; kept out of the on-disk format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Object(usize),
    Background,
    Clutter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image_id: String,
    pub gts: Vec<GroundTruthObject>,
    pub proposals: Vec<Proposal>,
    pub origins: Vec<Origin>,
}

impl Scene {
    pub fn known_gts(&self) -> Vec<GroundTruthObject> {
        self.gts.iter().filter(|g| g.label.is_known()).cloned().collect()
    }
}

fn random_object_box(rng: &mut impl Rng) -> BBox {
    let w = rng.random_range(0.08..0.25);
    let h = rng.random_range(0.08..0.25);
    let cx = rng.random_range(w / 2.0..1.0 - w / 2.0);
    let cy = rng.random_range(h / 2.0..1.0 - h / 2.0);
    BBox { cx, cy, w, h }
}

fn jitter(b: &BBox, std: f64, rng: &mut impl Rng) -> BBox {
    if std == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, std).expect("finite std");
    BBox {
        cx: b.cx + n.sample(rng) * b.w,
        cy: b.cy + n.sample(rng) * b.h,
        w: (b.w * (1.0 + n.sample(rng))).max(0.01),
        h: (b.h * (1.0 + n.sample(rng))).max(0.01),
    }
}

/// Generates scene `index` of the dataset described by `spec`. Scenes with
/// the same spec and index are bit-identical.
pub fn generate_scene(spec: &SyntheticSceneSpec, index: u64) -> Result<Scene> {
    spec.validate()?;
    let teacher = Teacher::new(spec.embedding_dim, spec.k_classes);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let feature_noise = Normal::new(0.0, spec.feature_noise).expect("validated std");
    let logit_noise = Normal::new(0.0, spec.logit_noise).expect("validated std");

    // Object layout with limited mutual overlap.
    let n_objects = spec.n_known + spec.n_unknown;
    let mut objects: Vec<BBox> = Vec::with_capacity(n_objects);
    while objects.len() < n_objects {
        let mut candidate = random_object_box(&mut rng);
        for _ in 0..100 {
            if objects.iter().all(|o| iou(o, &candidate) < 0.1) {
                break;
            }
            candidate = random_object_box(&mut rng);
        }
        objects.push(candidate);
    }

    let mut gts = Vec::with_capacity(n_objects);
    let mut proposals = Vec::new();
    let mut origins = Vec::new();

    let mut emit =
        |bbox: BBox, presence: f64, thing: f64, code: Option<(usize, f64)>, origin: Origin, rng: &mut ChaCha8Rng| {
            let mut e = vec![0.0; spec.embedding_dim];
            e[..BOX_DIMS].copy_from_slice(&bbox.to_array());
            e[PRESENCE_DIM] = presence;
            e[THING_DIM] = thing;
            if let Some((dim, v)) = code {
                e[dim] = v;
            }
            if spec.feature_noise > 0.0 {
                for v in e.iter_mut().skip(BOX_DIMS) {
                    *v += feature_noise.sample(rng);
                }
            }
            let mut logits = teacher.logits(&e);
            if spec.logit_noise > 0.0 {
                for l in logits.iter_mut() {
                    *l += logit_noise.sample(rng);
                }
            }
            let b = teacher.bbox(&e);
            proposals.push(Proposal {
                bbox: BBox {
                    cx: b[0],
                    cy: b[1],
                    w: b[2],
                    h: b[3],
                },
                logits,
                embedding: e,
                ips: None,
            });
            origins.push(origin);
        };

    for (o, obj) in objects.iter().enumerate() {
        let (label, code_dim) = if o < spec.n_known {
            let k = rng.random_range(0..spec.k_classes);
            (Label::Known(k), CLASS_OFFSET + k)
        } else {
            let u = rng.random_range(0..NOVEL_CLASSES);
            (Label::Unknown, CLASS_OFFSET + spec.k_classes + u)
        };
        gts.push(GroundTruthObject { bbox: *obj, label });
        let typicality = if spec.min_typicality < 1.0 {
            rng.random_range(spec.min_typicality..1.0)
        } else {
            1.0
        };
        for d in 0..spec.duplicates {
            let scale = 1.0 + DUPLICATE_SPREAD * d as f64;
            let loose = BBox {
                w: obj.w * scale,
                h: obj.h * scale,
                ..*obj
            };
            let bbox = jitter(&loose, spec.box_noise * (1 + d) as f64, &mut rng);
            let quality = iou(&bbox, obj);
            emit(
                bbox,
                PRESENCE_SCALE * quality,
                THING_SCALE * typicality,
                Some((code_dim, CODE_SCALE * typicality)),
                Origin::Object(o),
                &mut rng,
            );
        }
    }

    for _ in 0..spec.n_background {
        let bbox = random_object_box(&mut rng);
        let clutter = rng.random_bool(spec.clutter_fraction);
        let (presence, origin) = if clutter {
            (PRESENCE_SCALE * rng.random_range(0.5..1.0), Origin::Clutter)
        } else {
            (PRESENCE_SCALE * rng.random_range(-1.0..0.0), Origin::Background)
        };
        emit(bbox, presence, 0.0, None, origin, &mut rng);
    }

    Ok(Scene {
        image_id: format!("scene-{index:05}"),
        gts,
        proposals,
        origins,
    })
}

/// Scenes `first..first + count` of `spec`.
pub fn generate_dataset(spec: &SyntheticSceneSpec, first: u64, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64).map(|i| generate_scene(spec, first + i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::giou;
    use crate::supervision::categorical_objectness;

    #[test]
    fn deterministic_per_index() {
        let spec = SyntheticSceneSpec::noisy(11);
        let a = generate_scene(&spec, 3).unwrap();
        let b = generate_scene(&spec, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&spec, 4).unwrap();
        assert_ne!(a.proposals, c.proposals);
    }

    #[test]
    fn noiseless_boxes_hit_ground_truth() {
        let spec = SyntheticSceneSpec::default();
        let s = generate_scene(&spec, 0).unwrap();
        for (i, (p, origin)) in s.proposals.iter().zip(&s.origins).enumerate() {
            if let Origin::Object(o) = origin {
                let scale = 1.0 + DUPLICATE_SPREAD * (i % spec.duplicates) as f64;
                let g = giou(&p.bbox, &s.gts[*o].bbox);
                assert!((g - 1.0 / (scale * scale)).abs() < 1e-12, "duplicate {i}: {g}");
            }
        }
        assert_eq!(s.gts.len(), spec.n_known + spec.n_unknown);
        assert_eq!(
            s.proposals.len(),
            (spec.n_known + spec.n_unknown) * spec.duplicates + spec.n_background
        );
    }

    #[test]
    fn unknowns_outscore_background_on_foreground_probability() {
        let spec = SyntheticSceneSpec::noisy(5);
        let (mut unk, mut n_unk, mut bg, mut n_bg) = (0.0, 0, 0.0, 0);
        for s in generate_dataset(&spec, 0, 50).unwrap() {
            for (p, origin) in s.proposals.iter().zip(&s.origins) {
                let pf = categorical_objectness(&p.logits);
                match origin {
                    Origin::Object(o) if s.gts[*o].label == Label::Unknown => {
                        unk += pf;
                        n_unk += 1;
                    }
                    Origin::Background | Origin::Clutter => {
                        bg += pf;
                        n_bg += 1;
                    }
                    _ => {}
                }
            }
        }
        assert!(unk / n_unk as f64 > bg / n_bg as f64);
    }

    #[test]
    fn known_objects_get_a_confident_logit() {
        let s = generate_scene(&SyntheticSceneSpec::default(), 2).unwrap();
        for (p, origin) in s.proposals.iter().zip(&s.origins) {
            let Origin::Object(o) = origin else { continue };
            let max = p.logits.iter().cloned().fold(f64::MIN, f64::max);
            match s.gts[*o].label {
                Label::Known(k) => {
                    assert!(max > 0.0);
                    assert_eq!(p.logits[k], max);
                }
                Label::Unknown => assert!(max < 0.0),
            }
        }
    }

    #[test]
    fn spec_validation() {
        let bad = SyntheticSceneSpec {
            embedding_dim: 8,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SyntheticSceneSpec {
            clutter_fraction: 2.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
