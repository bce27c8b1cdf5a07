//! Flat pipeline configuration. The document is TOML with kebab-case keys,
//! one per hyperparameter; missing keys take their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assignment::MatchWeights;
use crate::error::{Error, Result};
use crate::ipp::TrainerConfig;
use crate::metrics::MetricsConfig;
use crate::postprocess::PostprocessConfig;
use crate::selection::DEFAULT_TOPK;
use crate::supervision::SupervisionConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub beta: f64,
    pub c_const: f64,
    pub tau: f64,
    pub lambda_ips: f64,
    pub lambda_cls: f64,
    pub lambda_box: f64,
    pub match_lambda_cls: f64,
    pub match_lambda_box: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub topk: usize,
    pub nms_diou: f64,
    pub cls_thresh: f64,
    pub ips_thresh: f64,
    pub iou_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let sup = SupervisionConfig::default();
        let trainer = TrainerConfig::default();
        let post = PostprocessConfig::default();
        let weights = MatchWeights::default();
        Self {
            alpha: sup.alpha,
            beta: sup.beta,
            c_const: sup.c_const,
            tau: sup.tau,
            lambda_ips: sup.lambda_ips,
            lambda_cls: sup.lambda_cls,
            lambda_box: sup.lambda_box,
            match_lambda_cls: weights.lambda_cls,
            match_lambda_box: weights.lambda_box,
            learning_rate: trainer.learning_rate,
            steps: trainer.steps,
            batch_size: trainer.batch_size,
            seed: trainer.seed,
            init_scale: trainer.init_scale,
            topk: DEFAULT_TOPK,
            nms_diou: post.nms_diou_threshold,
            cls_thresh: post.known_cls_threshold,
            ips_thresh: post.ips_threshold,
            iou_threshold: MetricsConfig::default().iou_threshold,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn supervision(&self) -> SupervisionConfig {
        SupervisionConfig {
            alpha: self.alpha,
            beta: self.beta,
            c_const: self.c_const,
            tau: self.tau,
            lambda_ips: self.lambda_ips,
            lambda_cls: self.lambda_cls,
            lambda_box: self.lambda_box,
        }
    }

    pub fn trainer(&self) -> TrainerConfig {
        TrainerConfig {
            learning_rate: self.learning_rate,
            steps: self.steps,
            batch_size: self.batch_size,
            seed: self.seed,
            init_scale: self.init_scale,
        }
    }

    pub fn match_weights(&self) -> MatchWeights {
        MatchWeights {
            lambda_cls: self.match_lambda_cls,
            lambda_box: self.match_lambda_box,
        }
    }

    pub fn postprocess(&self) -> PostprocessConfig {
        PostprocessConfig {
            nms_diou_threshold: self.nms_diou,
            known_cls_threshold: self.cls_thresh,
            ips_threshold: self.ips_thresh,
        }
    }

    pub fn metrics(&self) -> MetricsConfig {
        MetricsConfig {
            iou_threshold: self.iou_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.supervision().validate()?;
        self.trainer().validate()?;
        self.match_weights().validate()?;
        self.postprocess().validate()?;
        self.metrics().validate()?;
        if self.topk == 0 {
            return Err(Error::OutOfRange {
                field: "topk",
                value: 0.0,
                expected: "must be >= 1",
            });
        }
        Ok(())
    }
}
