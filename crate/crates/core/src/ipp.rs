//! Instance presence score predictor: a single logistic unit over a query
//! embedding, trained by mini-batch gradient descent on the branch-wise L1
//! IPS loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::sigmoid;
use crate::supervision::{ips_loss, IpsSample, SupervisionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IppRecord", into = "IppRecord")]
pub struct IppModel {
    weights: Vec<f64>,
    bias: f64,
}

/// On-disk form: `{"dim": D, "weights": [...], "bias": b}`.
#[derive(Serialize, Deserialize)]
struct IppRecord {
    dim: usize,
    weights: Vec<f64>,
    bias: f64,
}

impl TryFrom<IppRecord> for IppModel {
    type Error = Error;

    fn try_from(r: IppRecord) -> Result<Self> {
        if r.weights.len() != r.dim {
            return Err(Error::Dimension(format!(
                "model declares dim {} but stores {} weights",
                r.dim,
                r.weights.len()
            )));
        }
        IppModel::from_parameters(r.weights, r.bias)
    }
}

impl From<IppModel> for IppRecord {
    fn from(m: IppModel) -> Self {
        IppRecord {
            dim: m.weights.len(),
            weights: m.weights,
            bias: m.bias,
        }
    }
}

impl IppModel {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn from_parameters(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.iter().chain(std::iter::once(&bias)).any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange {
                field: "weights",
                value: f64::NAN,
                expected: "model parameters must be finite",
            });
        }
        Ok(Self { weights, bias })
    }

    /// Uniform in `[-scale, scale]`, bias included.
    pub fn random(dim: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw = || {
            if scale > 0.0 {
                rng.random_range(-scale..=scale)
            } else {
                0.0
            }
        };
        let weights = (0..dim).map(|_| draw()).collect();
        let bias = draw();
        Self { weights, bias }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    fn check_dim(&self, embedding: &[f64]) -> Result<()> {
        if embedding.len() != self.weights.len() {
            return Err(Error::Dimension(format!(
                "embedding has length {}, model expects {}",
                embedding.len(),
                self.weights.len()
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, embedding: &[f64]) -> f64 {
        self.weights.iter().zip(embedding).map(|(w, e)| w * e).sum::<f64>() + self.bias
    }

    pub fn forward(&self, embedding: &[f64]) -> Result<f64> {
        self.check_dim(embedding)?;
        Ok(sigmoid(self.pre_activation(embedding)))
    }
}

/// Training example: embedding plus the supervision it receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IppSample {
    pub embedding: Vec<f64>,
    pub giou: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IppGradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample loss `|t − I(e)|` with `t` picked by the GIoU branch.
pub fn sample_loss(model: &IppModel, sample: &IppSample, sup: &SupervisionConfig) -> Result<f64> {
    let t = sup.branch_target(sample.giou, sample.target);
    Ok((t - model.forward(&sample.embedding)?).abs())
}

/// Gradient of [`sample_loss`] with respect to weights and bias. Zero at
/// `I = t`.
pub fn gradient(model: &IppModel, sample: &IppSample, sup: &SupervisionConfig) -> Result<IppGradient> {
    let out = model.forward(&sample.embedding)?;
    let t = sup.branch_target(sample.giou, sample.target);
    let g = sign(out - t) * out * (1.0 - out);
    Ok(IppGradient {
        weights: sample.embedding.iter().map(|e| g * e).collect(),
        bias: g,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            steps: 5000,
            batch_size: 32,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::OutOfRange {
                field: "learning-rate",
                value: self.learning_rate,
                expected: "must be > 0",
            });
        }
        if self.steps == 0 {
            return Err(Error::OutOfRange {
                field: "steps",
                value: 0.0,
                expected: "must be >= 1",
            });
        }
        if self.batch_size == 0 {
            return Err(Error::OutOfRange {
                field: "batch-size",
                value: 0.0,
                expected: "must be >= 1",
            });
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::OutOfRange {
                field: "init-scale",
                value: self.init_scale,
                expected: "must be >= 0",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: IppModel,
    /// Mean batch loss of each (possibly partial) pass over the data,
    /// measured before each batch's update.
    pub epoch_losses: Vec<f64>,
}

/// Mean IPS loss of `model` over `data`.
pub fn dataset_loss(model: &IppModel, data: &[IppSample], sup: &SupervisionConfig) -> Result<f64> {
    let samples = data
        .iter()
        .map(|s| {
            Ok(IpsSample {
                giou: s.giou,
                target: s.target,
                ips: model.forward(&s.embedding)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ips_loss(&samples, sup).total)
}

/// Mini-batch gradient descent from a seeded uniform init. The batch loss is
/// the sum of the two branch means, so a sample's gradient is scaled by the
/// size of its branch within the batch.
///
/// A zero learning rate is accepted here and leaves the init untouched;
/// [`TrainerConfig::validate`] is what rejects it for user configs.
pub fn train(data: &[IppSample], cfg: &TrainerConfig, sup: &SupervisionConfig) -> Result<TrainOutcome> {
    let dim = data.first().ok_or(Error::EmptyDataset)?.embedding.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = IppModel::random(dim, cfg.init_scale, &mut rng);
    train_from(init, data, cfg, sup, &mut rng)
}

pub fn train_from(
    mut model: IppModel,
    data: &[IppSample],
    cfg: &TrainerConfig,
    sup: &SupervisionConfig,
    rng: &mut impl Rng,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(Error::OutOfRange {
            field: "learning-rate",
            value: cfg.learning_rate,
            expected: "must be finite and >= 0",
        });
    }
    for s in data {
        model.check_dim(&s.embedding)?;
    }
    let batch_size = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::new();
    let mut step = 0usize;
    let mut grad_w = vec![0.0; model.dim()];

    'epochs: loop {
        order.shuffle(rng);
        let mut epoch_sum = 0.0;
        let mut epoch_batches = 0usize;
        for batch in order.chunks(batch_size) {
            if step >= cfg.steps {
                break;
            }
            let (mut n_high, mut n_low) = (0usize, 0usize);
            for &i in batch {
                if data[i].giou > sup.tau {
                    n_high += 1;
                } else {
                    n_low += 1;
                }
            }
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            let (mut loss_high, mut loss_low) = (0.0, 0.0);
            for &i in batch {
                let s = &data[i];
                let out = sigmoid(model.pre_activation(&s.embedding));
                let high = s.giou > sup.tau;
                let t = sup.branch_target(s.giou, s.target);
                let scale = if high { n_high } else { n_low } as f64;
                if high {
                    loss_high += (t - out).abs() / scale;
                } else {
                    loss_low += (t - out).abs() / scale;
                }
                let g = sign(out - t) * out * (1.0 - out) / scale;
                for (gw, e) in grad_w.iter_mut().zip(&s.embedding) {
                    *gw += g * e;
                }
                grad_b += g;
            }
            let loss = loss_high + loss_low;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, value: loss });
            }
            epoch_sum += loss;
            epoch_batches += 1;
            for (w, g) in model.weights.iter_mut().zip(&grad_w) {
                *w -= cfg.learning_rate * g;
            }
            model.bias -= cfg.learning_rate * grad_b;
            step += 1;
        }
        if epoch_batches > 0 {
            epoch_losses.push(epoch_sum / epoch_batches as f64);
        }
        if step >= cfg.steps {
            break 'epochs;
        }
    }
    Ok(TrainOutcome { model, epoch_losses })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub passed: bool,
    pub max_rel_error: f64,
}

pub const FD_STEP: f64 = 1e-6;
const FD_ABS_FLOOR: f64 = 1e-8;

/// Compares [`gradient`] with central differences of [`sample_loss`].
pub fn finite_diff_check(
    model: &IppModel,
    sample: &IppSample,
    sup: &SupervisionConfig,
    tolerance: f64,
) -> Result<GradCheck> {
    finite_diff_check_with(model, sample, sup, tolerance, gradient)
}

/// [`finite_diff_check`] against an arbitrary analytic gradient.
pub fn finite_diff_check_with<F>(
    model: &IppModel,
    sample: &IppSample,
    sup: &SupervisionConfig,
    tolerance: f64,
    analytic: F,
) -> Result<GradCheck>
where
    F: Fn(&IppModel, &IppSample, &SupervisionConfig) -> Result<IppGradient>,
{
    let g = analytic(model, sample, sup)?;
    let mut probe = model.clone();
    let mut max_rel = 0.0f64;
    let mut compare = |a: f64, f: f64| {
        let diff = (a - f).abs();
        if diff > FD_ABS_FLOOR {
            max_rel = max_rel.max(diff / a.abs().max(f.abs()));
        }
    };
    for k in 0..=model.dim() {
        let numeric = {
            let base = param(&probe, k);
            set_param(&mut probe, k, base + FD_STEP);
            let up = sample_loss(&probe, sample, sup)?;
            set_param(&mut probe, k, base - FD_STEP);
            let down = sample_loss(&probe, sample, sup)?;
            set_param(&mut probe, k, base);
            (up - down) / (2.0 * FD_STEP)
        };
        let exact = if k < model.dim() { g.weights[k] } else { g.bias };
        compare(exact, numeric);
    }
    Ok(GradCheck {
        passed: max_rel <= tolerance,
        max_rel_error: max_rel,
    })
}

fn param(m: &IppModel, k: usize) -> f64 {
    if k < m.weights.len() {
        m.weights[k]
    } else {
        m.bias
    }
}

fn set_param(m: &mut IppModel, k: usize, v: f64) {
    if k < m.weights.len() {
        m.weights[k] = v;
    } else {
        m.bias = v;
    }
}
