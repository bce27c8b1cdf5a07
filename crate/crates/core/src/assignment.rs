//! Matching cost between ground truths and predictions, and the one-to-one
//! and one-to-many assignments built on it.
//!
//! The one-to-many assignment pairs the optimal matching with a second,
//! "suboptimal" matching solved over the predictions the first one left
//! unused. Both have one prediction per ground truth and never share a
//! prediction, so their union gives `2G` distinct positive queries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::metrics::{GroundTruthObject, Label};
use crate::postprocess::Detection;
use crate::prob::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub lambda_cls: f64,
    pub lambda_box: f64,
}

impl Default for MatchWeights {
    fn default() -> Self {
        Self {
            lambda_cls: 2.0,
            lambda_box: 5.0,
        }
    }
}

impl MatchWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("match-lambda-cls", self.lambda_cls),
            ("match-lambda-box", self.lambda_box),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::OutOfRange {
                    field,
                    value: v,
                    expected: "must be finite and >= 0",
                });
            }
        }
        Ok(())
    }
}

/// `λ_cls · (−p(c_j)) + λ_box · (1 − IoU)`, with `p` the sigmoid of the
/// logit for the ground truth's class.
pub fn match_cost(prediction: &Detection, gt: &GroundTruthObject, weights: &MatchWeights) -> Result<f64> {
    let class = match gt.label {
        Label::Known(k) => k,
        Label::Unknown => return Err(Error::UnknownLabel { index: 0 }),
    };
    class_box_cost(prediction, class, gt, weights)
}

fn class_box_cost(prediction: &Detection, class: usize, gt: &GroundTruthObject, weights: &MatchWeights) -> Result<f64> {
    let logit = prediction.logits.get(class).ok_or(Error::ClassOutOfRange {
        class,
        num_classes: prediction.logits.len(),
    })?;
    let cls = -sigmoid(*logit);
    let bbox = 1.0 - iou(&prediction.bbox, &gt.bbox);
    Ok(weights.lambda_cls * cls + weights.lambda_box * bbox)
}

/// Dense cost matrix, rows are ground truths and columns predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    pub weights: MatchWeights,
}

impl CostMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::Dimension("ragged cost matrix".into()));
        }
        let entries: Vec<f64> = rows.into_iter().flatten().collect();
        if entries.iter().any(|c| !c.is_finite()) {
            return Err(Error::Dimension("cost matrix entries must be finite".into()));
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            entries,
            weights: MatchWeights::default(),
        })
    }

    /// Empty matrix with `cols` predictions and no ground truth.
    pub fn empty(cols: usize) -> Self {
        Self {
            rows: 0,
            cols,
            entries: Vec::new(),
            weights: MatchWeights::default(),
        }
    }

    pub fn build(predictions: &[Detection], gts: &[GroundTruthObject], weights: MatchWeights) -> Result<Self> {
        let mut entries = Vec::with_capacity(gts.len() * predictions.len());
        for (j, gt) in gts.iter().enumerate() {
            let Label::Known(class) = gt.label else {
                return Err(Error::UnknownLabel { index: j });
            };
            for p in predictions {
                entries.push(class_box_cost(p, class, gt, &weights)?);
            }
        }
        Ok(Self {
            rows: gts.len(),
            cols: predictions.len(),
            entries,
            weights,
        })
    }

    pub fn num_gts(&self) -> usize {
        self.rows
    }

    pub fn num_predictions(&self) -> usize {
        self.cols
    }

    pub fn get(&self, gt: usize, pred: usize) -> f64 {
        self.entries[gt * self.cols + pred]
    }

    /// Sum of the costs of `pairs` in the given order.
    pub fn total(&self, pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(g, p)| self.get(g, p)).sum()
    }

    fn without_columns(&self, removed: &[usize]) -> (CostMatrix, Vec<usize>) {
        let keep: Vec<usize> = (0..self.cols).filter(|c| !removed.contains(c)).collect();
        let mut entries = Vec::with_capacity(self.rows * keep.len());
        for r in 0..self.rows {
            entries.extend(keep.iter().map(|&c| self.get(r, c)));
        }
        (
            CostMatrix {
                rows: self.rows,
                cols: keep.len(),
                entries,
                weights: self.weights,
            },
            keep,
        )
    }
}

/// Minimum-cost complete matching of every ground truth (row) to a distinct
/// prediction (column), via the shortest augmenting path Hungarian method
/// in O(G²N). Columns are scanned in ascending order and only replaced on
/// strict improvement, so ties resolve toward the lower prediction index.
pub fn solve_optimal(costs: &CostMatrix) -> Result<Vec<(usize, usize)>> {
    let n = costs.rows;
    let m = costs.cols;
    if n > m {
        return Err(Error::Dimension(format!(
            "{n} ground truths cannot be matched to {m} predictions"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }

    // 1-based potentials; column 0 is the virtual root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub best: Vec<(usize, usize)>,
    pub suboptimal: Vec<(usize, usize)>,
    /// Prediction indices of `best` followed by those of `suboptimal`.
    pub positive: Vec<usize>,
    pub best_cost: f64,
    pub suboptimal_cost: f64,
}

impl AssignmentResult {
    /// Every positive pair: the optimal matches then the suboptimal ones.
    pub fn positive_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.best.iter().chain(&self.suboptimal).copied()
    }
}

/// Optimal matching plus a second matching over the remaining predictions.
pub fn solve_one_to_many(costs: &CostMatrix) -> Result<AssignmentResult> {
    let g = costs.rows;
    let n = costs.cols;
    if 2 * g > n {
        return Err(Error::Dimension(format!(
            "one-to-many assignment of {g} ground truths needs at least {} predictions, got {n}",
            2 * g
        )));
    }
    let best = solve_optimal(costs)?;
    let used: Vec<usize> = best.iter().map(|&(_, p)| p).collect();
    let (rest, keep) = costs.without_columns(&used);
    let suboptimal: Vec<(usize, usize)> = solve_optimal(&rest)?.into_iter().map(|(gi, c)| (gi, keep[c])).collect();
    let positive = best.iter().chain(&suboptimal).map(|&(_, p)| p).collect();
    Ok(AssignmentResult {
        best_cost: costs.total(&best),
        suboptimal_cost: costs.total(&suboptimal),
        best,
        suboptimal,
        positive,
    })
}
