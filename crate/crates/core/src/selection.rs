//! Unbiased query selection: rank encoder proposals by a dedicated IPS
//! predictor and keep the top `k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::ipp::IppModel;

pub const DEFAULT_TOPK: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProposalSet {
    pub embeddings: Vec<Vec<f64>>,
    pub boxes: Vec<BBox>,
    /// Empty until scored.
    pub scores: Vec<f64>,
    /// Position of each proposal in the set it was selected from.
    pub indices: Vec<usize>,
}

impl ProposalSet {
    pub fn new(embeddings: Vec<Vec<f64>>, boxes: Vec<BBox>) -> Result<Self> {
        if embeddings.len() != boxes.len() {
            return Err(Error::Dimension(format!(
                "{} embeddings vs {} boxes",
                embeddings.len(),
                boxes.len()
            )));
        }
        let indices = (0..boxes.len()).collect();
        Ok(Self {
            embeddings,
            boxes,
            scores: Vec::new(),
            indices,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn is_scored(&self) -> bool {
        self.scores.len() == self.len()
    }
}

/// Scores every proposal with `ipp`, preserving order.
pub fn score_proposals(mut proposals: ProposalSet, ipp: &IppModel) -> Result<ProposalSet> {
    proposals.scores = proposals
        .embeddings
        .iter()
        .map(|e| ipp.forward(e))
        .collect::<Result<_>>()?;
    Ok(proposals)
}

/// Ranking of `scores`: descending, ties by lower index, truncated to `k`.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Keeps the `min(k, N)` highest-scoring proposals in descending order.
/// Asking for more than `N` returns all of them, sorted.
pub fn select_topk(proposals: &ProposalSet, k: usize) -> Result<ProposalSet> {
    if k == 0 {
        return Err(Error::OutOfRange {
            field: "topk",
            value: 0.0,
            expected: "must be >= 1",
        });
    }
    if !proposals.is_scored() {
        return Err(Error::Dimension(format!(
            "{} scores for {} proposals",
            proposals.scores.len(),
            proposals.len()
        )));
    }
    let picked = topk_indices(&proposals.scores, k);
    Ok(ProposalSet {
        embeddings: picked.iter().map(|&i| proposals.embeddings[i].clone()).collect(),
        boxes: picked.iter().map(|&i| proposals.boxes[i]).collect(),
        scores: picked.iter().map(|&i| proposals.scores[i]).collect(),
        indices: picked.iter().map(|&i| proposals.indices[i]).collect(),
    })
}
