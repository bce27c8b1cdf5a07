mod common;

use proptest::prelude::*;
use undetr_core::geometry::BBox;
use undetr_core::ipp::IppModel;
use undetr_core::selection::{score_proposals, select_topk, topk_indices, ProposalSet};

/// Scores drawn from a coarse grid so that ties are frequent.
fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![(0u8..8).prop_map(|q| f64::from(q) / 8.0), 0.0..1.0f64],
        0..60,
    )
}

fn scored(scores: &[f64]) -> ProposalSet {
    let n = scores.len();
    let mut p = ProposalSet::new(
        (0..n).map(|i| vec![i as f64]).collect(),
        vec![BBox::new(0.5, 0.5, 0.1, 0.1).unwrap(); n],
    )
    .unwrap();
    p.scores = scores.to_vec();
    p
}

proptest! {
    #[test]
    fn equals_sort_prefix(s in scores(), k in 1usize..80) {
        prop_assert_eq!(topk_indices(&s, k), common::sort_prefix(&s, k));
        let out = select_topk(&scored(&s), k).unwrap();
        prop_assert_eq!(out.len(), k.min(s.len()));
        prop_assert_eq!(out.indices, common::sort_prefix(&s, k));
        prop_assert!(out.scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn invariant_under_increasing_transform(s in scores(), k in 1usize..80) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() + x * x * x).collect();
        prop_assert_eq!(topk_indices(&s, k), topk_indices(&t, k));
    }

    #[test]
    fn nested_in_k(s in scores(), k in 1usize..40) {
        let small = topk_indices(&s, k);
        let large = topk_indices(&s, k + 5);
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn reselection_keeps_original_indices(s in scores(), k in 1usize..30, j in 1usize..30) {
        let first = select_topk(&scored(&s), k).unwrap();
        let second = select_topk(&first, j).unwrap();
        prop_assert_eq!(second.indices, common::sort_prefix(&s, k.min(j)));
    }
}

#[test]
fn scoring_uses_model() {
    let model = IppModel::from_parameters(vec![1.0], 0.0).unwrap();
    let set = ProposalSet::new(
        vec![vec![-1.0], vec![2.0], vec![0.5]],
        vec![BBox::new(0.5, 0.5, 0.1, 0.1).unwrap(); 3],
    )
    .unwrap();
    let out = select_topk(&score_proposals(set, &model).unwrap(), 2).unwrap();
    assert_eq!(out.indices, vec![1, 2]);
    assert_eq!(out.embeddings, vec![vec![2.0], vec![0.5]]);
}
