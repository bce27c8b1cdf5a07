//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use undetr_core::geometry::{diou, BBox};
use undetr_core::postprocess::Detection;

pub const GRID: i64 = 1000;

/// Box with corners on the `1/GRID` lattice of the unit square, as integer
/// corner indices `[x1, y1, x2, y2]`.
pub fn lattice_box(rng: &mut impl Rng, allow_degenerate: bool) -> [i64; 4] {
    let axis = |rng: &mut dyn rand::RngCore| {
        let a = rng.random_range(0..=GRID);
        let b = rng.random_range(0..=GRID);
        (a.min(b), a.max(b))
    };
    loop {
        let (x1, x2) = axis(rng);
        let (y1, y2) = axis(rng);
        if allow_degenerate || (x2 > x1 && y2 > y1) {
            return [x1, y1, x2, y2];
        }
    }
}

pub fn lattice_to_bbox(c: [i64; 4]) -> BBox {
    let g = GRID as f64;
    BBox::from_xyxy(c[0] as f64 / g, c[1] as f64 / g, c[2] as f64 / g, c[3] as f64 / g).unwrap()
}

/// Indices of the pixel centers `(i + 0.5) / GRID` covered by `[lo, hi]`.
fn covered(lo: i64, hi: i64) -> Vec<bool> {
    (0..GRID)
        .map(|i| {
            let c = (i as f64 + 0.5) / GRID as f64;
            c >= lo as f64 / GRID as f64 && c <= hi as f64 / GRID as f64
        })
        .collect()
}

/// IoU and GIoU from pixel-center counts on a `GRID × GRID` raster. Boxes
/// are axis-aligned products, so each 2-D pixel set is the product of its
/// per-axis covers.
pub fn raster_iou_giou(a: [i64; 4], b: [i64; 4]) -> (f64, f64) {
    let (ax, ay) = (covered(a[0], a[2]), covered(a[1], a[3]));
    let (bx, by) = (covered(b[0], b[2]), covered(b[1], b[3]));
    let count = |v: &[bool]| v.iter().filter(|&&x| x).count() as f64;
    let both = |u: &[bool], v: &[bool]| u.iter().zip(v).filter(|(x, y)| **x && **y).count() as f64;
    let area_a = count(&ax) * count(&ay);
    let area_b = count(&bx) * count(&by);
    let inter = both(&ax, &bx) * both(&ay, &by);
    let union = area_a + area_b - inter;
    let extent = |u: &[bool], v: &[bool]| {
        let idx: Vec<usize> = (0..u.len()).filter(|&i| u[i] || v[i]).collect();
        match (idx.first(), idx.last()) {
            (Some(&lo), Some(&hi)) => (hi - lo + 1) as f64,
            _ => 0.0,
        }
    };
    let enclosing = extent(&ax, &bx) * extent(&ay, &by);
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let giou = if enclosing > 0.0 {
        iou - (enclosing - union) / enclosing
    } else {
        iou
    };
    (iou, giou)
}

/// Minimum total over injective maps of rows into columns not in
/// `excluded`, with the minimizing pairs. Sums run in row order.
pub fn brute_force_assignment(costs: &[Vec<f64>], excluded: &[usize]) -> Option<(f64, Vec<(usize, usize)>)> {
    fn go(
        costs: &[Vec<f64>],
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        best: &mut Option<(f64, Vec<(usize, usize)>)>,
    ) {
        if row == costs.len() {
            let total = current.iter().map(|&(g, p)| costs[g][p]).fold(0.0, |a, c| a + c);
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                *best = Some((total, current.clone()));
            }
            return;
        }
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                current.push((row, col));
                go(costs, row + 1, used, current, best);
                current.pop();
                used[col] = false;
            }
        }
    }
    let n = costs.first().map_or(0, |r| r.len());
    let mut used = vec![false; n];
    for &c in excluded {
        used[c] = true;
    }
    let mut best = None;
    go(costs, 0, &mut used, &mut Vec::new(), &mut best);
    best
}

/// Greedy NMS by the textbook loop: repeatedly take the highest-IPS
/// survivor (lowest index on ties) and drop everything overlapping it.
pub fn greedy_nms(dets: &[Detection], threshold: f64) -> Vec<usize> {
    let mut alive: Vec<usize> = (0..dets.len()).collect();
    let mut kept = Vec::new();
    while !alive.is_empty() {
        let mut top = alive[0];
        for &i in &alive {
            if dets[i].ips > dets[top].ips {
                top = i;
            }
        }
        kept.push(top);
        alive.retain(|&i| i != top && diou(&dets[top].bbox, &dets[i].bbox) <= threshold);
    }
    kept
}

/// AP by walking the ranked list: every true positive adds `1 / total`
/// recall at the best precision achieved at that recall or beyond.
pub fn pr_oracle_ap(flags: &[bool], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let mut points = Vec::new();
    let mut tp = 0;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        points.push((tp, tp as f64 / (i + 1) as f64));
    }
    let mut ap = 0.0;
    for level in 1..=tp {
        let best = points
            .iter()
            .filter(|(t, _)| *t >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += best / total as f64;
    }
    ap
}

/// Stable sort by descending score, then the first `k` indices.
pub fn sort_prefix(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    idx.truncate(k);
    idx
}
