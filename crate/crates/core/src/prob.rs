//! Numerically stable logistic helpers.

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without underflow for very negative `x`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Index and value of the largest per-class sigmoid probability.
/// Ties go to the lower class index. Returns `None` for empty logits.
pub fn max_class_prob(logits: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &l) in logits.iter().enumerate() {
        let p = sigmoid(l);
        match best {
            Some((_, bp)) if p <= bp => {}
            _ => best = Some((k, p)),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(sigmoid(f64::NEG_INFINITY), 0.0);
        assert_eq!(sigmoid(f64::INFINITY), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn log_sigmoid_matches_direct() {
        for &x in &[-30.0, -2.0, 0.0, 0.5, 12.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
        assert!((log_sigmoid(-1000.0) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn argmax_tie_goes_low() {
        assert_eq!(max_class_prob(&[1.0, 1.0, 0.0]).unwrap().0, 0);
        assert_eq!(max_class_prob(&[0.0, 2.0, 1.0]).unwrap().0, 1);
        assert!(max_class_prob(&[]).is_none());
    }
}
