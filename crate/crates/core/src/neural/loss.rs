/// Max-shifted `ln Σ exp(v)`. Returns `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|v| v - lse).collect()
}

/// Log-softmax over the `true` entries of `mask`; masked entries get `-∞`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let legal: Vec<f64> = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    let lse = log_sum_exp(&legal);
    logits
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { v - lse } else { f64::NEG_INFINITY })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// `−log softmax(logits)[action]`.
pub fn softmax_cross_entropy(logits: &[f64], action: usize) -> f64 {
    log_sum_exp(logits) - logits[action]
}

/// Asymmetric squared loss `|τ − 1(u < 0)|·u²`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// Derivative of [`expectile_loss`] with respect to `u`.
pub fn expectile_grad(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    2.0 * w * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn log_sum_exp_examples() {
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert_abs_diff_eq!(log_sum_exp(&[1.0, 2.0, 3.0]), direct, epsilon = 1e-12);
        assert_abs_diff_eq!(log_sum_exp(&[1.0, 2.0, 3.0]), 3.40760596, epsilon = 1e-8);
    }

    #[test]
    fn expectile_examples() {
        assert_abs_diff_eq!(expectile_loss(2.0, 0.9), 3.6, epsilon = 1e-12);
        assert_abs_diff_eq!(expectile_loss(-2.0, 0.9), 0.4, epsilon = 1e-12);
        for u in [-3.0, -0.5, 0.0, 1.7] {
            assert_abs_diff_eq!(expectile_loss(u, 0.5), 0.5 * u * u, epsilon = 1e-15);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        assert_abs_diff_eq!(softmax_cross_entropy(&[0.0; 11], 4), 11f64.ln(), epsilon = 1e-12);
        let mut spike = [0.0; 11];
        spike[3] = 1e9;
        assert!(softmax_cross_entropy(&spike, 3).abs() < 1e-12);
        let mut one = [0.0; 11];
        one[0] = 1.0;
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(
            softmax_cross_entropy(&one, 0),
            ((e + 10.0) / e).ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(softmax_cross_entropy(&one, 0), 1.5430405, epsilon = 1e-7);
    }

    #[test]
    fn masked_log_softmax_ignores_masked_entries() {
        let l = masked_log_softmax(&[1.0, 50.0, 1.0], &[true, false, true]);
        assert_abs_diff_eq!(l[0], 0.5f64.ln(), epsilon = 1e-12);
        assert_eq!(l[1], f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn log_sum_exp_bounds(v in prop::collection::vec(-500.0f64..500.0, 1..20)) {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = log_sum_exp(&v);
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let s: f64 = softmax(&v).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn expectile_grad_matches_difference(u in -5.0f64..5.0, tau in 0.01f64..0.99) {
            prop_assume!(u.abs() > 1e-3);
            let h = 1e-6;
            let num = (expectile_loss(u + h, tau) - expectile_loss(u - h, tau)) / (2.0 * h);
            prop_assert!((num - expectile_grad(u, tau)).abs() < 1e-6);
        }
    }
}
