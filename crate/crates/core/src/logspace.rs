//! Log-domain arithmetic helpers.

/// Log of zero probability.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// `ln(exp(a) + exp(b))` in max-shift form.
///
/// When one operand is `LOG_ZERO` the other is returned unchanged, so sums
/// along a single admissible path stay bit-identical to a plain running sum.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == LOG_ZERO {
        return b;
    }
    if b == LOG_ZERO {
        return a;
    }
    if a >= b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp of a slice; `LOG_ZERO` for an empty or all-zero input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// In-place log-softmax.
pub fn log_softmax_in_place(logits: &mut [f64]) {
    let norm = log_sum_exp(logits);
    for v in logits.iter_mut() {
        *v -= norm;
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_add_identity_with_zero() {
        assert_eq!(log_add(LOG_ZERO, -1.25), -1.25);
        assert_eq!(log_add(-3.5, LOG_ZERO), -3.5);
        assert_eq!(log_add(LOG_ZERO, LOG_ZERO), LOG_ZERO);
    }

    #[test]
    fn log_add_matches_direct() {
        let (a, b) = (0.3f64.ln(), 0.2f64.ln());
        assert!((log_add(a, b) - 0.5f64.ln()).abs() < 1e-15);
        // no overflow for large magnitudes
        assert!((log_add(-1000.0, -1000.0) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp(&[]), LOG_ZERO);
        assert_eq!(log_sum_exp(&[LOG_ZERO, LOG_ZERO]), LOG_ZERO);
        let v = [0.1f64.ln(), 0.2f64.ln(), 0.7f64.ln()];
        assert!(log_sum_exp(&v).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_normalizes() {
        let out = log_softmax(&[1.0, -2.0, 0.5, 3.0]);
        let total: f64 = out.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
