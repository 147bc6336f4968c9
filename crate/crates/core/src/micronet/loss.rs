/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(logits)[label]` and its gradient with respect to the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (l, g) = cross_entropy(&[0.0, 0.0], 0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, vec![-0.5, 0.5]);
    }

    #[test]
    fn saturated_logits() {
        let (l, _) = cross_entropy(&[20.0, -20.0], 0);
        assert!(l < 1e-8 && l >= 0.0);
        let (l, _) = cross_entropy(&[1e4, -1e4], 1);
        assert!(l.is_finite() && (l - 2e4).abs() < 1e-6);
    }

    #[test]
    fn softmax_normalises() {
        let p = softmax(&[3.0, -1.0, 700.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits = [0.37, -1.21];
        for label in 0..2 {
            let (_, g) = cross_entropy(&logits, label);
            for k in 0..2 {
                let h = 1e-3;
                let mut p = logits;
                p[k] += h;
                let mut m = logits;
                m[k] -= h;
                let num = (cross_entropy(&p, label).0 - cross_entropy(&m, label).0) / (2.0 * h);
                assert!((num - g[k]).abs() / g[k].abs().max(num.abs()) < 1e-4);
            }
        }
    }
}
