/// Log-softmax computed through log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against a class index.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    -log_softmax(logits)[label]
}

/// Mean cross-entropy over the frames of one sample.
pub fn temporal_loss<L: AsRef<[f64]>>(logits_per_frame: &[L], label: usize) -> f64 {
    if logits_per_frame.is_empty() {
        return 0.0;
    }
    logits_per_frame
        .iter()
        .map(|l| cross_entropy(l.as_ref(), label))
        .sum::<f64>()
        / logits_per_frame.len() as f64
}

/// `d CE / d logits = softmax(logits) - onehot(label)`.
pub(crate) fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g: Vec<f64> = log_softmax(logits).into_iter().map(f64::exp).collect();
    g[label] -= 1.0;
    g
}
