/// Predictions are kept this far away from 0 and 1 inside the logarithms.
pub const PROBABILITY_CLAMP: f64 = 1e-12;

/// Mean binary cross-entropy over all positions, with its gradient with
/// respect to each prediction.
pub fn cross_entropy(prediction: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(prediction.len(), target.len(), "prediction/target length mismatch");
    let n = prediction.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = prediction
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
            loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            (p - t) / (p * (1.0 - p)) / n
        })
        .collect();
    (loss / n, grad)
}
