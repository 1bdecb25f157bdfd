/// Fraction of matching entries. Empty input scores 0.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(
        predictions.len(),
        labels.len(),
        "prediction/label length mismatch"
    );
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Unweighted mean of per-class recall over the classes present in
/// `labels`.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize], class_count: usize) -> f64 {
    assert_eq!(
        predictions.len(),
        labels.len(),
        "prediction/label length mismatch"
    );
    let mut total = vec![0usize; class_count];
    let mut hits = vec![0usize; class_count];
    for (&p, &l) in predictions.iter().zip(labels) {
        total[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let recalls: Vec<f64> = total
        .iter()
        .zip(&hits)
        .filter(|(t, _)| **t > 0)
        .map(|(&t, &h)| h as f64 / t as f64)
        .collect();
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}
