use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Softmax cross-entropy over one head's firing rates, averaged over the batch.
///
/// Rates are multiplied by `scale` before the softmax; rates live in `[0, 1]`,
/// so without a scale the logit range is too narrow to express confidence.
/// Returns the loss and its gradient w.r.t. the (unscaled) rates.
pub fn cross_entropy_on_rates(rates: &Tensor, labels: &[usize], scale: f32) -> Result<(f32, Tensor)> {
    let [batch, classes] = rates.shape() else {
        return Err(Error::shape(format!("rates must be [batch, classes], got {:?}", rates.shape())));
    };
    let (batch, classes) = (*batch, *classes);
    if labels.len() != batch {
        return Err(Error::shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::input(format!("label {bad} outside head of {classes} classes")));
    }
    let mut grad = vec![0.0f32; batch * classes];
    let mut total = 0.0f64;
    let inv_b = 1.0 / batch as f32;
    for (s, &y) in labels.iter().enumerate() {
        let row = rates.row(s);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &r| m.max(r * scale));
        let exps: Vec<f32> = row.iter().map(|&r| (r * scale - max).exp()).collect();
        let z: f32 = exps.iter().sum();
        total += (z.ln() - (row[y] * scale - max)) as f64;
        for c in 0..classes {
            let p = exps[c] / z;
            let target = if c == y { 1.0 } else { 0.0 };
            grad[s * classes + c] = scale * (p - target) * inv_b;
        }
    }
    Ok(((total / batch as f64) as f32, Tensor::new(vec![batch, classes], grad)?))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_rates_give_log_k() {
        for k in [2usize, 5, 10] {
            let rates = Tensor::full(vec![3, k], 0.4).unwrap();
            let (loss, _) = cross_entropy_on_rates(&rates, &[0, 1, k - 1], 1.0).unwrap();
            assert!((loss - (k as f32).ln()).abs() < 1e-5);
        }
    }

    #[test]
    fn confident_correct_rates_give_small_loss() {
        let mut data = vec![0.0; 10];
        data[3] = 1.0;
        let rates = Tensor::new(vec![1, 10], data).unwrap();
        let (loss, _) = cross_entropy_on_rates(&rates, &[3], 20.0).unwrap();
        assert!(loss < 1e-6, "{loss}");
    }

    #[test]
    fn batch_loss_is_mean_of_samples() {
        let a = Tensor::new(vec![1, 3], vec![0.1, 0.7, 0.2]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![0.5, 0.0, 0.9]).unwrap();
        let both = Tensor::new(vec![2, 3], vec![0.1, 0.7, 0.2, 0.5, 0.0, 0.9]).unwrap();
        let (la, _) = cross_entropy_on_rates(&a, &[1], 4.0).unwrap();
        let (lb, _) = cross_entropy_on_rates(&b, &[0], 4.0).unwrap();
        let (l2, _) = cross_entropy_on_rates(&both, &[1, 0], 4.0).unwrap();
        assert!((l2 - (la + lb) / 2.0).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = vec![0.2f32, 0.6, 0.1, 0.9, 0.3, 0.5];
        let rates = Tensor::new(vec![2, 3], data.clone()).unwrap();
        let labels = [2, 0];
        let (_, g) = cross_entropy_on_rates(&rates, &labels, 3.0).unwrap();
        for i in 0..6 {
            let h = 1e-3;
            let mut p = data.clone();
            p[i] += h;
            let mut m = data.clone();
            m[i] -= h;
            let lp = cross_entropy_on_rates(&Tensor::new(vec![2, 3], p).unwrap(), &labels, 3.0).unwrap().0;
            let lm = cross_entropy_on_rates(&Tensor::new(vec![2, 3], m).unwrap(), &labels, 3.0).unwrap().0;
            assert!(((lp - lm) / (2.0 * h) - g.data()[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn label_out_of_range_is_input_error() {
        let rates = Tensor::full(vec![1, 4], 0.0).unwrap();
        assert!(matches!(cross_entropy_on_rates(&rates, &[4], 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 0.9, 0.9, 0.1]), 1);
    }
}
