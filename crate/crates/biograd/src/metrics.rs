//! Evaluation metrics: accuracy, feedback/feedforward alignment angle,
//! magnitude correlation, and the hidden-activity CSV export.

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "accuracy needs equal nonempty vectors, got {}/{}",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Product of transposed downstream feedforward weights: the alignment
/// target for the feedback matrix of hidden layer `layer` (0-based weight
/// index).
pub fn feedback_target(w: &[Array2<f64>], layer: usize) -> Array2<f64> {
    let n_out = w.last().unwrap().nrows();
    let mut target = Array2::eye(n_out);
    for m in (layer + 1..w.len()).rev() {
        target = w[m].t().dot(&target);
    }
    target
}

/// Angle in degrees between the flattened feedback matrix and the current
/// downstream feedforward product.
pub fn alignment_angle(b: &Array2<f64>, w: &[Array2<f64>], layer: usize) -> Result<f64> {
    let target = feedback_target(w, layer);
    if b.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "alignment: B is {:?}, target is {:?}",
            b.shape(),
            target.shape()
        )));
    }
    let dot: f64 = b.iter().zip(target.iter()).map(|(x, y)| x * y).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt: f64 = target.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nb == 0.0 || nt == 0.0 {
        return Err(Error::Invalid("alignment angle of a zero matrix".into()));
    }
    Ok((dot / (nb * nt)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Pearson correlation between |B| entries and the matching entries of the
/// downstream feedforward product's magnitudes.
pub fn magnitude_correlation(b: &Array2<f64>, w: &[Array2<f64>], layer: usize) -> Result<f64> {
    let target = feedback_target(w, layer);
    if b.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "magnitude correlation: B is {:?}, target is {:?}",
            b.shape(),
            target.shape()
        )));
    }
    let xs: Vec<f64> = b.iter().map(|x| x.abs()).collect();
    let ys: Vec<f64> = target.iter().map(|x| x.abs()).collect();
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invalid("correlation of a constant vector is undefined".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 3], &[0, 0, 0]).unwrap(), 0.0);
        let preds: Vec<usize> = (0..10).collect();
        let mut labels = preds.clone();
        labels[9] = 0;
        assert!((accuracy(&preds, &labels).unwrap() - 0.9).abs() < 1e-15);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn angles() {
        let w = vec![array![[1.0, 0.0], [0.0, 1.0]], array![[1.0, 2.0], [3.0, 4.0]]];
        let target = feedback_target(&w, 0);
        assert_eq!(target, w[1].t());
        assert!(alignment_angle(&target, &w, 0).unwrap().abs() < 1e-9);
        let neg = target.mapv(|x| -x);
        assert!((alignment_angle(&neg, &w, 0).unwrap() - 180.0).abs() < 1e-9);

        // scale invariance
        let scaled = target.mapv(|x| 3.5 * x);
        assert!(alignment_angle(&scaled, &w, 0).unwrap().abs() < 1e-9);

        let zero = Array2::zeros(target.raw_dim());
        assert!(alignment_angle(&zero, &w, 0).is_err());
    }

    #[test]
    fn orthogonal_vectors_are_90_degrees() {
        let w = vec![array![[1.0]], array![[1.0], [0.0]]];
        // target = w[1]^T = [[1.0, 0.0]], B = [[0.0, 1.0]]
        let b = array![[0.0, 1.0]];
        assert!((alignment_angle(&b, &w, 0).unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn magnitude_correlation_cases() {
        let w = vec![array![[1.0, 0.0], [0.0, 1.0]], array![[1.0, -2.0], [3.0, 4.0]]];
        let target = feedback_target(&w, 0);
        assert!((magnitude_correlation(&target, &w, 0).unwrap() - 1.0).abs() < 1e-12);
        // positive affine map of the magnitudes keeps r = 1
        let affine = target.mapv(|x| 2.0 * x.abs() + 1.0);
        assert!((magnitude_correlation(&affine, &w, 0).unwrap() - 1.0).abs() < 1e-12);
        let constant = Array2::ones(target.raw_dim());
        assert!(magnitude_correlation(&constant, &w, 0).is_err());
    }

    #[test]
    fn independent_matrices_uncorrelated() {
        use crate::rng::Rng;
        use rand::Rng as _;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = Rng::seed_from_u64(11);
        let n = 10_000;
        let b = Array2::from_shape_fn((100, 100), |_| rng.gen_range(-1.0..1.0));
        let w2 = Array2::from_shape_fn((100, 100), |_| rng.gen_range(-1.0..1.0));
        let w = vec![Array2::eye(100), w2];
        let r = magnitude_correlation(&b, &w, 0).unwrap();
        assert!(r.abs() < 0.05, "r = {r} over {n} entries");
    }
}
