use crate::error::{Error, Result};
use crate::nn::ModelParams;

/// `sum_k C_k w_k / sum_k C_k`, elementwise.
pub fn weighted_aggregate(models: &[&ModelParams], weights: &[f64]) -> Result<ModelParams> {
    let first = *models
        .first()
        .ok_or_else(|| Error::Shape("no models to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::Weight(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if let Some(m) = models.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::Shape(format!(
            "layer shapes {:?} differ from {:?}",
            m.layer_shapes(),
            first.layer_shapes()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Weight(format!("contribution weight {w} is not positive")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Weight(format!("weight sum {total} is not positive")));
    }

    let mut out = first.clone();
    let coeffs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        let mut acc = 0.0;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (m, c) in models.iter().zip(&coeffs) {
            let x = m.values()[i];
            acc += c * x;
            lo = lo.min(x);
            hi = hi.max(x);
        }
        // Rounding can push the sum an ulp outside the inputs' range.
        *v = acc.clamp(lo, hi);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ModelParams {
        ModelParams::new(vec![(1, 1)], vec![v, 0.0]).unwrap()
    }

    #[test]
    fn equal_weights_give_mean() {
        let out = weighted_aggregate(&[&scalar(2.0), &scalar(4.0)], &[1.0, 1.0]).unwrap();
        assert_eq!(out.values()[0], 3.0);
    }

    #[test]
    fn dominant_weight() {
        let a = scalar(-1.5);
        let b = scalar(8.0);
        let out = weighted_aggregate(&[&a, &b], &[1.0, 1e-4]).unwrap();
        assert!((out.values()[0] - a.values()[0]).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_input() {
        let a = scalar(1.0);
        let wide = ModelParams::new(vec![(2, 1)], vec![1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(weighted_aggregate(&[&a, &wide], &[1.0, 1.0]), Err(Error::Shape(_))));
        assert!(matches!(weighted_aggregate(&[&a, &a], &[1.0, 0.0]), Err(Error::Weight(_))));
        assert!(matches!(weighted_aggregate(&[&a, &a], &[1.0, -2.0]), Err(Error::Weight(_))));
        assert!(matches!(weighted_aggregate(&[], &[]), Err(Error::Shape(_))));
    }
}
