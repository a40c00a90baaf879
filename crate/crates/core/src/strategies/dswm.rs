//! Deterministic grid search over contribution weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::weighted_aggregate;
use crate::nn::{self, Batch, ModelParams};
use crate::par;

/// The fixed candidate set {0.1, 0.2, ..., 1.0}.
pub fn default_candidates() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

/// Outcome of a grid search for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DswmChoice {
    pub weight: f64,
    pub loss: f64,
    /// `(candidate, own validation loss)` in ascending candidate order.
    pub evaluated: Vec<(f64, f64)>,
}

/// Own validation loss of the aggregate formed with `own_weight` in slot `own_index`.
pub fn hypothetical_loss(
    own_index: usize,
    own_weight: f64,
    models: &[&ModelParams],
    weights: &[f64],
    val: &Batch,
) -> Result<f64> {
    let mut w = weights.to_vec();
    w[own_index] = own_weight;
    let global = weighted_aggregate(models, &w)?;
    nn::loss(&global, val)
}

/// Picks the candidate whose hypothetical global model gives the lowest
/// validation loss on `val`. Ties go to the smallest candidate.
///
/// `weights` holds the (observed or anticipated) weights of every node; the
/// entry at `own_index` is replaced by each candidate in turn.
pub fn dswm_select_weight(
    own_index: usize,
    models: &[&ModelParams],
    weights: &[f64],
    val: &Batch,
    candidates: &[f64],
) -> Result<DswmChoice> {
    if candidates.is_empty() {
        return Err(Error::Strategy("empty DSWM candidate set".into()));
    }
    if models.len() != weights.len() || own_index >= models.len() {
        return Err(Error::Strategy(format!(
            "{} models, {} weights, own index {own_index}",
            models.len(),
            weights.len()
        )));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);

    let losses = par::map(&sorted, |&c| hypothetical_loss(own_index, c, models, weights, val));
    let mut evaluated = Vec::with_capacity(sorted.len());
    for (c, l) in sorted.iter().zip(losses) {
        let l = l.map_err(|e| Error::Strategy(format!("candidate {c}: {e}")))?;
        evaluated.push((*c, l));
    }
    let (weight, loss) = evaluated
        .iter()
        .copied()
        .fold(None::<(f64, f64)>, |best, (c, l)| match best {
            Some((_, bl)) if l >= bl => best,
            _ => Some((c, l)),
        })
        .expect("non-empty");
    Ok(DswmChoice {
        weight,
        loss,
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;

    fn val_batch() -> Batch {
        Batch::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.2]]).unwrap(),
            vec![0, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn identical_models_tie_to_smallest() {
        let m = nn::mlp_init(&[(2, 2)], 3).unwrap();
        let models = [&m, &m, &m];
        let choice = dswm_select_weight(1, &models, &[1.0, 0.5, 0.5], &val_batch(), &default_candidates())
            .unwrap();
        assert_eq!(choice.weight, 0.1);
        assert_eq!(choice.evaluated.len(), 10);
    }

    #[test]
    fn good_own_model_takes_full_weight() {
        // Own model classifies the validation set well; the other is its mirror image.
        let good = ModelParams::new(vec![(2, 2)], vec![4.0, -4.0, -4.0, 4.0, 0.0, 0.0]).unwrap();
        let bad = ModelParams::new(vec![(2, 2)], vec![-4.0, 4.0, 4.0, -4.0, 0.0, 0.0]).unwrap();
        let models = [&good, &bad];
        let val = val_batch();
        let choice = dswm_select_weight(0, &models, &[0.5, 1.0], &val, &default_candidates()).unwrap();
        // Exhaustive re-evaluation.
        let brute: Vec<f64> = default_candidates()
            .iter()
            .map(|&c| hypothetical_loss(0, c, &models, &[0.5, 1.0], &val).unwrap())
            .collect();
        let min = brute.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(choice.weight, 1.0);
        assert_eq!(choice.loss, min);
        assert!(choice.evaluated.iter().all(|&(_, l)| choice.loss <= l));
    }

    #[test]
    fn rejects_empty_candidates() {
        let m = nn::mlp_init(&[(2, 2)], 3).unwrap();
        assert!(matches!(
            dswm_select_weight(0, &[&m], &[1.0], &val_batch(), &[]),
            Err(Error::Strategy(_))
        ));
    }
}
