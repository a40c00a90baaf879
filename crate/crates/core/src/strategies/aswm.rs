//! Actor-critic policies for adaptive contribution weighting.
//!
//! The leader owns one network; all followers share a second one. Both map a
//! fixed-size [`StateSummary`] to a squashed weight (actor) and a value
//! estimate (critic). The actor is trained by advantage-weighted regression
//! toward applied actions, where the advantage is measured against the loss
//! the grid-search choice would have produced in the same round.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::Role;
use crate::nn::{self, AdamConfig, AdamState, Matrix, ModelParams};
use crate::strategies::{ReplayEntry, WeightBounds};

/// Policy input for one node in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    /// Round index divided by the total number of rounds.
    pub progress: f64,
    pub own_prev_weight: f64,
    /// Previous weights of every other node, in node order.
    pub others_prev_weights: Vec<f64>,
    /// Validation loss of the freshly trained local model.
    pub own_val_loss: f64,
    /// Leader's broadcast loss; zero in the leader's own summary.
    pub leader_loss: f64,
    /// Distance between the local model and the current global model.
    pub distance_to_global: f64,
    pub prev_val_auc: f64,
}

impl StateSummary {
    /// Input width for a federation of `n_nodes`.
    pub fn dim(n_nodes: usize) -> usize {
        6 + n_nodes.saturating_sub(1)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.others_prev_weights.len());
        v.push(self.progress);
        v.push(self.own_prev_weight);
        v.extend_from_slice(&self.others_prev_weights);
        v.push(self.own_val_loss);
        v.push(self.leader_loss);
        v.push(self.distance_to_global);
        v.push(self.prev_val_auc);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Which node(s) a policy serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyOwner {
    Leader,
    FollowersShared,
}

/// Network sizes and optimizer settings of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden: 16,
            lr_actor: 5e-4,
            lr_critic: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub owner: PolicyOwner,
    pub actor: ModelParams,
    pub critic: ModelParams,
    bounds: WeightBounds,
    actor_opt: AdamState,
    critic_opt: AdamState,
    anticipation_opt: AdamState,
}

/// `min + (max - min) * sigmoid(z)` written around the midpoint, plus its derivative.
fn squash(bounds: WeightBounds, z: f64) -> (f64, f64) {
    let half = (bounds.max - bounds.min) / 2.0;
    let t = (z / 2.0).tanh();
    (bounds.midpoint() + half * t, half * (1.0 - t * t) / 2.0)
}

impl PolicyNet {
    /// Actor and critic are `state_dim -> hidden -> out` MLPs. The actor's
    /// output layer starts at zero, so an untrained actor answers the
    /// midpoint of `bounds`.
    pub fn new(
        owner: PolicyOwner,
        state_dim: usize,
        n_outputs: usize,
        hidden: usize,
        bounds: WeightBounds,
        seed: u64,
    ) -> Result<Self> {
        let mut actor = nn::mlp_init(&[(state_dim, hidden), (hidden, n_outputs)], seed)?;
        let head_start = state_dim * hidden + hidden;
        actor.values_mut()[head_start..].iter_mut().for_each(|v| *v = 0.0);
        let critic = nn::mlp_init(&[(state_dim, hidden), (hidden, 1)], seed.wrapping_add(1))?;
        Ok(PolicyNet {
            owner,
            actor_opt: AdamState::new(actor.len()),
            anticipation_opt: AdamState::new(actor.len()),
            critic_opt: AdamState::new(critic.len()),
            actor,
            critic,
            bounds,
        })
    }

    pub fn bounds(&self) -> WeightBounds {
        self.bounds
    }

    fn actor_raw(&self, s: &StateSummary) -> Result<Vec<f64>> {
        let x = Matrix::from_vec(1, self.actor.input_dim(), s.to_vec())?;
        let out = nn::forward_features(&self.actor, &x)?;
        Ok(out.into_vec())
    }

    /// Squashed actor outputs.
    pub fn act(&self, s: &StateSummary) -> Result<Vec<f64>> {
        let out: Vec<f64> = self.actor_raw(s)?.into_iter().map(|z| squash(self.bounds, z).0).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite policy output".into()));
        }
        Ok(out)
    }

    pub fn value(&self, s: &StateSummary) -> Result<f64> {
        let x = Matrix::from_vec(1, self.critic.input_dim(), s.to_vec())?;
        Ok(nn::forward_features(&self.critic, &x)?.as_slice()[0])
    }

    /// One critic and one actor update from a replay batch.
    ///
    /// Critic: squared error toward `-loss`. Actor: squared distance between
    /// its output and the applied action, weighted by the advantage. Entries
    /// are averaged per node first and then across nodes, so each follower
    /// contributes equally to the shared network. The actor is left untouched
    /// when no entry carries a finite non-zero advantage.
    pub fn train_step(&mut self, batch: &[ReplayEntry], lr_actor: f64, lr_critic: f64) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let sample_weights = node_balanced_weights(batch);
        let states = state_matrix(batch, self.critic.input_dim())?;

        let (_, critic_grad) = nn::backward_with(&self.critic, &states, |v| {
            let mut d = Matrix::zeros(v.rows(), 1);
            let mut loss = 0.0;
            for (i, e) in batch.iter().enumerate() {
                let r = v.get(i, 0) + e.loss;
                loss += sample_weights[i] * r * r;
                d.row_mut(i)[0] = sample_weights[i] * 2.0 * r;
            }
            Ok((loss, d))
        })?;
        nn::adam_step_in_place(
            &mut self.critic,
            &critic_grad,
            &mut self.critic_opt,
            lr_critic,
            AdamConfig::default(),
        )?;

        let active = batch
            .iter()
            .any(|e| e.advantage().is_finite() && e.advantage() != 0.0);
        if !active {
            return Ok(());
        }
        let (_, actor_grad) = nn::backward_with(&self.actor, &states, |z| {
            let mut d = Matrix::zeros(z.rows(), z.cols());
            let mut loss = 0.0;
            for (i, e) in batch.iter().enumerate() {
                let a = e.advantage();
                if !a.is_finite() {
                    continue;
                }
                let (out, slope) = squash(self.bounds, z.get(i, 0));
                let diff = out - e.action;
                loss += sample_weights[i] * a * diff * diff;
                d.row_mut(i)[0] = sample_weights[i] * a * 2.0 * diff * slope;
            }
            Ok((loss, d))
        })?;
        nn::adam_step_in_place(
            &mut self.actor,
            &actor_grad,
            &mut self.actor_opt,
            lr_actor,
            AdamConfig::default(),
        )
    }

    /// Regresses the leader's extra outputs onto the weights the other nodes
    /// actually applied. Only output heads `1..` receive gradient.
    pub fn fit_anticipation(&mut self, batch: &[ReplayEntry], lr: f64) -> Result<()> {
        let n_heads = self.actor.output_dim();
        if batch.is_empty() || n_heads < 2 {
            return Ok(());
        }
        let states = state_matrix(batch, self.actor.input_dim())?;
        let n = batch.len() as f64;
        let (_, grad) = nn::backward_with(&self.actor, &states, |z| {
            let mut d = Matrix::zeros(z.rows(), z.cols());
            let mut loss = 0.0;
            for (i, e) in batch.iter().enumerate() {
                let others: Vec<f64> = e
                    .weights
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != e.node_id)
                    .map(|(_, &w)| w)
                    .collect();
                for (h, &target) in others.iter().enumerate().take(n_heads - 1) {
                    let (out, slope) = squash(self.bounds, z.get(i, h + 1));
                    let diff = out - target;
                    loss += diff * diff / n;
                    d.row_mut(i)[h + 1] = 2.0 * diff * slope / n;
                }
            }
            Ok((loss, d))
        })?;
        nn::adam_step_in_place(
            &mut self.actor,
            &grad,
            &mut self.anticipation_opt,
            lr,
            AdamConfig::default(),
        )
    }
}

/// Per-sample weights `1 / (n_groups * group_size)`, grouping by node.
fn node_balanced_weights(batch: &[ReplayEntry]) -> Vec<f64> {
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for e in batch {
        *sizes.entry(e.node_id).or_default() += 1;
    }
    let groups = sizes.len() as f64;
    batch
        .iter()
        .map(|e| 1.0 / (groups * sizes[&e.node_id] as f64))
        .collect()
}

fn state_matrix(batch: &[ReplayEntry], dim: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(batch.len() * dim);
    for e in batch {
        if e.state.len() != dim {
            return Err(Error::Shape(format!(
                "replay state has {} entries, policy expects {dim}",
                e.state.len()
            )));
        }
        data.extend_from_slice(&e.state);
    }
    Matrix::from_vec(batch.len(), dim, data)
}

/// Applied weight for the leader plus its anticipated follower weights.
pub fn aswm_leader_predict(policy: &PolicyNet, s: &StateSummary) -> Result<(f64, Vec<f64>)> {
    let out = policy.act(s)?;
    Ok((out[0], out[1..].to_vec()))
}

/// Weight a follower applies, from the shared follower network.
pub fn aswm_follower_predict(policy: &PolicyNet, s: &StateSummary) -> Result<f64> {
    Ok(policy.act(s)?[0])
}

/// Functional form of [`PolicyNet::train_step`].
pub fn aswm_train_step(
    policy: &PolicyNet,
    batch: &[ReplayEntry],
    lr_actor: f64,
    lr_critic: f64,
) -> Result<PolicyNet> {
    let mut next = policy.clone();
    next.train_step(batch, lr_actor, lr_critic)?;
    Ok(next)
}

/// Role-specific owner for a node.
pub fn owner_for(role: Role) -> PolicyOwner {
    match role {
        Role::Leader => PolicyOwner::Leader,
        Role::Follower => PolicyOwner::FollowersShared,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(x: f64) -> StateSummary {
        StateSummary {
            progress: 0.3,
            own_prev_weight: 0.5,
            others_prev_weights: vec![1.0, 0.5],
            own_val_loss: x,
            leader_loss: 0.4,
            distance_to_global: 1.2,
            prev_val_auc: 0.8,
        }
    }

    fn entry(node_id: usize, s: &StateSummary, action: f64, loss: f64, base: f64) -> ReplayEntry {
        ReplayEntry {
            round: 1,
            node_id,
            role: if node_id == 0 { Role::Leader } else { Role::Follower },
            weights: vec![1.0, 0.4, 0.3],
            action,
            loss,
            baseline_loss: base,
            state: s.to_vec(),
        }
    }

    fn net(owner: PolicyOwner, outs: usize) -> PolicyNet {
        PolicyNet::new(owner, StateSummary::dim(3), outs, 16, WeightBounds::default(), 42).unwrap()
    }

    #[test]
    fn summary_dimension() {
        assert_eq!(summary(0.5).to_vec().len(), StateSummary::dim(3));
        assert_eq!(StateSummary::dim(3), 8);
    }

    #[test]
    fn untrained_actor_answers_midpoint() {
        let p = net(PolicyOwner::Leader, 3);
        let (c0, anticipated) = aswm_leader_predict(&p, &summary(0.9)).unwrap();
        assert_eq!(c0, 0.525);
        assert_eq!(anticipated, vec![0.525, 0.525]);
        assert_eq!(aswm_leader_predict(&p, &summary(0.9)).unwrap().0, c0);
    }

    #[test]
    fn outputs_stay_in_bounds() {
        let mut p = net(PolicyOwner::FollowersShared, 1);
        // Push the head far in both directions.
        let n = p.actor.len();
        for sign in [1.0, -1.0] {
            p.actor.values_mut()[n - 1] = sign * 1e4;
            let c = aswm_follower_predict(&p, &summary(0.2)).unwrap();
            assert!((0.05..=1.0).contains(&c));
        }
    }

    #[test]
    fn zero_advantage_leaves_actor_unchanged() {
        let mut p = net(PolicyOwner::FollowersShared, 1);
        let s = summary(0.6);
        let batch = vec![entry(1, &s, 0.9, 0.5, 0.5), entry(2, &s, 0.2, 0.7, 0.7)];
        let before = p.actor.clone();
        p.train_step(&batch, 5e-4, 1e-3).unwrap();
        assert_eq!(p.actor, before);
    }

    #[test]
    fn positive_advantage_moves_toward_action() {
        let mut p = net(PolicyOwner::FollowersShared, 1);
        let s = summary(0.6);
        let batch = vec![entry(1, &s, 0.9, 0.4, 0.6)];
        let before = aswm_follower_predict(&p, &s).unwrap();
        for _ in 0..50 {
            p.train_step(&batch, 5e-3, 1e-3).unwrap();
        }
        let after = aswm_follower_predict(&p, &s).unwrap();
        assert!(after > before + 0.05, "{before} -> {after}");
    }

    #[test]
    fn critic_regresses_to_negative_loss() {
        let mut p = net(PolicyOwner::Leader, 3);
        let s = summary(0.6);
        let batch = vec![entry(0, &s, 0.5, 0.7, 0.7)];
        for _ in 0..500 {
            p.train_step(&batch, 5e-4, 1e-3).unwrap();
        }
        let v = p.value(&s).unwrap();
        assert!((v + 0.7).abs() < 1e-2, "critic {v}");
    }

    #[test]
    fn follower_entries_are_averaged() {
        let s = summary(0.6);
        let base = net(PolicyOwner::FollowersShared, 1);
        let mut two = base.clone();
        two.train_step(&[entry(1, &s, 0.9, 0.4, 0.6), entry(2, &s, 0.9, 0.4, 0.6)], 1e-3, 1e-3)
            .unwrap();
        let mut one = base.clone();
        one.train_step(&[entry(1, &s, 0.9, 0.4, 0.6)], 1e-3, 1e-3).unwrap();
        for (a, b) in two.actor.values().iter().zip(one.actor.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in two.critic.values().iter().zip(one.critic.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn anticipation_heads_learn_follower_weights() {
        let mut p = net(PolicyOwner::Leader, 3);
        let s = summary(0.6);
        let batch = vec![entry(0, &s, 1.0, 0.3, 0.3)];
        for _ in 0..2000 {
            p.fit_anticipation(&batch, 1e-2).unwrap();
        }
        let (c0, anticipated) = aswm_leader_predict(&p, &s).unwrap();
        assert_eq!(c0, 0.525, "applied head untouched");
        assert!((anticipated[0] - 0.4).abs() < 0.02, "{anticipated:?}");
        assert!((anticipated[1] - 0.3).abs() < 0.02, "{anticipated:?}");
    }

    #[test]
    fn empty_batch_is_noop() {
        let mut p = net(PolicyOwner::Leader, 3);
        let before = p.clone();
        p.train_step(&[], 1e-3, 1e-3).unwrap();
        assert_eq!(p, before);
    }
}
