//! Contribution-weighting strategies.
//!
//! Every node picks its own weight through the active strategy during a
//! round; the federation then aggregates with the chosen vector and reports
//! back through [`WeightingStrategy::observe`].

mod aswm;
mod dswm;
mod replay;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aswm::{
    aswm_follower_predict, aswm_leader_predict, aswm_train_step, owner_for, PolicyConfig,
    PolicyNet, PolicyOwner, StateSummary,
};
pub use dswm::{default_candidates, dswm_select_weight, hypothetical_loss, DswmChoice};
pub use replay::{ReplayBuffer, ReplayEntry, DEFAULT_CAPACITY};

use crate::error::{Error, Result};
use crate::federation::Role;
use crate::metrics;
use crate::nn::{self, Batch, ModelParams};

/// Closed interval every applied weight must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for WeightBounds {
    fn default() -> Self {
        WeightBounds { min: 0.05, max: 1.0 }
    }
}

impl WeightBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max >= min && max.is_finite()) {
            return Err(Error::Config(format!("invalid weight bounds [{min}, {max}]")));
        }
        Ok(WeightBounds { min, max })
    }

    pub fn clamp(&self, w: f64) -> f64 {
        w.clamp(self.min, self.max)
    }

    pub fn contains(&self, w: f64) -> bool {
        (self.min..=self.max).contains(&w)
    }

    pub fn midpoint(&self) -> f64 {
        (self.min + self.max) / 2.0
    }
}

/// Strategy selector, as spelled on the command line and in output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    FedAvg,
    PwFedAvg,
    Dswm,
    Aswm,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::FedAvg,
        StrategyKind::PwFedAvg,
        StrategyKind::Dswm,
        StrategyKind::Aswm,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fedavg",
            StrategyKind::PwFedAvg => "pwfedavg",
            StrategyKind::Dswm => "dswm",
            StrategyKind::Aswm => "aswm",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fedavg" => Ok(StrategyKind::FedAvg),
            "pwfedavg" => Ok(StrategyKind::PwFedAvg),
            "dswm" => Ok(StrategyKind::Dswm),
            "aswm" => Ok(StrategyKind::Aswm),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Settings for the replay-based strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub replay_capacity: usize,
    pub replay_batch: usize,
    /// Rounds during which ASWM applies the grid-search choice.
    pub warmup_rounds: usize,
    /// Initial exploration probability, multiplied by `epsilon_decay` each round.
    pub epsilon: f64,
    pub epsilon_decay: f64,
    /// Half-width of the uniform exploration perturbation.
    pub explore_width: f64,
    pub policy_updates_per_round: usize,
    pub policy: PolicyConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            replay_capacity: DEFAULT_CAPACITY,
            replay_batch: 32,
            warmup_rounds: 3,
            epsilon: 0.2,
            epsilon_decay: 0.95,
            explore_width: 0.1,
            policy_updates_per_round: 1,
            policy: PolicyConfig::default(),
        }
    }
}

/// Everything a node knows when it picks its weight.
#[derive(Debug, Clone)]
pub struct SelectionContext<'a> {
    /// 1-based round being played.
    pub round: usize,
    pub node_index: usize,
    pub leader_index: usize,
    pub role: Role,
    /// Model of every node as this node sees it: its own fresh local model,
    /// and the latest available model of every other node.
    pub models: Vec<&'a ModelParams>,
    /// Weights already announced this round (the leader's, for followers).
    pub observed_weights: Vec<Option<f64>>,
    pub val: &'a Batch,
    pub train_sizes: &'a [usize],
    pub summary: &'a StateSummary,
    pub bounds: WeightBounds,
    /// Seed of this node's exploration stream for this round.
    pub explore_seed: u64,
}

/// A node's decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub weight: f64,
    /// Grid-search choice computed alongside, when the strategy needs it.
    pub shadow: Option<DswmChoice>,
    /// Leader's anticipated weights for the other nodes (ASWM only).
    pub anticipated: Option<Vec<f64>>,
}

impl Selection {
    fn plain(weight: f64) -> Self {
        Selection {
            weight,
            shadow: None,
            anticipated: None,
        }
    }
}

/// What happened to one node in a finished round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutcome {
    pub node_id: usize,
    pub role: Role,
    pub summary: StateSummary,
    pub action: f64,
    /// Own validation loss under the new global model.
    pub loss: f64,
    /// Own validation loss had the node applied its grid-search choice.
    pub baseline_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round: usize,
    pub weights: Vec<f64>,
    pub nodes: Vec<NodeOutcome>,
}

/// `C_k = n_k / max_j n_j`. Homogeneity of the aggregation makes this
/// equivalent to weighting by raw sizes.
pub fn fedavg_weights(node_sizes: &[usize]) -> Result<Vec<f64>> {
    if node_sizes.is_empty() || node_sizes.contains(&0) {
        return Err(Error::Weight("FedAvg needs every node size >= 1".into()));
    }
    let max = *node_sizes.iter().max().expect("non-empty") as f64;
    Ok(node_sizes.iter().map(|&n| n as f64 / max).collect())
}

/// Mean per-class precision of each node, clamped to `[bounds.min, 1]`.
pub fn pwfedavg_weights(per_node_precision: &[Vec<f64>], bounds: WeightBounds) -> Vec<f64> {
    per_node_precision
        .iter()
        .map(|p| {
            let mean = if p.is_empty() {
                0.0
            } else {
                p.iter().sum::<f64>() / p.len() as f64
            };
            mean.clamp(bounds.min, bounds.max.min(1.0))
        })
        .collect()
}

/// Replay state of the grid-search strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct DswmState {
    pub candidates: Vec<f64>,
    pub replay: ReplayBuffer,
}

/// Policies, buffers and exploration state of the adaptive strategy.
#[derive(Debug, Clone)]
pub struct AswmState {
    pub config: StrategyConfig,
    pub candidates: Vec<f64>,
    pub leader: PolicyNet,
    pub followers: PolicyNet,
    pub leader_replay: ReplayBuffer,
    pub follower_replay: ReplayBuffer,
    rng: ChaCha8Rng,
    /// Number of policy training steps taken so far.
    pub train_steps: usize,
}

impl AswmState {
    pub fn new(config: StrategyConfig, n_nodes: usize, bounds: WeightBounds, seed: u64) -> Result<Self> {
        let dim = StateSummary::dim(n_nodes);
        let hidden = config.policy.hidden;
        Ok(AswmState {
            leader: PolicyNet::new(PolicyOwner::Leader, dim, n_nodes, hidden, bounds, seed)?,
            followers: PolicyNet::new(
                PolicyOwner::FollowersShared,
                dim,
                1,
                hidden,
                bounds,
                seed.wrapping_add(2),
            )?,
            leader_replay: ReplayBuffer::new(config.replay_capacity),
            follower_replay: ReplayBuffer::new(config.replay_capacity),
            candidates: default_candidates(),
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(3)),
            train_steps: 0,
            config,
        })
    }

    fn latest_weights(&self) -> Option<&Vec<f64>> {
        match (self.leader_replay.latest(), self.follower_replay.latest()) {
            (Some(a), Some(b)) => Some(if b.round > a.round { &b.weights } else { &a.weights }),
            (Some(a), None) => Some(&a.weights),
            (None, Some(b)) => Some(&b.weights),
            (None, None) => None,
        }
    }

    /// Policy serving nodes of `role`; all followers share one.
    pub fn policy_for(&self, role: Role) -> &PolicyNet {
        match role {
            Role::Leader => &self.leader,
            Role::Follower => &self.followers,
        }
    }

    /// Policy weight for a node of `role` in state `s`, before exploration,
    /// plus the leader's anticipated weights of the other nodes.
    pub fn predict(&self, role: Role, s: &StateSummary) -> Result<(f64, Option<Vec<f64>>)> {
        match role {
            Role::Leader => {
                let (c, ant) = aswm_leader_predict(&self.leader, s)?;
                Ok((c, Some(ant)))
            }
            Role::Follower => Ok((aswm_follower_predict(&self.followers, s)?, None)),
        }
    }

    /// Exploration probability in `round` (1-based).
    pub fn epsilon(&self, round: usize) -> f64 {
        self.config.epsilon * self.config.epsilon_decay.powi(round.saturating_sub(1) as i32)
    }
}

/// The active weighting strategy and its state.
#[derive(Debug, Clone)]
pub enum WeightingStrategy {
    FedAvg,
    PwFedAvg,
    Dswm(DswmState),
    Aswm(Box<AswmState>),
}

/// Default weight assumed for a node never seen before.
fn default_weight(k: usize, leader_index: usize) -> f64 {
    if k == leader_index {
        1.0
    } else {
        0.5
    }
}

/// Observed weights where available, otherwise the latest replayed vector,
/// otherwise the role defaults.
fn anticipated_weights(ctx: &SelectionContext<'_>, latest: Option<&Vec<f64>>) -> Vec<f64> {
    (0..ctx.models.len())
        .map(|k| {
            ctx.observed_weights
                .get(k)
                .copied()
                .flatten()
                .or_else(|| latest.and_then(|w| w.get(k).copied()))
                .unwrap_or_else(|| default_weight(k, ctx.leader_index))
        })
        .collect()
}

fn replay_entry(round: usize, weights: &[f64], n: &NodeOutcome) -> ReplayEntry {
    ReplayEntry {
        round,
        node_id: n.node_id,
        role: n.role,
        weights: weights.to_vec(),
        action: n.action,
        loss: n.loss,
        baseline_loss: n.baseline_loss,
        state: n.summary.to_vec(),
    }
}

impl WeightingStrategy {
    pub fn new(
        kind: StrategyKind,
        config: &StrategyConfig,
        n_nodes: usize,
        bounds: WeightBounds,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            StrategyKind::FedAvg => WeightingStrategy::FedAvg,
            StrategyKind::PwFedAvg => WeightingStrategy::PwFedAvg,
            StrategyKind::Dswm => WeightingStrategy::Dswm(DswmState {
                candidates: default_candidates(),
                replay: ReplayBuffer::new(config.replay_capacity),
            }),
            StrategyKind::Aswm => WeightingStrategy::Aswm(Box::new(AswmState::new(
                config.clone(),
                n_nodes,
                bounds,
                seed,
            )?)),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            WeightingStrategy::FedAvg => StrategyKind::FedAvg,
            WeightingStrategy::PwFedAvg => StrategyKind::PwFedAvg,
            WeightingStrategy::Dswm(_) => StrategyKind::Dswm,
            WeightingStrategy::Aswm(_) => StrategyKind::Aswm,
        }
    }

    /// Whether the federation should compute grid-search baselines.
    pub fn wants_baseline(&self) -> bool {
        matches!(self, WeightingStrategy::Aswm(_))
    }

    /// Picks the weight node `ctx.node_index` applies this round.
    pub fn select(&self, ctx: &SelectionContext<'_>) -> Result<Selection> {
        let selection = match self {
            WeightingStrategy::FedAvg => {
                let w = fedavg_weights(ctx.train_sizes)?;
                Selection::plain(ctx.bounds.clamp(w[ctx.node_index]))
            }
            WeightingStrategy::PwFedAvg => {
                let own = ctx.models[ctx.node_index];
                let logits = nn::forward(own, ctx.val)?;
                let pred = logits.argmax_rows();
                let precision =
                    metrics::precision_per_class(&pred, &ctx.val.labels, own.output_dim())?;
                Selection::plain(pwfedavg_weights(&[precision], ctx.bounds)[0])
            }
            WeightingStrategy::Dswm(state) => {
                let weights = anticipated_weights(ctx, state.replay.latest().map(|e| &e.weights));
                let choice =
                    dswm_select_weight(ctx.node_index, &ctx.models, &weights, ctx.val, &state.candidates)?;
                Selection::plain(choice.weight)
            }
            WeightingStrategy::Aswm(state) => aswm_select(state, ctx)?,
        };
        if !ctx.bounds.contains(selection.weight) {
            return Err(Error::Strategy(format!(
                "weight {} outside [{}, {}]",
                selection.weight, ctx.bounds.min, ctx.bounds.max
            )));
        }
        Ok(selection)
    }

    /// Records a finished round and, for ASWM, trains the policies.
    pub fn observe(&mut self, outcome: &RoundOutcome) -> Result<()> {
        match self {
            WeightingStrategy::FedAvg | WeightingStrategy::PwFedAvg => Ok(()),
            WeightingStrategy::Dswm(state) => {
                for n in &outcome.nodes {
                    state.replay.push(replay_entry(outcome.round, &outcome.weights, n));
                }
                Ok(())
            }
            WeightingStrategy::Aswm(state) => aswm_round_hook(state, outcome),
        }
    }
}

fn aswm_select(state: &AswmState, ctx: &SelectionContext<'_>) -> Result<Selection> {
    let mut weights = anticipated_weights(ctx, state.latest_weights());
    let warm = ctx.round <= state.config.warmup_rounds;

    let (predicted, anticipated) = state.predict(ctx.role, ctx.summary)?;
    if let (false, Some(ant)) = (warm, &anticipated) {
        let others = (0..weights.len()).filter(|&k| k != ctx.node_index);
        for (k, &a) in others.zip(ant) {
            if ctx.observed_weights.get(k).copied().flatten().is_none() {
                weights[k] = a;
            }
        }
    }

    let shadow = dswm_select_weight(ctx.node_index, &ctx.models, &weights, ctx.val, &state.candidates)?;
    let weight = if warm {
        shadow.weight
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.explore_seed);
        let w = state.config.explore_width;
        if w > 0.0 && rng.random::<f64>() < state.epsilon(ctx.round) {
            ctx.bounds.clamp(predicted + rng.random_range(-w..w))
        } else {
            predicted
        }
    };
    Ok(Selection {
        weight,
        shadow: Some(shadow),
        anticipated,
    })
}

/// Stores the round's experiences and runs the policy updates.
///
/// Training runs whenever a buffer holds entries. During warm-up the applied
/// weight is the grid-search choice, so advantages are zero and only the
/// critic (and the leader's anticipation heads) learn.
pub fn aswm_round_hook(state: &mut AswmState, outcome: &RoundOutcome) -> Result<()> {
    for n in &outcome.nodes {
        let entry = replay_entry(outcome.round, &outcome.weights, n);
        match n.role {
            Role::Leader => state.leader_replay.push(entry),
            Role::Follower => state.follower_replay.push(entry),
        }
    }
    let cfg = state.config.clone();
    for _ in 0..cfg.policy_updates_per_round {
        let mut trained = false;
        if !state.leader_replay.is_empty() {
            let batch = state.leader_replay.sample(cfg.replay_batch, &mut state.rng);
            state
                .leader
                .train_step(&batch, cfg.policy.lr_actor, cfg.policy.lr_critic)?;
            state.leader.fit_anticipation(&batch, cfg.policy.lr_actor)?;
            trained = true;
        }
        if !state.follower_replay.is_empty() {
            let batch = state.follower_replay.sample(cfg.replay_batch, &mut state.rng);
            state
                .followers
                .train_step(&batch, cfg.policy.lr_actor, cfg.policy.lr_critic)?;
            trained = true;
        }
        if trained {
            state.train_steps += 1;
        }
    }
    Ok(())
}
