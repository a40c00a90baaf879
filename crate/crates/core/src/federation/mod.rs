//! Round engine: node state, local training, aggregation and the sequential
//! leader-then-followers schedule.
//!
//! A round proceeds as follows:
//! 1. the leader trains locally and picks its weight;
//! 2. every follower sees the leader's weight and loss, trains, and picks its
//!    own weight (followers are independent of each other here);
//! 3. the updated local models are aggregated with the chosen weights;
//! 4. the new global model is installed, a [`RoundRecord`] appended and the
//!    strategy told what happened.
//!
//! When a node decides, the models it has not seen this round are represented
//! by their latest submitted versions.

mod aggregate;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregate::weighted_aggregate;

use crate::error::{Error, Result};
use crate::metrics::{self, AucAverage, EvalReport};
use crate::nn::{self, Batch, ModelParams};
use crate::par;
use crate::strategies::{
    hypothetical_loss, NodeOutcome, RoundOutcome, Selection, SelectionContext, StateSummary,
    WeightBounds, WeightingStrategy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Follower => "follower",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Local optimisation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 2,
            batch_size: 32,
            lr: 0.05,
        }
    }
}

/// Settings fixed for the lifetime of a federation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub train: TrainOptions,
    pub bounds: WeightBounds,
    pub total_rounds: usize,
    pub auc_average: AucAverage,
    /// Root of every per-round, per-node random stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub node_id: usize,
    pub role: Role,
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
    pub local_model: ModelParams,
    pub contribution_weight: f64,
    pub noise_seed: u64,
    /// Validation AUC of the local model in the previous round.
    pub prev_val_auc: f64,
}

impl NodeState {
    /// Initial weight: 1.0 for the leader, 0.5 for followers.
    pub fn new(
        node_id: usize,
        role: Role,
        train: Batch,
        val: Batch,
        test: Batch,
        initial_model: ModelParams,
        noise_seed: u64,
    ) -> Self {
        NodeState {
            node_id,
            role,
            train,
            val,
            test,
            local_model: initial_model,
            contribution_weight: if role == Role::Leader { 1.0 } else { 0.5 },
            noise_seed,
            prev_val_auc: 0.5,
        }
    }
}

/// Per-node metrics for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRoundRecord {
    pub node_id: usize,
    pub role: Role,
    pub contribution_weight: f64,
    /// Validation loss of the freshly trained local model.
    pub val_loss: f64,
    /// Validation AUC of the freshly trained local model.
    pub val_auc: f64,
    /// Test AUC of the new global model.
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub nodes: Vec<NodeRoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationState {
    pub global_model: ModelParams,
    pub nodes: Vec<NodeState>,
    /// Rounds completed so far.
    pub round: usize,
    pub history: Vec<RoundRecord>,
    pub config: FederationConfig,
}

fn check_eval_set(node: &NodeState, name: &str, batch: &Batch) -> Result<()> {
    if batch.n_distinct_labels() < 2 {
        return Err(Error::Config(format!(
            "node {} {name} set has fewer than two classes",
            node.node_id
        )));
    }
    Ok(())
}

impl FederationState {
    pub fn new(global_model: ModelParams, nodes: Vec<NodeState>, config: FederationConfig) -> Result<Self> {
        let leaders = nodes.iter().filter(|n| n.role == Role::Leader).count();
        if leaders != 1 {
            return Err(Error::Config(format!("expected exactly one leader, found {leaders}")));
        }
        for (i, n) in nodes.iter().enumerate() {
            if n.node_id != i {
                return Err(Error::Config("node ids must be 0..n in order".into()));
            }
            if !n.local_model.same_shape(&global_model) {
                return Err(Error::Shape(format!("node {i} model shape differs from global")));
            }
            if !config.bounds.contains(n.contribution_weight) {
                return Err(Error::Config(format!("node {i} weight outside bounds")));
            }
            if n.train.is_empty() {
                return Err(Error::Config(format!("node {i} has no training data")));
            }
            check_eval_set(n, "validation", &n.val)?;
            check_eval_set(n, "test", &n.test)?;
        }
        if config.train.epochs == 0 || config.train.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be >= 1".into()));
        }
        Ok(FederationState {
            global_model,
            nodes,
            round: 0,
            history: Vec::new(),
            config,
        })
    }

    pub fn leader_index(&self) -> usize {
        self.nodes
            .iter()
            .position(|n| n.role == Role::Leader)
            .expect("validated on construction")
    }

    pub fn train_sizes(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.train.len()).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.contribution_weight).collect()
    }
}

/// SplitMix64 finaliser over a sequence of words.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// Mini-batch SGD from `global_model` on the node's training data.
///
/// Returns the new parameters and their validation loss.
pub fn local_train(
    node: &NodeState,
    global_model: &ModelParams,
    opts: &TrainOptions,
    seed: u64,
) -> Result<(ModelParams, f64)> {
    if opts.epochs == 0 || opts.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be >= 1".into()));
    }
    let mut params = global_model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..node.train.len()).collect();
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(opts.batch_size) {
            let batch = node.train.subset(chunk);
            let (_, grad) = nn::backward(&params, &batch)?;
            nn::sgd_step_in_place(&mut params, &grad, opts.lr)?;
        }
    }
    let val_loss = nn::loss(&params, &node.val)?;
    Ok((params, val_loss))
}

/// A node's trained model and decision for the round in progress.
struct NodeStep {
    model: ModelParams,
    val_loss: f64,
    val_auc: f64,
    summary: StateSummary,
    selection: Selection,
}

fn val_auc(model: &ModelParams, val: &Batch, average: AucAverage) -> f64 {
    nn::forward(model, val)
        .map(|logits| nn::softmax(&logits))
        .and_then(|p| metrics::auc_ovr(&p, &val.labels, average))
        .unwrap_or(0.5)
}

fn node_step(
    state: &FederationState,
    strategy: &WeightingStrategy,
    k: usize,
    leader: Option<(&ModelParams, f64, f64)>,
) -> Result<NodeStep> {
    let cfg = &state.config;
    let t = state.round + 1;
    let node = &state.nodes[k];
    let (model, val_loss) = local_train(
        node,
        &state.global_model,
        &cfg.train,
        derive_seed(cfg.seed, &[1, t as u64, k as u64]),
    )?;
    let val_auc = val_auc(&model, &node.val, cfg.auc_average);

    let summary = StateSummary {
        progress: t as f64 / cfg.total_rounds.max(1) as f64,
        own_prev_weight: node.contribution_weight,
        others_prev_weights: state
            .nodes
            .iter()
            .filter(|n| n.node_id != k)
            .map(|n| n.contribution_weight)
            .collect(),
        own_val_loss: val_loss,
        leader_loss: leader.map_or(0.0, |(_, _, loss)| loss),
        distance_to_global: model.l2_distance(&state.global_model)?,
        prev_val_auc: node.prev_val_auc,
    };
    if !summary.is_finite() {
        return Err(Error::Numeric(format!("node {k} state summary is not finite")));
    }

    let leader_index = state.leader_index();
    let models: Vec<&ModelParams> = state
        .nodes
        .iter()
        .enumerate()
        .map(|(j, n)| {
            if j == k {
                &model
            } else if let (true, Some((m, _, _))) = (j == leader_index, leader) {
                m
            } else {
                &n.local_model
            }
        })
        .collect();
    let observed_weights: Vec<Option<f64>> = (0..state.nodes.len())
        .map(|j| match leader {
            Some((_, w, _)) if j == leader_index => Some(w),
            _ => None,
        })
        .collect();
    let train_sizes = state.train_sizes();
    let ctx = SelectionContext {
        round: t,
        node_index: k,
        leader_index,
        role: node.role,
        models,
        observed_weights,
        val: &node.val,
        train_sizes: &train_sizes,
        summary: &summary,
        bounds: cfg.bounds,
        explore_seed: derive_seed(cfg.seed, &[2, t as u64, k as u64]),
    };
    let selection = strategy
        .select(&ctx)
        .map_err(|e| match e {
            Error::Strategy(_) => e,
            other => Error::Strategy(format!("node {k}: {other}")),
        })?;
    Ok(NodeStep {
        model,
        val_loss,
        val_auc,
        summary,
        selection,
    })
}

fn round_inner(state: &FederationState, strategy: &mut WeightingStrategy) -> Result<FederationState> {
    let n = state.nodes.len();
    let t = state.round + 1;
    let leader_index = state.leader_index();

    let leader_step = node_step(state, strategy, leader_index, None)?;
    let leader_view = (
        &leader_step.model,
        leader_step.selection.weight,
        leader_step.val_loss,
    );
    let followers: Vec<usize> = (0..n).filter(|&k| k != leader_index).collect();
    let follower_steps = par::map(&followers, |&k| node_step(state, strategy, k, Some(leader_view)));

    let mut steps: Vec<Option<NodeStep>> = (0..n).map(|_| None).collect();
    for (k, step) in followers.iter().zip(follower_steps) {
        steps[*k] = Some(step?);
    }
    steps[leader_index] = Some(leader_step);
    let steps: Vec<NodeStep> = steps.into_iter().map(|s| s.expect("filled")).collect();

    let weights: Vec<f64> = steps.iter().map(|s| s.selection.weight).collect();
    let models: Vec<&ModelParams> = steps.iter().map(|s| &s.model).collect();
    let global = weighted_aggregate(&models, &weights)?;

    let cfg = &state.config;
    let wants_baseline = strategy.wants_baseline();
    let per_node = par::map_range(n, |k| -> Result<(NodeOutcome, f64)> {
        let node = &state.nodes[k];
        let step = &steps[k];
        let loss = nn::loss(&global, &node.val)?;
        let baseline_loss = match (&step.selection.shadow, wants_baseline) {
            (Some(shadow), true) => {
                hypothetical_loss(k, shadow.weight, &models, &weights, &node.val)?
            }
            _ => loss,
        };
        let test_auc = {
            let logits = nn::forward(&global, &node.test)?;
            metrics::auc_ovr(&nn::softmax(&logits), &node.test.labels, cfg.auc_average)?
        };
        Ok((
            NodeOutcome {
                node_id: k,
                role: node.role,
                summary: step.summary.clone(),
                action: weights[k],
                loss,
                baseline_loss,
            },
            test_auc,
        ))
    });
    let mut outcomes = Vec::with_capacity(n);
    let mut test_aucs = Vec::with_capacity(n);
    for r in per_node {
        let (o, auc) = r?;
        outcomes.push(o);
        test_aucs.push(auc);
    }

    let record = RoundRecord {
        round: t,
        nodes: steps
            .iter()
            .enumerate()
            .map(|(k, s)| NodeRoundRecord {
                node_id: k,
                role: state.nodes[k].role,
                contribution_weight: weights[k],
                val_loss: s.val_loss,
                val_auc: s.val_auc,
                test_auc: test_aucs[k],
            })
            .collect(),
    };

    strategy.observe(&RoundOutcome {
        round: t,
        weights: weights.clone(),
        nodes: outcomes,
    })?;

    let mut next = state.clone();
    for (node, step) in next.nodes.iter_mut().zip(steps) {
        node.local_model = step.model;
        node.contribution_weight = step.selection.weight;
        node.prev_val_auc = step.val_auc;
    }
    next.global_model = global;
    next.round = t;
    next.history.push(record);
    Ok(next)
}

/// Plays one round. On error neither `state` nor `strategy` changes.
pub fn run_round(state: &FederationState, strategy: &mut WeightingStrategy) -> Result<FederationState> {
    let snapshot = strategy.clone();
    round_inner(state, strategy).inspect_err(|_| *strategy = snapshot)
}

/// Evaluates the global model on every node's test set.
pub fn evaluate_all(state: &FederationState) -> Vec<Result<EvalReport>> {
    state
        .nodes
        .iter()
        .map(|n| metrics::evaluate(&state.global_model, &n.test, state.config.auc_average))
        .collect()
}
