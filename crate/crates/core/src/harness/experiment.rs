use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, Partition};
use crate::error::{Error, Result};
use crate::federation::{
    derive_seed, evaluate_all, run_round, FederationState, NodeState, Role,
};
use crate::harness::config::ExperimentConfig;
use crate::nn;
use crate::par;
use crate::strategies::{StrategyKind, WeightingStrategy};

/// Aggregated metrics for one (strategy, node) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub node_id: usize,
    pub role: Role,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_loss: f64,
    /// Percentage change of `mean_auc` relative to FedAvg on the same node.
    pub delta_vs_fedavg_pct: Option<f64>,
}

/// One node in one round of one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub strategy: StrategyKind,
    pub node_id: usize,
    pub role: Role,
    pub rep: usize,
    pub round: usize,
    pub contribution_weight: f64,
    pub val_loss: f64,
    pub test_auc: f64,
}

/// Final global-model test metrics of one node in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub strategy: StrategyKind,
    pub rep: usize,
    pub node_id: usize,
    pub role: Role,
    pub test_auc: f64,
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFailure {
    pub strategy: StrategyKind,
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionHash {
    pub strategy: StrategyKind,
    pub rep: usize,
    pub hash: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub summary: Vec<SummaryRow>,
    pub trajectories: Vec<TrajectoryRow>,
    pub finals: Vec<FinalRow>,
    pub failures: Vec<RepFailure>,
    pub partition_hashes: Vec<PartitionHash>,
}

impl ResultTable {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }

    /// Final test AUC per repetition for one (strategy, node).
    pub fn final_aucs(&self, strategy: StrategyKind, node_id: usize) -> Vec<(usize, f64)> {
        self.finals
            .iter()
            .filter(|r| r.strategy == strategy && r.node_id == node_id)
            .map(|r| (r.rep, r.test_auc))
            .collect()
    }

    pub fn summary_row(&self, strategy: StrategyKind, node_id: usize) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.strategy == strategy && r.node_id == node_id)
    }
}

/// `(to - from) / from * 100`.
pub fn percentage_delta(from: f64, to: f64) -> f64 {
    (to - from) / from * 100.0
}

/// Sample mean and unbiased standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Seed of repetition `rep`.
pub fn rep_seed(config: &ExperimentConfig, rep: usize) -> u64 {
    config.base_seed.wrapping_add(rep as u64)
}

/// Builds the federation of one repetition. Depends only on the config and
/// the repetition seed, so every strategy sees the same data.
pub fn build_federation(
    config: &ExperimentConfig,
    seed: u64,
    dataset: Option<&Dataset>,
) -> Result<(FederationState, Partition)> {
    let generated;
    let ds = match dataset {
        Some(d) => d,
        None => {
            generated = data::synthetic_dataset(
                config.n_samples,
                config.n_features,
                config.n_classes,
                config.class_sep,
                seed,
            )?;
            &generated
        }
    };
    let partition = data::dirichlet_partition(
        &ds.labels,
        config.n_nodes,
        config.dirichlet_alpha,
        Some(&config.target_sizes),
        derive_seed(seed, &[10]),
    )?;
    let shapes = config.layer_shapes(ds.n_features(), ds.n_classes);
    let global = nn::mlp_init(&shapes, derive_seed(seed, &[11]))?;
    let leader = config.leader_index();
    let [f0, f1, f2] = config.split_fractions;

    let mut nodes = Vec::with_capacity(config.n_nodes);
    for (k, idx) in partition.node_indices.iter().enumerate() {
        let mut local = ds.subset(idx);
        let noise_seed = seed.wrapping_add(k as u64);
        local.features = data::add_gaussian_noise(&local.features, config.noise_sigma, noise_seed)?;
        let (train, val, test) = data::split(&local, (f0, f1, f2), derive_seed(seed, &[12, k as u64]))?;
        let role = if k == leader { Role::Leader } else { Role::Follower };
        nodes.push(NodeState::new(
            k,
            role,
            train.to_batch(),
            val.to_batch(),
            test.to_batch(),
            global.clone(),
            noise_seed,
        ));
    }
    let fed = FederationState::new(global, nodes, config.federation_config(derive_seed(seed, &[13]))?)?;
    Ok((fed, partition))
}

struct RepOutcome {
    trajectories: Vec<TrajectoryRow>,
    finals: Vec<FinalRow>,
    partition_hash: u64,
}

fn run_rep(
    config: &ExperimentConfig,
    kind: StrategyKind,
    rep: usize,
    dataset: Option<&Dataset>,
) -> Result<RepOutcome> {
    let seed = rep_seed(config, rep);
    let (mut state, partition) = build_federation(config, seed, dataset)?;
    let hash = partition.fingerprint();
    log::info!("{kind} rep {rep}: partition {hash:016x} sizes {:?}", partition.sizes());

    let mut strategy = WeightingStrategy::new(
        kind,
        &config.strategy_config(),
        config.n_nodes,
        config.bounds()?,
        derive_seed(seed, &[14]),
    )?;
    for _ in 0..config.rounds {
        state = run_round(&state, &mut strategy)?;
    }

    let trajectories = state
        .history
        .iter()
        .flat_map(|r| {
            r.nodes.iter().map(move |n| TrajectoryRow {
                strategy: kind,
                node_id: n.node_id,
                role: n.role,
                rep,
                round: r.round,
                contribution_weight: n.contribution_weight,
                val_loss: n.val_loss,
                test_auc: n.test_auc,
            })
        })
        .collect();
    let finals = evaluate_all(&state)
        .into_iter()
        .zip(&state.nodes)
        .map(|(report, node)| {
            let report = report?;
            Ok(FinalRow {
                strategy: kind,
                rep,
                node_id: node.node_id,
                role: node.role,
                test_auc: report.auc,
                test_loss: report.loss,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepOutcome {
        trajectories,
        finals,
        partition_hash: hash,
    })
}

fn load_dataset(config: &ExperimentConfig) -> Result<Option<Dataset>> {
    config.dataset_path.as_ref().map(data::load_dataset).transpose()
}

fn summarize(
    kinds: &[StrategyKind],
    n_nodes: usize,
    finals: &[FinalRow],
    reference: Option<&[FinalRow]>,
) -> Vec<SummaryRow> {
    let stats = |rows: &[FinalRow], kind: StrategyKind, node: usize| {
        let sel: Vec<&FinalRow> = rows
            .iter()
            .filter(|r| r.strategy == kind && r.node_id == node)
            .collect();
        let aucs: Vec<f64> = sel.iter().map(|r| r.test_auc).collect();
        let losses: Vec<f64> = sel.iter().map(|r| r.test_loss).collect();
        (sel.first().map(|r| r.role), mean_std(&aucs), mean_std(&losses).0)
    };
    let mut rows = Vec::new();
    for &kind in kinds {
        for node in 0..n_nodes {
            let (role, (mean_auc, std_auc), mean_loss) = stats(finals, kind, node);
            let Some(role) = role else { continue };
            let delta = reference.and_then(|r| {
                let (ref_role, (ref_auc, _), _) = stats(r, StrategyKind::FedAvg, node);
                ref_role.map(|_| percentage_delta(ref_auc, mean_auc))
            });
            rows.push(SummaryRow {
                strategy: kind,
                node_id: node,
                role,
                mean_auc,
                std_auc,
                mean_loss,
                delta_vs_fedavg_pct: delta,
            });
        }
    }
    rows
}

/// Runs every (strategy, repetition) pair on `threads` workers and collects
/// the results in (strategy, repetition) order.
fn run_many(config: &ExperimentConfig, kinds: &[StrategyKind], threads: usize) -> Result<ResultTable> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    let jobs: Vec<(StrategyKind, usize)> = kinds
        .iter()
        .flat_map(|&k| (0..config.reps).map(move |r| (k, r)))
        .collect();
    let outcomes = par::with_threads(threads, || {
        par::map(&jobs, |&(kind, rep)| run_rep(config, kind, rep, dataset.as_ref()))
    });

    let mut table = ResultTable::default();
    for (&(strategy, rep), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                table.trajectories.extend(o.trajectories);
                table.finals.extend(o.finals);
                table.partition_hashes.push(PartitionHash {
                    strategy,
                    rep,
                    hash: o.partition_hash,
                });
            }
            Err(e) => {
                log::error!("{strategy} rep {rep} failed: {e}");
                table.failures.push(RepFailure {
                    strategy,
                    rep,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(table)
}

/// Runs `config.strategy` for `config.reps` repetitions.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    run_experiment_with_threads(config, par::configured_threads())
}

pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: usize) -> Result<ResultTable> {
    let kinds = [config.strategy];
    let mut table = run_many(config, &kinds, threads)?;
    let reference = (config.strategy == StrategyKind::FedAvg).then(|| table.finals.clone());
    table.summary = summarize(&kinds, config.n_nodes, &table.finals, reference.as_deref());
    Ok(table)
}

/// Runs each strategy on identical data and reports per-node deltas against
/// FedAvg. FedAvg is run as the reference even when not requested, but only
/// requested strategies appear in the table.
pub fn compare_strategies(config: &ExperimentConfig, strategies: &[StrategyKind]) -> Result<ResultTable> {
    compare_strategies_with_threads(config, strategies, par::configured_threads())
}

pub fn compare_strategies_with_threads(
    config: &ExperimentConfig,
    strategies: &[StrategyKind],
    threads: usize,
) -> Result<ResultTable> {
    if strategies.is_empty() {
        return Err(Error::Config("no strategies to compare".into()));
    }
    let mut kinds: Vec<StrategyKind> = Vec::new();
    for &k in strategies {
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    let with_reference = !kinds.contains(&StrategyKind::FedAvg);
    let mut run_kinds = kinds.clone();
    if with_reference {
        run_kinds.insert(0, StrategyKind::FedAvg);
    }
    let mut table = run_many(config, &run_kinds, threads)?;
    let reference: Vec<FinalRow> = table
        .finals
        .iter()
        .filter(|r| r.strategy == StrategyKind::FedAvg)
        .cloned()
        .collect();
    table.summary = summarize(&kinds, config.n_nodes, &table.finals, Some(&reference));
    if with_reference {
        let keep = |s: StrategyKind| kinds.contains(&s);
        table.trajectories.retain(|r| keep(r.strategy));
        table.finals.retain(|r| keep(r.strategy));
        table.partition_hashes.retain(|r| keep(r.strategy));
        table.failures.retain(|r| keep(r.strategy) || r.strategy == StrategyKind::FedAvg);
    }
    Ok(table)
}
