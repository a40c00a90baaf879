use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{FederationConfig, TrainOptions};
use crate::metrics::AucAverage;
use crate::strategies::{PolicyConfig, StrategyConfig, StrategyKind, WeightBounds};

/// Flat experiment configuration. Every key can be set in the TOML config
/// file and overridden from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `SFD1` dataset file; when absent a synthetic dataset is generated per repetition.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_sep: f64,

    pub n_nodes: usize,
    pub target_sizes: Vec<f64>,
    pub dirichlet_alpha: f64,
    pub noise_sigma: f64,
    pub split_fractions: [f64; 3],

    pub strategy: StrategyKind,
    pub rounds: usize,
    pub reps: usize,
    pub base_seed: u64,

    /// Hidden layer widths of the local classifier (empty for a linear model).
    pub hidden_layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub auc_average: AucAverage,

    pub replay_capacity: usize,
    pub replay_batch: usize,
    pub warmup_rounds: usize,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub explore_width: f64,
    pub policy_hidden: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub policy_updates_per_round: usize,

    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let strategy = StrategyConfig::default();
        let train = TrainOptions::default();
        ExperimentConfig {
            dataset_path: None,
            n_samples: 3000,
            n_features: 32,
            n_classes: 4,
            class_sep: 4.0,
            n_nodes: 3,
            target_sizes: vec![0.62, 0.24, 0.14],
            dirichlet_alpha: 0.5,
            noise_sigma: 0.05,
            split_fractions: [0.7, 0.1, 0.2],
            strategy: StrategyKind::Aswm,
            rounds: 30,
            reps: 10,
            base_seed: 0,
            hidden_layers: vec![16],
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            c_min: 0.05,
            c_max: 1.0,
            auc_average: AucAverage::Macro,
            replay_capacity: strategy.replay_capacity,
            replay_batch: strategy.replay_batch,
            warmup_rounds: strategy.warmup_rounds,
            epsilon: strategy.epsilon,
            epsilon_decay: strategy.epsilon_decay,
            explore_width: strategy.explore_width,
            policy_hidden: strategy.policy.hidden,
            lr_actor: strategy.policy.lr_actor,
            lr_critic: strategy.policy.lr_critic,
            policy_updates_per_round: strategy.policy_updates_per_round,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets `key` from its textual form. The value is read as a TOML value
    /// (`0.1`, `[0.5, 0.5]`, `true`), falling back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let next: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}: {}", e.message())))?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.reps == 0 || self.rounds == 0 {
            return fail("reps and rounds must be >= 1".into());
        }
        if self.n_nodes < 2 {
            return fail("need at least two nodes".into());
        }
        if self.target_sizes.len() != self.n_nodes {
            return fail(format!(
                "{} target sizes for {} nodes",
                self.target_sizes.len(),
                self.n_nodes
            ));
        }
        let sum: f64 = self.target_sizes.iter().sum();
        if self.target_sizes.iter().any(|&s| !(s > 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return fail("target sizes must be positive and sum to 1".into());
        }
        let split_sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| !(f >= 0.0)) || (split_sum - 1.0).abs() > 1e-9 {
            return fail("split fractions must be non-negative and sum to 1".into());
        }
        if !(self.dirichlet_alpha > 0.0) {
            return fail("dirichlet_alpha must be > 0".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr >= 0.0) {
            return fail("epochs and batch_size must be >= 1 and lr >= 0".into());
        }
        if self.hidden_layers.contains(&0) || self.policy_hidden == 0 {
            return fail("layer widths must be >= 1".into());
        }
        if self.replay_capacity == 0 || self.replay_batch == 0 {
            return fail("replay capacity and batch must be >= 1".into());
        }
        WeightBounds::new(self.c_min, self.c_max)?;
        Ok(())
    }

    /// Index of the largest target share (first on ties).
    pub fn leader_index(&self) -> usize {
        self.target_sizes
            .iter()
            .enumerate()
            .fold(0, |best, (i, &s)| if s > self.target_sizes[best] { i } else { best })
    }

    pub fn bounds(&self) -> Result<WeightBounds> {
        WeightBounds::new(self.c_min, self.c_max)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }

    pub fn federation_config(&self, seed: u64) -> Result<FederationConfig> {
        Ok(FederationConfig {
            train: self.train_options(),
            bounds: self.bounds()?,
            total_rounds: self.rounds,
            auc_average: self.auc_average,
            seed,
        })
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        StrategyConfig {
            replay_capacity: self.replay_capacity,
            replay_batch: self.replay_batch,
            warmup_rounds: self.warmup_rounds,
            epsilon: self.epsilon,
            epsilon_decay: self.epsilon_decay,
            explore_width: self.explore_width,
            policy_updates_per_round: self.policy_updates_per_round,
            policy: PolicyConfig {
                hidden: self.policy_hidden,
                lr_actor: self.lr_actor,
                lr_critic: self.lr_critic,
            },
        }
    }

    /// Layer shapes of the local classifier for `d` inputs and `k` classes.
    pub fn layer_shapes(&self, d: usize, k: usize) -> Vec<(usize, usize)> {
        let widths: Vec<usize> = std::iter::once(d)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(k))
            .collect();
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}
