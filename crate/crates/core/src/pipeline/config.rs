use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{CorpusConfig, RequestConfig};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::FqeConfig;
use crate::offline::{default_mixture, MixtureEntry};
use crate::trainers::{BcConfig, CqlConfig, DpoConfig, IqlConfig};

/// Everything a run needs. The defaults reproduce the reference protocol:
/// λ = 0.1, K = 10, H = 20, 2000 training and 200 test episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data collection, stochastic evaluation rollouts and the
    /// bootstrap. Each trainer carries its own seed.
    pub seed: u64,
    pub corpus_seed: u64,
    pub train_request_seed: u64,
    pub test_request_seed: u64,
    pub n_train_requests: usize,
    pub n_test_requests: usize,
    pub n_episodes: usize,
    pub env: EnvConfig,
    pub corpus: CorpusConfig,
    /// Optional JSONL file of `{id, embedding}` rows replacing chunk
    /// embeddings after generation.
    pub embedding_overrides: Option<String>,
    pub requests: RequestConfig,
    pub mixture: Vec<MixtureEntry>,
    pub store_observations: bool,
    pub bc: BcConfig,
    pub cql: CqlConfig,
    pub iql: IqlConfig,
    pub dpo: DpoConfig,
    pub fqe: FqeConfig,
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Step costs for the CQL sweep; each gets its own dataset.
    pub lambda_grid: Vec<f64>,
    /// `(β, epochs)` points for the DPO sweep.
    pub beta_grid: Vec<(f64, usize)>,
    /// Conservative weights for the CQL α sweep.
    pub alpha_grid: Vec<f64>,
    /// Trainer seeds per grid point; rows report the mean over seeds.
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![0.05, 0.1, 0.2],
            beta_grid: vec![(0.5, 500), (1.0, 1000), (3.0, 2000)],
            alpha_grid: vec![0.1, 0.5, 1.0],
            seeds: vec![0],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            corpus_seed: 7,
            train_request_seed: 1,
            test_request_seed: 2,
            n_train_requests: 2000,
            n_test_requests: 200,
            n_episodes: 2000,
            env: EnvConfig::default(),
            corpus: CorpusConfig::default(),
            embedding_overrides: None,
            requests: RequestConfig::default(),
            mixture: default_mixture(),
            store_observations: false,
            bc: BcConfig::default(),
            cql: CqlConfig::default(),
            iql: IqlConfig::default(),
            dpo: DpoConfig::default(),
            fqe: FqeConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

/// Test request ids start here so they never collide with training ids.
pub const TEST_ID_OFFSET: u64 = 1_000_000;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.env.k == 0 || self.env.horizon < 2 {
            return bad("need k >= 1 and horizon >= 2");
        }
        if !(self.env.step_cost >= 0.0 && self.env.step_cost.is_finite()) {
            return bad("step_cost must be a non-negative number");
        }
        if self.n_train_requests == 0 || self.n_test_requests == 0 || self.n_episodes == 0 {
            return bad("request and episode counts must be positive");
        }
        if self.ablation.seeds.is_empty() {
            return bad("ablation needs at least one seed");
        }
        self.corpus.validate()
    }

    /// Apply `key=value`, where `key` is a dotted path into the JSON form
    /// and `value` is parsed as JSON, falling back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got `{assignment}`")))?;
        let mut root = serde_json::to_value(&*self)?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = match slot {
                Value::Object(map) => map.get_mut(part),
                Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
        let updated: Self = serde_json::from_value(root)
            .map_err(|e| Error::InvalidConfig(format!("bad value for `{key}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
