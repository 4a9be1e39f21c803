//! Offline learners (BC, CQL, IQL, DPO) and the deployable policy artifact.
//!
//! One epoch is `steps_per_epoch` gradient steps (default 1), each on a
//! batch drawn uniformly with replacement from the replay buffer.

mod bc;
mod cql;
mod dpo;
mod iql;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, RetrievalEnv, OBS_DIM};
use crate::error::{Error, Result};
use crate::neural::{batch_matrix, Mlp};
use crate::offline::{BehaviorPolicy, Dataset};

pub use bc::{bc_loss, train_bc, BcConfig};
pub use cql::{cql_loss, train_cql, CqlConfig, CqlLoss};
pub use dpo::{
    build_preference_pairs, dpo_loss, dpo_trajectory_loss, train_dpo, DpoConfig, DpoLoss,
    PairingMode, PreferencePair,
};
pub use iql::{
    advantage_weight, iql_losses, iql_policy_loss, iql_q_loss, iql_value_loss, train_iql, IqlConfig,
    IqlLosses,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Bc,
    Cql,
    Iql,
    Dpo,
    Fixedk,
    Heuristic,
    Random,
}

/// Scalars logged for one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub epoch: usize,
    pub values: BTreeMap<String, f64>,
}

impl EpochMetrics {
    pub(crate) fn new(phase: &str, epoch: usize, values: &[(&str, f64)]) -> Result<Self> {
        if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "{phase} epoch {epoch}: {name} = {v}"
            )));
        }
        Ok(Self {
            phase: phase.into(),
            epoch,
            values: values.iter().map(|(k, v)| ((*k).into(), *v)).collect(),
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }
}

/// A policy ready for rollout: a trained network with a masked argmax, or
/// one of the rule-based baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub kind: PolicyKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Mlp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BehaviorPolicy>,
    /// λ of the dataset the policy was trained on.
    pub step_cost: Option<f64>,
    pub corpus_hash: Option<String>,
    pub config: serde_json::Value,
    pub metrics: Vec<EpochMetrics>,
}

/// Index of the largest legal score; ties go to the lowest index.
pub fn masked_argmax(scores: &[f64], legal: &[bool]) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (a, (&s, &ok)) in scores.iter().zip(legal).enumerate() {
        if ok && best.is_none_or(|b| s > scores[b]) {
            best = Some(a);
        }
    }
    best.ok_or(Error::EmptyInput)
}

impl PolicyArtifact {
    pub fn baseline(policy: BehaviorPolicy) -> Self {
        let kind = match &policy {
            BehaviorPolicy::FixedK { .. } => PolicyKind::Fixedk,
            BehaviorPolicy::Heuristic { .. } => PolicyKind::Heuristic,
            BehaviorPolicy::Random | BehaviorPolicy::EpsGreedy { .. } => PolicyKind::Random,
        };
        Self {
            kind,
            label: policy.to_string(),
            network: None,
            baseline: Some(policy),
            step_cost: None,
            corpus_hash: None,
            config: serde_json::Value::Null,
            metrics: Vec::new(),
        }
    }

    fn learned(
        kind: PolicyKind,
        label: &str,
        network: Mlp,
        dataset: &Dataset,
        config: &impl Serialize,
        metrics: Vec<EpochMetrics>,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            label: label.into(),
            network: Some(network),
            baseline: None,
            step_cost: Some(dataset.header.step_cost),
            corpus_hash: Some(dataset.header.corpus_hash.clone()),
            config: serde_json::to_value(config)?,
            metrics,
        })
    }

    pub fn is_learned(&self) -> bool {
        self.network.is_some()
    }

    /// Probability of each action; a one-hot on the greedy action for
    /// learned and deterministic policies.
    pub fn action_probs(&self, env: &RetrievalEnv, state: &EnvState) -> Result<Vec<f64>> {
        match (&self.network, &self.baseline) {
            (Some(net), _) => {
                let legal = env.legal_mask(state);
                let a = masked_argmax(&net.forward_one(&state.observation())?, &legal)?;
                let mut p = vec![0.0; legal.len()];
                p[a] = 1.0;
                Ok(p)
            }
            (None, Some(b)) => b.action_probs(env, state),
            (None, None) => Err(Error::InvalidConfig(format!(
                "policy {} has neither network nor baseline",
                self.label
            ))),
        }
    }

    /// Greedy action for learned policies; stochastic baselines sample.
    pub fn act<R: Rng>(&self, env: &RetrievalEnv, state: &EnvState, rng: &mut R) -> Result<usize> {
        match (&self.network, &self.baseline) {
            (None, Some(b)) => Ok(b.act(env, state, rng)?.0),
            _ => {
                let p = self.action_probs(env, state)?;
                masked_argmax(&p, &env.legal_mask(state))
            }
        }
    }

    /// Greedy legal actions of a learned policy on a batch of observations.
    pub fn greedy_actions(&self, obs: ArrayView2<f64>, legal: &[Vec<bool>]) -> Result<Vec<usize>> {
        let net = self.network.as_ref().ok_or_else(|| {
            Error::InvalidConfig(format!("{} has no network", self.label))
        })?;
        let scores = net.forward(obs)?;
        scores
            .rows()
            .into_iter()
            .zip(legal)
            .map(|(row, mask)| masked_argmax(row.as_slice().expect("row-major output"), mask))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Flattened transitions with observations stacked into matrices.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_legal: Vec<Vec<bool>>,
    /// Index of the first transition of each episode.
    pub episode_starts: Vec<usize>,
}

/// A gathered minibatch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub next_legal: Vec<Vec<bool>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

impl ReplayBuffer {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let ts: Vec<_> = ds.transitions().collect();
        if ts.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut episode_starts = Vec::with_capacity(ds.episodes.len());
        let mut at = 0;
        for e in &ds.episodes {
            episode_starts.push(at);
            at += e.transitions.len();
        }
        Ok(Self {
            obs: batch_matrix(ts.iter().map(|t| t.observation.as_slice()), OBS_DIM)?,
            next_obs: batch_matrix(ts.iter().map(|t| t.next_observation.as_slice()), OBS_DIM)?,
            actions: ts.iter().map(|t| t.action).collect(),
            rewards: ts.iter().map(|t| t.reward).collect(),
            dones: ts.iter().map(|t| t.done).collect(),
            next_legal: ts.iter().map(|t| t.next_legal.clone()).collect(),
            episode_starts,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        use ndarray::Axis;
        Batch {
            obs: self.obs.select(Axis(0), idx),
            next_obs: self.next_obs.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
            next_legal: idx.iter().map(|&i| self.next_legal[i].clone()).collect(),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, batch_size: usize) -> Batch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.gen_range(0..self.len())).collect();
        self.gather(&idx)
    }
}

/// Scale a per-row output gradient into a `(batch, out)` matrix.
fn output_grad(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |(i, j)| f(i, j))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masked_argmax_skips_illegal_and_breaks_ties_low() {
        assert_eq!(masked_argmax(&[5.0, 1.0, 3.0], &[false, true, true]).unwrap(), 2);
        assert_eq!(masked_argmax(&[2.0, 2.0], &[true, true]).unwrap(), 0);
        assert!(masked_argmax(&[1.0], &[false]).is_err());
    }

    #[test]
    fn non_finite_metric_is_divergence() {
        let e = EpochMetrics::new("cql", 3, &[("td", f64::NAN)]).unwrap_err();
        assert!(e.to_string().contains("divergence detected"));
    }
}
