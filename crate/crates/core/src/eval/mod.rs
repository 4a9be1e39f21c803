//! On-policy evaluation, off-policy estimators, significance tests and
//! the summaries built on top of them.

mod ope;
mod stats;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Decision, PaRequest};
use crate::env::{EnvConfig, RetrievalEnv};
use crate::error::{Error, Result};
use crate::trainers::{PolicyArtifact, PolicyKind};

pub use ope::{fit_fqe, fqe_estimate, greedy_next_actions, wis_estimate, wis_from_weights, FqeConfig, OpeReport};
pub use stats::{bootstrap_ci, paired_t_test, SignificanceReport};

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub request_id: u64,
    pub cpt: String,
    pub decision: Decision,
    pub correct: bool,
    pub steps: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub kind: PolicyKind,
    pub label: String,
    pub step_cost: f64,
    pub accuracy: f64,
    pub mean_return: f64,
    pub mean_steps: f64,
    pub per_procedure: BTreeMap<String, f64>,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn correct_indicators(&self) -> Vec<bool> {
        self.episodes.iter().map(|e| e.correct).collect()
    }

    /// `(2·accuracy − 1) − λ·(steps − 1)`.
    pub fn identity_return(&self) -> f64 {
        identity_return(self.accuracy, self.mean_steps, self.step_cost)
    }
}

/// Mean return implied by accuracy and mean steps when every episode ends
/// with a ±1 decision reward and pays `step_cost` per retrieval.
pub fn identity_return(accuracy: f64, mean_steps: f64, step_cost: f64) -> f64 {
    (2.0 * accuracy - 1.0) - step_cost * (mean_steps - 1.0)
}

/// Roll `policy` out once per request. Learned policies act greedily;
/// stochastic baselines draw from a per-episode stream of `seed`.
pub fn evaluate_policy(
    policy: &PolicyArtifact,
    corpus: &Corpus,
    requests: &[PaRequest],
    env_config: EnvConfig,
    seed: u64,
) -> Result<EvalReport> {
    if requests.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(hash) = &policy.corpus_hash {
        if *hash != corpus.hash() {
            return Err(Error::InvalidConfig(format!(
                "{} was trained on a different corpus",
                policy.label
            )));
        }
    }
    let env = RetrievalEnv::new(corpus, env_config);
    let mut episodes = Vec::with_capacity(requests.len());
    for (i, request) in requests.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut state = env.reset(request)?;
        let (mut steps, mut total) = (0, 0.0);
        let decision = loop {
            let action = policy.act(&env, &state, &mut rng)?;
            let out = env.step(&state, action, request)?;
            steps += 1;
            total += out.reward;
            if let Some(d) = out.decision {
                break d;
            }
            state = out.next_state;
        };
        episodes.push(EpisodeRecord {
            request_id: request.request_id,
            cpt: request.cpt.clone(),
            decision,
            correct: decision == request.ground_truth,
            steps,
            episode_return: total,
        });
    }
    let n = episodes.len() as f64;
    let mut by_cpt: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for e in &episodes {
        let entry = by_cpt.entry(e.cpt.clone()).or_default();
        entry.0 += usize::from(e.correct);
        entry.1 += 1;
    }
    Ok(EvalReport {
        kind: policy.kind,
        label: policy.label.clone(),
        step_cost: env_config.step_cost,
        accuracy: episodes.iter().filter(|e| e.correct).count() as f64 / n,
        mean_return: episodes.iter().map(|e| e.episode_return).sum::<f64>() / n,
        mean_steps: episodes.iter().map(|e| e.steps as f64).sum::<f64>() / n,
        per_procedure: by_cpt
            .into_iter()
            .map(|(cpt, (c, t))| (cpt, c as f64 / t as f64))
            .collect(),
        episodes,
    })
}

/// Indices of the points not dominated on (lower steps, higher accuracy).
/// Identical points are kept together.
pub fn pareto_frontier(points: &[(f64, f64)]) -> Vec<usize> {
    let dominates = |a: (f64, f64), b: (f64, f64)| {
        a.0 <= b.0 && a.1 >= b.1 && (a.0 < b.0 || a.1 > b.1)
    };
    (0..points.len())
        .filter(|&i| !points.iter().any(|&p| dominates(p, points[i])))
        .collect()
}

/// Number of pairs that `reference` orders strictly but `estimate` orders
/// the other way or ties. Pairs tied in `reference` are ignored. One
/// adjacent swap of a strict ranking gives 1.
pub fn rank_discordance(reference: &[f64], estimate: &[f64]) -> Result<usize> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let mut count = 0;
    for i in 0..reference.len() {
        for j in i + 1..reference.len() {
            let r = reference[i].total_cmp(&reference[j]);
            if r != std::cmp::Ordering::Equal && estimate[i].total_cmp(&estimate[j]) != r {
                count += 1;
            }
        }
    }
    Ok(count)
}

/// Accuracy per (policy, procedure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureTable {
    pub procedures: Vec<String>,
    pub policies: Vec<String>,
    /// `accuracy[p][c]` for policy `p` and procedure `c`.
    pub accuracy: Vec<Vec<f64>>,
    /// Procedures on which every learned policy is below 100%.
    pub hard: Vec<String>,
}

pub fn per_procedure_report(reports: &[EvalReport]) -> Result<ProcedureTable> {
    let first = reports.first().ok_or(Error::EmptyInput)?;
    let ids: Vec<u64> = first.episodes.iter().map(|e| e.request_id).collect();
    for r in reports {
        if r.episodes.iter().map(|e| e.request_id).ne(ids.iter().copied()) {
            return Err(Error::InvalidConfig(format!(
                "{} was evaluated on a different test set",
                r.label
            )));
        }
    }
    let procedures: Vec<String> = first.per_procedure.keys().cloned().collect();
    let accuracy: Vec<Vec<f64>> = reports
        .iter()
        .map(|r| procedures.iter().map(|c| r.per_procedure[c]).collect())
        .collect();
    let learned: Vec<usize> = reports
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r.kind, PolicyKind::Bc | PolicyKind::Cql | PolicyKind::Iql | PolicyKind::Dpo))
        .map(|(i, _)| i)
        .collect();
    let hard = procedures
        .iter()
        .enumerate()
        .filter(|(c, _)| !learned.is_empty() && learned.iter().all(|&p| accuracy[p][*c] < 1.0))
        .map(|(_, cpt)| cpt.clone())
        .collect();
    Ok(ProcedureTable {
        procedures,
        policies: reports.iter().map(|r| r.label.clone()).collect(),
        accuracy,
        hard,
    })
}
