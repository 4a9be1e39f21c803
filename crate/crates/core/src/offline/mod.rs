//! Behavior policies, episode collection and the logged offline dataset.
//!
//! The dataset file is JSON Lines: a header line, then one transition per
//! line in canonical (episode, step) order. Observations are optional in the
//! file because every one of them can be rebuilt from the request and the
//! chunk ids retrieved so far; loading always replays each episode through
//! the environment and re-derives rewards and propensities.

mod policy;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Decision, PaRequest};
use crate::env::{EnvConfig, RetrievalEnv};
use crate::error::{Error, Result};

pub use policy::{default_mixture, BehaviorPolicy, MixtureEntry, DEFAULT_HEURISTIC_THRESHOLD};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
    pub behavior_propensity: f64,
    pub episode_id: u64,
    pub step_index: usize,
    pub request_id: u64,
    pub retrieved_ids_so_far: Vec<usize>,
    /// Legal actions in the next state; empty when `done`.
    pub next_legal: Vec<bool>,
    /// Legal actions in this state.
    pub legal: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub episode_id: u64,
    pub request_id: u64,
    pub cpt: String,
    /// Index of the logging policy in the dataset's mixture.
    pub behavior: usize,
    pub transitions: Vec<Transition>,
    pub total_return: f64,
    pub steps_total: usize,
    pub decision: Decision,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub seed: u64,
    /// λ baked into every non-terminal reward.
    pub step_cost: f64,
    pub env: EnvConfig,
    pub mixture: Vec<MixtureEntry>,
    pub corpus_hash: String,
    pub episodes: usize,
    pub transitions: usize,
    pub observations_stored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub seed: u64,
    pub n_episodes: usize,
    pub mixture: Vec<MixtureEntry>,
    pub env: EnvConfig,
    /// Write observation vectors into the dataset file.
    pub store_observations: bool,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_episodes: 2000,
            mixture: default_mixture(),
            env: EnvConfig::default(),
            store_observations: false,
        }
    }
}

/// Request order that interleaves procedures in proportion to their
/// counts, so any prefix is stratified.
pub fn stratified_order(requests: &[PaRequest]) -> Vec<usize> {
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        match groups.iter_mut().find(|(cpt, _)| *cpt == r.cpt) {
            Some((_, g)) => g.push(i),
            None => groups.push((&r.cpt, vec![i])),
        }
    }
    let mut keyed: Vec<(f64, usize, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, (_, g))| {
            g.iter()
                .enumerate()
                .map(move |(rank, &i)| ((rank as f64 + 0.5) / g.len() as f64, gi, i))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Roll out one episode. With `logged`, the given actions are replayed and
/// checked instead of sampled.
fn rollout(
    env: &RetrievalEnv,
    request: &PaRequest,
    policy: &BehaviorPolicy,
    episode_id: u64,
    behavior: usize,
    rng: &mut ChaCha8Rng,
    logged: Option<&[LoggedStep]>,
) -> Result<Episode> {
    let mut state = env.reset(request)?;
    let mut transitions = Vec::new();
    loop {
        let step_index = transitions.len();
        let legal = env.legal_mask(&state);
        let (action, propensity) = match logged {
            None => policy.act(env, &state, rng)?,
            Some(steps) => {
                let s = steps.get(step_index).ok_or_else(|| {
                    Error::Format(format!("episode {episode_id} ends without a terminal step"))
                })?;
                if s.retrieved_ids_so_far != state.retrieved_ids {
                    return Err(Error::Format(format!(
                        "episode {episode_id} step {step_index}: retrieved ids do not replay"
                    )));
                }
                let p = policy.action_probs(env, &state)?;
                let expected = p.get(s.action).copied().unwrap_or(0.0);
                if expected != s.behavior_propensity {
                    return Err(Error::Format(format!(
                        "episode {episode_id} step {step_index}: logged propensity {} but policy gives {expected}",
                        s.behavior_propensity
                    )));
                }
                (s.action, s.behavior_propensity)
            }
        };
        let out = env.step(&state, action, request)?;
        transitions.push(Transition {
            observation: state.observation(),
            action,
            reward: out.reward,
            next_observation: out.next_state.observation(),
            done: out.done,
            behavior_propensity: propensity,
            episode_id,
            step_index,
            request_id: request.request_id,
            retrieved_ids_so_far: state.retrieved_ids.clone(),
            next_legal: if out.done {
                Vec::new()
            } else {
                env.legal_mask(&out.next_state)
            },
            legal,
        });
        if let Some(decision) = out.decision {
            let total_return = transitions.iter().map(|t| t.reward).sum();
            return Ok(Episode {
                episode_id,
                request_id: request.request_id,
                cpt: request.cpt.clone(),
                behavior,
                steps_total: transitions.len(),
                correct: decision == request.ground_truth,
                transitions,
                total_return,
                decision,
            });
        }
        state = out.next_state;
    }
}

/// Collect `n_episodes` episodes over `requests`, visiting them in
/// stratified order and cycling when there are fewer requests than
/// episodes. Each episode draws its policy from the mixture with its own
/// random stream.
pub fn collect_dataset(corpus: &Corpus, requests: &[PaRequest], config: &CollectConfig) -> Result<Dataset> {
    if requests.is_empty() || config.n_episodes == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.mixture.is_empty() {
        return Err(Error::InvalidConfig("behavior mixture is empty".into()));
    }
    let weights = WeightedIndex::new(config.mixture.iter().map(|m| m.weight))
        .map_err(|e| Error::InvalidConfig(format!("mixture weights: {e}")))?;
    let env = RetrievalEnv::new(corpus, config.env);
    let order = stratified_order(requests);
    let episodes = (0..config.n_episodes)
        .map(|i| {
            let mut rng = episode_rng(config.seed, i as u64);
            let behavior = weights.sample(&mut rng);
            let request = &requests[order[i % order.len()]];
            rollout(
                &env,
                request,
                &config.mixture[behavior].policy,
                i as u64,
                behavior,
                &mut rng,
                None,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_VERSION,
            seed: config.seed,
            step_cost: config.env.step_cost,
            env: config.env,
            mixture: config.mixture.clone(),
            corpus_hash: corpus.hash(),
            episodes: episodes.len(),
            transitions: episodes.iter().map(|e| e.transitions.len()).sum(),
            observations_stored: config.store_observations,
        },
        episodes,
    })
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LoggedStep {
    episode_id: u64,
    step_index: usize,
    request_id: u64,
    behavior: usize,
    action: usize,
    reward: f64,
    done: bool,
    behavior_propensity: f64,
    retrieved_ids_so_far: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next_observation: Option<Vec<f64>>,
}

impl Dataset {
    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flat_map(|e| e.transitions.iter())
    }

    pub fn num_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions.len()).sum()
    }

    /// Fraction of episodes whose length lies in `range`.
    pub fn fraction_steps_in(&self, range: std::ops::RangeInclusive<usize>) -> f64 {
        let n = self
            .episodes
            .iter()
            .filter(|e| range.contains(&e.steps_total))
            .count();
        n as f64 / self.episodes.len() as f64
    }

    pub fn mean_steps(&self) -> f64 {
        self.episodes.iter().map(|e| e.steps_total as f64).sum::<f64>() / self.episodes.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n").map_err(io)?;
        let store = self.header.observations_stored;
        for e in &self.episodes {
            for t in &e.transitions {
                let line = LoggedStep {
                    episode_id: t.episode_id,
                    step_index: t.step_index,
                    request_id: t.request_id,
                    behavior: e.behavior,
                    action: t.action,
                    reward: t.reward,
                    done: t.done,
                    behavior_propensity: t.behavior_propensity,
                    retrieved_ids_so_far: t.retrieved_ids_so_far.clone(),
                    decision: t.done.then_some(e.decision),
                    observation: store.then(|| t.observation.clone()),
                    next_observation: store.then(|| t.next_observation.clone()),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n").map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Load and validate a dataset file by replaying every episode: the
    /// corpus hash, rewards, terminal decisions and propensities must all
    /// match. With `verify_observations`, stored observation vectors must
    /// equal the replayed ones bit for bit.
    pub fn load(
        path: &Path,
        corpus: &Corpus,
        requests: &[PaRequest],
        verify_observations: bool,
    ) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header: DatasetHeader = match lines.next() {
            Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?)?,
            None => return Err(Error::EmptyDataset),
        };
        if header.format_version != DATASET_VERSION {
            return Err(Error::Format(format!(
                "unsupported dataset version {}",
                header.format_version
            )));
        }
        if header.corpus_hash != corpus.hash() {
            return Err(Error::Format(
                "dataset was collected on a different corpus".into(),
            ));
        }
        let mut grouped: BTreeMap<u64, Vec<LoggedStep>> = BTreeMap::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let step: LoggedStep = serde_json::from_str(&line)?;
            grouped.entry(step.episode_id).or_default().push(step);
        }
        let by_id: HashMap<u64, &PaRequest> = requests.iter().map(|r| (r.request_id, r)).collect();
        let env = RetrievalEnv::new(corpus, header.env);
        let mut rng = episode_rng(0, 0);
        let mut episodes = Vec::with_capacity(grouped.len());
        for (id, steps) in grouped {
            let first = &steps[0];
            let request = by_id.get(&first.request_id).ok_or_else(|| {
                Error::Format(format!("episode {id}: unknown request {}", first.request_id))
            })?;
            let policy = &header
                .mixture
                .get(first.behavior)
                .ok_or_else(|| Error::Format(format!("episode {id}: unknown behavior index")))?
                .policy;
            let ep = rollout(&env, request, policy, id, first.behavior, &mut rng, Some(&steps))?;
            if ep.transitions.len() != steps.len() {
                return Err(Error::Format(format!(
                    "episode {id}: {} logged steps but replay ends after {}",
                    steps.len(),
                    ep.transitions.len()
                )));
            }
            for (t, s) in ep.transitions.iter().zip(&steps) {
                if t.reward != s.reward || t.done != s.done || t.step_index != s.step_index {
                    return Err(Error::Format(format!(
                        "episode {id} step {}: logged reward/done disagree with replay",
                        s.step_index
                    )));
                }
                if verify_observations {
                    let stored = (s.observation.as_ref(), s.next_observation.as_ref());
                    match stored {
                        (Some(o), Some(n)) if *o == t.observation && *n == t.next_observation => {}
                        (Some(_), Some(_)) => {
                            return Err(Error::Format(format!(
                                "episode {id} step {}: stored observation differs from replay",
                                s.step_index
                            )))
                        }
                        _ => {
                            return Err(Error::Format(
                                "observation check requested but observations are not stored".into(),
                            ))
                        }
                    }
                }
            }
            if steps.last().and_then(|s| s.decision) != Some(ep.decision) {
                return Err(Error::Format(format!("episode {id}: terminal decision differs")));
            }
            episodes.push(ep);
        }
        let ds = Dataset { header, episodes };
        if ds.episodes.len() != ds.header.episodes || ds.num_transitions() != ds.header.transitions {
            return Err(Error::Format("header counts disagree with the body".into()));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, generate_requests, CorpusConfig, RequestConfig, Split};

    fn setup(n: usize) -> (Corpus, Vec<PaRequest>) {
        let c = build_corpus(7, &CorpusConfig::default()).unwrap();
        let r = generate_requests(&c, 1, n, &RequestConfig::default(), &Split::Train, 0).unwrap();
        (c, r)
    }

    fn only(policy: BehaviorPolicy, n: usize) -> CollectConfig {
        CollectConfig {
            n_episodes: n,
            mixture: vec![MixtureEntry { policy, weight: 1.0 }],
            ..CollectConfig::default()
        }
    }

    #[test]
    fn fixed_k_lengths() {
        let (c, r) = setup(40);
        for (k, steps) in [(3, 4), (5, 6)] {
            let ds = collect_dataset(&c, &r, &only(BehaviorPolicy::FixedK { k }, 40)).unwrap();
            assert!(ds.episodes.iter().all(|e| e.steps_total == steps
                && e.transitions.iter().all(|t| t.behavior_propensity == 1.0)));
        }
    }

    #[test]
    fn rewards_and_returns_follow_step_cost() {
        let (c, r) = setup(50);
        let cfg = CollectConfig {
            n_episodes: 100,
            env: EnvConfig {
                step_cost: 0.2,
                ..EnvConfig::default()
            },
            ..CollectConfig::default()
        };
        let ds = collect_dataset(&c, &r, &cfg).unwrap();
        for e in &ds.episodes {
            for t in &e.transitions {
                if t.done {
                    assert!(t.reward == 1.0 || t.reward == -1.0);
                } else {
                    assert_eq!(t.reward, -0.2);
                }
            }
            let terminal = e.transitions.last().unwrap().reward;
            let expected = terminal - 0.2 * (e.steps_total - 1) as f64;
            assert!((e.total_return - expected).abs() < 1e-12);
            assert!((1..=20).contains(&e.steps_total));
            assert_eq!(e.correct, terminal == 1.0);
        }
    }

    #[test]
    fn stratified_order_interleaves_procedures() {
        let (_, r) = setup(100);
        let order = stratified_order(&r);
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        let first: std::collections::BTreeSet<&str> =
            order[..20].iter().map(|&i| r[i].cpt.as_str()).collect();
        assert_eq!(first.len(), 10);
    }

    #[test]
    fn save_load_round_trip_with_observations() {
        let (c, r) = setup(30);
        let cfg = CollectConfig {
            n_episodes: 30,
            store_observations: true,
            ..CollectConfig::default()
        };
        let ds = collect_dataset(&c, &r, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.save(&path).unwrap();
        let back = Dataset::load(&path, &c, &r, true).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn load_rejects_tampered_propensity() {
        let (c, r) = setup(20);
        let cfg = CollectConfig {
            n_episodes: 20,
            ..CollectConfig::default()
        };
        let ds = collect_dataset(&c, &r, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        ds.save(&path).unwrap();
        assert!(Dataset::load(&path, &c, &r, true).is_err());
        assert_eq!(Dataset::load(&path, &c, &r, false).unwrap(), ds);
        let text = std::fs::read_to_string(&path).unwrap();
        let tampered = text.replacen("\"behavior_propensity\":1.0", "\"behavior_propensity\":0.5", 1);
        assert_ne!(tampered, text);
        std::fs::write(&path, tampered).unwrap();
        let err = Dataset::load(&path, &c, &r, false).unwrap_err();
        assert!(err.to_string().contains("propensity"));
    }

    #[test]
    fn empty_inputs_rejected() {
        let (c, r) = setup(10);
        assert!(collect_dataset(&c, &[], &CollectConfig::default()).is_err());
        let cfg = CollectConfig {
            mixture: vec![],
            ..CollectConfig::default()
        };
        assert!(collect_dataset(&c, &r, &cfg).is_err());
    }
}
