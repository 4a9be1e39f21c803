//! The finite-horizon retrieval MDP.
//!
//! State: request embedding concatenated with the mean of the retrieved
//! chunk embeddings (768-d). Actions `0..K` retrieve the corresponding
//! candidate from the top-K unretrieved chunks; action `K` stops and asks the
//! oracle for a decision. Every retrieval costs `step_cost`; stopping pays +1
//! for a correct decision and −1 otherwise.
//!
//! Steps accounting: an episode that retrieves `n` chunks takes `n + 1`
//! actions. At `actions_taken == horizon - 1` only stop is legal, so an
//! episode never exceeds `horizon` actions and always ends with an oracle
//! decision.

use serde::{Deserialize, Serialize};

use crate::corpus::{oracle_decide, Corpus, Decision, PaRequest};
use crate::embed::{mean_pool, EmbeddingVector, EMBED_DIM};
use crate::error::{Error, Result};

pub const OBS_DIM: usize = 2 * EMBED_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Candidate list size; the stop action is index `k`.
    pub k: usize,
    /// Maximum number of actions per episode.
    pub horizon: usize,
    /// Cost of each retrieval (λ).
    pub step_cost: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            k: 10,
            horizon: 20,
            step_cost: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn num_actions(&self) -> usize {
        self.k + 1
    }

    pub fn stop_action(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub request_embedding: EmbeddingVector,
    pub history_mean: EmbeddingVector,
    pub retrieved_ids: Vec<usize>,
    pub actions_taken: usize,
    pub candidates: Vec<usize>,
    ranking: Vec<usize>,
}

impl EnvState {
    /// `concat(request_embedding, history_mean)`.
    pub fn observation(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(self.request_embedding.as_slice());
        v.extend_from_slice(self.history_mean.as_slice());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub decision: Option<Decision>,
    pub next_state: EnvState,
}

/// Environment over an immutable corpus. Cheap to construct; holds no
/// per-episode state.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalEnv<'a> {
    corpus: &'a Corpus,
    config: EnvConfig,
}

impl<'a> RetrievalEnv<'a> {
    pub fn new(corpus: &'a Corpus, config: EnvConfig) -> Self {
        Self { corpus, config }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn corpus(&self) -> &'a Corpus {
        self.corpus
    }

    pub fn reset(&self, request: &PaRequest) -> Result<EnvState> {
        let request_embedding = request.embedding(self.corpus)?;
        let ranking = self.corpus.ranked_ids(&request_embedding);
        let mut state = EnvState {
            request_embedding,
            history_mean: EmbeddingVector::zeros(),
            retrieved_ids: Vec::new(),
            actions_taken: 0,
            candidates: Vec::new(),
            ranking,
        };
        self.refresh_candidates(&mut state);
        Ok(state)
    }

    /// Rebuild a state from a request and the ids retrieved so far, in order.
    pub fn replay(&self, request: &PaRequest, retrieved: &[usize]) -> Result<EnvState> {
        let mut state = self.reset(request)?;
        for &id in retrieved {
            self.corpus.chunk(id)?;
            state.retrieved_ids.push(id);
        }
        state.actions_taken = retrieved.len();
        state.history_mean = self.history_of(&state.retrieved_ids);
        self.refresh_candidates(&mut state);
        Ok(state)
    }

    fn history_of(&self, ids: &[usize]) -> EmbeddingVector {
        let chunks = self.corpus.chunks();
        mean_pool(ids.iter().map(|&id| &chunks[id].embedding))
    }

    fn refresh_candidates(&self, state: &mut EnvState) {
        state.candidates = state
            .ranking
            .iter()
            .copied()
            .filter(|id| !state.retrieved_ids.contains(id))
            .take(self.config.k)
            .collect();
    }

    pub fn legal_actions(&self, state: &EnvState) -> Vec<usize> {
        let mut legal = Vec::with_capacity(self.config.k + 1);
        if state.actions_taken + 1 < self.config.horizon {
            legal.extend(0..state.candidates.len().min(self.config.k));
        }
        legal.push(self.config.stop_action());
        legal
    }

    /// Boolean mask over all `k + 1` actions.
    pub fn legal_mask(&self, state: &EnvState) -> Vec<bool> {
        let mut mask = vec![false; self.config.num_actions()];
        for a in self.legal_actions(state) {
            mask[a] = true;
        }
        mask
    }

    pub fn step(&self, state: &EnvState, action: usize, request: &PaRequest) -> Result<StepOutcome> {
        let legal = self.legal_actions(state);
        if !legal.contains(&action) {
            return Err(Error::IllegalAction { action, legal });
        }
        let mut next = state.clone();
        next.actions_taken += 1;
        if action == self.config.stop_action() {
            let decision = oracle_decide(self.corpus, request, &next.retrieved_ids)?;
            let reward = if decision == request.ground_truth {
                1.0
            } else {
                -1.0
            };
            return Ok(StepOutcome {
                reward,
                done: true,
                decision: Some(decision),
                next_state: next,
            });
        }
        next.retrieved_ids.push(state.candidates[action]);
        next.history_mean = self.history_of(&next.retrieved_ids);
        self.refresh_candidates(&mut next);
        Ok(StepOutcome {
            reward: -self.config.step_cost,
            done: false,
            decision: None,
            next_state: next,
        })
    }
}

/// Undiscounted return `r_T − λ·n` for an episode with `n` retrievals.
pub fn episode_return(terminal_reward: f64, n_retrievals: usize, step_cost: f64) -> f64 {
    terminal_reward - step_cost * n_retrievals as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, generate_requests, CorpusConfig, RequestConfig, Split};

    fn setup() -> (Corpus, Vec<PaRequest>) {
        let c = build_corpus(7, &CorpusConfig::default()).unwrap();
        let r = generate_requests(&c, 1, 60, &RequestConfig::default(), &Split::Train, 0).unwrap();
        (c, r)
    }

    #[test]
    fn reset_state() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let s = env.reset(&reqs[0]).unwrap();
        let obs = s.observation();
        assert_eq!(obs.len(), OBS_DIM);
        assert!(obs[EMBED_DIM..].iter().all(|&x| x == 0.0));
        assert_eq!(s.candidates.len(), 10);
        assert_eq!(s.actions_taken, 0);
        assert_eq!(env.reset(&reqs[0]).unwrap(), s);
        assert_eq!(env.legal_actions(&s), (0..=10).collect::<Vec<_>>());
    }

    #[test]
    fn candidates_are_sorted_and_exclude_retrieved() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let mut s = env.reset(&reqs[1]).unwrap();
        for a in [3, 0, 9, 1] {
            let prev = s.candidates.clone();
            let out = env.step(&s, a, &reqs[1]).unwrap();
            s = out.next_state;
            assert!(s.candidates.iter().all(|id| !s.retrieved_ids.contains(id)));
            let kept: Vec<usize> = prev.iter().copied().filter(|&id| id != prev[a]).collect();
            assert_eq!(&s.candidates[..9], &kept[..]);
            let q = s.request_embedding.as_slice();
            let sims: Vec<f64> = s
                .candidates
                .iter()
                .map(|&id| {
                    crate::embed::cosine_similarity(q, c.chunk(id).unwrap().embedding.as_slice())
                        .unwrap()
                })
                .collect();
            assert!(sims.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn horizon_forces_stop() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let mut s = env.reset(&reqs[2]).unwrap();
        let mut steps = 0;
        loop {
            let legal = env.legal_actions(&s);
            if s.actions_taken == 19 {
                assert_eq!(legal, vec![10]);
            }
            let a = legal[0];
            let out = env.step(&s, a, &reqs[2]).unwrap();
            steps += 1;
            if out.done {
                assert!(out.decision.is_some());
                break;
            }
            assert!(out.decision.is_none());
            s = out.next_state;
        }
        assert_eq!(steps, 20);
        assert!(env.step(&s, 0, &reqs[2]).is_err());
    }

    #[test]
    fn few_candidates_restrict_slots() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let mut s = env.reset(&reqs[0]).unwrap();
        s.candidates.truncate(2);
        assert_eq!(env.legal_actions(&s), vec![0, 1, 10]);
    }

    #[test]
    fn rewards_follow_step_cost_and_oracle() {
        let (c, reqs) = setup();
        let cfg = EnvConfig {
            step_cost: 0.2,
            ..EnvConfig::default()
        };
        let env = RetrievalEnv::new(&c, cfg);
        let r = &reqs[0];
        let s = env.reset(r).unwrap();
        let out = env.step(&s, 0, r).unwrap();
        assert_eq!(out.reward, -0.2);
        assert!(!out.done);

        let pend = reqs.iter().find(|r| r.ground_truth == Decision::Pend).unwrap();
        let s = env.reset(pend).unwrap();
        let out = env.step(&s, 10, pend).unwrap();
        assert_eq!(out.reward, 1.0);
        assert_eq!(out.next_state.actions_taken, 1);
    }

    #[test]
    fn collecting_required_evidence_then_stopping_is_rewarded() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let r = reqs
            .iter()
            .find(|r| r.ground_truth != Decision::Pend)
            .unwrap();
        let mut s = env.reset(r).unwrap();
        let mut total = 0.0;
        let mut n = 0;
        while !r.required_evidence.iter().all(|id| s.retrieved_ids.contains(id)) {
            let out = env.step(&s, 0, r).unwrap();
            total += out.reward;
            n += 1;
            s = out.next_state;
        }
        let out = env.step(&s, 10, r).unwrap();
        total += out.reward;
        assert_eq!(out.decision, Some(r.ground_truth));
        assert!((total - episode_return(1.0, n, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn replay_matches_stepping() {
        let (c, reqs) = setup();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let r = &reqs[4];
        let mut s = env.reset(r).unwrap();
        for a in [0, 2, 5] {
            s = env.step(&s, a, r).unwrap().next_state;
        }
        let replayed = env.replay(r, &s.retrieved_ids).unwrap();
        assert_eq!(replayed, s);
    }

    #[test]
    fn episode_return_examples() {
        assert!((episode_return(1.0, 3, 0.1) - 0.7).abs() < 1e-12);
        assert_eq!(episode_return(1.0, 0, 0.37), 1.0);
        assert!((episode_return(-1.0, 19, 0.1) + 2.9).abs() < 1e-12);
    }
}
