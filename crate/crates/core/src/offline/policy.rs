use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::cosine_similarity;
use crate::env::{EnvState, RetrievalEnv};
use crate::error::Result;

/// Similarity threshold of the default heuristic policy, on the scale of
/// the hashed embedder.
pub const DEFAULT_HEURISTIC_THRESHOLD: f64 = 0.28;

/// Data-collection policies. Each one exposes its exact action distribution
/// so logged propensities can be re-derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorPolicy {
    /// Uniform over legal actions.
    Random,
    /// Retrieve the top candidate until `k` chunks are held, then stop.
    FixedK { k: usize },
    /// Retrieve the top candidate while its similarity to the request is at
    /// least `threshold`, then stop.
    Heuristic { threshold: f64 },
    /// Follow `base` with probability `1 − epsilon`, otherwise act uniformly
    /// over legal actions.
    EpsGreedy {
        base: Box<BehaviorPolicy>,
        epsilon: f64,
    },
}

impl BehaviorPolicy {
    pub fn heuristic() -> Self {
        Self::Heuristic {
            threshold: DEFAULT_HEURISTIC_THRESHOLD,
        }
    }

    pub fn eps_greedy(base: BehaviorPolicy, epsilon: f64) -> Self {
        Self::EpsGreedy {
            base: Box::new(base),
            epsilon,
        }
    }

    /// Probability of every action in `0..=k`; illegal actions get zero.
    pub fn action_probs(&self, env: &RetrievalEnv, state: &EnvState) -> Result<Vec<f64>> {
        let legal = env.legal_actions(state);
        let stop = env.config().stop_action();
        let mut p = vec![0.0; env.config().num_actions()];
        let retrieve_top = |want: bool| if want && legal.contains(&0) { 0 } else { stop };
        match self {
            Self::Random => {
                for &a in &legal {
                    p[a] = 1.0 / legal.len() as f64;
                }
            }
            Self::FixedK { k } => p[retrieve_top(state.retrieved_ids.len() < *k)] = 1.0,
            Self::Heuristic { threshold } => {
                let top_sim = match state.candidates.first() {
                    Some(&id) => Some(cosine_similarity(
                        state.request_embedding.as_slice(),
                        env.corpus().chunk(id)?.embedding.as_slice(),
                    )?),
                    None => None,
                };
                p[retrieve_top(top_sim.is_some_and(|s| s >= *threshold))] = 1.0;
            }
            Self::EpsGreedy { base, epsilon } => {
                let b = base.action_probs(env, state)?;
                for (a, pa) in p.iter_mut().enumerate() {
                    *pa = (1.0 - epsilon) * b[a];
                }
                for &a in &legal {
                    p[a] += epsilon / legal.len() as f64;
                }
            }
        }
        Ok(p)
    }

    /// Sample an action; returns it with its probability under this policy.
    pub fn act<R: Rng>(&self, env: &RetrievalEnv, state: &EnvState, rng: &mut R) -> Result<(usize, f64)> {
        let p = self.action_probs(env, state)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (a, &pa) in p.iter().enumerate() {
            if pa <= 0.0 {
                continue;
            }
            acc += pa;
            last = a;
            if u < acc {
                return Ok((a, pa));
            }
        }
        Ok((last, p[last]))
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::FixedK { .. } | Self::Heuristic { .. })
    }
}

impl fmt::Display for BehaviorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random => write!(f, "Random"),
            Self::FixedK { k } => write!(f, "FixedK({k})"),
            Self::Heuristic { threshold } => write!(f, "Heuristic({threshold})"),
            Self::EpsGreedy { base, epsilon } => write!(f, "EpsGreedy({base}, {epsilon})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub policy: BehaviorPolicy,
    pub weight: f64,
}

/// FixedK(3), FixedK(5), Heuristic, EpsGreedy(FixedK(5), 0.1) and
/// EpsGreedy(Heuristic, 0.3), equally weighted.
pub fn default_mixture() -> Vec<MixtureEntry> {
    [
        BehaviorPolicy::FixedK { k: 3 },
        BehaviorPolicy::FixedK { k: 5 },
        BehaviorPolicy::heuristic(),
        BehaviorPolicy::eps_greedy(BehaviorPolicy::FixedK { k: 5 }, 0.1),
        BehaviorPolicy::eps_greedy(BehaviorPolicy::heuristic(), 0.3),
    ]
    .into_iter()
    .map(|policy| MixtureEntry {
        policy,
        weight: 1.0,
    })
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_corpus, generate_requests, CorpusConfig, RequestConfig, Split};
    use crate::env::EnvConfig;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn eps_greedy_propensity_is_the_mixture() {
        let c = build_corpus(7, &CorpusConfig::default()).unwrap();
        let r = generate_requests(&c, 1, 3, &RequestConfig::default(), &Split::Train, 0).unwrap();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let s = env.reset(&r[0]).unwrap();
        let pol = BehaviorPolicy::eps_greedy(BehaviorPolicy::FixedK { k: 5 }, 0.2);
        let p = pol.action_probs(&env, &s).unwrap();
        assert_abs_diff_eq!(p[0], 0.8 + 0.2 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0], 0.8182, epsilon = 1e-4);
        assert_abs_diff_eq!(p[10], 0.2 / 11.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_action_reports_its_probability() {
        let c = build_corpus(7, &CorpusConfig::default()).unwrap();
        let r = generate_requests(&c, 1, 3, &RequestConfig::default(), &Split::Train, 0).unwrap();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let s = env.reset(&r[1]).unwrap();
        let pol = BehaviorPolicy::eps_greedy(BehaviorPolicy::heuristic(), 0.3);
        let probs = pol.action_probs(&env, &s).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut counts = [0usize; 11];
        for _ in 0..20_000 {
            let (a, p) = pol.act(&env, &s, &mut rng).unwrap();
            assert_eq!(p, probs[a]);
            counts[a] += 1;
        }
        for a in 0..11 {
            assert!((counts[a] as f64 / 20_000.0 - probs[a]).abs() < 0.015);
        }
    }

    #[test]
    fn heuristic_stops_below_threshold() {
        let c = build_corpus(7, &CorpusConfig::default()).unwrap();
        let r = generate_requests(&c, 1, 3, &RequestConfig::default(), &Split::Train, 0).unwrap();
        let env = RetrievalEnv::new(&c, EnvConfig::default());
        let s = env.reset(&r[0]).unwrap();
        let always = BehaviorPolicy::Heuristic { threshold: -2.0 };
        let never = BehaviorPolicy::Heuristic { threshold: 2.0 };
        assert_eq!(always.action_probs(&env, &s).unwrap()[0], 1.0);
        assert_eq!(never.action_probs(&env, &s).unwrap()[10], 1.0);
    }

    #[test]
    fn labels_and_serde() {
        let mix = default_mixture();
        let labels: Vec<String> = mix.iter().map(|m| m.policy.to_string()).collect();
        assert_eq!(
            labels,
            [
                "FixedK(3)",
                "FixedK(5)",
                "Heuristic(0.28)",
                "EpsGreedy(FixedK(5), 0.1)",
                "EpsGreedy(Heuristic(0.28), 0.3)"
            ]
        );
        let json = serde_json::to_string(&mix).unwrap();
        let back: Vec<MixtureEntry> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, mix);
    }
}
