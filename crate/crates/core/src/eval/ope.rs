use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{Adam, AdamConfig, Mlp};
use crate::offline::Dataset;
use crate::trainers::{EpochMetrics, PolicyArtifact, PolicyKind, ReplayBuffer};

/// Importance ratios are clipped to this range before multiplying.
pub const WIS_CLIP: (f64, f64) = (0.01, 100.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeReport {
    pub kind: PolicyKind,
    pub label: String,
    pub wis_estimate: f64,
    pub fqe_mean_q: f64,
}

/// Self-normalized weighted mean `Σ wᵢ·Gᵢ / Σ wᵢ`.
pub fn wis_from_weights(weights: &[f64], returns: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if weights.len() != returns.len() {
        return Err(Error::LengthMismatch(weights.len(), returns.len()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::InvalidConfig(format!("importance weights sum to {total}")));
    }
    Ok(weights.iter().zip(returns).map(|(w, g)| w * g).sum::<f64>() / total)
}

/// WIS value of a learned policy on logged episodes. The target policy is
/// the greedy indicator, so each ratio is `1/b` on agreement and zero
/// otherwise before clipping.
pub fn wis_estimate(policy: &PolicyArtifact, dataset: &Dataset) -> Result<f64> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let legal: Vec<Vec<bool>> = dataset.transitions().map(|t| t.legal.clone()).collect();
    let greedy = policy.greedy_actions(buffer.obs.view(), &legal)?;
    let mut at = 0;
    let mut weights = Vec::with_capacity(dataset.episodes.len());
    for e in &dataset.episodes {
        let mut w = 1.0;
        for t in &e.transitions {
            let target = if greedy[at] == t.action { 1.0 } else { 0.0 };
            w *= (target / t.behavior_propensity).clamp(WIS_CLIP.0, WIS_CLIP.1);
            at += 1;
        }
        weights.push(w);
    }
    let returns: Vec<f64> = dataset.episodes.iter().map(|e| e.total_return).collect();
    wis_from_weights(&weights, &returns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FqeConfig {
    pub seed: u64,
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub target_sync_every: usize,
    pub adam: AdamConfig,
}

impl Default for FqeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma: 1.0,
            epochs: 200,
            steps_per_epoch: 1,
            batch_size: 256,
            target_sync_every: 10,
            adam: AdamConfig::default(),
        }
    }
}

/// Greedy action of `policy` in every next state of the buffer; terminal
/// rows get 0 and are never bootstrapped.
pub fn greedy_next_actions(policy: &PolicyArtifact, buffer: &ReplayBuffer) -> Result<Vec<usize>> {
    let n = buffer.len();
    let live: Vec<usize> = (0..n).filter(|&i| !buffer.dones[i]).collect();
    let mut out = vec![0; n];
    if live.is_empty() {
        return Ok(out);
    }
    let obs = buffer.next_obs.select(ndarray::Axis(0), &live);
    let legal: Vec<Vec<bool>> = live.iter().map(|&i| buffer.next_legal[i].clone()).collect();
    for (&i, a) in live.iter().zip(policy.greedy_actions(obs.view(), &legal)?) {
        out[i] = a;
    }
    Ok(out)
}

/// Fit `Q(s, a)` to `r + γ·Q_target(s′, π(s′))` with `π(s′)` given per
/// transition.
pub fn fit_fqe(
    buffer: &ReplayBuffer,
    num_actions: usize,
    next_actions: &[usize],
    cfg: &FqeConfig,
) -> Result<(Mlp, Vec<EpochMetrics>)> {
    if buffer.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if next_actions.len() != buffer.len() {
        return Err(Error::LengthMismatch(next_actions.len(), buffer.len()));
    }
    let mut q = Mlp::standard(buffer.obs.ncols(), num_actions, cfg.seed)?;
    let mut target = q.clone();
    let mut opt = Adam::new(cfg.adam, &q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let idx: Vec<usize> = (0..cfg.batch_size)
                .map(|_| rand::Rng::gen_range(&mut rng, 0..buffer.len()))
                .collect();
            let b = buffer.gather(&idx);
            let next_q = target.forward(b.next_obs.view())?;
            let y: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(r, &i)| {
                    let boot = if b.dones[r] {
                        0.0
                    } else {
                        cfg.gamma * next_q[[r, next_actions[i]]]
                    };
                    b.rewards[r] + boot
                })
                .collect();
            let cache = q.forward_cached(b.obs.view())?;
            let n = idx.len() as f64;
            let resid: Vec<f64> = (0..idx.len())
                .map(|r| cache.output[[r, b.actions[r]]] - y[r])
                .collect();
            total += resid.iter().map(|e| e * e).sum::<f64>() / n;
            let g = ndarray::Array2::from_shape_fn((idx.len(), num_actions), |(r, j)| {
                if j == b.actions[r] {
                    2.0 * resid[r] / n
                } else {
                    0.0
                }
            });
            let grads = q.backward(&cache, g.view())?;
            opt.step(&mut q, &grads)?;
        }
        if (epoch + 1) % cfg.target_sync_every == 0 {
            target = q.clone();
        }
        log.push(EpochMetrics::new(
            "fqe",
            epoch,
            &[("td", total / cfg.steps_per_epoch as f64)],
        )?);
    }
    Ok((q, log))
}

/// FQE value of a learned policy: mean of `Q̂(s₀, π(s₀))` over the
/// episode-initial states of the dataset.
pub fn fqe_estimate(policy: &PolicyArtifact, dataset: &Dataset, cfg: &FqeConfig) -> Result<f64> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let next = greedy_next_actions(policy, &buffer)?;
    let (q, _) = fit_fqe(&buffer, dataset.header.env.num_actions(), &next, cfg)?;
    let starts = buffer.obs.select(ndarray::Axis(0), &buffer.episode_starts);
    let legal: Vec<Vec<bool>> = dataset
        .episodes
        .iter()
        .map(|e| e.transitions[0].legal.clone())
        .collect();
    let a0 = policy.greedy_actions(starts.view(), &legal)?;
    let values = q.forward(starts.view())?;
    Ok(a0.iter().enumerate().map(|(i, &a)| values[[i, a]]).sum::<f64>() / a0.len() as f64)
}
