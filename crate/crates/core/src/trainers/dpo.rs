use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bc::fit_bc;
use super::{output_grad, BcConfig, EpochMetrics, PolicyArtifact, PolicyKind, ReplayBuffer};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::neural::{log_softmax, softmax, AdamConfig, Mlp};
use crate::offline::{Dataset, Episode};

/// A warmup loss at or above this means the frozen reference is poor.
const WARMUP_CONVERGED_BELOW: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    /// One tuple per shared retrieval depth of a winner/loser episode pair.
    Transition,
    /// Whole-episode pairs compared by summed log-probabilities.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    pub seed: u64,
    /// KL strength.
    pub beta: f64,
    pub warmup_epochs: usize,
    pub warmup_learning_rate: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub pairing_mode: PairingMode,
    pub adam: AdamConfig,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            beta: 3.0,
            warmup_epochs: 200,
            warmup_learning_rate: 1e-3,
            epochs: 2000,
            steps_per_epoch: 1,
            batch_size: 256,
            pairing_mode: PairingMode::Transition,
            adam: AdamConfig {
                learning_rate: 1e-4,
                ..AdamConfig::default()
            },
        }
    }
}

/// Winner and loser indices: flat transition indices in transition mode,
/// episode indices in trajectory mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
}

/// Pair episodes with different returns inside pools of comparable
/// episodes: all episodes of a request when it has at least two, otherwise
/// all remaining episodes of the same procedure.
pub fn build_preference_pairs(episodes: &[Episode], mode: PairingMode) -> Vec<PreferencePair> {
    let mut by_request: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in episodes.iter().enumerate() {
        by_request.entry(e.request_id).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = Vec::new();
    let mut by_procedure: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for group in by_request.into_values() {
        if group.len() >= 2 {
            pools.push(group);
        } else {
            by_procedure
                .entry(&episodes[group[0]].cpt)
                .or_default()
                .push(group[0]);
        }
    }
    pools.extend(by_procedure.into_values());

    let mut starts = Vec::with_capacity(episodes.len());
    let mut at = 0;
    for e in episodes {
        starts.push(at);
        at += e.transitions.len();
    }
    let mut pairs = Vec::new();
    for pool in &pools {
        for (x, &i) in pool.iter().enumerate() {
            for &j in &pool[x + 1..] {
                let (ri, rj) = (episodes[i].total_return, episodes[j].total_return);
                let (w, l) = match ri.partial_cmp(&rj) {
                    Some(std::cmp::Ordering::Greater) => (i, j),
                    Some(std::cmp::Ordering::Less) => (j, i),
                    _ => continue,
                };
                match mode {
                    PairingMode::Trajectory => pairs.push(PreferencePair { winner: w, loser: l }),
                    PairingMode::Transition => {
                        let depth = episodes[w].steps_total.min(episodes[l].steps_total);
                        pairs.extend((0..depth).map(|t| PreferencePair {
                            winner: starts[w] + t,
                            loser: starts[l] + t,
                        }));
                    }
                }
            }
        }
    }
    pairs
}

#[derive(Debug, Clone)]
pub struct DpoLoss {
    pub loss: f64,
    /// Fraction of pairs with Δ > 0; exact ties count one half.
    pub preference_accuracy: f64,
    pub mean_delta: f64,
    pub grads: Mlp,
}

/// Rows of a pair batch: each row is one (state, action) whose policy
/// log-ratio enters pair `pair[i]` with sign `+1` (winner) or `−1` (loser).
struct PairRows {
    obs: Array2<f64>,
    actions: Vec<usize>,
    ref_logp: Vec<f64>,
    pair: Vec<usize>,
    sign: Vec<f64>,
    n_pairs: usize,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−log σ(x)` computed stably.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn rows_loss(pi: &Mlp, rows: &PairRows, beta: f64) -> Result<DpoLoss> {
    if rows.n_pairs == 0 {
        return Err(Error::EmptyDataset);
    }
    let cache = pi.forward_cached(rows.obs.view())?;
    let mut delta = vec![0.0; rows.n_pairs];
    let mut probs = Vec::with_capacity(rows.actions.len());
    for (i, row) in cache.output.rows().into_iter().enumerate() {
        let logits = row.to_vec();
        let lp = log_softmax(&logits)[rows.actions[i]];
        delta[rows.pair[i]] += rows.sign[i] * (lp - rows.ref_logp[i]);
        probs.push(softmax(&logits));
    }
    let n = rows.n_pairs as f64;
    let loss = delta.iter().map(|&d| neg_log_sigmoid(beta * d)).sum::<f64>() / n;
    let acc = delta
        .iter()
        .map(|&d| match d.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum::<f64>()
        / n;
    // dL/dΔ = −β·σ(−βΔ)/n; d log π(a|s)/d logits = onehot(a) − softmax.
    let d_delta: Vec<f64> = delta.iter().map(|&d| -beta * sigmoid(-beta * d) / n).collect();
    let g = output_grad(rows.actions.len(), pi.output_dim(), |i, j| {
        let onehot = if j == rows.actions[i] { 1.0 } else { 0.0 };
        d_delta[rows.pair[i]] * rows.sign[i] * (onehot - probs[i][j])
    });
    Ok(DpoLoss {
        loss,
        preference_accuracy: acc,
        mean_delta: delta.iter().sum::<f64>() / n,
        grads: pi.backward(&cache, g.view())?,
    })
}

fn logged_logp(net: &Mlp, obs: ArrayView2<f64>, actions: &[usize]) -> Result<Vec<f64>> {
    let out = net.forward(obs)?;
    Ok(out
        .rows()
        .into_iter()
        .zip(actions)
        .map(|(row, &a)| log_softmax(&row.to_vec())[a])
        .collect())
}

/// Transition-level DPO loss on pairs `(obs_w[i], a_w[i]) ≻ (obs_l[i], a_l[i])`.
pub fn dpo_loss(
    pi: &Mlp,
    reference: &Mlp,
    obs_w: ArrayView2<f64>,
    a_w: &[usize],
    obs_l: ArrayView2<f64>,
    a_l: &[usize],
    beta: f64,
) -> Result<DpoLoss> {
    if a_w.len() != a_l.len() {
        return Err(Error::LengthMismatch(a_w.len(), a_l.len()));
    }
    let n = a_w.len();
    let obs = ndarray::concatenate(Axis(0), &[obs_w, obs_l]).map_err(|e| Error::Format(e.to_string()))?;
    let actions: Vec<usize> = a_w.iter().chain(a_l).copied().collect();
    let rows = PairRows {
        ref_logp: logged_logp(reference, obs.view(), &actions)?,
        obs,
        actions,
        pair: (0..n).chain(0..n).collect(),
        sign: std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(-1.0, n)).collect(),
        n_pairs: n,
    };
    rows_loss(pi, &rows, beta)
}

/// Trajectory-level DPO loss: Δ sums the log-ratios over every step of
/// each episode. `pairs` index episodes of `buffer`.
pub fn dpo_trajectory_loss(
    pi: &Mlp,
    reference: &Mlp,
    buffer: &ReplayBuffer,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<DpoLoss> {
    let ref_logp = logged_logp(reference, buffer.obs.view(), &buffer.actions)?;
    rows_loss(pi, &trajectory_rows(buffer, &ref_logp, pairs), beta)
}

fn episode_range(buffer: &ReplayBuffer, e: usize) -> std::ops::Range<usize> {
    let end = buffer
        .episode_starts
        .get(e + 1)
        .copied()
        .unwrap_or(buffer.len());
    buffer.episode_starts[e]..end
}

fn trajectory_rows(buffer: &ReplayBuffer, ref_logp: &[f64], pairs: &[PreferencePair]) -> PairRows {
    let mut idx = Vec::new();
    let mut pair = Vec::new();
    let mut sign = Vec::new();
    for (k, p) in pairs.iter().enumerate() {
        for (e, s) in [(p.winner, 1.0), (p.loser, -1.0)] {
            for t in episode_range(buffer, e) {
                idx.push(t);
                pair.push(k);
                sign.push(s);
            }
        }
    }
    PairRows {
        obs: buffer.obs.select(Axis(0), &idx),
        actions: idx.iter().map(|&t| buffer.actions[t]).collect(),
        ref_logp: idx.iter().map(|&t| ref_logp[t]).collect(),
        pair,
        sign,
        n_pairs: pairs.len(),
    }
}

fn transition_rows(buffer: &ReplayBuffer, ref_logp: &[f64], pairs: &[PreferencePair]) -> PairRows {
    let n = pairs.len();
    let idx: Vec<usize> = pairs
        .iter()
        .map(|p| p.winner)
        .chain(pairs.iter().map(|p| p.loser))
        .collect();
    PairRows {
        obs: buffer.obs.select(Axis(0), &idx),
        actions: idx.iter().map(|&t| buffer.actions[t]).collect(),
        ref_logp: idx.iter().map(|&t| ref_logp[t]).collect(),
        pair: (0..n).chain(0..n).collect(),
        sign: std::iter::repeat_n(1.0, n).chain(std::iter::repeat_n(-1.0, n)).collect(),
        n_pairs: n,
    }
}

pub fn train_dpo(dataset: &Dataset, cfg: &DpoConfig) -> Result<PolicyArtifact> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let mut pi = Mlp::standard(OBS_DIM, dataset.header.env.num_actions(), cfg.seed)?;
    let warmup = BcConfig {
        seed: cfg.seed,
        epochs: cfg.warmup_epochs,
        steps_per_epoch: cfg.steps_per_epoch,
        batch_size: cfg.batch_size,
        adam: AdamConfig {
            learning_rate: cfg.warmup_learning_rate,
            ..cfg.adam
        },
    };
    let mut log = fit_bc(&mut pi, &buffer, &warmup, "warmup")?;
    let tail: Vec<f64> = log.iter().rev().take(10).filter_map(|m| m.get("loss")).collect();
    if !tail.is_empty() {
        let final_loss = tail.iter().sum::<f64>() / tail.len() as f64;
        if final_loss >= WARMUP_CONVERGED_BELOW {
            log::warn!("reference not converged: warmup loss {final_loss:.3}");
        }
    }
    let reference = pi.clone();
    let ref_logp = logged_logp(&reference, buffer.obs.view(), &buffer.actions)?;
    let pairs = build_preference_pairs(&dataset.episodes, cfg.pairing_mode);
    if pairs.is_empty() {
        return Err(Error::InvalidConfig(
            "dataset yields no preference pairs".into(),
        ));
    }
    let mut opt = crate::neural::Adam::new(cfg.adam, &pi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 3];
        for _ in 0..cfg.steps_per_epoch {
            let batch: Vec<PreferencePair> = (0..cfg.batch_size)
                .map(|_| pairs[rng.gen_range(0..pairs.len())])
                .collect();
            let rows = match cfg.pairing_mode {
                PairingMode::Transition => transition_rows(&buffer, &ref_logp, &batch),
                PairingMode::Trajectory => trajectory_rows(&buffer, &ref_logp, &batch),
            };
            let l = rows_loss(&pi, &rows, cfg.beta)?;
            opt.step(&mut pi, &l.grads)?;
            for (s, x) in sums.iter_mut().zip([l.loss, l.preference_accuracy, l.mean_delta]) {
                *s += x / cfg.steps_per_epoch as f64;
            }
        }
        log.push(EpochMetrics::new(
            "dpo",
            epoch,
            &[
                ("loss", sums[0]),
                ("preference_accuracy", sums[1]),
                ("mean_delta", sums[2]),
            ],
        )?);
    }
    let label = match cfg.pairing_mode {
        PairingMode::Transition => "DPO (transition)",
        PairingMode::Trajectory => "DPO (trajectory)",
    };
    PolicyArtifact::learned(PolicyKind::Dpo, label, pi, dataset, cfg, log)
}
