use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{output_grad, Batch, EpochMetrics, PolicyArtifact, PolicyKind, ReplayBuffer};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::neural::{expectile_grad, expectile_loss, log_softmax, softmax, Adam, AdamConfig, Mlp};
use crate::offline::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqlConfig {
    pub seed: u64,
    /// Expectile of the value regression.
    pub tau: f64,
    /// Inverse temperature of the advantage weights.
    pub beta: f64,
    pub weight_clamp: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub target_sync_every: usize,
    pub adam: AdamConfig,
}

impl Default for IqlConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            tau: 0.9,
            beta: 10.0,
            weight_clamp: 100.0,
            gamma: 1.0,
            epochs: 1000,
            steps_per_epoch: 1,
            batch_size: 256,
            target_sync_every: 10,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct IqlLosses {
    pub value: f64,
    pub q: f64,
    pub policy: f64,
    pub mean_weight: f64,
    pub value_grads: Mlp,
    pub q_grads: Mlp,
    pub policy_grads: Mlp,
}

fn column(net: &Mlp, obs: ArrayView2<f64>) -> Result<Vec<f64>> {
    Ok(net.forward(obs)?.column(0).to_vec())
}

/// Mean expectile loss of `targets − V(s)`.
pub fn iql_value_loss(v: &Mlp, obs: ArrayView2<f64>, targets: &[f64], tau: f64) -> Result<(f64, Mlp)> {
    let cache = v.forward_cached(obs)?;
    let n = targets.len() as f64;
    let u: Vec<f64> = targets
        .iter()
        .zip(cache.output.column(0))
        .map(|(t, v)| t - v)
        .collect();
    let loss = u.iter().map(|&u| expectile_loss(u, tau)).sum::<f64>() / n;
    let g = output_grad(u.len(), 1, |i, _| -expectile_grad(u[i], tau) / n);
    Ok((loss, v.backward(&cache, g.view())?))
}

/// Squared error of `Q(s, a)` against `r + γ·V(s′)` (no bootstrap when
/// done).
pub fn iql_q_loss(q: &Mlp, v: &Mlp, batch: &Batch, gamma: f64) -> Result<(f64, Mlp)> {
    let v_next = column(v, batch.next_obs.view())?;
    let cache = q.forward_cached(batch.obs.view())?;
    let n = batch.len() as f64;
    let resid: Vec<f64> = (0..batch.len())
        .map(|i| {
            let boot = if batch.dones[i] { 0.0 } else { gamma * v_next[i] };
            cache.output[[i, batch.actions[i]]] - (batch.rewards[i] + boot)
        })
        .collect();
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let g = output_grad(batch.len(), q.output_dim(), |i, j| {
        if j == batch.actions[i] {
            2.0 * resid[i] / n
        } else {
            0.0
        }
    });
    Ok((loss, q.backward(&cache, g.view())?))
}

/// Advantage-weighted cross-entropy `−mean w·log π(a|s)`.
pub fn iql_policy_loss(
    pi: &Mlp,
    obs: ArrayView2<f64>,
    actions: &[usize],
    weights: &[f64],
) -> Result<(f64, Mlp)> {
    let cache = pi.forward_cached(obs)?;
    let n = actions.len() as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(actions.len());
    for (i, row) in cache.output.rows().into_iter().enumerate() {
        let logits = row.to_vec();
        loss -= weights[i] * log_softmax(&logits)[actions[i]];
        probs.push(softmax(&logits));
    }
    let g = output_grad(actions.len(), pi.output_dim(), |i, j| {
        weights[i] * (probs[i][j] - if j == actions[i] { 1.0 } else { 0.0 }) / n
    });
    Ok((loss / n, pi.backward(&cache, g.view())?))
}

/// `min(exp(β·A), clamp)`.
pub fn advantage_weight(advantage: f64, beta: f64, clamp: f64) -> f64 {
    (beta * advantage).exp().min(clamp)
}

/// All three IQL losses from one snapshot of the networks.
pub fn iql_losses(
    q: &Mlp,
    target_q: &Mlp,
    v: &Mlp,
    pi: &Mlp,
    batch: &Batch,
    cfg: &IqlConfig,
) -> Result<IqlLosses> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let qt = target_q.forward(batch.obs.view())?;
    let qt_sa: Vec<f64> = (0..batch.len()).map(|i| qt[[i, batch.actions[i]]]).collect();
    let v_s = column(v, batch.obs.view())?;
    let weights: Vec<f64> = qt_sa
        .iter()
        .zip(&v_s)
        .map(|(q, v)| advantage_weight(q - v, cfg.beta, cfg.weight_clamp))
        .collect();
    let (value, value_grads) = iql_value_loss(v, batch.obs.view(), &qt_sa, cfg.tau)?;
    let (q_loss, q_grads) = iql_q_loss(q, v, batch, cfg.gamma)?;
    let (policy, policy_grads) = iql_policy_loss(pi, batch.obs.view(), &batch.actions, &weights)?;
    Ok(IqlLosses {
        value,
        q: q_loss,
        policy,
        mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
        value_grads,
        q_grads,
        policy_grads,
    })
}

pub fn train_iql(dataset: &Dataset, cfg: &IqlConfig) -> Result<PolicyArtifact> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let actions = dataset.header.env.num_actions();
    let mut q = Mlp::standard(OBS_DIM, actions, cfg.seed)?;
    let mut target = q.clone();
    let mut v = Mlp::standard(OBS_DIM, 1, cfg.seed.wrapping_add(1))?;
    let mut pi = Mlp::standard(OBS_DIM, actions, cfg.seed.wrapping_add(2))?;
    let (mut opt_q, mut opt_v, mut opt_pi) = (
        Adam::new(cfg.adam, &q)?,
        Adam::new(cfg.adam, &v)?,
        Adam::new(cfg.adam, &pi)?,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 4];
        for _ in 0..cfg.steps_per_epoch {
            let b = buffer.sample(&mut rng, cfg.batch_size);
            let l = iql_losses(&q, &target, &v, &pi, &b, cfg)?;
            opt_v.step(&mut v, &l.value_grads)?;
            opt_q.step(&mut q, &l.q_grads)?;
            opt_pi.step(&mut pi, &l.policy_grads)?;
            for (s, x) in sums.iter_mut().zip([l.value, l.q, l.policy, l.mean_weight]) {
                *s += x / cfg.steps_per_epoch as f64;
            }
        }
        if (epoch + 1) % cfg.target_sync_every == 0 {
            target = q.clone();
        }
        log.push(EpochMetrics::new(
            "iql",
            epoch,
            &[
                ("value_loss", sums[0]),
                ("q_loss", sums[1]),
                ("policy_loss", sums[2]),
                ("mean_weight", sums[3]),
            ],
        )?);
    }
    PolicyArtifact::learned(PolicyKind::Iql, "IQL", pi, dataset, cfg, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradient_check;
    use crate::trainers::testutil::random_batch;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    #[test]
    fn iql_gradient_checks() {
        let cfg = IqlConfig::default();
        for seed in 0..3 {
            let b = random_batch(seed, 8, 5, 4);
            let v = Mlp::new(&[5, 6, 6, 1], seed).unwrap();
            let q = Mlp::new(&[5, 6, 6, 4], seed + 1).unwrap();
            let pi = Mlp::new(&[5, 6, 6, 4], seed + 2).unwrap();
            let targets: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
            let err = gradient_check(&v, |n| iql_value_loss(n, b.obs.view(), &targets, cfg.tau)).unwrap();
            assert!(err < 1e-4, "value: {err}");
            let err = gradient_check(&q, |n| iql_q_loss(n, &v, &b, 1.0)).unwrap();
            assert!(err < 1e-4, "q: {err}");
            let w: Vec<f64> = (0..8).map(|i| 0.5 + i as f64).collect();
            let err = gradient_check(&pi, |n| iql_policy_loss(n, b.obs.view(), &b.actions, &w)).unwrap();
            assert!(err < 1e-4, "policy: {err}");
        }
    }

    #[test]
    fn value_regression_converges_to_the_expectile() {
        // Targets 0 and 1 equally often: τ(1 − v)² + (1 − τ)v² is minimized at
        // v = τ.
        let mut v = Mlp::new(&[1, 1], 0).unwrap();
        let obs = Array2::ones((2, 1));
        let targets = [0.0, 1.0];
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            &v,
        )
        .unwrap();
        for _ in 0..3000 {
            let (_, g) = iql_value_loss(&v, obs.view(), &targets, 0.9).unwrap();
            opt.step(&mut v, &g).unwrap();
        }
        assert_abs_diff_eq!(v.forward_one(&[1.0]).unwrap()[0], 0.9, epsilon = 1e-2);
    }

    #[test]
    fn zero_advantage_is_plain_cross_entropy() {
        let pi = Mlp::new(&[5, 4], 1).unwrap();
        let b = random_batch(4, 6, 5, 4);
        let w = vec![advantage_weight(0.0, 10.0, 100.0); 6];
        let (l, _) = iql_policy_loss(&pi, b.obs.view(), &b.actions, &w).unwrap();
        let (ce, _) = crate::trainers::bc_loss(&pi, b.obs.view(), &b.actions).unwrap();
        assert_abs_diff_eq!(l, ce, epsilon = 1e-12);
    }

    #[test]
    fn weights_are_clamped() {
        assert_eq!(advantage_weight(200f64.ln() / 10.0, 10.0, 100.0), 100.0);
        assert_abs_diff_eq!(advantage_weight(50f64.ln() / 10.0, 10.0, 100.0), 50.0, epsilon = 1e-9);
    }
}
