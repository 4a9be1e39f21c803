use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{masked_argmax, output_grad, Batch, EpochMetrics, PolicyArtifact, PolicyKind, ReplayBuffer};
use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::neural::{log_sum_exp, softmax, Adam, AdamConfig, Mlp};
use crate::offline::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqlConfig {
    pub seed: u64,
    /// Weight of the conservative penalty.
    pub alpha: f64,
    pub gamma: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// Hard target-network copy every this many epochs.
    pub target_sync_every: usize,
    pub adam: AdamConfig,
}

impl Default for CqlConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 1.0,
            gamma: 1.0,
            epochs: 200,
            steps_per_epoch: 1,
            batch_size: 256,
            target_sync_every: 10,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CqlLoss {
    pub total: f64,
    pub td: f64,
    pub conservative: f64,
    pub mean_q: f64,
    pub grads: Mlp,
}

/// Bootstrap targets `r + γ·max_{a′ legal} Q_target(s′, a′)`, with no
/// bootstrap on terminal transitions.
pub(crate) fn max_q_targets(target: &Mlp, batch: &Batch, gamma: f64) -> Result<Vec<f64>> {
    let next_q = target.forward(batch.next_obs.view())?;
    (0..batch.len())
        .map(|i| {
            if batch.dones[i] {
                return Ok(batch.rewards[i]);
            }
            let row = next_q.row(i);
            let q = row.as_slice().expect("row-major output");
            let a = masked_argmax(q, &batch.next_legal[i])?;
            Ok(batch.rewards[i] + gamma * q[a])
        })
        .collect()
}

/// Squared Bellman error plus `alpha` times the mean of
/// `log Σ_a exp Q(s, a) − Q(s, a_data)`, with gradients for `q`.
pub fn cql_loss(q: &Mlp, target: &Mlp, batch: &Batch, alpha: f64, gamma: f64) -> Result<CqlLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let y = max_q_targets(target, batch, gamma)?;
    let cache = q.forward_cached(batch.obs.view())?;
    let n = batch.len() as f64;
    let (mut td, mut cons, mut mean_q) = (0.0, 0.0, 0.0);
    let mut soft = Vec::with_capacity(batch.len());
    let mut resid = Vec::with_capacity(batch.len());
    for (i, row) in cache.output.rows().into_iter().enumerate() {
        let qs = row.to_vec();
        let qa = qs[batch.actions[i]];
        resid.push(qa - y[i]);
        td += (qa - y[i]).powi(2);
        cons += log_sum_exp(&qs) - qa;
        mean_q += qa;
        soft.push(softmax(&qs));
    }
    let g = output_grad(batch.len(), q.output_dim(), |i, j| {
        let is_a = j == batch.actions[i];
        let td_g = if is_a { 2.0 * resid[i] } else { 0.0 };
        let cons_g = soft[i][j] - if is_a { 1.0 } else { 0.0 };
        (td_g + alpha * cons_g) / n
    });
    let (td, cons) = (td / n, cons / n);
    Ok(CqlLoss {
        total: td + alpha * cons,
        td,
        conservative: cons,
        mean_q: mean_q / n,
        grads: q.backward(&cache, g.view())?,
    })
}

pub fn train_cql(dataset: &Dataset, cfg: &CqlConfig) -> Result<PolicyArtifact> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let mut q = Mlp::standard(OBS_DIM, dataset.header.env.num_actions(), cfg.seed)?;
    let mut target = q.clone();
    let mut opt = Adam::new(cfg.adam, &q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = [0.0; 4];
        for _ in 0..cfg.steps_per_epoch {
            let b = buffer.sample(&mut rng, cfg.batch_size);
            let l = cql_loss(&q, &target, &b, cfg.alpha, cfg.gamma)?;
            opt.step(&mut q, &l.grads)?;
            for (s, v) in sums.iter_mut().zip([l.total, l.td, l.conservative, l.mean_q]) {
                *s += v / cfg.steps_per_epoch as f64;
            }
        }
        if (epoch + 1) % cfg.target_sync_every == 0 {
            target = q.clone();
        }
        log.push(EpochMetrics::new(
            "cql",
            epoch,
            &[
                ("total", sums[0]),
                ("td", sums[1]),
                ("conservative", sums[2]),
                ("mean_q", sums[3]),
            ],
        )?);
    }
    PolicyArtifact::learned(PolicyKind::Cql, "CQL", q, dataset, cfg, log)
}
