use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{output_grad, EpochMetrics, PolicyArtifact, PolicyKind, ReplayBuffer};
use crate::env::OBS_DIM;
use crate::error::Result;
use crate::neural::{log_softmax, softmax, Adam, AdamConfig, Mlp};
use crate::offline::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 100,
            steps_per_epoch: 1,
            batch_size: 256,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// Mean softmax cross-entropy of the logged actions, with its gradient.
pub fn bc_loss(net: &Mlp, obs: ArrayView2<f64>, actions: &[usize]) -> Result<(f64, Mlp)> {
    let cache = net.forward_cached(obs)?;
    let n = actions.len() as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(actions.len());
    for (row, &a) in cache.output.rows().into_iter().zip(actions) {
        let logits = row.to_vec();
        loss -= log_softmax(&logits)[a];
        probs.push(softmax(&logits));
    }
    let g = output_grad(actions.len(), net.output_dim(), |i, j| {
        (probs[i][j] - f64::from(u8::from(j == actions[i]))) / n
    });
    Ok((loss / n, net.backward(&cache, g.view())?))
}

/// Fit `net` by behavior cloning; returns per-epoch losses.
pub(crate) fn fit_bc(
    net: &mut Mlp,
    buffer: &ReplayBuffer,
    cfg: &BcConfig,
    phase: &str,
) -> Result<Vec<EpochMetrics>> {
    let mut opt = Adam::new(cfg.adam, net)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let b = buffer.sample(&mut rng, cfg.batch_size);
            let (loss, grads) = bc_loss(net, b.obs.view(), &b.actions)?;
            opt.step(net, &grads)?;
            total += loss;
        }
        log.push(EpochMetrics::new(
            phase,
            epoch,
            &[("loss", total / cfg.steps_per_epoch as f64)],
        )?);
    }
    Ok(log)
}

pub fn train_bc(dataset: &Dataset, cfg: &BcConfig) -> Result<PolicyArtifact> {
    let buffer = ReplayBuffer::from_dataset(dataset)?;
    let mut net = Mlp::standard(OBS_DIM, dataset.header.env.num_actions(), cfg.seed)?;
    let log = fit_bc(&mut net, &buffer, cfg, "bc")?;
    PolicyArtifact::learned(PolicyKind::Bc, "BC", net, dataset, cfg, log)
}
