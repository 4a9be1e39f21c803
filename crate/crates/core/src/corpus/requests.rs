//! Synthetic prior-authorization requests.
//!
//! Every request carries its ground-truth decision and a required-evidence
//! set `E*`: the oracle returns the ground truth whenever `E*` is contained in
//! the retrieved evidence. `E*` is drawn from the procedure's chunks that
//! rank within `evidence_depth` for the request's own embedding, so a policy
//! that keeps retrieving the top candidate always collects it before the
//! horizon.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChunkType, Corpus, ProcedureConfig};
use crate::embed::{embed_text, EmbeddingVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Deny,
    Pend,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Approve, Decision::Deny, Decision::Pend];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaRequest {
    pub request_id: u64,
    pub cpt: String,
    pub icd10: String,
    pub age: u32,
    pub ground_truth: Decision,
    pub required_evidence: BTreeSet<usize>,
}

impl PaRequest {
    pub fn text(&self, corpus: &Corpus) -> Result<String> {
        let p = corpus
            .procedure(&self.cpt)
            .ok_or_else(|| Error::Format(format!("unknown cpt {}", self.cpt)))?;
        Ok(super::text::request_text(p, &self.icd10, self.age))
    }

    pub fn embedding(&self, corpus: &Corpus) -> Result<EmbeddingVector> {
        embed_text(&self.text(corpus)?)
    }
}

/// Which per-procedure proportions to stratify by.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestConfig {
    /// Probabilities of (approve, deny, pend).
    pub outcome_weights: [f64; 3],
    /// Required evidence is drawn from the top `evidence_depth` ranked chunks.
    pub evidence_depth: usize,
    /// Resampling budget for (diagnosis, age) before giving up on a request.
    pub max_attempts: usize,
}

impl Default for RequestConfig {
    fn default() -> Self {
        Self {
            outcome_weights: [0.376, 0.119, 0.505],
            evidence_depth: 12,
            max_attempts: 500,
        }
    }
}

/// Largest-remainder allocation of `n` items across `weights`.
fn allocate(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut rest: Vec<(usize, f64)> = quotas
        .iter()
        .enumerate()
        .map(|(i, q)| (i, q - q.floor()))
        .collect();
    rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let missing = n - counts.iter().sum::<usize>();
    for &(i, _) in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// Generate `n` requests stratified across procedures. Ids run from
/// `id_offset`. Deterministic in `seed`.
pub fn generate_requests(
    corpus: &Corpus,
    seed: u64,
    n: usize,
    config: &RequestConfig,
    split: &Split,
    id_offset: u64,
) -> Result<Vec<PaRequest>> {
    if n == 0 {
        return Err(Error::InvalidConfig("request count must be at least 1".into()));
    }
    let w = &config.outcome_weights;
    if w.iter().any(|&x| x < 0.0 || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig(format!("bad outcome weights {w:?}")));
    }
    if config.evidence_depth == 0 {
        return Err(Error::InvalidConfig("evidence_depth must be positive".into()));
    }
    let procs = &corpus.config().procedures;
    let weights: Vec<f64> = match split {
        Split::Train => procs.iter().map(|p| p.train_weight).collect(),
        Split::Test => procs.iter().map(|p| p.test_weight).collect(),
        Split::Custom(v) => v.clone(),
    };
    if weights.len() != procs.len()
        || weights.iter().any(|&x| x < 0.0)
        || weights.iter().sum::<f64>() <= 0.0
    {
        return Err(Error::InvalidConfig(
            "procedure proportions must be non-negative, one per procedure".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = allocate(n, &weights)
        .into_iter()
        .enumerate()
        .flat_map(|(i, c)| std::iter::repeat_n(i, c))
        .collect();
    labels.shuffle(&mut rng);
    let outcome = WeightedIndex::new(w).map_err(|e| Error::InvalidConfig(e.to_string()))?;

    labels
        .into_iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            let ground_truth = Decision::ALL[outcome.sample(&mut r)];
            sample_request(
                corpus,
                &procs[pi],
                ground_truth,
                id_offset + i as u64,
                config,
                &mut r,
            )
        })
        .collect()
}

fn sample_request<R: Rng>(
    corpus: &Corpus,
    p: &ProcedureConfig,
    ground_truth: Decision,
    request_id: u64,
    config: &RequestConfig,
    rng: &mut R,
) -> Result<PaRequest> {
    let codes: Vec<&str> = p.icd10_pool().collect();
    for _ in 0..config.max_attempts {
        let icd10 = codes[rng.gen_range(0..codes.len())];
        let age = rng.gen_range(p.age_range.0..=p.age_range.1);
        let query = embed_text(&super::text::request_text(p, icd10, age))?;
        let top: Vec<usize> = corpus
            .ranked_ids(&query)
            .into_iter()
            .take(config.evidence_depth)
            .filter(|&id| corpus.chunks()[id].covers(&p.cpt))
            .collect();
        let chunk = |id: usize| &corpus.chunks()[id];
        let matching_criteria: Vec<usize> = top
            .iter()
            .copied()
            .filter(|&id| {
                let c = chunk(id);
                c.chunk_type == ChunkType::CoverageCriteria
                    && c.icd10_tags.contains(icd10)
                    && c.age_range.is_some_and(|(lo, hi)| (lo..=hi).contains(&age))
            })
            .collect();
        let matching_exclusion: Vec<usize> = top
            .iter()
            .copied()
            .filter(|&id| {
                let c = chunk(id);
                c.chunk_type == ChunkType::Exclusion && c.icd10_tags.contains(icd10)
            })
            .collect();

        let required: Option<BTreeSet<usize>> = match ground_truth {
            Decision::Approve => matching_criteria.first().map(|&c| {
                let billing: Vec<usize> = top
                    .iter()
                    .copied()
                    .filter(|&id| chunk(id).chunk_type == ChunkType::Billing)
                    .collect();
                let mut set = BTreeSet::from([c]);
                if let Some(&b) = billing.choose(rng) {
                    set.insert(b);
                }
                set
            }),
            Decision::Deny => matching_exclusion.first().map(|&x| BTreeSet::from([x])),
            Decision::Pend => {
                let docs: Vec<usize> = top
                    .iter()
                    .copied()
                    .filter(|id| !matching_criteria.contains(id) && !matching_exclusion.contains(id))
                    .collect();
                docs.choose(rng).map(|&d| {
                    let mut set = BTreeSet::from([d]);
                    set.extend(matching_criteria.first());
                    set
                })
            }
        };
        if let Some(required_evidence) = required {
            return Ok(PaRequest {
                request_id,
                cpt: p.cpt.clone(),
                icd10: icd10.to_owned(),
                age,
                ground_truth,
                required_evidence,
            });
        }
    }
    Err(Error::InvalidConfig(format!(
        "could not construct a {ground_truth:?} request for {} within {} attempts",
        p.cpt, config.max_attempts
    )))
}

pub fn save_requests(requests: &[PaRequest], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in requests {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_requests(path: &Path) -> Result<Vec<PaRequest>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
