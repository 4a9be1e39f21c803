//! Synthetic coverage-policy corpus, the prior-authorization request
//! generator, and the rule-based oracle.

mod defaults;
mod oracle;
mod requests;
mod text;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{cosine_similarity, embed_text, EmbeddingVector};
use crate::error::{Error, Result};

pub use defaults::default_procedures;
pub use oracle::oracle_decide;
pub use requests::{
    generate_requests, load_requests, save_requests, Decision, PaRequest, RequestConfig, Split,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkType {
    CoverageCriteria,
    Billing,
    Exclusion,
}

/// Counts of chunks per type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TypeCounts {
    pub coverage_criteria: usize,
    pub billing: usize,
    pub exclusion: usize,
}

impl TypeCounts {
    pub const fn new(coverage_criteria: usize, billing: usize, exclusion: usize) -> Self {
        Self {
            coverage_criteria,
            billing,
            exclusion,
        }
    }

    pub fn total(&self) -> usize {
        self.coverage_criteria + self.billing + self.exclusion
    }

    fn expand(&self) -> Vec<ChunkType> {
        let mut v = vec![ChunkType::CoverageCriteria; self.coverage_criteria];
        v.extend(std::iter::repeat_n(ChunkType::Billing, self.billing));
        v.extend(std::iter::repeat_n(ChunkType::Exclusion, self.exclusion));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub code: String,
    pub description: String,
}

/// One procedure row: identity, oracle metadata pools, and corpus/request
/// composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureConfig {
    pub cpt: String,
    pub name: String,
    pub icd10: Vec<Diagnosis>,
    pub age_range: (u32, u32),
    pub vocabulary: Vec<String>,
    /// Chunks whose procedure set contains this procedure.
    pub chunk_count: usize,
    /// How many of those are shared with another procedure.
    pub shared_count: usize,
    /// Type split of the chunks owned by this procedure alone.
    pub unique_types: TypeCounts,
    /// Relative weight in the training request split.
    pub train_weight: f64,
    /// Relative weight in the held-out request split.
    pub test_weight: f64,
}

impl ProcedureConfig {
    pub fn icd10_pool(&self) -> impl Iterator<Item = &str> {
        self.icd10.iter().map(|d| d.code.as_str())
    }

    pub fn description_of(&self, code: &str) -> Option<&str> {
        self.icd10
            .iter()
            .find(|d| d.code == code)
            .map(|d| d.description.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub procedures: Vec<ProcedureConfig>,
    /// Number of distinct chunks belonging to two or more procedures.
    pub shared_total: usize,
    pub shared_types: TypeCounts,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            procedures: default_procedures(),
            shared_total: 57,
            shared_types: TypeCounts::new(27, 25, 5),
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.procedures.is_empty() {
            return bad("no procedures".into());
        }
        let mut seen = BTreeSet::new();
        let mut memberships = 0;
        for p in &self.procedures {
            if !seen.insert(p.cpt.as_str()) {
                return bad(format!("duplicate cpt {}", p.cpt));
            }
            if p.shared_count > p.chunk_count {
                return bad(format!(
                    "{}: shared_count {} exceeds chunk_count {}",
                    p.cpt, p.shared_count, p.chunk_count
                ));
            }
            if p.unique_types.total() != p.chunk_count - p.shared_count {
                return bad(format!(
                    "{}: unique type split sums to {}, expected {}",
                    p.cpt,
                    p.unique_types.total(),
                    p.chunk_count - p.shared_count
                ));
            }
            if p.shared_count > self.shared_total {
                return bad(format!(
                    "{}: shared_count {} exceeds shared_total {}",
                    p.cpt, p.shared_count, self.shared_total
                ));
            }
            if p.icd10.is_empty() {
                return bad(format!("{}: empty icd10 pool", p.cpt));
            }
            if p.age_range.0 > p.age_range.1 {
                return bad(format!("{}: inverted age range", p.cpt));
            }
            if p.vocabulary.is_empty() {
                return bad(format!("{}: empty vocabulary", p.cpt));
            }
            if p.unique_types.coverage_criteria == 0 && p.shared_count == 0 {
                return bad(format!("{}: no coverage criteria chunk possible", p.cpt));
            }
            memberships += p.shared_count;
        }
        if self.shared_types.total() != self.shared_total {
            return bad(format!(
                "shared type split sums to {}, expected {}",
                self.shared_types.total(),
                self.shared_total
            ));
        }
        if memberships < 2 * self.shared_total {
            return bad(format!(
                "{memberships} shared memberships cannot give {} chunks two procedures each",
                self.shared_total
            ));
        }
        if self.shared_total > 0 && self.procedures.iter().filter(|p| p.shared_count > 0).count() < 2
        {
            return bad("shared chunks need at least two procedures".into());
        }
        Ok(())
    }

    pub fn procedure(&self, cpt: &str) -> Option<&ProcedureConfig> {
        self.procedures.iter().find(|p| p.cpt == cpt)
    }

    pub fn total_chunks(&self) -> usize {
        self.shared_total
            + self
                .procedures
                .iter()
                .map(|p| p.chunk_count - p.shared_count)
                .sum::<usize>()
    }
}

/// A paragraph-level unit of policy text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: usize,
    pub procedure_ids: BTreeSet<String>,
    pub chunk_type: ChunkType,
    pub text: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub icd10_tags: BTreeSet<String>,
    #[serde(default)]
    pub age_range: Option<(u32, u32)>,
}

impl Chunk {
    pub fn is_shared(&self) -> bool {
        self.procedure_ids.len() >= 2
    }

    pub fn covers(&self, cpt: &str) -> bool {
        self.procedure_ids.contains(cpt)
    }
}

/// The immutable chunk store plus the procedure table it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    config: CorpusConfig,
    chunks: Vec<Chunk>,
}

const MAX_LAYOUT_ATTEMPTS: u64 = 64;

/// Build the synthetic corpus. Deterministic in `seed`.
pub fn build_corpus(seed: u64, config: &CorpusConfig) -> Result<Corpus> {
    config.validate()?;
    let shared = (0..MAX_LAYOUT_ATTEMPTS)
        .find_map(|attempt| shared_layout(seed, attempt, config))
        .ok_or_else(|| {
            Error::InvalidConfig(
                "could not place shared chunks so every procedure has criteria and exclusion evidence"
                    .into(),
            )
        })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunks = Vec::with_capacity(config.total_chunks());

    for p in &config.procedures {
        for chunk_type in p.unique_types.expand() {
            let (tags, age_range) = match chunk_type {
                ChunkType::CoverageCriteria => {
                    (sample_tags(&mut rng, p, 1), Some(sample_age_band(&mut rng, p.age_range)))
                }
                ChunkType::Exclusion => (sample_tags(&mut rng, p, 2), None),
                ChunkType::Billing => (BTreeSet::new(), None),
            };
            let tag_list: Vec<String> = tags.iter().cloned().collect();
            let text = text::unique_chunk_text(&mut rng, p, chunk_type, &tag_list, age_range);
            chunks.push(Chunk {
                id: chunks.len(),
                procedure_ids: BTreeSet::from([p.cpt.clone()]),
                chunk_type,
                embedding: embed_text(&text)?,
                text,
                icd10_tags: tags,
                age_range,
            });
        }
    }

    let tagged = tagged_members(&mut rng, config, &shared);
    for ((chunk_type, members), tagged) in shared.into_iter().zip(tagged) {
        let procs: Vec<&ProcedureConfig> = members.iter().map(|&i| &config.procedures[i]).collect();
        let mut tags = BTreeSet::new();
        for pi in tagged {
            tags.extend(sample_tags(&mut rng, &config.procedures[pi], 1));
        }
        let age_range = (chunk_type == ChunkType::CoverageCriteria).then(|| {
            let lo = procs.iter().map(|p| p.age_range.0).min().unwrap_or(0);
            let hi = procs.iter().map(|p| p.age_range.1).max().unwrap_or(120);
            (lo, hi)
        });
        let tag_list: Vec<String> = tags.iter().cloned().collect();
        let text = text::shared_chunk_text(&mut rng, &procs, chunk_type, &tag_list, age_range);
        chunks.push(Chunk {
            id: chunks.len(),
            procedure_ids: procs.iter().map(|p| p.cpt.clone()).collect(),
            chunk_type,
            embedding: embed_text(&text)?,
            text,
            icd10_tags: tags,
            age_range,
        });
    }

    Ok(Corpus {
        config: config.clone(),
        chunks,
    })
}

/// Assign procedure memberships to the shared chunks, least-filled first.
/// Returns `None` if some procedure ends up without criteria or exclusion
/// evidence in its pool.
fn shared_layout(
    seed: u64,
    attempt: u64,
    config: &CorpusConfig,
) -> Option<Vec<(ChunkType, Vec<usize>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_0000_0000_0000);
    rng.set_stream(attempt);
    let mut types = config.shared_types.expand();
    types.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); config.shared_total];

    let mut order: Vec<usize> = (0..config.procedures.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(config.procedures[i].shared_count));
    for pi in order {
        let need = config.procedures[pi].shared_count;
        if need == 0 {
            continue;
        }
        let mut slots: Vec<(usize, u32, usize)> = members
            .iter()
            .enumerate()
            .map(|(ci, m)| (m.len(), rng.gen::<u32>(), ci))
            .collect();
        slots.sort_unstable();
        for &(_, _, ci) in slots.iter().take(need) {
            members[ci].push(pi);
        }
    }
    if members.iter().any(|m| m.len() < 2) {
        return None;
    }
    for (pi, p) in config.procedures.iter().enumerate() {
        let has = |t: ChunkType, unique: usize| {
            unique > 0
                || members
                    .iter()
                    .zip(&types)
                    .any(|(m, &ct)| ct == t && m.contains(&pi))
        };
        if !has(ChunkType::CoverageCriteria, p.unique_types.coverage_criteria)
            || !has(ChunkType::Exclusion, p.unique_types.exclusion)
        {
            return None;
        }
    }
    Some(
        types
            .into_iter()
            .zip(members)
            .map(|(t, mut m)| {
                m.sort_unstable();
                (t, m)
            })
            .collect(),
    )
}

const SHARED_TAGGED_MEMBERS: usize = 8;

/// Pick which members of each shared criteria or exclusion chunk it lists
/// diagnoses for: up to two, least-served first, then one more wherever a
/// procedure would otherwise have no diagnosis-bearing chunk of that type.
fn tagged_members<R: Rng>(
    rng: &mut R,
    config: &CorpusConfig,
    shared: &[(ChunkType, Vec<usize>)],
) -> Vec<Vec<usize>> {
    let mut load: BTreeMap<(usize, ChunkType), usize> = BTreeMap::new();
    for (pi, p) in config.procedures.iter().enumerate() {
        load.insert((pi, ChunkType::CoverageCriteria), p.unique_types.coverage_criteria);
        load.insert((pi, ChunkType::Exclusion), p.unique_types.exclusion);
        load.insert((pi, ChunkType::Billing), 0);
    }
    let mut tagged: Vec<Vec<usize>> = vec![Vec::new(); shared.len()];
    for (ci, (chunk_type, members)) in shared.iter().enumerate() {
        if *chunk_type == ChunkType::Billing {
            continue;
        }
        let mut order = members.clone();
        order.shuffle(rng);
        order.sort_by_key(|&pi| load[&(pi, *chunk_type)]);
        for &pi in order.iter().take(SHARED_TAGGED_MEMBERS) {
            *load.get_mut(&(pi, *chunk_type)).expect("seeded above") += 1;
            tagged[ci].push(pi);
        }
    }
    for (ci, (chunk_type, members)) in shared.iter().enumerate() {
        if *chunk_type == ChunkType::Billing {
            continue;
        }
        for &pi in members {
            if load[&(pi, *chunk_type)] > 0 {
                continue;
            }
            let best = shared
                .iter()
                .enumerate()
                .filter(|(_, (t, m))| t == chunk_type && m.contains(&pi))
                .min_by_key(|(cj, _)| (tagged[*cj].len(), *cj))
                .map(|(cj, _)| cj)
                .unwrap_or(ci);
            tagged[best].push(pi);
            *load.get_mut(&(pi, *chunk_type)).expect("seeded above") += 1;
        }
    }
    for t in &mut tagged {
        t.sort_unstable();
    }
    tagged
}

fn sample_tags<R: Rng>(rng: &mut R, p: &ProcedureConfig, n: usize) -> BTreeSet<String> {
    let mut pool: Vec<&str> = p.icd10_pool().collect();
    pool.shuffle(rng);
    pool.into_iter().take(n).map(str::to_owned).collect()
}

/// Either the full procedure range or a band covering at least half of it.
fn sample_age_band<R: Rng>(rng: &mut R, (lo, hi): (u32, u32)) -> (u32, u32) {
    if rng.gen_bool(0.5) || hi - lo < 4 {
        return (lo, hi);
    }
    let half = (hi - lo) / 2;
    if rng.gen_bool(0.5) {
        (lo, lo + half + rng.gen_range(0..=half / 2))
    } else {
        (hi - half - rng.gen_range(0..=half / 2), hi)
    }
}

impl Corpus {
    pub fn config(&self) -> &CorpusConfig {
        &self.config
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, id: usize) -> Result<&Chunk> {
        self.chunks.get(id).ok_or(Error::UnknownChunk(id))
    }

    pub fn procedure(&self, cpt: &str) -> Option<&ProcedureConfig> {
        self.config.procedure(cpt)
    }

    /// Chunks whose procedure set contains `cpt`.
    pub fn chunks_for<'a>(&'a self, cpt: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.iter().filter(move |c| c.covers(cpt))
    }

    /// All chunk ids ordered by descending cosine similarity to `query`,
    /// ties broken by ascending id.
    pub fn ranked_ids(&self, query: &EmbeddingVector) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .chunks
            .iter()
            .map(|c| {
                let s = cosine_similarity(query.as_slice(), c.embedding.as_slice())
                    .expect("corpus embeddings are 384-d");
                (s, c.id)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().map(|(_, id)| id).collect()
    }

    /// Hex SHA-256 over the canonical JSON Lines serialization.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.chunks {
            h.update(serde_json::to_vec(c).expect("chunk serializes"));
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Replace chunk embeddings with externally computed vectors.
    pub fn with_embeddings(mut self, overrides: &BTreeMap<usize, EmbeddingVector>) -> Result<Self> {
        for (&id, v) in overrides {
            let chunk = self.chunks.get_mut(id).ok_or(Error::UnknownChunk(id))?;
            chunk.embedding = v.clone();
        }
        Ok(self)
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for c in &self.chunks {
            serde_json::to_writer(&mut w, c)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_jsonl(path: &Path, config: &CorpusConfig) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut chunks = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let chunk: Chunk = serde_json::from_str(&line)?;
            if chunk.id != chunks.len() {
                return Err(Error::Format(format!(
                    "chunk ids must be dense and ordered; found {} at position {}",
                    chunk.id,
                    chunks.len()
                )));
            }
            chunks.push(chunk);
        }
        Ok(Self {
            config: config.clone(),
            chunks,
        })
    }
}

/// Read a sidecar of externally computed embeddings: JSON Lines of
/// `{"id": <chunk id>, "embedding": [384 floats]}`.
pub fn load_embedding_overrides(path: &Path) -> Result<BTreeMap<usize, EmbeddingVector>> {
    #[derive(Deserialize)]
    struct Row {
        id: usize,
        embedding: EmbeddingVector,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        out.insert(row.id, row.embedding);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        build_corpus(7, &CorpusConfig::default()).unwrap()
    }

    #[test]
    fn default_corpus_matches_composition_table() {
        let c = corpus();
        assert_eq!(c.len(), 186);
        let count = |t| c.chunks().iter().filter(|ch| ch.chunk_type == t).count();
        assert_eq!(count(ChunkType::CoverageCriteria), 107);
        assert_eq!(count(ChunkType::Billing), 71);
        assert_eq!(count(ChunkType::Exclusion), 8);
        assert_eq!(c.chunks().iter().filter(|ch| ch.is_shared()).count(), 57);
        for p in &c.config().procedures {
            let mine: Vec<&Chunk> = c.chunks_for(&p.cpt).collect();
            assert_eq!(mine.len(), p.chunk_count, "{}", p.cpt);
            assert_eq!(mine.iter().filter(|ch| ch.is_shared()).count(), p.shared_count, "{}", p.cpt);
        }
        let colon: Vec<&Chunk> = c.chunks_for("45378").collect();
        assert_eq!(colon.len(), 30);
        assert!(colon.iter().all(|ch| !ch.is_shared()));
        let lumbar = c.chunks_for("72148").count();
        assert_eq!(lumbar, 55);
    }

    #[test]
    fn every_procedure_can_reach_all_three_decisions() {
        let c = corpus();
        for p in &c.config().procedures {
            assert!(c
                .chunks_for(&p.cpt)
                .any(|ch| ch.chunk_type == ChunkType::CoverageCriteria));
            assert!(c.chunks_for(&p.cpt).any(|ch| ch.chunk_type == ChunkType::Exclusion));
        }
        for ch in c.chunks() {
            match ch.chunk_type {
                ChunkType::CoverageCriteria => {
                    assert!(!ch.icd10_tags.is_empty());
                    assert!(ch.age_range.is_some());
                }
                ChunkType::Exclusion => assert!(!ch.icd10_tags.is_empty()),
                ChunkType::Billing => assert!(ch.icd10_tags.is_empty()),
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = corpus();
        let b = corpus();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
        let other = build_corpus(8, &CorpusConfig::default()).unwrap();
        assert_ne!(a.hash(), other.hash());
    }

    #[test]
    fn inconsistent_config_is_rejected() {
        let mut cfg = CorpusConfig::default();
        cfg.procedures[0].shared_count = cfg.procedures[0].chunk_count + 1;
        assert!(build_corpus(1, &cfg).is_err());

        let mut cfg = CorpusConfig::default();
        cfg.shared_total = 56;
        assert!(build_corpus(1, &cfg).is_err());

        let mut cfg = CorpusConfig::default();
        cfg.procedures[3].unique_types.billing += 1;
        assert!(matches!(build_corpus(1, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn shared_chunks_are_mostly_admin_vocabulary() {
        let c = corpus();
        for ch in c.chunks().iter().filter(|ch| ch.is_shared()) {
            let (admin, body) = ch.text.split_once(". ").unwrap();
            let admin_words = admin.split_whitespace().count();
            assert!(admin_words >= body.split_whitespace().count(), "{}", ch.text);
        }
    }

    #[test]
    fn cross_procedure_interference_exists() {
        let c = corpus();
        let mut found = false;
        'outer: for p in &c.config().procedures {
            let code = p.icd10[0].code.clone();
            let text = text::request_text(p, &code, p.age_range.0);
            let q = embed_text(&text).unwrap();
            for id in c.ranked_ids(&q).into_iter().take(10) {
                if !c.chunk(id).unwrap().covers(&p.cpt) {
                    found = true;
                    break 'outer;
                }
            }
        }
        assert!(found);
    }

    #[test]
    fn jsonl_round_trip_and_embedding_override() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        c.save_jsonl(&path).unwrap();
        let back = Corpus::load_jsonl(&path, c.config()).unwrap();
        assert_eq!(back, c);

        let mut v = vec![0.0; crate::embed::EMBED_DIM];
        v[3] = 1.0;
        let overrides = BTreeMap::from([(5usize, EmbeddingVector::new(v).unwrap())]);
        let side = dir.path().join("emb.jsonl");
        std::fs::write(
            &side,
            format!(
                "{}\n",
                serde_json::json!({"id": 5, "embedding": overrides[&5]})
            ),
        )
        .unwrap();
        let loaded = load_embedding_overrides(&side).unwrap();
        let swapped = c.clone().with_embeddings(&loaded).unwrap();
        assert_eq!(swapped.chunk(5).unwrap().embedding, overrides[&5]);
        assert_ne!(swapped.hash(), c.hash());
        assert!(c.clone().with_embeddings(&BTreeMap::from([(999, overrides[&5].clone())])).is_err());
    }
}
