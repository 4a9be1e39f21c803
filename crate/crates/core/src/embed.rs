//! Deterministic text embedding and the vector operations shared by the
//! corpus, the environment and the learners.
//!
//! The embedder hashes lowercase word unigrams, word bigrams and character
//! 3–5-grams into [`EMBED_DIM`] signed buckets and L2-normalizes the result.
//! It stands in for a sentence encoder: texts that share vocabulary land
//! close together, and the output is bit-identical on every platform.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimension of every text embedding.
pub const EMBED_DIM: usize = 384;

/// Seed mixed into every feature hash. Changing it changes every corpus
/// embedding and therefore the corpus hash.
pub const HASH_SEED: u64 = 0x5f3c_a11d_0e7b_2024;

const WORD_WEIGHT: f64 = 1.0;
const BIGRAM_WEIGHT: f64 = 0.7;
const CHAR_WEIGHT: f64 = 0.2;
const CHAR_NGRAMS: std::ops::RangeInclusive<usize> = 3..=5;

/// A fixed-length (384) real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zeros() -> Self {
        Self(vec![0.0; EMBED_DIM])
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != EMBED_DIM {
            return Err(Error::DimensionMismatch {
                expected: EMBED_DIM,
                got: values.len(),
            });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Dot product with another embedding.
    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// FNV-1a over the bytes, seeded, followed by a splitmix64 finalizer so the
/// top bit (used as the sign) is well mixed.
fn feature_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ HASH_SEED;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

fn add_feature(acc: &mut [f64], prefix: u8, feature: &str, weight: f64) {
    let mut bytes = Vec::with_capacity(feature.len() + 2);
    bytes.push(prefix);
    bytes.push(b':');
    bytes.extend_from_slice(feature.as_bytes());
    let h = feature_hash(&bytes);
    let bucket = (h % EMBED_DIM as u64) as usize;
    if h >> 63 == 1 {
        acc[bucket] -= weight;
    } else {
        acc[bucket] += weight;
    }
}

/// Lowercased word tokens. Periods and hyphens inside a token are kept so
/// codes like `m54.16` stay whole.
fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '.' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '.' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Embed `text` into a unit-norm 384-d vector.
pub fn embed_text(text: &str) -> Result<EmbeddingVector> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = vec![0.0; EMBED_DIM];
    for w in &words {
        add_feature(&mut acc, b'w', w, WORD_WEIGHT);
        let padded: Vec<char> = format!("<{w}>").chars().collect();
        for n in CHAR_NGRAMS {
            for gram in padded.windows(n) {
                let g: String = gram.iter().collect();
                add_feature(&mut acc, b'c', &g, CHAR_WEIGHT);
            }
        }
    }
    for pair in words.windows(2) {
        add_feature(&mut acc, b'b', &format!("{} {}", pair[0], pair[1]), BIGRAM_WEIGHT);
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(EmbeddingVector(acc))
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Element-wise mean. An empty input gives the zero vector; the result is
/// not re-normalized.
pub fn mean_pool<'a, I>(vectors: I) -> EmbeddingVector
where
    I: IntoIterator<Item = &'a EmbeddingVector>,
{
    let mut acc = vec![0.0; EMBED_DIM];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(&v.0) {
            *a += x;
        }
        n += 1;
    }
    if n > 1 {
        let inv = n as f64;
        acc.iter_mut().for_each(|a| *a /= inv);
    }
    EmbeddingVector(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; EMBED_DIM];
        v[i] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    #[test]
    fn embedding_is_deterministic_and_normalized() {
        let a = embed_text("MRI lumbar spine").unwrap();
        let b = embed_text("MRI lumbar spine").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.as_slice().len(), EMBED_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn whitespace_and_case_do_not_matter() {
        let a = embed_text("MRI   lumbar\tSpine").unwrap();
        let b = embed_text("mri lumbar spine").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embed_text("   \n"), Err(Error::EmptyInput)));
        assert!(matches!(embed_text(""), Err(Error::EmptyInput)));
    }

    #[test]
    fn shared_vocabulary_ranks_closer() {
        let q = embed_text("MRI lumbar spine").unwrap();
        let near = embed_text("lumbar MRI coverage").unwrap();
        let far = embed_text("tympanometry screening").unwrap();
        let c_near = cosine_similarity(q.as_slice(), near.as_slice()).unwrap();
        let c_far = cosine_similarity(q.as_slice(), far.as_slice()).unwrap();
        assert!(c_near > c_far, "{c_near} <= {c_far}");
    }

    #[test]
    fn cosine_edge_cases() {
        let v = embed_text("colonoscopy screening").unwrap();
        assert!((cosine_similarity(v.as_slice(), v.as_slice()).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(one_hot(0).as_slice(), one_hot(1).as_slice()).unwrap(),
            0.0
        );
        let z = EmbeddingVector::zeros();
        assert_eq!(cosine_similarity(z.as_slice(), v.as_slice()).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn mean_pool_cases() {
        let empty: Vec<EmbeddingVector> = vec![];
        assert!(mean_pool(&empty).is_zero());
        let v = embed_text("ct head").unwrap();
        assert_eq!(mean_pool([&v]), v);
        let m = mean_pool([&one_hot(0), &one_hot(1)]);
        assert_eq!(m.as_slice()[0], 0.5);
        assert_eq!(m.as_slice()[1], 0.5);
        assert!(m.as_slice()[2..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrong_length_vector_rejected() {
        assert!(EmbeddingVector::new(vec![0.0; 10]).is_err());
        let parsed: std::result::Result<EmbeddingVector, _> = serde_json::from_str("[1.0, 2.0]");
        assert!(parsed.is_err());
    }

    proptest! {
        #[test]
        fn embed_is_pure(s in "[a-zA-Z0-9 .-]{1,60}") {
            match (embed_text(&s), embed_text(&s)) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a, &b);
                    prop_assert!((a.norm() - 1.0).abs() <= 1e-6);
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "non-deterministic error"),
            }
        }

        #[test]
        fn cosine_symmetric_and_bounded(a in "[a-z ]{3,40}", b in "[a-z ]{3,40}") {
            if let (Ok(x), Ok(y)) = (embed_text(&a), embed_text(&b)) {
                let ab = cosine_similarity(x.as_slice(), y.as_slice()).unwrap();
                let ba = cosine_similarity(y.as_slice(), x.as_slice()).unwrap();
                prop_assert_eq!(ab, ba);
                prop_assert!(ab.abs() <= 1.0 + 1e-9);
            }
        }

        #[test]
        fn mean_pool_of_copies_is_identity(s in "[a-z]{3,20}", n in 1usize..8) {
            let v = embed_text(&s).unwrap();
            let copies = vec![v.clone(); n];
            let m = mean_pool(&copies);
            for (x, y) in m.as_slice().iter().zip(v.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
