use super::{ChunkType, Corpus, Decision, PaRequest};
use crate::error::Result;

/// Decide a request from the given evidence only.
///
/// Rules, first match wins:
/// 1. all of the request's required evidence is present: its ground truth;
/// 2. an exclusion chunk for the procedure lists the diagnosis: deny;
/// 3. a coverage-criteria chunk for the procedure lists the diagnosis and
///    its age range contains the patient: approve;
/// 4. otherwise pend.
pub fn oracle_decide(corpus: &Corpus, request: &PaRequest, evidence: &[usize]) -> Result<Decision> {
    let chunks = evidence
        .iter()
        .map(|&id| corpus.chunk(id))
        .collect::<Result<Vec<_>>>()?;

    if request
        .required_evidence
        .iter()
        .all(|id| evidence.contains(id))
    {
        return Ok(request.ground_truth);
    }
    let relevant = || {
        chunks
            .iter()
            .filter(|c| c.covers(&request.cpt) && c.icd10_tags.contains(&request.icd10))
    };
    if relevant().any(|c| c.chunk_type == ChunkType::Exclusion) {
        return Ok(Decision::Deny);
    }
    if relevant().any(|c| {
        c.chunk_type == ChunkType::CoverageCriteria
            && c
                .age_range
                .is_some_and(|(lo, hi)| (lo..=hi).contains(&request.age))
    }) {
        return Ok(Decision::Approve);
    }
    Ok(Decision::Pend)
}
