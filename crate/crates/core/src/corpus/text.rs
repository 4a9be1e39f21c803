//! Templated policy text. Each procedure has its own clinical vocabulary;
//! shared chunks draw most of their tokens from a common administrative
//! pool so they compete with procedure-specific chunks at retrieval time.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{ChunkType, ProcedureConfig};

pub(crate) const ADMIN_POOL: &[&str] = &[
    "prior authorization",
    "documentation in the medical record",
    "ordering practitioner",
    "medical necessity",
    "claim submission",
    "modifier",
    "units of service",
    "place of service",
    "reimbursement",
    "beneficiary",
    "coverage determination",
    "local coverage article",
    "advanced diagnostic imaging",
    "radiology",
    "contrast material",
    "accreditation",
    "appropriate use criteria",
    "clinical decision support",
    "qualified provider",
    "signature requirements",
    "date of service",
];

const BILLING_POOL: &[&str] = &[
    "billing and coding",
    "report the cpt code once per encounter",
    "icd-10 codes that support medical necessity",
    "claims lacking a covered diagnosis will be denied",
    "bill with the appropriate modifier",
    "revenue code",
    "the claim must include the ordering npi",
    "bundled services are not separately payable",
    "frequency limitations apply",
    "use the primary diagnosis in the first position",
];

const CRITERIA_POOL: &[&str] = &[
    "coverage indications",
    "is considered reasonable and necessary when",
    "clinical findings support the study",
    "the treating practitioner documents the indication",
    "results will change management",
    "symptoms persist despite initial evaluation",
    "documentation requirements",
    "limitations of coverage",
];

const EXCLUSION_POOL: &[&str] = &[
    "is not reasonable and necessary",
    "non-covered indications",
    "coverage is excluded",
    "will be denied as not medically necessary",
    "routine use without symptoms is excluded",
];

fn pick<'a, R: Rng, S: AsRef<str>>(rng: &mut R, pool: &'a [S], n: usize) -> Vec<&'a str> {
    let mut v: Vec<&str> = pool.iter().map(AsRef::as_ref).collect();
    v.shuffle(rng);
    v.truncate(n.min(pool.len()));
    v
}

fn code_phrase(procs: &[&ProcedureConfig], tags: &[String]) -> String {
    tags.iter()
        .map(|code| {
            let desc = procs
                .iter()
                .find_map(|p| p.icd10.iter().find(|d| &d.code == code))
                .map(|d| d.description.as_str())
                .unwrap_or("");
            format!("{code} {desc}")
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Administrative boilerplate carried by every request form and most policy
/// chunks.
pub(crate) const FORM: &str =
    "medical necessity documentation in the medical record from the ordering practitioner";

pub(crate) fn request_text(p: &ProcedureConfig, icd10: &str, age: u32) -> String {
    format!(
        "prior authorization request for {} cpt {}. diagnosis {icd10} {}. patient age {age}.",
        p.name,
        p.cpt,
        p.description_of(icd10).unwrap_or(""),
    )
}

const UNIQUE_ADMIN: std::ops::RangeInclusive<usize> = 8..=8;
const UNIQUE_EXTRAS: std::ops::RangeInclusive<usize> = 4..=4;
const UNIQUE_VOCAB: std::ops::RangeInclusive<usize> = 3..=3;

fn extras<R: Rng>(rng: &mut R, proc_: &ProcedureConfig, pool: &[&str]) -> String {
    let n = rng.gen_range(UNIQUE_EXTRAS);
    let mut v = pick(rng, pool, n);
    let m = rng.gen_range(UNIQUE_VOCAB);
    v.extend(pick(rng, &proc_.vocabulary, m));
    v.join(" ")
}

/// Text for a chunk owned by a single procedure.
pub(crate) fn unique_chunk_text<R: Rng>(
    rng: &mut R,
    proc_: &ProcedureConfig,
    chunk_type: ChunkType,
    tags: &[String],
    age_range: Option<(u32, u32)>,
) -> String {
    let head = format!("cpt {}", proc_.cpt);
    let n_admin = rng.gen_range(UNIQUE_ADMIN);
    let admin = pick(rng, ADMIN_POOL, n_admin).join(" ");
    let body = match chunk_type {
        ChunkType::CoverageCriteria => {
            let (lo, hi) = age_range.unwrap_or(proc_.age_range);
            format!(
                "{head} {}. diagnosis {}. patient age {lo} to {hi}. {}",
                pick(rng, CRITERIA_POOL, 1).join(" "),
                code_phrase(&[proc_], tags),
                extras(rng, proc_, CRITERIA_POOL),
            )
        }
        ChunkType::Billing => format!(
            "{head} {}. {}",
            pick(rng, BILLING_POOL, 1).join(" "),
            extras(rng, proc_, BILLING_POOL),
        ),
        ChunkType::Exclusion => format!(
            "{head} {}. diagnosis {}.",
            pick(rng, EXCLUSION_POOL, 1).join(" "),
            code_phrase(&[proc_], tags),
        ),
    };
    format!("{admin}. {body}")
}

/// Text for a chunk that belongs to several procedures. The leading
/// sentence is administrative boilerplate and holds at least half of the
/// words.
pub(crate) fn shared_chunk_text<R: Rng>(
    rng: &mut R,
    procs: &[&ProcedureConfig],
    chunk_type: ChunkType,
    tags: &[String],
    age_range: Option<(u32, u32)>,
) -> String {
    let cpts = procs
        .iter()
        .map(|p| p.cpt.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    let mut body = match chunk_type {
        ChunkType::CoverageCriteria => pick(rng, CRITERIA_POOL, 1).join(" "),
        ChunkType::Billing => pick(rng, BILLING_POOL, 1).join(" "),
        ChunkType::Exclusion => pick(rng, EXCLUSION_POOL, 1).join(" "),
    };
    body.push_str(&format!(". cpt {cpts}."));
    if !tags.is_empty() {
        body.push_str(&format!(" diagnosis {}.", code_phrase(procs, tags)));
    }
    if let Some((lo, hi)) = age_range {
        body.push_str(&format!(" patient age {lo} to {hi}."));
    }
    let body_words = body.split_whitespace().count();
    let mut admin: Vec<&str> = vec!["prior authorization", FORM];
    let mut admin_words: usize = admin.iter().map(|a| a.split_whitespace().count()).sum();
    let mut pool = pick(rng, ADMIN_POOL, ADMIN_POOL.len()).into_iter();
    while admin_words < body_words {
        let Some(phrase) = pool.next() else { break };
        admin_words += phrase.split_whitespace().count();
        admin.push(phrase);
    }
    format!("{}. {body}", admin.join(" "))
}
