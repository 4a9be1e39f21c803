//! File-based experiment stages. Every stage reads its inputs from the
//! output root, writes its outputs there, and is deterministic in the run
//! configuration.

mod config;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_corpus, generate_requests, load_embedding_overrides, load_requests, save_requests, Corpus,
    PaRequest, Split,
};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_policy, fqe_estimate, paired_t_test, wis_estimate, EvalReport, OpeReport, SignificanceReport,
};
use crate::offline::{collect_dataset, BehaviorPolicy, CollectConfig, Dataset};
use crate::trainers::{train_bc, train_cql, train_dpo, train_iql, PolicyArtifact};

pub use config::{AblationConfig, RunConfig, TEST_ID_OFFSET};
pub use report::{build_report, render_text, write_report, Report};

/// Where each stage reads and writes, relative to an output root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn train_requests(&self) -> PathBuf {
        self.root.join("requests").join("train.jsonl")
    }

    pub fn test_requests(&self) -> PathBuf {
        self.root.join("requests").join("test.jsonl")
    }

    pub fn dataset(&self, step_cost: f64) -> PathBuf {
        self.root.join("datasets").join(format!("lambda_{step_cost}.jsonl"))
    }

    pub fn policy(&self, algo: Algo) -> PathBuf {
        self.root.join("policies").join(format!("{}.json", algo.name()))
    }

    pub fn eval(&self, slug: &str) -> PathBuf {
        self.root.join("eval").join(format!("{slug}.json"))
    }

    pub fn ope(&self) -> PathBuf {
        self.root.join("ope.json")
    }

    pub fn significance(&self) -> PathBuf {
        self.root.join("significance.json")
    }

    pub fn ablation(&self, kind: AblationKind) -> PathBuf {
        self.root.join("ablation").join(format!("{}.json", kind.name()))
    }

    pub fn ablation_policy(&self, kind: AblationKind, value: f64, seed: u64) -> PathBuf {
        self.root
            .join("ablation")
            .join(kind.name())
            .join(format!("{value}_seed{seed}.json"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// The four offline learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algo {
    Bc,
    Cql,
    Iql,
    Dpo,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Bc, Algo::Cql, Algo::Iql, Algo::Dpo];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Bc => "bc",
            Algo::Cql => "cql",
            Algo::Iql => "iql",
            Algo::Dpo => "dpo",
        }
    }

    pub fn stage(self) -> String {
        format!("train {}", self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Lambda,
    Beta,
    Alpha,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [AblationKind::Lambda, AblationKind::Beta, AblationKind::Alpha];

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Lambda => "lambda",
            AblationKind::Beta => "beta",
            AblationKind::Alpha => "alpha",
        }
    }
}

/// Main-table policies in display order, with their evaluation file slugs.
pub const MAIN_POLICIES: [&str; 7] = ["dpo", "cql", "bc", "iql", "fixedk5", "fixedk3", "heuristic"];

/// Pairs compared in the significance table.
pub const COMPARISONS: [(&str, &str); 8] = [
    ("dpo", "cql"),
    ("dpo", "iql"),
    ("dpo", "bc"),
    ("cql", "iql"),
    ("cql", "bc"),
    ("cql", "fixedk3"),
    ("cql", "fixedk5"),
    ("cql", "heuristic"),
];

fn require(path: &Path, stage: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingStage {
            path: path.to_path_buf(),
            stage: stage.into(),
        })
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> Result<T> {
    require(path, stage)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Build the corpus, apply embedding overrides if configured, and save it.
pub fn gen_corpus(cfg: &RunConfig, layout: &Layout) -> Result<Corpus> {
    let mut corpus = build_corpus(cfg.corpus_seed, &cfg.corpus)?;
    if let Some(path) = &cfg.embedding_overrides {
        corpus = corpus.with_embeddings(&load_embedding_overrides(Path::new(path))?)?;
    }
    let path = layout.corpus();
    ensure_parent(&path)?;
    corpus.save_jsonl(&path)?;
    Ok(corpus)
}

pub fn load_corpus(cfg: &RunConfig, layout: &Layout) -> Result<Corpus> {
    let path = layout.corpus();
    require(&path, "gen-corpus")?;
    Corpus::load_jsonl(&path, &cfg.corpus)
}

pub fn gen_requests(cfg: &RunConfig, layout: &Layout) -> Result<(Vec<PaRequest>, Vec<PaRequest>)> {
    let corpus = load_corpus(cfg, layout)?;
    let train = generate_requests(
        &corpus,
        cfg.train_request_seed,
        cfg.n_train_requests,
        &cfg.requests,
        &Split::Train,
        0,
    )?;
    let test = generate_requests(
        &corpus,
        cfg.test_request_seed,
        cfg.n_test_requests,
        &cfg.requests,
        &Split::Test,
        TEST_ID_OFFSET,
    )?;
    for (path, reqs) in [(layout.train_requests(), &train), (layout.test_requests(), &test)] {
        ensure_parent(&path)?;
        save_requests(reqs, &path)?;
    }
    Ok((train, test))
}

fn load_split(path: &Path) -> Result<Vec<PaRequest>> {
    require(path, "gen-requests")?;
    load_requests(path)
}

fn env_with(cfg: &RunConfig, step_cost: f64) -> EnvConfig {
    EnvConfig {
        step_cost,
        ..cfg.env
    }
}

/// Collect the logged dataset with `step_cost` baked into its rewards.
pub fn collect(cfg: &RunConfig, layout: &Layout, step_cost: f64) -> Result<Dataset> {
    let corpus = load_corpus(cfg, layout)?;
    let train = load_split(&layout.train_requests())?;
    let ds = collect_dataset(
        &corpus,
        &train,
        &CollectConfig {
            seed: cfg.seed,
            n_episodes: cfg.n_episodes,
            mixture: cfg.mixture.clone(),
            env: env_with(cfg, step_cost),
            store_observations: cfg.store_observations,
        },
    )?;
    let path = layout.dataset(step_cost);
    ensure_parent(&path)?;
    ds.save(&path)?;
    Ok(ds)
}

pub fn load_dataset(cfg: &RunConfig, layout: &Layout, step_cost: f64) -> Result<Dataset> {
    let path = layout.dataset(step_cost);
    require(&path, "collect")?;
    let corpus = load_corpus(cfg, layout)?;
    let train = load_split(&layout.train_requests())?;
    Dataset::load(&path, &corpus, &train, cfg.store_observations)
}

fn train_on(algo: Algo, cfg: &RunConfig, ds: &Dataset) -> Result<PolicyArtifact> {
    match algo {
        Algo::Bc => train_bc(ds, &cfg.bc),
        Algo::Cql => train_cql(ds, &cfg.cql),
        Algo::Iql => train_iql(ds, &cfg.iql),
        Algo::Dpo => train_dpo(ds, &cfg.dpo),
    }
}

/// Train one learner on the default-λ dataset and save its checkpoint.
pub fn train(cfg: &RunConfig, layout: &Layout, algo: Algo) -> Result<PolicyArtifact> {
    let ds = load_dataset(cfg, layout, cfg.env.step_cost)?;
    let policy = train_on(algo, cfg, &ds)?;
    write_json(&layout.policy(algo), &policy)?;
    Ok(policy)
}

pub fn load_policy(layout: &Layout, algo: Algo) -> Result<PolicyArtifact> {
    read_json(&layout.policy(algo), &algo.stage())
}

fn main_policy(layout: &Layout, slug: &str) -> Result<PolicyArtifact> {
    Ok(match slug {
        "fixedk5" => PolicyArtifact::baseline(BehaviorPolicy::FixedK { k: 5 }),
        "fixedk3" => PolicyArtifact::baseline(BehaviorPolicy::FixedK { k: 3 }),
        "heuristic" => PolicyArtifact::baseline(BehaviorPolicy::heuristic()),
        _ => {
            let algo = Algo::ALL
                .into_iter()
                .find(|a| a.name() == slug)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown policy {slug}")))?;
            let mut p = load_policy(layout, algo)?;
            if algo == Algo::Dpo {
                p.label = "DPO".into();
            }
            p
        }
    })
}

/// Evaluate the seven main policies on the test requests.
pub fn eval(cfg: &RunConfig, layout: &Layout) -> Result<Vec<EvalReport>> {
    let corpus = load_corpus(cfg, layout)?;
    let test = load_split(&layout.test_requests())?;
    let policies = MAIN_POLICIES
        .iter()
        .map(|slug| main_policy(layout, slug))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(policies.len());
    for (slug, p) in MAIN_POLICIES.iter().zip(&policies) {
        let r = evaluate_policy(p, &corpus, &test, cfg.env, cfg.seed)?;
        write_json(&layout.eval(slug), &r)?;
        reports.push(r);
    }
    Ok(reports)
}

pub fn load_eval(layout: &Layout) -> Result<Vec<EvalReport>> {
    MAIN_POLICIES
        .iter()
        .map(|slug| read_json(&layout.eval(slug), "eval"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpeSummary {
    pub dataset_return_min: f64,
    pub dataset_return_max: f64,
    pub reports: Vec<OpeReport>,
}

/// WIS and FQE for the four learners on the default dataset.
pub fn ope(cfg: &RunConfig, layout: &Layout) -> Result<OpeSummary> {
    let ds = load_dataset(cfg, layout, cfg.env.step_cost)?;
    let returns = ds.episodes.iter().map(|e| e.total_return);
    let summary = OpeSummary {
        dataset_return_min: returns.clone().fold(f64::INFINITY, f64::min),
        dataset_return_max: returns.fold(f64::NEG_INFINITY, f64::max),
        reports: [Algo::Cql, Algo::Dpo, Algo::Iql, Algo::Bc]
            .into_iter()
            .map(|algo| {
                let p = main_policy(layout, algo.name())?;
                Ok(OpeReport {
                    kind: p.kind,
                    label: p.label.clone(),
                    wis_estimate: wis_estimate(&p, &ds)?,
                    fqe_mean_q: fqe_estimate(&p, &ds, &cfg.fqe)?,
                })
            })
            .collect::<Result<_>>()?,
    };
    write_json(&layout.ope(), &summary)?;
    Ok(summary)
}

pub fn load_ope(layout: &Layout) -> Result<OpeSummary> {
    read_json(&layout.ope(), "ope")
}

/// Paired t-tests over the comparison list.
pub fn significance(cfg: &RunConfig, layout: &Layout) -> Result<Vec<SignificanceReport>> {
    let reports = load_eval(layout)?;
    let find = |slug: &str| {
        let i = MAIN_POLICIES.iter().position(|s| *s == slug).expect("listed slug");
        &reports[i]
    };
    let out = COMPARISONS
        .iter()
        .map(|(a, b)| {
            let (ra, rb) = (find(a), find(b));
            paired_t_test(
                &format!("{} vs {}", ra.label, rb.label),
                &ra.correct_indicators(),
                &rb.correct_indicators(),
                cfg.seed,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&layout.significance(), &out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub accuracy: f64,
    pub mean_steps: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    /// Training epochs, for sweeps that vary them with the value.
    pub epochs: Option<usize>,
    pub accuracy: f64,
    pub mean_steps: f64,
    pub mean_return: f64,
    pub runs: Vec<AblationRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub algorithm: String,
    pub rows: Vec<AblationRow>,
}

/// Reuse a main-run checkpoint when it was trained with exactly this
/// configuration on a dataset with this step cost.
fn reusable(layout: &Layout, algo: Algo, config: &serde_json::Value, step_cost: f64) -> Option<PolicyArtifact> {
    let p = load_policy(layout, algo).ok()?;
    (p.config == *config && p.step_cost == Some(step_cost)).then_some(p)
}

/// Train and evaluate one learner per grid point and seed.
pub fn ablate(cfg: &RunConfig, layout: &Layout, kind: AblationKind) -> Result<AblationReport> {
    let corpus = load_corpus(cfg, layout)?;
    let test = load_split(&layout.test_requests())?;
    let grid: Vec<(f64, Option<usize>)> = match kind {
        AblationKind::Lambda => cfg.ablation.lambda_grid.iter().map(|&v| (v, None)).collect(),
        AblationKind::Beta => cfg.ablation.beta_grid.iter().map(|&(b, e)| (b, Some(e))).collect(),
        AblationKind::Alpha => cfg.ablation.alpha_grid.iter().map(|&v| (v, None)).collect(),
    };
    if grid.is_empty() {
        return Err(Error::InvalidConfig(format!("{} grid is empty", kind.name())));
    }
    let algo = if kind == AblationKind::Beta { Algo::Dpo } else { Algo::Cql };
    let mut rows = Vec::with_capacity(grid.len());
    for (value, epochs) in grid {
        let step_cost = if kind == AblationKind::Lambda {
            value
        } else {
            cfg.env.step_cost
        };
        let ds = match kind {
            AblationKind::Lambda => collect(cfg, layout, step_cost)?,
            _ => load_dataset(cfg, layout, step_cost)?,
        };
        let mut runs = Vec::with_capacity(cfg.ablation.seeds.len());
        for &seed in &cfg.ablation.seeds {
            let mut point = cfg.clone();
            match kind {
                AblationKind::Lambda => point.cql.seed = seed,
                AblationKind::Alpha => {
                    point.cql.seed = seed;
                    point.cql.alpha = value;
                }
                AblationKind::Beta => {
                    point.dpo.seed = seed;
                    point.dpo.beta = value;
                    point.dpo.epochs = epochs.expect("beta grid carries epochs");
                }
            }
            let config = match algo {
                Algo::Dpo => serde_json::to_value(&point.dpo)?,
                _ => serde_json::to_value(&point.cql)?,
            };
            let policy = match reusable(layout, algo, &config, step_cost) {
                Some(p) => p,
                None => train_on(algo, &point, &ds)?,
            };
            write_json(&layout.ablation_policy(kind, value, seed), &policy)?;
            let r = evaluate_policy(&policy, &corpus, &test, env_with(cfg, step_cost), cfg.seed)?;
            runs.push(AblationRun {
                seed,
                accuracy: r.accuracy,
                mean_steps: r.mean_steps,
                mean_return: r.mean_return,
            });
        }
        let n = runs.len() as f64;
        rows.push(AblationRow {
            value,
            epochs,
            accuracy: runs.iter().map(|r| r.accuracy).sum::<f64>() / n,
            mean_steps: runs.iter().map(|r| r.mean_steps).sum::<f64>() / n,
            mean_return: runs.iter().map(|r| r.mean_return).sum::<f64>() / n,
            runs,
        });
    }
    let report = AblationReport {
        kind,
        algorithm: algo.name().to_uppercase(),
        rows,
    };
    write_json(&layout.ablation(kind), &report)?;
    Ok(report)
}

pub fn load_ablation(layout: &Layout, kind: AblationKind) -> Result<AblationReport> {
    read_json(&layout.ablation(kind), &format!("ablate {}", kind.name()))
}

/// Every stage in order: corpus, requests, data, the four learners,
/// evaluation, OPE, significance, the three sweeps and the report.
pub fn run_all(cfg: &RunConfig, layout: &Layout) -> Result<Report> {
    gen_corpus(cfg, layout)?;
    gen_requests(cfg, layout)?;
    collect(cfg, layout, cfg.env.step_cost)?;
    for algo in Algo::ALL {
        log::info!("training {}", algo.name());
        train(cfg, layout, algo)?;
    }
    eval(cfg, layout)?;
    ope(cfg, layout)?;
    significance(cfg, layout)?;
    for kind in AblationKind::ALL {
        log::info!("ablation {}", kind.name());
        ablate(cfg, layout, kind)?;
    }
    write_report(cfg, layout)
}
