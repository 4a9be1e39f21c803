//! Train one learner on the default dataset under several trainer seeds
//! and print its test-set accuracy, steps and return per seed.
//!
//! cargo run --release --example seed_sweep -- iql 5

use pa_retrieval::corpus::{build_corpus, generate_requests, Split};
use pa_retrieval::eval::evaluate_policy;
use pa_retrieval::offline::{collect_dataset, CollectConfig};
use pa_retrieval::pipeline::{RunConfig, TEST_ID_OFFSET};
use pa_retrieval::trainers::*;

fn main() -> pa_retrieval::Result<()> {
    let mut args = std::env::args().skip(1);
    let algo = args.next().unwrap_or_else(|| "iql".into());
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let cfg = RunConfig::default();
    let corpus = build_corpus(cfg.corpus_seed, &cfg.corpus)?;
    let train = generate_requests(&corpus, cfg.train_request_seed, cfg.n_train_requests, &cfg.requests, &Split::Train, 0)?;
    let test = generate_requests(
        &corpus,
        cfg.test_request_seed,
        cfg.n_test_requests,
        &cfg.requests,
        &Split::Test,
        TEST_ID_OFFSET,
    )?;
    let ds = collect_dataset(
        &corpus,
        &train,
        &CollectConfig {
            seed: cfg.seed,
            n_episodes: cfg.n_episodes,
            mixture: cfg.mixture.clone(),
            env: cfg.env,
            store_observations: false,
        },
    )?;
    for seed in 0..seeds {
        let p = match algo.as_str() {
            "bc" => train_bc(&ds, &BcConfig { seed, ..cfg.bc.clone() }),
            "cql" => train_cql(&ds, &CqlConfig { seed, ..cfg.cql.clone() }),
            "iql" => train_iql(&ds, &IqlConfig { seed, ..cfg.iql.clone() }),
            "dpo" => train_dpo(&ds, &DpoConfig { seed, ..cfg.dpo.clone() }),
            other => panic!("unknown learner `{other}`; expected bc, cql, iql or dpo"),
        }?;
        let r = evaluate_policy(&p, &corpus, &test, cfg.env, cfg.seed)?;
        println!(
            "{algo} seed {seed}: accuracy {:.3}  steps {:.2}  return {:+.3}",
            r.accuracy, r.mean_steps, r.mean_return
        );
    }
    Ok(())
}
