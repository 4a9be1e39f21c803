use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pa_retrieval::pipeline::{self, AblationKind, Algo, Layout, RunConfig};
use pa_retrieval::Error;

/// Offline RL for adaptive policy retrieval: staged, file-based pipeline.
#[derive(Debug, Parser)]
#[command(name = "pa-retrieval", version)]
struct Cli {
    /// Output root shared by all stages.
    #[arg(long, global = true, env = "PA_RETRIEVAL_OUT", default_value = "runs/default")]
    out: PathBuf,
    /// JSON run configuration; defaults reproduce the reference protocol.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set env.step_cost=0.2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and save the chunk corpus.
    GenCorpus {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate the train and test request sets.
    GenRequests,
    /// Roll out the behavior mixture and log the offline dataset.
    Collect {
        /// Step cost baked into the logged rewards; defaults to env.step_cost.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train one offline learner on the default dataset.
    Train {
        #[arg(value_enum)]
        algo: AlgoArg,
    },
    /// Evaluate the four learners and three baselines on the test requests.
    Eval,
    /// Off-policy estimates (WIS and FQE) for the four learners.
    Ope,
    /// Paired t-tests between evaluated policies.
    Significance,
    /// Sweep one hyperparameter and evaluate every grid point.
    Ablate {
        #[arg(value_enum)]
        kind: KindArg,
        /// Comma-separated grid; beta points may carry epochs as `beta:epochs`.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Assemble the tables and figure data from earlier stages.
    Report,
    /// Print the effective configuration as JSON.
    ShowConfig,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AlgoArg {
    Bc,
    Cql,
    Iql,
    Dpo,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Bc => Algo::Bc,
            AlgoArg::Cql => Algo::Cql,
            AlgoArg::Iql => Algo::Iql,
            AlgoArg::Dpo => Algo::Dpo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Lambda,
    Beta,
    Alpha,
}

impl From<KindArg> for AblationKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Lambda => AblationKind::Lambda,
            KindArg::Beta => AblationKind::Beta,
            KindArg::Alpha => AblationKind::Alpha,
        }
    }
}

fn load_config(cli: &Cli) -> pa_retrieval::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn parse_grid(kind: AblationKind, grid: &str, cfg: &mut RunConfig) -> pa_retrieval::Result<()> {
    let bad = |s: &str| Error::InvalidConfig(format!("bad grid value `{s}`"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(s));
    let items: Vec<&str> = grid.split(',').filter(|s| !s.trim().is_empty()).collect();
    match kind {
        AblationKind::Lambda => cfg.ablation.lambda_grid = items.iter().map(|s| num(s)).collect::<Result<_, _>>()?,
        AblationKind::Alpha => cfg.ablation.alpha_grid = items.iter().map(|s| num(s)).collect::<Result<_, _>>()?,
        AblationKind::Beta => {
            let known = cfg.ablation.beta_grid.clone();
            cfg.ablation.beta_grid = items
                .iter()
                .map(|s| match s.split_once(':') {
                    Some((b, e)) => Ok((num(b)?, e.trim().parse().map_err(|_| bad(s))?)),
                    None => {
                        let b = num(s)?;
                        let epochs = known.iter().find(|(kb, _)| *kb == b).map_or(cfg.dpo.epochs, |(_, e)| *e);
                        Ok((b, epochs))
                    }
                })
                .collect::<pa_retrieval::Result<_>>()?;
        }
    }
    cfg.validate()
}

fn run(cli: Cli) -> pa_retrieval::Result<()> {
    let mut cfg = load_config(&cli)?;
    let layout = Layout::new(&cli.out);
    match cli.command {
        Command::GenCorpus { seed } => {
            if let Some(s) = seed {
                cfg.corpus_seed = s;
            }
            let c = pipeline::gen_corpus(&cfg, &layout)?;
            println!("corpus: {} chunks, sha256 {}", c.len(), c.hash());
        }
        Command::GenRequests => {
            let (train, test) = pipeline::gen_requests(&cfg, &layout)?;
            println!("requests: {} train, {} test", train.len(), test.len());
        }
        Command::Collect { lambda } => {
            let ds = pipeline::collect(&cfg, &layout, lambda.unwrap_or(cfg.env.step_cost))?;
            println!(
                "dataset: {} episodes, {} transitions, mean steps {:.2}",
                ds.episodes.len(),
                ds.num_transitions(),
                ds.mean_steps()
            );
        }
        Command::Train { algo } => {
            let p = pipeline::train(&cfg, &layout, algo.into())?;
            if let Some(last) = p.metrics.last() {
                let values: Vec<String> = last.values.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
                println!("{}: epoch {} {}", p.label, last.epoch, values.join(", "));
            }
        }
        Command::Eval => {
            for r in pipeline::eval(&cfg, &layout)? {
                println!(
                    "{:<12} accuracy {:5.1}%  return {:+.3}  steps {:5.2}",
                    r.label,
                    100.0 * r.accuracy,
                    r.mean_return,
                    r.mean_steps
                );
            }
        }
        Command::Ope => {
            let s = pipeline::ope(&cfg, &layout)?;
            for r in &s.reports {
                println!("{:<12} WIS {:+.3}  FQE {:+.3}", r.label, r.wis_estimate, r.fqe_mean_q);
            }
        }
        Command::Significance => {
            for s in pipeline::significance(&cfg, &layout)? {
                println!("{:<24} {:+.1}pp  p {}", s.label, s.delta_pp, s.p_display());
            }
        }
        Command::Ablate { kind, grid } => {
            let kind = kind.into();
            if let Some(g) = grid {
                parse_grid(kind, &g, &mut cfg)?;
            }
            let r = pipeline::ablate(&cfg, &layout, kind)?;
            for row in &r.rows {
                println!(
                    "{} {} = {}: accuracy {:5.1}%  return {:+.3}  steps {:5.2}",
                    r.algorithm,
                    kind.name(),
                    row.value,
                    100.0 * row.accuracy,
                    row.mean_return,
                    row.mean_steps
                );
            }
        }
        Command::Report => {
            let r = pipeline::write_report(&cfg, &layout)?;
            print!("{}", pipeline::render_text(&r));
        }
        Command::ShowConfig => println!("{}", cfg.to_json()?),
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingStage { .. } | Error::InvalidConfig(_) | Error::Io { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
