//! Operator surface: corpus synthesis and ingestion, index building,
//! gate and policy training, single-report reranking, and evaluation,
//! all driven by one JSON config file.
//!
//! Exit codes: 0 ok, 2 configuration problem, 3 pipeline stage failure,
//! 4 unknown report id.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bugrank::config::RunConfig;
use bugrank::corpus::{generate_synthetic, load_corpus, write_corpus};
use bugrank::error::Error;
use bugrank::filtergate::FEATURE_NAMES;
use bugrank::pipeline;
use bugrank::retrieval::{build_index, save_index};

#[derive(Parser)]
#[command(name = "bugrank", version, about = "Bug localization: shortlist, gate, rerank")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override a config key, e.g. --set a2c.episodes=500. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known ground truth.
    Synth(ConfigArgs),
    /// Load and validate a corpus, printing summary counts.
    Ingest(ConfigArgs),
    /// Build and persist the BM25 index for every snapshot.
    Index(ConfigArgs),
    /// Train the rankability gate and report feature importance.
    TrainFilter(ConfigArgs),
    /// Train the reranking policy on gate-positive training reports.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated reward scales to sweep, e.g. 1,3,6,9.
        #[arg(long, value_name = "LIST")]
        sweep_m: Option<String>,
    },
    /// Rerank one report with the trained artifacts.
    Rerank {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_name = "ID")]
        report_id: String,
    },
    /// Evaluate the test split from persisted artifacts.
    Evaluate(ConfigArgs),
    /// Run every stage end to end.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run a paired comparison instead; only "entropy" is supported.
        #[arg(long, value_name = "NAME")]
        ablation: Option<String>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_STAGE: u8 = 3;
const EXIT_LOOKUP: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::UnknownReport(_) => EXIT_LOOKUP,
        Error::Stage { source, .. } => match source.as_ref() {
            Error::UnknownReport(_) => EXIT_LOOKUP,
            _ => EXIT_STAGE,
        },
        Error::Config(_)
        | Error::MissingManifest(_)
        | Error::Parse { .. }
        | Error::DanglingReference { .. }
        | Error::DuplicateId(_)
        | Error::Validation(_)
        | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_STAGE,
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, Error> {
    if args.overrides.is_empty() {
        RunConfig::load(&args.config)
    } else {
        RunConfig::load_with_overrides(&args.config, &args.overrides)
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth(args) => {
            let cfg = load_config(&args)?;
            let corpus = generate_synthetic(&cfg.synth_params())?;
            write_corpus(&corpus, &cfg.corpus_dir)?;
            println!(
                "wrote {} reports and {} snapshot(s) to {}",
                corpus.reports.len(),
                corpus.snapshots.len(),
                cfg.corpus_dir.display()
            );
            Ok(())
        }
        Command::Ingest(args) => {
            let cfg = load_config(&args)?;
            let corpus = load_corpus(&cfg.corpus_dir)?;
            let n_files: usize = corpus.snapshots.values().map(|s| s.len()).sum();
            println!(
                "{}: {} reports, {} snapshot(s), {} files",
                cfg.corpus_dir.display(),
                corpus.reports.len(),
                corpus.snapshots.len(),
                n_files
            );
            Ok(())
        }
        Command::Index(args) => {
            let cfg = load_config(&args)?;
            let corpus = load_corpus(&cfg.corpus_dir)?;
            if let Some(parent) = cfg.index_file.parent() {
                std::fs::create_dir_all(parent)?;
            }
            let n = corpus.snapshots.len();
            for (version, snapshot) in &corpus.snapshots {
                let index = build_index(snapshot)?;
                let path = cfg.index_path(version, n);
                save_index(&index, &path)?;
                println!(
                    "{version}: {} docs, {} terms -> {}",
                    index.doc_count(),
                    index.term_count(),
                    path.display()
                );
            }
            Ok(())
        }
        Command::TrainFilter(args) => {
            let cfg = load_config(&args)?;
            let prepared = pipeline::prepare(&cfg)?;
            let gate = pipeline::train_gate_stage(&prepared, &cfg)?;
            if let Some(parent) = cfg.gate_file.parent() {
                std::fs::create_dir_all(parent)?;
            }
            bugrank::filtergate::save_gate(&gate, &cfg.gate_file)?;
            let importance = bugrank::filtergate::importance(&gate);
            println!("gate written to {}", cfg.gate_file.display());
            println!("feature importance (weight):");
            for (feature, count) in importance.ranked() {
                println!("  {:<16} {count}", FEATURE_NAMES[feature]);
            }
            Ok(())
        }
        Command::Train { config, sweep_m } => {
            let cfg = load_config(&config)?;
            match sweep_m {
                Some(list) => {
                    let ms: Vec<f64> = list
                        .split(',')
                        .map(|s| {
                            s.trim()
                                .parse::<f64>()
                                .map_err(|e| Error::Config(format!("sweep_m: '{s}': {e}")))
                        })
                        .collect::<Result<_, _>>()?;
                    let curves = pipeline::run_m_sweep(&cfg, &ms)?;
                    for (m, log) in curves {
                        let n = log.entries.len();
                        println!(
                            "M={m}: {n} episodes, final ma100 return {:.4}",
                            log.entries.last().map(|e| e.ma100_return).unwrap_or(0.0)
                        );
                    }
                }
                None => {
                    let outcome = pipeline::run_pipeline(&cfg)?;
                    println!(
                        "trained on {} gate-positive reports; test MRR {:.4} (unadjusted)",
                        outcome.n_rl_train, outcome.eval.unadjusted.mrr
                    );
                }
            }
            Ok(())
        }
        Command::Rerank { config, report_id } => {
            use std::io::Write;
            let cfg = load_config(&config)?;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            match pipeline::rerank_report(&cfg, &report_id)? {
                pipeline::RerankOutput::Filtered { probability } => {
                    let _ = writeln!(out, "FILTERED p={probability:.2}");
                }
                pipeline::RerankOutput::Ranked(ranked) => {
                    for (rank, (path, prob)) in ranked.iter().enumerate() {
                        // Stop quietly when the reader closes the pipe.
                        if writeln!(out, "{}\t{}\t{:.4}", rank + 1, path, prob).is_err() {
                            break;
                        }
                    }
                }
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = load_config(&args)?;
            let eval = pipeline::evaluate_from_artifacts(&cfg)?;
            println!("unadjusted (gate-positive only):");
            println!("{}", eval.unadjusted.to_table());
            println!("adjusted (filtered count as zero):");
            println!("{}", eval.adjusted.to_table());
            Ok(())
        }
        Command::Pipeline { config, ablation } => {
            let cfg = load_config(&config)?;
            match ablation.as_deref() {
                None => {
                    let outcome = pipeline::run_pipeline(&cfg)?;
                    println!(
                        "pipeline complete: {} train / {} test reports, {} in RL pool",
                        outcome.n_train, outcome.n_test, outcome.n_rl_train
                    );
                    println!("unadjusted:");
                    println!("{}", outcome.eval.unadjusted.to_table());
                    println!("adjusted:");
                    println!("{}", outcome.eval.adjusted.to_table());
                    Ok(())
                }
                Some("entropy") => {
                    let (without, with) = pipeline::run_ablation(&cfg)?;
                    print!("{}", pipeline::ablation_table(&without, &with));
                    Ok(())
                }
                Some(other) => Err(Error::Config(format!("unknown ablation '{other}'"))),
            }
        }
    }
}
