use std::io::{self, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use stsam::dpc::{analyze_prompts, fuse};
use stsam::edf::evaluate_sample;
use stsam::losses::total_loss;
use stsam::orchestrator::corpus::generate_corpus;
use stsam::orchestrator::eval::evaluate;
use stsam::orchestrator::manifest::{read_records, resolve_record_paths, write_records};
use stsam::orchestrator::mock::{NoisyOracle, NoisyOracleConfig, PromptRefine, PromptRefineConfig};
use stsam::orchestrator::protocol::{serve, serve_tcp, RequestHandler};
use stsam::orchestrator::selftrain::{run_self_training, SegmenterSpec};
use stsam::orchestrator::{split_dataset, Config};
use stsam::pixmap::{normalize, read_map, read_scores, write_map, MapFormat};
use stsam::ProbMap;

#[derive(Parser)]
#[command(name = "stsam", version, about = "Pseudo-label filtering, prompting and self-training")]
struct Cli {
    /// TOML or JSON config with [edf], [dpc], [loss] and [selftrain] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for splitting, corpus generation and the mock segmenters
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stop self-training at this cycle
    #[arg(long, global = true)]
    cycles: Option<u32>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Split a record list into an initial labeled/unlabeled manifest
    Split {
        input: PathBuf,
        #[arg(long, default_value_t = 0.125)]
        fraction: f64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Score and weight one prediction
    Edf {
        input: PathBuf,
        /// Where to write the entropy-weighted map
        #[arg(long)]
        weighted: Option<PathBuf>,
    },
    /// Print the prompt set for a pseudo-label
    Prompts { input: PathBuf },
    /// Fuse a weighted pseudo-label with a promptable segmenter's map
    Fuse {
        weighted: PathBuf,
        refined: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Evaluate the training objective for a prediction and target
    Loss { pred: PathBuf, target: PathBuf },
    /// Run the self-training loop described by --config
    Selftrain,
    /// Serve the mock segmenter protocol
    MockSegmenter {
        #[arg(long, value_enum)]
        role: Role,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// `stdio` or `tcp:HOST:PORT`
        #[arg(long, default_value = "stdio")]
        listen: String,
        #[arg(long, default_value_t = 0.05)]
        flip_rate: f64,
        #[arg(long, default_value_t = 2)]
        blur: usize,
        /// Fixed maturity in [0,1] for the plain role
        #[arg(long, default_value_t = 0.0)]
        maturity: f64,
    },
    /// Mean IoU and MAE of a prediction directory against ground truth
    Eval { pred_dir: PathBuf, gt_dir: PathBuf },
    /// Write the synthetic corpus
    GenCorpus {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Plain,
    Promptable,
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(c) = cli.cycles {
        cfg.selftrain.max_cycles = c;
    }
    if let Some(seed) = cli.seed {
        if let SegmenterSpec::MockNoisy(n) = &mut cfg.selftrain.plain {
            n.seed = seed;
        }
    }
    Ok(cfg)
}

fn read_prob(path: &Path) -> Result<ProbMap<f64>> {
    Ok(read_map(path, MapFormat::from_path(path)?)?)
}

fn print(value: serde_json::Value) {
    let text = serde_json::to_string_pretty(&value).expect("serializable");
    // a closed pipe (e.g. `| head`) is not an error worth a panic
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn run(cli: &Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Cmd::Split {
            input,
            fraction,
            output,
        } => {
            let mut records = read_records(input)?;
            resolve_record_paths(&mut records, input.parent().unwrap_or(Path::new(".")))?;
            let m = split_dataset(&records, *fraction, seed)?;
            write_records(output, &m.records().cloned().collect::<Vec<_>>())?;
            print(json!({"labeled": m.labeled.len(), "unlabeled": m.unlabeled.len()}));
        }
        Cmd::Edf { input, weighted } => {
            let cfg = load_config(cli)?;
            let scores = read_scores::<f64>(input, MapFormat::from_path(input)?)?;
            let verdict = evaluate_sample(&normalize(&scores, cfg.edf.norm_mode), &cfg.edf)?;
            if let Some(out) = weighted {
                write_map(&verdict.weighted, out, MapFormat::from_path(out)?)?;
            }
            print(json!({
                "u_alpha": verdict.u_alpha,
                "retained": verdict.retained,
                "mean_local_entropy": verdict.mean_local_entropy,
            }));
        }
        Cmd::Prompts { input } => {
            let cfg = load_config(cli)?;
            let a = analyze_prompts(&read_prob(input)?, &cfg.dpc)?;
            print(serde_json::to_value(&a.prompts)?);
        }
        Cmd::Fuse {
            weighted,
            refined,
            output,
        } => {
            let cfg = load_config(cli)?;
            let fused = fuse(&read_prob(weighted)?, &read_prob(refined)?, &cfg.dpc)?;
            write_map(&fused, output, MapFormat::from_path(output)?)?;
        }
        Cmd::Loss { pred, target } => {
            let cfg = load_config(cli)?;
            print(serde_json::to_value(total_loss(&read_prob(pred)?, &read_prob(target)?, &cfg.loss)?)?);
        }
        Cmd::Selftrain => {
            if cli.config.is_none() {
                bail!(stsam::Error::Config("selftrain needs --config".into()));
            }
            let report = run_self_training(&load_config(cli)?)?;
            print(json!({
                "cycle": report.cycle,
                "labeled": report.labeled,
                "unlabeled": report.unlabeled,
                "pseudo_labeled": report.pseudo_labeled,
                "pseudo_label_iou": report.pseudo_label_iou,
                "added_per_cycle": report.cycles.iter().map(|c| c.added).collect::<Vec<_>>(),
            }));
        }
        Cmd::MockSegmenter {
            role,
            gt_dir,
            out_dir,
            listen,
            flip_rate,
            blur,
            maturity,
        } => {
            let handler: Arc<dyn RequestHandler> = match role {
                Role::Plain => {
                    let net = NoisyOracle::new(
                        NoisyOracleConfig {
                            gt_dir: gt_dir.clone(),
                            seed,
                            flip_rate: *flip_rate,
                            blur: *blur,
                            ..NoisyOracleConfig::default()
                        },
                        out_dir.clone(),
                    )?;
                    net.set_maturity(*maturity);
                    Arc::new(net)
                }
                Role::Promptable => Arc::new(PromptRefine::new(
                    PromptRefineConfig {
                        gt_dir: gt_dir.clone(),
                        ..PromptRefineConfig::default()
                    },
                    out_dir.clone(),
                )?),
            };
            if listen == "stdio" {
                serve(&*handler, BufReader::new(io::stdin().lock()), io::stdout().lock())?;
            } else if let Some(addr) = listen.strip_prefix("tcp:") {
                let listener = TcpListener::bind(addr).with_context(|| format!("bind {addr}"))?;
                eprintln!("listening on {}", listener.local_addr()?);
                serve_tcp(handler, listener)?;
            } else {
                bail!(stsam::Error::Config(format!("unknown --listen {listen:?}")));
            }
        }
        Cmd::Eval { pred_dir, gt_dir } => {
            let r = evaluate(pred_dir, gt_dir)?;
            print(json!({"count": r.count, "mean_iou": r.mean_iou, "mae": r.mae}));
        }
        Cmd::GenCorpus { output, count } => {
            let records = generate_corpus(output, *count, seed)?;
            print(json!({"samples": records.len(), "corpus": output.join("corpus.jsonl")}));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<stsam::Error>() {
        Some(stsam::Error::Config(_)) => 2,
        Some(e) if e.is_protocol() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
