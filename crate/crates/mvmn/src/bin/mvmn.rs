//! Command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mvmn::analysis::WindowMode;
use mvmn::commands::{self, GradcheckCommand};
use mvmn::ingest::CheckinFormat;
use mvmn::model::{ModelConfig, ViewToggles};
use mvmn::types::Real;

#[derive(Parser)]
#[command(name = "mvmn", version, about = "Multi-view social link inference from check-in trajectories")]
struct Cli {
    /// Cap worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse raw check-in/edge files, filter, split, and write the
    /// processed dataset plus evaluation candidate pools.
    Preprocess(PreprocessArgs),
    /// Temporal-similarity and co-occurrence analyses of a dataset.
    Analyze(AnalyzeArgs),
    /// Train the matching model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on candidate pools.
    Evaluate(EvaluateArgs),
    /// Score one user pair.
    Predict(PredictArgs),
    /// Finite-difference check of all model gradients.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic check-in corpus with planted communities.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    checkins: PathBuf,
    #[arg(long)]
    edges: PathBuf,
    #[arg(long, default_value = "gowalla_tsv")]
    format: String,
    /// Preset (nyc, la, world) or latmin,latmax,lonmin,lonmax.
    #[arg(long, default_value = "world")]
    bbox: String,
    #[arg(long, default_value_t = 0.1)]
    min_fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_friends: usize,
    #[arg(long, default_value_t = 10)]
    min_checkins: usize,
    #[arg(long, default_value_t = 200)]
    kmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Candidate pools output (default: <out>.candidates.json).
    #[arg(long)]
    out_candidates: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    window_hours: f64,
    /// bucket (fixed wall-clock windows) or sliding.
    #[arg(long, default_value = "bucket")]
    window_mode: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Defaults to the dataset's stored maximum trajectory length.
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long, default_value_t = 3)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    gat_depth: usize,
    #[arg(long, default_value_t = 0.1)]
    beta: Real,
    #[arg(long, default_value_t = 4)]
    neg_per_pos: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: Real,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    dropout: Real,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Disable a view: location, temporal, relation, or pp (repeatable).
    #[arg(long = "disable-view")]
    disable_view: Vec<String>,
    #[arg(long, default_value_t = false)]
    quiet: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Two raw user ids, comma separated.
    #[arg(long)]
    pair: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 24)]
    hidden: usize,
    #[arg(long, default_value_t = 12)]
    coords_per_group: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: Real,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_checkins: PathBuf,
    #[arg(long)]
    out_edges: PathBuf,
}

fn parse_views(disabled: &[String]) -> Result<ViewToggles, String> {
    let mut views = ViewToggles::default();
    for name in disabled {
        match name.as_str() {
            "location" => views.location = false,
            "temporal" => views.temporal = false,
            "relation" => views.relation = false,
            "pp" | "pp_loss" => views.pp_loss = false,
            other => return Err(format!("unknown view {other:?}")),
        }
    }
    Ok(views)
}

fn run(cli: Cli) -> mvmn::Result<()> {
    match cli.command {
        Command::Preprocess(args) => {
            let summary = commands::run_preprocess(&commands::PreprocessCommand {
                checkins: args.checkins,
                edges: args.edges,
                format: args.format.parse::<CheckinFormat>()?,
                bbox: args.bbox,
                min_fraction: args.min_fraction,
                min_friends: args.min_friends,
                min_checkins: args.min_checkins,
                k_max: args.kmax,
                seed: args.seed,
                out: args.out,
                out_candidates: args.out_candidates,
            })?;
            println!(
                "users {}  locations {}  checkins {}  edges {}/{}/{}  test pairs {}",
                summary.users,
                summary.locations,
                summary.checkins,
                summary.train_edges,
                summary.val_edges,
                summary.test_edges,
                summary.test_pairs
            );
            Ok(())
        }
        Command::Analyze(args) => {
            let mode = match args.window_mode.as_str() {
                "bucket" => WindowMode::Bucket,
                "sliding" => WindowMode::Sliding,
                other => {
                    return Err(mvmn::Error::Config(format!("unknown window mode {other:?}")))
                }
            };
            let report = commands::run_analyze(&commands::AnalyzeCommand {
                data: args.data,
                out: args.out,
                window_hours: args.window_hours as Real,
                mode,
                seed: args.seed,
            })?;
            let show = |x: Option<Real>| {
                x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
            };
            println!(
                "frame similarity linked {} vs unlinked {}",
                show(report.frame_similarity_linked),
                show(report.frame_similarity_unlinked)
            );
            println!(
                "gap similarity linked {} vs unlinked {}",
                show(report.gap_similarity_linked),
                show(report.gap_similarity_unlinked)
            );
            println!(
                "spatial ratio {}  spatio-temporal ratio {}",
                show(report.cooccurrence.spatial_ratio),
                show(report.cooccurrence.spatio_temporal_ratio)
            );
            Ok(())
        }
        Command::Train(args) => {
            let views = parse_views(&args.disable_view).map_err(mvmn::Error::Config)?;
            let config = ModelConfig {
                embed_dim: args.dim,
                hidden_dim: args.hidden,
                heads: args.heads,
                gat_depth: args.gat_depth,
                beta: args.beta,
                neg_per_pos: args.neg_per_pos,
                lr: args.lr,
                batch_size: args.batch_size,
                dropout: args.dropout,
                epochs: args.epochs,
                patience: args.patience,
                seed: args.seed,
                views,
                ..ModelConfig::default()
            };
            let summary = commands::run_train(&commands::TrainCommand {
                data: args.data,
                out: args.out,
                config,
                k_max: args.kmax,
                quiet: args.quiet,
            })?;
            match summary.val_auc {
                Some(auc) => println!(
                    "best epoch {} (val-auc {auc:.4}) after {} epochs",
                    summary.best_epoch, summary.epochs_run
                ),
                None => println!("trained {} epochs (no validation split)", summary.epochs_run),
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let report = commands::run_evaluate(&commands::EvaluateCommand {
                checkpoint: args.checkpoint,
                data: args.data,
                candidates: args.candidates,
                out: args.out,
                k: args.k,
            })?;
            println!(
                "auc {:.4}  p@{} {:.4}  r@{} {:.4}  ({} users, {} pairs)",
                report.auc, report.k, report.p_at_k, report.k, report.r_at_k,
                report.num_test_users, report.num_pairs
            );
            Ok(())
        }
        Command::Predict(args) => {
            let (a, b) = args
                .pair
                .split_once(',')
                .ok_or_else(|| mvmn::Error::Config("pair must be U1,U2".into()))?;
            let y = commands::run_predict(&commands::PredictCommand {
                checkpoint: args.checkpoint,
                data: args.data,
                user_a: a.trim().to_string(),
                user_b: b.trim().to_string(),
            })?;
            println!("{y:.6}");
            Ok(())
        }
        Command::Gradcheck(args) => {
            let (reports, ok) = commands::run_gradcheck(&GradcheckCommand {
                seed: args.seed,
                embed_dim: args.dim,
                hidden_dim: args.hidden,
                coords_per_group: args.coords_per_group,
                tolerance: args.tolerance,
            })?;
            for r in &reports {
                println!(
                    "{:<22} max rel err {:>10.3e}  ({} coords)",
                    r.name, r.max_rel_err, r.coords_checked
                );
            }
            if !ok {
                return Err(mvmn::Error::Invalid(format!(
                    "gradient check failed at tolerance {}",
                    args.tolerance
                )));
            }
            println!("all parameter groups within {}", args.tolerance);
            Ok(())
        }
        Command::Synth(args) => {
            let summary = commands::run_synth(&commands::SynthCommand {
                config: args.config,
                seed: args.seed,
                out_checkins: args.out_checkins,
                out_edges: args.out_edges,
            })?;
            println!(
                "generated {} users, {} edges, {} check-ins",
                summary.users, summary.edges, summary.checkins
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure if a pool already exists (e.g. repeated invocation)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
