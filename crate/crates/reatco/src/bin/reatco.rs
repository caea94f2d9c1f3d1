//! Command-line front end: dataset synthesis, training, inversion, editing,
//! evaluation, and attention visualization.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use reatco::config::{Overrides, RunConfig};
use reatco::denoiser::train;
use reatco::metrics::{self, ToyColorDetector, ToyEmbedder};
use reatco::regions::{complement, rasterize_all, union_mask};
use reatco::scheduler;
use reatco::{dataset, io, pipeline, Error};

#[derive(Parser)]
#[command(name = "reatco", about = "Region-guided toy video diffusion editing")]
struct Cli {
    /// Emit errors as single-line JSON on stderr.
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct EditArgs {
    /// Run-configuration JSON document.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Temporal window length.
    #[arg(long)]
    window: Option<usize>,
    /// Temporal window stride.
    #[arg(long)]
    stride: Option<usize>,
    /// Disable attention guidance.
    #[arg(long)]
    no_rad: bool,
    /// Disable invariant-region blending.
    #[arg(long)]
    no_irjs: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a moving-shapes dataset.
    MakeDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the toy denoiser on a dataset directory.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Checkpoint stem; writes `<stem>.bin` and `<stem>.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Invert the source clip and store the terminal latent.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Latent tensor path (`.bin` plus JSON sidecar).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full edit and write frames plus a run report.
    Edit(EditArgs),
    /// Score an edited clip against the source and config.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Directory of edited frames.
        #[arg(long)]
        edited: PathBuf,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the edit while dumping per-step attention heatmaps.
    VisAttention(EditArgs),
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Json(_) => 2,
        _ => 3,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::DegenerateRegion(_) => "degenerate_region",
        Error::Numeric { .. } => "numeric",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Image(_) => "image",
    }
}

fn report_error(err: &Error, json: bool) {
    if json {
        let doc = serde_json::json!({
            "error": {"kind": error_kind(err), "message": err.to_string()}
        });
        eprintln!("{doc}");
    } else {
        eprintln!("error: {err}");
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, cli.json_errors);
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn run(cmd: Cmd) -> reatco::Result<()> {
    match cmd {
        Cmd::MakeDataset {
            out,
            count,
            frames,
            size,
            seed,
        } => {
            let manifest = dataset::make_dataset(&out, count, frames, size, seed)?;
            println!(
                "wrote {} videos ({frames} frames, {size}x{size}) to {}",
                manifest.num_videos,
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            dataset: data_dir,
            out,
            epochs,
            seed,
        } => {
            let data = dataset::load_dataset(&data_dir)?;
            let pairs: Vec<_> = data.into_iter().map(|(v, t, _)| (v, t)).collect();
            let schedule = scheduler::default_train_schedule();
            let (weights, report) = train::train_toy_denoiser(&pairs, &schedule, epochs, seed)?;
            io::save_checkpoint(&weights, &out)?;
            if let Some(parent) = out.parent() {
                std::fs::write(parent.join("schedule.json"), schedule.to_json())?;
            }
            println!(
                "trained {epochs} epochs: eps MSE {:.4} -> {:.4} (checkpoint {})",
                report.baseline_mse,
                report.final_mse,
                out.display()
            );
            Ok(())
        }
        Cmd::Invert { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let weights = io::load_checkpoint(&cfg.checkpoint)?;
            let schedule = cfg.load_schedule()?;
            let v0 = io::read_frames(&cfg.source_frames)?;
            let latent = pipeline::invert_video(
                &v0,
                &cfg.source_prompt,
                &weights,
                &schedule,
                cfg.sample_steps,
            )?;
            io::write_tensor(&latent.data, &out)?;
            println!("inverted to t={} -> {}", latent.timestep, out.display());
            Ok(())
        }
        Cmd::Edit(args) => run_edit(args, None),
        Cmd::VisAttention(args) => {
            let att = args.out.join("att");
            run_edit(args, Some(att))
        }
        Cmd::Eval {
            config,
            edited,
            out,
        } => {
            let cfg = RunConfig::load(&config)?;
            let source = io::read_frames(&cfg.source_frames)?;
            let edited_video = io::read_frames(&edited)?;
            let embedder = ToyEmbedder;
            let detector = ToyColorDetector;
            let refs: Vec<&str> = cfg.edited_prompt.iter().map(|s| s.as_str()).collect();
            let prompt = reatco::denoiser::TokenSequence::from_words(&refs)?;
            let tracks = cfg.load_tracks()?;
            let invariant_psnr_db = if tracks.is_empty() {
                None
            } else {
                let (h, w) = (edited_video.height(), edited_video.width());
                let union = union_mask(&rasterize_all(&tracks, h, w)?)?;
                let inv: Vec<_> = union.iter().map(complement).collect();
                Some(metrics::invariant_psnr(&edited_video, &source, &inv)?)
            };
            let report = metrics::MetricReport {
                frame_consistency: Some(metrics::frame_consistency(&edited_video, &embedder)?),
                textual_alignment: Some(metrics::textual_alignment(
                    &edited_video,
                    &prompt,
                    &embedder,
                )?),
                visor: cfg
                    .relation_spec()
                    .map(|spec| metrics::visor_score(&edited_video, &spec, &detector))
                    .transpose()?,
                invariant_psnr_db,
            };
            let doc = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(p, doc)?,
                None => println!("{doc}"),
            }
            Ok(())
        }
    }
}

fn run_edit(args: EditArgs, attention_dir: Option<PathBuf>) -> reatco::Result<()> {
    let cfg = RunConfig::load(&args.config)?;
    let overrides = Overrides {
        seed: args.seed,
        window: args.window,
        stride: args.stride,
        no_rad: args.no_rad,
        no_irjs: args.no_irjs,
        attention_dir,
    };
    let edit_cfg = cfg.edit_config(&overrides)?;
    let weights = io::load_checkpoint(&cfg.checkpoint)?;
    let schedule = cfg.load_schedule()?;
    let v0 = io::read_frames(&cfg.source_frames)?;
    let result = pipeline::edit_video(&v0, &edit_cfg, &weights, &schedule)?;
    std::fs::create_dir_all(&args.out)?;
    io::write_frames(&result.video, &args.out)?;
    std::fs::write(
        args.out.join("report.json"),
        serde_json::to_string_pretty(&result.report)?,
    )?;
    println!(
        "edited {} frames over {} steps -> {}",
        result.video.frames(),
        result.report.steps.len(),
        args.out.display()
    );
    Ok(())
}
