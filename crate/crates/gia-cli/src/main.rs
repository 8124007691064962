//! `gia`: preprocessing, synthetic scenes, training, evaluation, inference,
//! cost audits and the component-ablation grid, over GIAR containers and
//! GIAC checkpoints.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! divergence. Set `GIA_DETERMINISTIC=1` to force single-threaded execution
//! regardless of `--workers`.

mod commands;
mod dataset;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gia_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gia", version, about = "Low-light raw image restoration toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack, normalize and amplify a raw container into a network input.
    Preprocess {
        /// Input raw container (.giar).
        #[arg(long = "in")]
        input: PathBuf,
        /// Reference long exposure in seconds the brightness is matched to.
        #[arg(long, default_value_t = 10.0)]
        target_exposure: f32,
        /// Upper bound on the amplification ratio.
        #[arg(long, default_value_t = 300.0)]
        ratio_cap: f32,
        /// Output packed container (.giar).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate paired synthetic short/long containers.
    Synth {
        /// Number of pairs.
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Square scene side in sensor pixels.
        #[arg(long, default_value_t = 256)]
        size: usize,
        /// Color filter array: bayer or xtrans.
        #[arg(long, default_value = "bayer")]
        cfa: String,
        /// Long/short exposure ratio.
        #[arg(long, default_value_t = 100.0)]
        ratio: f32,
        /// Read noise sigma in counts.
        #[arg(long, default_value_t = 4.0)]
        read_noise: f32,
        /// Shot noise gain.
        #[arg(long, default_value_t = 1.0)]
        shot_noise: f32,
        /// Strength of a random per-channel cast on the input path (0 = off;
        /// 0.5 draws channel gains from [0.5, 1]).
        #[arg(long, default_value_t = 0.0)]
        cast_strength: f32,
        /// Random per-channel offset cast on the input path: offsets drawn
        /// from [-s, s] in normalized units (0 = off).
        #[arg(long, default_value_t = 0.0)]
        cast_offset: f32,
        /// Output directory for NNN_short.giar / NNN_long.giar pairs.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a variant on a directory of paired containers.
    Train {
        /// Dataset directory (NNN_short.giar / NNN_long.giar pairs).
        #[arg(long)]
        data: PathBuf,
        /// Variant: sid, sid-dilated, sw, gia, gia-l1.
        #[arg(long, default_value = "gia")]
        variant: String,
        #[arg(long, default_value_t = 0.25)]
        width_scale: f32,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Initial learning rate (the published recipe says 0.1; desk-scale
        /// runs want 1e-4).
        #[arg(long, default_value_t = 1e-4)]
        lr: f32,
        /// Joint-loss weight; 1.0 trains with the pixel term alone.
        #[arg(long)]
        gamma: Option<f32>,
        #[arg(long, default_value_t = 2000)]
        epochs_per_phase: u64,
        /// Hard cap on optimization steps.
        #[arg(long)]
        max_steps: Option<u64>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        /// Patch side is patch-a * b with b drawn from [b-lo, b-hi].
        #[arg(long, default_value_t = 8)]
        patch_a: usize,
        #[arg(long, default_value_t = 4)]
        b_lo: usize,
        #[arg(long, default_value_t = 8)]
        b_hi: usize,
        /// Disable random crops/flips (center crops instead).
        #[arg(long)]
        no_augment: bool,
        #[arg(long, default_value_t = 2)]
        msssim_levels: usize,
        /// Write a checkpoint every N steps (plus one at the end).
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Output directory for checkpoint and loss log.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a checkpoint on a dataset; writes a metrics CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Metrics CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Images evaluated in parallel (ignored under GIA_DETERMINISTIC=1).
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Restore one raw (or packed) container with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input container: raw mosaic or packed input.
        #[arg(long = "in")]
        input: PathBuf,
        /// Reference exposure when preprocessing a raw input.
        #[arg(long, default_value_t = 10.0)]
        target_exposure: f32,
        /// Output RGB container (values clamped to [0,1]).
        #[arg(long)]
        out: PathBuf,
        /// Optional 8-bit PNG export.
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Analytic parameter/FLOP audit of a variant.
    Count {
        #[arg(long, default_value = "sid")]
        variant: String,
        #[arg(long, default_value_t = 4)]
        in_ch: usize,
        /// Raw sensor resolution WxH.
        #[arg(long, default_value = "4240x2832")]
        res: String,
        #[arg(long, default_value_t = 1.0)]
        width_scale: f32,
        #[arg(long, default_value_t = 5)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and score the component-ablation grid; writes a CSV.
    Ablate {
        /// Grid name (only "default" is defined).
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long)]
        data: PathBuf,
        /// Held-out pairs; defaults to the training directory.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        max_steps: u64,
        #[arg(long, default_value_t = 0.25)]
        width_scale: f32,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f32,
        #[arg(long, default_value_t = 8)]
        patch_a: usize,
        #[arg(long, default_value_t = 4)]
        b_lo: usize,
        #[arg(long, default_value_t = 8)]
        b_hi: usize,
        #[arg(long, default_value_t = 2)]
        msssim_levels: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Invalid { .. } => 1,
        Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not usage errors
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Preprocess {
            input,
            target_exposure,
            ratio_cap,
            out,
            seed: _,
        } => commands::preprocess(&input, target_exposure, ratio_cap, &out),
        Command::Synth {
            n,
            size,
            cfa,
            ratio,
            read_noise,
            shot_noise,
            cast_strength,
            cast_offset,
            out,
            seed,
        } => commands::synth(
            n,
            size,
            &cfa,
            ratio,
            read_noise,
            shot_noise,
            cast_strength,
            cast_offset,
            &out,
            seed,
        ),
        Command::Train {
            data,
            variant,
            width_scale,
            depth,
            lr,
            gamma,
            epochs_per_phase,
            max_steps,
            batch,
            patch_a,
            b_lo,
            b_hi,
            no_augment,
            msssim_levels,
            checkpoint_every,
            out,
            seed,
        } => commands::train(commands::TrainArgs {
            data,
            variant,
            width_scale,
            depth,
            lr,
            gamma,
            epochs_per_phase,
            max_steps,
            batch,
            patch_a,
            b_range: (b_lo, b_hi),
            augment: !no_augment,
            msssim_levels,
            checkpoint_every,
            out,
            seed,
        }),
        Command::Eval {
            checkpoint,
            data,
            out,
            workers,
            seed: _,
        } => commands::eval(&checkpoint, &data, &out, workers),
        Command::Infer {
            checkpoint,
            input,
            target_exposure,
            out,
            png,
            seed: _,
        } => commands::infer(&checkpoint, &input, target_exposure, &out, png.as_deref()),
        Command::Count {
            variant,
            in_ch,
            res,
            width_scale,
            depth,
            seed: _,
        } => commands::count(&variant, in_ch, &res, width_scale, depth),
        Command::Ablate {
            grid,
            data,
            eval_data,
            max_steps,
            width_scale,
            depth,
            lr,
            patch_a,
            b_lo,
            b_hi,
            msssim_levels,
            out,
            seed,
        } => commands::ablate(commands::AblateArgs {
            grid,
            data,
            eval_data,
            max_steps,
            width_scale,
            depth,
            lr,
            patch_a,
            b_range: (b_lo, b_hi),
            msssim_levels,
            out,
            seed,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
