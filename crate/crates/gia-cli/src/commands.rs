//! Subcommand implementations.

use crate::dataset::load_pairs;
use gia_core::container::{self, Payload};
use gia_core::cost::cost_report;
use gia_core::loss::SsimParams;
use gia_core::models::ArchConfig;
use gia_core::raw::{preprocess as preprocess_frame, synth_scene, Cfa, SynthConfig};
use gia_core::rng::Rng;
use gia_core::train::{
    self, default_grid, evaluate_pairs, load_checkpoint, loss_log_csv, save_checkpoint,
    TrainConfig,
};
use gia_core::{Error, Result, Tensor};
use std::io::Write as _;
use std::path::{Path, PathBuf};

fn deterministic_mode() -> bool {
    std::env::var("GIA_DETERMINISTIC").map(|v| v == "1").unwrap_or(false)
}

fn parse_cfa(name: &str) -> Result<Cfa> {
    match name {
        "bayer" => Ok(Cfa::Bayer),
        "xtrans" => Ok(Cfa::XTrans),
        other => Err(Error::Invalid {
            op: "cfa",
            what: format!("unknown CFA '{other}' (expected bayer or xtrans)"),
        }),
    }
}

pub fn preprocess(input: &Path, target_exposure: f32, ratio_cap: f32, out: &Path) -> Result<()> {
    let frame = match container::read(input)? {
        Payload::Raw(f) => f,
        _ => {
            return Err(Error::Inconsistent {
                path: input.display().to_string(),
                what: "preprocess expects a raw mosaic container".to_string(),
            })
        }
    };
    let cfa = frame.cfa;
    let packed = preprocess_frame(&frame, target_exposure, ratio_cap)?;
    container::write_packed(out, &packed.tensor, cfa, frame.exposure_s)?;
    let s = packed.tensor.shape();
    println!(
        "packed {} -> {} channels {}x{}, amplification ratio {}",
        input.display(),
        s.c,
        s.h,
        s.w,
        packed.ratio
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn synth(
    n: usize,
    size: usize,
    cfa: &str,
    ratio: f32,
    read_noise: f32,
    shot_noise: f32,
    cast_strength: f32,
    cast_offset: f32,
    out: &Path,
    seed: u64,
) -> Result<()> {
    if !(0.0..1.0).contains(&cast_strength) {
        return Err(Error::Invalid {
            op: "synth",
            what: format!("cast strength {cast_strength} out of [0,1)"),
        });
    }
    if !(0.0..0.5).contains(&cast_offset) {
        return Err(Error::Invalid {
            op: "synth",
            what: format!("cast offset {cast_offset} out of [0,0.5)"),
        });
    }
    let cfa = parse_cfa(cfa)?;
    std::fs::create_dir_all(out)?;
    let master = Rng::new(seed);
    for i in 0..n {
        let mut cfg = SynthConfig::new(size, size, cfa);
        cfg.ratio = ratio;
        cfg.read_noise = read_noise;
        cfg.shot_noise = shot_noise;
        if cast_strength > 0.0 {
            let mut cast_rng = master.split(1_000_000 + i as u64);
            let gain = |r: &mut Rng| 1.0 - cast_strength * r.next_f32();
            cfg.cast = Some([
                gain(&mut cast_rng),
                gain(&mut cast_rng),
                gain(&mut cast_rng),
            ]);
        }
        if cast_offset > 0.0 {
            let mut off_rng = master.split(2_000_000 + i as u64);
            let off = |r: &mut Rng| cast_offset * (2.0 * r.next_f32() - 1.0);
            cfg.cast_offset = Some([
                off(&mut off_rng),
                off(&mut off_rng),
                off(&mut off_rng),
            ]);
        }
        let pair_rng = master.split(i as u64);
        let (frame, target) = synth_scene(&pair_rng, &cfg)?;
        container::write_raw(&out.join(format!("{i:03}_short.giar")), &frame)?;
        container::write_rgb(
            &out.join(format!("{i:03}_long.giar")),
            &target,
            cfg.long_exposure_s,
        )?;
    }
    println!("wrote {n} pairs to {}", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub variant: String,
    pub width_scale: f32,
    pub depth: usize,
    pub lr: f32,
    pub gamma: Option<f32>,
    pub epochs_per_phase: u64,
    pub max_steps: Option<u64>,
    pub batch: usize,
    pub patch_a: usize,
    pub b_range: (usize, usize),
    pub augment: bool,
    pub msssim_levels: usize,
    pub checkpoint_every: Option<u64>,
    pub out: PathBuf,
    pub seed: u64,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let pairs = load_pairs(&args.data)?;
    let in_ch = pairs[0].input.tensor.shape().c;
    let mut config = TrainConfig::full(&args.variant, in_ch);
    config.width_scale = args.width_scale;
    config.depth = args.depth;
    config.lr_initial = args.lr;
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    config.epochs_per_phase = args.epochs_per_phase;
    config.max_steps = args.max_steps;
    config.batch_size = args.batch;
    config.patch_a = args.patch_a;
    config.patch_b = args.b_range;
    config.augment = args.augment;
    config.msssim_levels = args.msssim_levels;
    config.checkpoint_every = args.checkpoint_every;
    config.seed = args.seed;
    config.validate()?;

    std::fs::create_dir_all(&args.out)?;
    let result = train::train(&config, &pairs, Some(&args.out))?;
    let ckpt = args.out.join("final.giac");
    save_checkpoint(&ckpt, &result.net, &config, &result.adam, result.steps_done)?;
    std::fs::write(args.out.join("loss_log.csv"), loss_log_csv(&result.log))?;
    let last = result.log.last();
    println!(
        "trained {} for {} steps; final loss {}; checkpoint {}",
        config.variant,
        result.steps_done,
        last.map(|r| r.total).unwrap_or(f32::NAN),
        ckpt.display()
    );
    Ok(())
}

pub fn eval(checkpoint: &Path, data: &Path, out: &Path, workers: usize) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let pairs = load_pairs(data)?;
    let params = SsimParams::with_levels(loaded.config.msssim_levels);
    let workers = if deterministic_mode() { 1 } else { workers.max(1) };

    let rows: Vec<(String, f32, f32, f32)> = if workers <= 1 {
        evaluate_pairs(&loaded.net, &pairs, &params)?
    } else {
        // images are independent; order is restored by index
        let chunk = pairs.len().div_ceil(workers);
        let mut indexed: Vec<(usize, Vec<(String, f32, f32, f32)>)> = Vec::new();
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for (ci, chunk_pairs) in pairs.chunks(chunk).enumerate() {
                let net = &loaded.net;
                let params = &params;
                handles.push((
                    ci,
                    scope.spawn(move || evaluate_pairs(net, chunk_pairs, params)),
                ));
            }
            for (ci, h) in handles {
                let rows = h.join().expect("eval worker panicked")?;
                indexed.push((ci, rows));
            }
            Ok(())
        })?;
        indexed.sort_by_key(|(ci, _)| *ci);
        indexed.into_iter().flat_map(|(_, rows)| rows).collect()
    };

    let mut csv = String::from("image_id,psnr_db,ssim_rgb_mean,ms_ssim_rgb_mean\n");
    let n = rows.len() as f64;
    let (mut tp, mut ts, mut tm) = (0.0f64, 0.0f64, 0.0f64);
    for (id, p, s, m) in &rows {
        csv.push_str(&format!("{id},{p},{s},{m}\n"));
        tp += *p as f64;
        ts += *s as f64;
        tm += *m as f64;
    }
    csv.push_str(&format!("mean,{},{},{}\n", tp / n, ts / n, tm / n));
    std::fs::write(out, &csv)?;
    println!(
        "evaluated {} images; mean psnr {:.3} dB, ssim {:.4}, ms-ssim {:.4}",
        rows.len(),
        tp / n,
        ts / n,
        tm / n
    );
    Ok(())
}

pub fn infer(
    checkpoint: &Path,
    input: &Path,
    target_exposure: f32,
    out: &Path,
    png: Option<&Path>,
) -> Result<()> {
    let loaded = load_checkpoint(checkpoint)?;
    let (packed, exposure) = match container::read(input)? {
        Payload::Raw(frame) => {
            let p = preprocess_frame(&frame, target_exposure, gia_core::raw::RATIO_CAP)?;
            println!("amplification ratio {}", p.ratio);
            (p.tensor, target_exposure)
        }
        Payload::Packed {
            tensor, exposure_s, ..
        } => (tensor, exposure_s),
        Payload::Rgb { .. } => {
            return Err(Error::Inconsistent {
                path: input.display().to_string(),
                what: "infer expects a raw or packed container".to_string(),
            })
        }
    };
    let pred = loaded.net.forward_eval(&packed)?.clamp(0.0, 1.0);
    container::write_rgb(out, &pred, exposure)?;
    if let Some(png_path) = png {
        write_png(png_path, &pred)?;
    }
    let s = pred.shape();
    println!("restored {}x{} RGB -> {}", s.h, s.w, out.display());
    Ok(())
}

/// 8-bit RGB PNG export of a `(1,3,h,w)` tensor in `[0,1]`.
fn write_png(path: &Path, rgb: &Tensor) -> Result<()> {
    let s = rgb.shape();
    let file = std::fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), s.w as u32, s.h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(png_err)?;
    let mut buf = Vec::with_capacity(s.h * s.w * 3);
    for i in 0..s.h {
        for j in 0..s.w {
            for c in 0..3 {
                buf.push((rgb.at(0, c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    writer.write_image_data(&buf).map_err(png_err)?;
    Ok(())
}

fn png_err(e: png::EncodingError) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn count(variant: &str, in_ch: usize, res: &str, width_scale: f32, depth: usize) -> Result<()> {
    let (w, h) = res
        .split_once('x')
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
        .ok_or_else(|| Error::Invalid {
            op: "count",
            what: format!("resolution '{res}' is not WxH"),
        })?;
    let cfg = ArchConfig::variant(variant, in_ch, width_scale, depth)?;
    let report = cost_report(&cfg, w, h)?;
    print!("{}", report.to_table());
    println!(
        "params {:.4}M, flops {:.4}B at {w}x{h}",
        report.params as f64 / 1e6,
        report.flops as f64 / 1e9
    );
    if variant != "sid" {
        let sid = ArchConfig::variant("sid", in_ch, width_scale, depth)?;
        let base = cost_report(&sid, w, h)?;
        let (pr, fr) = report.relative_to(&base);
        println!("vs sid: params {pr:.3}x, flops {fr:.4}x");
    }
    Ok(())
}

pub struct AblateArgs {
    pub grid: String,
    pub data: PathBuf,
    pub eval_data: Option<PathBuf>,
    pub max_steps: u64,
    pub width_scale: f32,
    pub depth: usize,
    pub lr: f32,
    pub patch_a: usize,
    pub b_range: (usize, usize),
    pub msssim_levels: usize,
    pub out: PathBuf,
    pub seed: u64,
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    if args.grid != "default" {
        return Err(Error::Invalid {
            op: "ablate",
            what: format!("unknown grid '{}'", args.grid),
        });
    }
    let train_pairs = load_pairs(&args.data)?;
    let eval_pairs = match &args.eval_data {
        Some(dir) => load_pairs(dir)?,
        None => train_pairs.clone(),
    };
    let in_ch = train_pairs[0].input.tensor.shape().c;
    let mut base = TrainConfig::full("sid", in_ch);
    base.width_scale = args.width_scale;
    base.depth = args.depth;
    base.lr_initial = args.lr;
    base.max_steps = Some(args.max_steps);
    base.patch_a = args.patch_a;
    base.patch_b = args.b_range;
    base.msssim_levels = args.msssim_levels;
    base.seed = args.seed;

    let rows = train::run_ablation(&default_grid(), &base, &train_pairs, &eval_pairs);
    let csv = train::ablation_csv(&rows);
    std::fs::write(&args.out, &csv)?;
    let mut stdout = std::io::stdout();
    stdout.write_all(csv.as_bytes())?;
    let _ = sample_failures(&rows);
    Ok(())
}

fn sample_failures(rows: &[train::AblationRow]) -> usize {
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    if failures > 0 {
        eprintln!("{failures} cell(s) failed; see the error column");
    }
    failures
}
