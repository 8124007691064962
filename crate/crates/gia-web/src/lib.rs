//! Browser demo bindings.
//!
//! Three interactive operations over flat byte/float buffers (the page does
//! all DOM work itself):
//!
//! - [`SynthPreview`]: generate a synthetic low-light capture and its clean
//!   reference at adjustable noise / exposure-ratio / color-cast settings.
//! - [`DemoTrainer`]: a live desk-scale training session; step the optimizer
//!   from the page and watch the restoration improve.
//! - [`cost_table`] / [`cost_summary`]: the analytic parameter/FLOP audit of
//!   every variant at an arbitrary sensor resolution.

use gia_core::cost::cost_report;
use gia_core::loss::psnr;
use gia_core::models::ArchConfig;
use gia_core::raw::{preprocess, synth_scene, Cfa, Sample, SynthConfig, RATIO_CAP};
use gia_core::rng::Rng;
use gia_core::tensor::{Shape, Tensor};
use gia_core::train::{self, TrainConfig};
use wasm_bindgen::prelude::*;

/// `(1,3,h,w)` tensor in `[0,1]` to interleaved RGBA8.
fn rgba8(t: &Tensor) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.h * s.w * 4);
    for i in 0..s.h {
        for j in 0..s.w {
            for c in 0..3 {
                out.push((t.at(0, c, i, j).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            out.push(255);
        }
    }
    out
}

/// Quick RGB view of a packed Bayer input: R, mean of the two greens, B.
fn packed_to_rgb(packed: &Tensor) -> Tensor {
    let s = packed.shape();
    Tensor::from_fn(Shape::new(1, 3, s.h, s.w), |_, c, i, j| match c {
        0 => packed.at(0, 0, i, j),
        1 => 0.5 * (packed.at(0, 1, i, j) + packed.at(0, 3, i, j)),
        _ => packed.at(0, 2, i, j),
    })
}

fn synth_config(size: usize, ratio: f32, read_noise: f32, cast_strength: f32, seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig::new(size, size, Cfa::Bayer);
    cfg.ratio = ratio.max(1.0);
    cfg.read_noise = read_noise.max(0.0);
    if cast_strength > 0.0 {
        let mut rng = Rng::new(seed ^ 0xca57_f00d);
        let mut gain = || 1.0 - cast_strength.min(0.95) * rng.next_f32();
        cfg.cast = Some([gain(), gain(), gain()]);
    }
    cfg
}

fn make_sample(seed: u64, cfg: &SynthConfig) -> Sample {
    let rng = Rng::new(seed);
    let (frame, target) = synth_scene(&rng, cfg).expect("synth config is valid");
    let input = preprocess(&frame, cfg.long_exposure_s, RATIO_CAP).expect("preprocess");
    Sample {
        input,
        target,
        id: format!("demo{seed}"),
    }
}

/// A generated synthetic capture, ready to paint onto canvases.
#[wasm_bindgen]
pub struct SynthPreview {
    input_rgba: Vec<u8>,
    target_rgba: Vec<u8>,
    input_side: usize,
    target_side: usize,
    naive_psnr: f32,
    ratio: f32,
}

#[wasm_bindgen]
impl SynthPreview {
    /// Generates a scene; `size` is the sensor side in pixels (multiple of 2,
    /// clamped to [32, 512]).
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, size: usize, ratio: f32, read_noise: f32, cast_strength: f32) -> SynthPreview {
        let size = (size.clamp(32, 512) / 2) * 2;
        let cfg = synth_config(size, ratio, read_noise, cast_strength, seed);
        let sample = make_sample(seed, &cfg);
        let naive = packed_to_rgb(&sample.input.tensor).clamp(0.0, 1.0);
        // compare the naive amplified view against the half-res reference
        let half = gia_core::nn::bilinear_resize_tensor(&sample.target, size / 2, size / 2);
        let naive_psnr = psnr(&naive, &half, 1.0).unwrap_or(f32::NAN);
        SynthPreview {
            input_rgba: rgba8(&naive),
            target_rgba: rgba8(&sample.target),
            input_side: size / 2,
            target_side: size,
            naive_psnr,
            ratio: sample.input.ratio,
        }
    }

    /// Naive amplified input preview (RGBA8, `input_side` square).
    pub fn input_rgba(&self) -> Vec<u8> {
        self.input_rgba.clone()
    }

    /// Clean reference (RGBA8, `target_side` square).
    pub fn target_rgba(&self) -> Vec<u8> {
        self.target_rgba.clone()
    }

    pub fn input_side(&self) -> usize {
        self.input_side
    }

    pub fn target_side(&self) -> usize {
        self.target_side
    }

    /// PSNR of the naive amplified input against the reference (dB).
    pub fn naive_psnr(&self) -> f32 {
        self.naive_psnr
    }

    /// Amplification ratio that was applied.
    pub fn ratio(&self) -> f32 {
        self.ratio
    }
}

/// A live desk-scale training session on a handful of synthetic pairs.
#[wasm_bindgen]
pub struct DemoTrainer {
    config: TrainConfig,
    pairs: Vec<Sample>,
    net: gia_core::models::Network,
    adam: train::Adam,
    step: u64,
    losses: Vec<f32>,
}

#[wasm_bindgen]
impl DemoTrainer {
    /// `variant` is one of sid / sid-dilated / sw / gia / gia-l1.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u64,
        variant: String,
        n_pairs: usize,
        size: usize,
        ratio: f32,
        read_noise: f32,
        cast_strength: f32,
    ) -> Result<DemoTrainer, JsError> {
        let size = (size.clamp(64, 256) / 8) * 8;
        let n_pairs = n_pairs.clamp(1, 16);
        let mut config = TrainConfig::desk(&variant);
        config.seed = seed;
        config.patch_a = 8;
        // patches up to half the packed side, at least 16px
        config.patch_b = (2, (size / 32).max(2));
        config.validate().map_err(|e| JsError::new(&e.to_string()))?;

        let master = Rng::new(seed);
        let pairs: Vec<Sample> = (0..n_pairs)
            .map(|i| {
                let cfg = synth_config(
                    size,
                    ratio,
                    read_noise,
                    cast_strength,
                    seed.wrapping_add(i as u64),
                );
                let mut stream = master.split(i as u64);
                make_sample(stream.next_u64(), &cfg)
            })
            .collect();

        let arch = config.arch().map_err(|e| JsError::new(&e.to_string()))?;
        let net = gia_core::models::build(&arch, seed).map_err(|e| JsError::new(&e.to_string()))?;
        let adam = train::Adam::new(config.adam, &net);
        Ok(DemoTrainer {
            config,
            pairs,
            net,
            adam,
            step: 0,
            losses: Vec::new(),
        })
    }

    /// Runs `n` optimization steps; returns the last joint loss.
    pub fn step(&mut self, n: u32) -> Result<f32, JsError> {
        let end = self.step + n as u64;
        let log = train::resume(
            &mut self.net,
            &mut self.adam,
            &self.config,
            &self.pairs,
            self.step,
            end,
        )
        .map_err(|e| JsError::new(&e.to_string()))?;
        self.step = end;
        self.losses.extend(log.iter().map(|r| r.total));
        Ok(self.losses.last().copied().unwrap_or(f32::NAN))
    }

    pub fn steps_done(&self) -> u32 {
        self.step as u32
    }

    /// Joint-loss history, one value per step.
    pub fn losses(&self) -> Vec<f32> {
        self.losses.clone()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Side of the RGB panels for `pair`.
    pub fn panel_side(&self, pair: usize) -> usize {
        self.pairs[pair % self.pairs.len()].target.shape().h
    }

    /// Naive amplified input of a pair, upscaled to target size (RGBA8).
    pub fn input_rgba(&self, pair: usize) -> Vec<u8> {
        let p = &self.pairs[pair % self.pairs.len()];
        let rgb = packed_to_rgb(&p.input.tensor).clamp(0.0, 1.0);
        let s = p.target.shape();
        rgba8(&gia_core::nn::bilinear_resize_tensor(&rgb, s.h, s.w))
    }

    /// Current network restoration of a pair (RGBA8).
    pub fn prediction_rgba(&self, pair: usize) -> Result<Vec<u8>, JsError> {
        let p = &self.pairs[pair % self.pairs.len()];
        let pred = self
            .net
            .forward_eval(&p.input.tensor)
            .map_err(|e| JsError::new(&e.to_string()))?
            .clamp(0.0, 1.0);
        Ok(rgba8(&pred))
    }

    /// Clean reference of a pair (RGBA8).
    pub fn target_rgba(&self, pair: usize) -> Vec<u8> {
        rgba8(&self.pairs[pair % self.pairs.len()].target)
    }

    /// PSNR of the current restoration of a pair (dB).
    pub fn prediction_psnr(&self, pair: usize) -> Result<f32, JsError> {
        let p = &self.pairs[pair % self.pairs.len()];
        let pred = self
            .net
            .forward_eval(&p.input.tensor)
            .map_err(|e| JsError::new(&e.to_string()))?
            .clamp(0.0, 1.0);
        psnr(&pred, &p.target, 1.0).map_err(|e| JsError::new(&e.to_string()))
    }
}

/// Plain-text per-layer cost table of a variant.
#[wasm_bindgen]
pub fn cost_table(
    variant: String,
    in_ch: usize,
    width_scale: f32,
    depth: usize,
    res_w: usize,
    res_h: usize,
) -> Result<String, JsError> {
    let cfg = ArchConfig::variant(&variant, in_ch, width_scale, depth)
        .map_err(|e| JsError::new(&e.to_string()))?;
    let report = cost_report(&cfg, res_w, res_h).map_err(|e| JsError::new(&e.to_string()))?;
    Ok(report.to_table())
}

/// `[params, flops, params_ratio_vs_sid, flops_ratio_vs_sid]`.
#[wasm_bindgen]
pub fn cost_summary(
    variant: String,
    in_ch: usize,
    width_scale: f32,
    depth: usize,
    res_w: usize,
    res_h: usize,
) -> Result<Vec<f64>, JsError> {
    let cfg = ArchConfig::variant(&variant, in_ch, width_scale, depth)
        .map_err(|e| JsError::new(&e.to_string()))?;
    let report = cost_report(&cfg, res_w, res_h).map_err(|e| JsError::new(&e.to_string()))?;
    let sid = ArchConfig::variant("sid", in_ch, width_scale, depth)
        .map_err(|e| JsError::new(&e.to_string()))?;
    let base = cost_report(&sid, res_w, res_h).map_err(|e| JsError::new(&e.to_string()))?;
    let (pr, fr) = report.relative_to(&base);
    Ok(vec![report.params as f64, report.flops as f64, pr, fr])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_preview_produces_well_formed_buffers() {
        let p = SynthPreview::new(1, 128, 50.0, 2.0, 0.4);
        assert_eq!(p.input_side(), 64);
        assert_eq!(p.target_side(), 128);
        assert_eq!(p.input_rgba().len(), 64 * 64 * 4);
        assert_eq!(p.target_rgba().len(), 128 * 128 * 4);
        assert!(p.naive_psnr().is_finite());
        assert!(p.ratio() >= 1.0);
    }

    #[test]
    fn demo_trainer_steps_and_improves_buffers() {
        let mut t = DemoTrainer::new(3, "gia".to_string(), 2, 64, 20.0, 1.0, 0.0).unwrap();
        let first = t.step(2).unwrap();
        assert!(first.is_finite());
        assert_eq!(t.steps_done(), 2);
        assert_eq!(t.losses().len(), 2);
        let side = t.panel_side(0);
        assert_eq!(t.prediction_rgba(0).unwrap().len(), side * side * 4);
        assert_eq!(t.target_rgba(0).len(), side * side * 4);
        assert!(t.prediction_psnr(0).unwrap().is_finite());
    }

    #[test]
    fn cost_summary_reports_sid_relative_ratios() {
        let v = cost_summary("gia".to_string(), 4, 1.0, 5, 4240, 2832).unwrap();
        assert!((v[0] - 8_285_804.0).abs() < 1.0);
        assert!((v[2] - 1.0677).abs() < 0.01);
        assert!((v[3] - 1.0084).abs() < 0.002);
        let table = cost_table("sid".to_string(), 4, 1.0, 5, 4240, 2832).unwrap();
        assert!(table.contains("total"));
    }
}
