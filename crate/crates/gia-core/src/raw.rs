//! Raw sensor ingestion: CFA packing, black-level normalization, exposure
//! amplification, patch augmentation and a synthetic scene generator.
//!
//! Short-exposure mosaics are packed into one channel per CFA phase (4 for
//! Bayer, 9 for X-Trans), black-level subtracted, normalized into `[0,1]` and
//! multiplied by the long/short exposure ratio. Values above 1 are left
//! unclipped: the first network layer is expected to see amplified
//! highlights.

use crate::error::{Error, Result};
use crate::nn::bilinear_resize_tensor;
use crate::rng::Rng;
use crate::tensor::{Shape, Tensor};

/// Color filter array kind.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Cfa {
    Bayer,
    XTrans,
}

impl Cfa {
    /// Channels after phase packing.
    pub fn packed_channels(&self) -> usize {
        match self {
            Cfa::Bayer => 4,
            Cfa::XTrans => 9,
        }
    }

    /// Packing factor: the spatial shrink of packing and the upscale factor
    /// of the network output.
    pub fn factor(&self) -> usize {
        match self {
            Cfa::Bayer => 2,
            Cfa::XTrans => 3,
        }
    }

    /// Required divisibility of the mosaic dims.
    pub fn dim_multiple(&self) -> usize {
        match self {
            Cfa::Bayer => 2,
            Cfa::XTrans => 6,
        }
    }
}

/// A sensor mosaic plus the metadata needed to normalize it.
#[derive(Clone, Debug)]
pub struct RawFrame {
    pub mosaic: Vec<u16>,
    pub height: usize,
    pub width: usize,
    pub cfa: Cfa,
    pub black_level: f32,
    pub white_level: f32,
    pub exposure_s: f32,
}

impl RawFrame {
    pub fn new(
        mosaic: Vec<u16>,
        height: usize,
        width: usize,
        cfa: Cfa,
        black_level: f32,
        white_level: f32,
        exposure_s: f32,
    ) -> Result<Self> {
        let m = cfa.dim_multiple();
        if height == 0 || width == 0 || height % m != 0 || width % m != 0 {
            return Err(Error::Invalid {
                op: "RawFrame::new",
                what: format!("dims {height}x{width} must be positive multiples of {m}"),
            });
        }
        if mosaic.len() != height * width {
            return Err(Error::Invalid {
                op: "RawFrame::new",
                what: format!("mosaic length {} != {height}x{width}", mosaic.len()),
            });
        }
        if !(black_level < white_level) {
            return Err(Error::Invalid {
                op: "RawFrame::new",
                what: format!("black level {black_level} must be below white level {white_level}"),
            });
        }
        if !(exposure_s > 0.0) {
            return Err(Error::Invalid {
                op: "RawFrame::new",
                what: format!("exposure {exposure_s} must be positive"),
            });
        }
        Ok(RawFrame {
            mosaic,
            height,
            width,
            cfa,
            black_level,
            white_level,
            exposure_s,
        })
    }
}

/// Normalized, amplified network input.
#[derive(Clone, Debug)]
pub struct PackedInput {
    /// `(1, 4, h/2, w/2)` for Bayer, `(1, 9, h/3, w/3)` for X-Trans.
    pub tensor: Tensor,
    /// Amplification ratio that was applied.
    pub ratio: f32,
}

/// A training pair: packed short-exposure input and its RGB reference.
#[derive(Clone, Debug)]
pub struct Sample {
    pub input: PackedInput,
    pub target: Tensor,
    pub id: String,
}

impl Sample {
    /// Upscale factor between packed input and RGB target.
    pub fn factor(&self) -> usize {
        self.target.shape().h / self.input.tensor.shape().h
    }
}

/// Bayer phase order: `(0,0), (0,1), (1,1), (1,0)`.
const BAYER_PHASES: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 1), (1, 0)];

/// Packs a Bayer mosaic into its four phase planes as raw counts.
pub fn pack_bayer(frame: &RawFrame) -> Result<Tensor> {
    if frame.cfa != Cfa::Bayer {
        return Err(Error::Invalid {
            op: "pack_bayer",
            what: "frame is not Bayer".to_string(),
        });
    }
    let (h2, w2) = (frame.height / 2, frame.width / 2);
    let mut data = Vec::with_capacity(4 * h2 * w2);
    for &(dy, dx) in &BAYER_PHASES {
        for i in 0..h2 {
            let row = (2 * i + dy) * frame.width;
            for j in 0..w2 {
                data.push(frame.mosaic[row + 2 * j + dx] as f32);
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 4, h2, w2), data)
}

/// Inverse of [`pack_bayer`]: reassembles the mosaic bit-exactly from a
/// tensor of raw counts.
pub fn unpack_bayer(packed: &Tensor) -> Result<Vec<u16>> {
    let s = packed.shape();
    if s.n != 1 || s.c != 4 {
        return Err(Error::Invalid {
            op: "unpack_bayer",
            what: format!("expected (1,4,h,w), got {s}"),
        });
    }
    let (h, w) = (s.h * 2, s.w * 2);
    let mut mosaic = vec![0u16; h * w];
    for (ch, &(dy, dx)) in BAYER_PHASES.iter().enumerate() {
        for i in 0..s.h {
            for j in 0..s.w {
                mosaic[(2 * i + dy) * w + 2 * j + dx] = packed.at(0, ch, i, j) as u16;
            }
        }
    }
    Ok(mosaic)
}

/// Packs an X-Trans mosaic into its nine 3x3 phase planes as raw counts.
pub fn pack_xtrans(frame: &RawFrame) -> Result<Tensor> {
    if frame.cfa != Cfa::XTrans {
        return Err(Error::Invalid {
            op: "pack_xtrans",
            what: "frame is not X-Trans".to_string(),
        });
    }
    let (h3, w3) = (frame.height / 3, frame.width / 3);
    let mut data = Vec::with_capacity(9 * h3 * w3);
    for dy in 0..3 {
        for dx in 0..3 {
            for i in 0..h3 {
                let row = (3 * i + dy) * frame.width;
                for j in 0..w3 {
                    data.push(frame.mosaic[row + 3 * j + dx] as f32);
                }
            }
        }
    }
    Tensor::from_vec(Shape::new(1, 9, h3, w3), data)
}

/// Inverse of [`pack_xtrans`].
pub fn unpack_xtrans(packed: &Tensor) -> Result<Vec<u16>> {
    let s = packed.shape();
    if s.n != 1 || s.c != 9 {
        return Err(Error::Invalid {
            op: "unpack_xtrans",
            what: format!("expected (1,9,h,w), got {s}"),
        });
    }
    let (h, w) = (s.h * 3, s.w * 3);
    let mut mosaic = vec![0u16; h * w];
    for dy in 0..3 {
        for dx in 0..3 {
            let ch = dy * 3 + dx;
            for i in 0..s.h {
                for j in 0..s.w {
                    mosaic[(3 * i + dy) * w + 3 * j + dx] = packed.at(0, ch, i, j) as u16;
                }
            }
        }
    }
    Ok(mosaic)
}

/// Packs a frame according to its CFA.
pub fn pack(frame: &RawFrame) -> Result<Tensor> {
    match frame.cfa {
        Cfa::Bayer => pack_bayer(frame),
        Cfa::XTrans => pack_xtrans(frame),
    }
}

/// Maximum amplification ratio; the published exposure ratios top out at 300.
pub const RATIO_CAP: f32 = 300.0;

/// Black-level subtraction, normalization into `[0,1]` and brightness
/// amplification by the exposure ratio (capped).
///
/// Negative post-black-level values clamp to 0 before amplification. The
/// amplified result is not clipped above.
pub fn normalize_amplify(
    packed: &Tensor,
    frame: &RawFrame,
    target_exposure_s: f32,
    ratio_cap: f32,
) -> Result<PackedInput> {
    if !(target_exposure_s > 0.0) {
        return Err(Error::Invalid {
            op: "normalize_amplify",
            what: format!("target exposure {target_exposure_s} must be positive"),
        });
    }
    let ratio = (target_exposure_s / frame.exposure_s).min(ratio_cap);
    let span = frame.white_level - frame.black_level;
    let black = frame.black_level;
    let tensor = packed.map(|v| ((v - black) / span).max(0.0) * ratio);
    Ok(PackedInput { tensor, ratio })
}

/// Full preprocessing: pack the mosaic, then normalize and amplify.
pub fn preprocess(frame: &RawFrame, target_exposure_s: f32, ratio_cap: f32) -> Result<PackedInput> {
    let packed = pack(frame)?;
    normalize_amplify(&packed, frame, target_exposure_s, ratio_cap)
}

/// What [`augment`] decided, for reproducibility logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentRecord {
    pub b: usize,
    pub b_was_clamped: bool,
    pub crop_y: usize,
    pub crop_x: usize,
    pub flip_lr: bool,
    pub flip_ud: bool,
    pub transpose: bool,
}

/// Randomly crops an aligned square patch pair of packed side `a*b` with
/// `b` drawn uniformly from `b_range`, then applies independent 50%
/// horizontal flip, vertical flip and transpose, identically to input and
/// target.
///
/// If the image cannot fit the largest patch, the upper bound of `b` is
/// clamped and recorded; if even the smallest patch does not fit, this is an
/// error.
pub fn augment(
    sample: &Sample,
    rng: &mut Rng,
    a: usize,
    b_range: (usize, usize),
) -> Result<(Sample, AugmentRecord)> {
    let (b_lo, b_hi) = b_range;
    if a == 0 || b_lo == 0 || b_lo > b_hi {
        return Err(Error::Invalid {
            op: "augment",
            what: format!("invalid patch parameters a={a}, b in [{b_lo},{b_hi}]"),
        });
    }
    let s = sample.input.tensor.shape();
    let min_side = s.h.min(s.w);
    if a * b_lo > min_side {
        return Err(Error::Invalid {
            op: "augment",
            what: format!(
                "smallest patch {} exceeds packed image side {min_side}",
                a * b_lo
            ),
        });
    }
    let b_max_fit = (min_side / a).min(b_hi);
    let b_was_clamped = b_max_fit < b_hi;
    let b = rng.range_usize(b_lo, b_max_fit);
    let side = a * b;
    let crop_y = rng.range_usize(0, s.h - side);
    let crop_x = rng.range_usize(0, s.w - side);
    let flip_lr = rng.coin();
    let flip_ud = rng.coin();
    let transpose = rng.coin();

    let r = sample.factor();
    let mut input = sample.input.tensor.crop_at(crop_y, crop_x, side, side)?;
    let mut target = sample
        .target
        .crop_at(r * crop_y, r * crop_x, r * side, r * side)?;
    if flip_lr {
        input = input.flip_lr();
        target = target.flip_lr();
    }
    if flip_ud {
        input = input.flip_ud();
        target = target.flip_ud();
    }
    if transpose {
        input = input.transpose_hw();
        target = target.transpose_hw();
    }
    Ok((
        Sample {
            input: PackedInput {
                tensor: input,
                ratio: sample.input.ratio,
            },
            target,
            id: sample.id.clone(),
        },
        AugmentRecord {
            b,
            b_was_clamped,
            crop_y,
            crop_x,
            flip_lr,
            flip_ud,
            transpose,
        },
    ))
}

/// Center crop of the same patch geometry, for no-augmentation ablation runs.
pub fn center_crop(sample: &Sample, side: usize) -> Result<Sample> {
    let s = sample.input.tensor.shape();
    if side > s.h.min(s.w) {
        return Err(Error::Invalid {
            op: "center_crop",
            what: format!("patch {side} exceeds packed image {s}"),
        });
    }
    let y0 = (s.h - side) / 2;
    let x0 = (s.w - side) / 2;
    let r = sample.factor();
    Ok(Sample {
        input: PackedInput {
            tensor: sample.input.tensor.crop_at(y0, x0, side, side)?,
            ratio: sample.input.ratio,
        },
        target: sample.target.crop_at(r * y0, r * x0, r * side, r * side)?,
        id: sample.id.clone(),
    })
}

/// RGGB layout of the synthetic Bayer sensor: color index 0=R, 1=G, 2=B.
fn bayer_color_at(i: usize, j: usize) -> usize {
    match (i % 2, j % 2) {
        (0, 0) => 0,
        (0, 1) | (1, 0) => 1,
        _ => 2,
    }
}

/// 6x6 X-Trans layout (20 green, 8 red, 8 blue per tile).
const XTRANS_TILE: [[usize; 6]; 6] = [
    [1, 2, 1, 1, 0, 1],
    [0, 1, 0, 2, 1, 2],
    [1, 2, 1, 1, 0, 1],
    [1, 0, 1, 1, 2, 1],
    [2, 1, 2, 0, 1, 0],
    [1, 0, 1, 1, 2, 1],
];

fn xtrans_color_at(i: usize, j: usize) -> usize {
    XTRANS_TILE[i % 6][j % 6]
}

/// Color index sampled at a CFA position (0=R, 1=G, 2=B).
pub fn cfa_color_at(cfa: Cfa, i: usize, j: usize) -> usize {
    match cfa {
        Cfa::Bayer => bayer_color_at(i, j),
        Cfa::XTrans => xtrans_color_at(i, j),
    }
}

/// Parameters of the synthetic scene generator.
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub cfa: Cfa,
    /// Long/short exposure ratio of the simulated pair.
    pub ratio: f32,
    /// Read noise sigma in counts.
    pub read_noise: f32,
    /// Shot noise gain: variance contribution `shot_noise * electrons`.
    pub shot_noise: f32,
    /// Per-channel gain applied to the short-exposure path only. The clean
    /// target stays uncast, so recovering it requires whole-image statistics.
    pub cast: Option<[f32; 3]>,
    /// Per-channel offset (in normalized scene units) added on the
    /// short-exposure path only; models a per-image black-level/color shift.
    pub cast_offset: Option<[f32; 3]>,
    pub black_level: f32,
    pub white_level: f32,
    pub long_exposure_s: f32,
}

impl SynthConfig {
    pub fn new(height: usize, width: usize, cfa: Cfa) -> Self {
        SynthConfig {
            height,
            width,
            cfa,
            ratio: 100.0,
            read_noise: 4.0,
            shot_noise: 1.0,
            cast: None,
            cast_offset: None,
            black_level: 512.0,
            white_level: 16383.0,
            long_exposure_s: 10.0,
        }
    }
}

/// Smooth random RGB scene in `[0.02, 0.98]`, built by bilinear upsampling of
/// a coarse random grid.
pub fn synth_rgb_scene(rng: &mut Rng, height: usize, width: usize) -> Tensor {
    let gh = (height / 32).clamp(2, 17);
    let gw = (width / 32).clamp(2, 17);
    let coarse = Tensor::from_fn(Shape::new(1, 3, gh, gw), |_, _, _, _| {
        0.02 + 0.96 * rng.next_f32()
    });
    bilinear_resize_tensor(&coarse, height, width)
}

/// Generates a paired short-exposure raw frame and clean RGB target.
///
/// The clean scene is mosaiced through the CFA, attenuated by the exposure
/// ratio, corrupted with shot-plus-read noise and quantized to counts above
/// the black level. The same master RNG state yields the same scene
/// regardless of the noise settings (scene and noise use split streams).
pub fn synth_scene(rng: &Rng, cfg: &SynthConfig) -> Result<(RawFrame, Tensor)> {
    let m = cfg.cfa.dim_multiple();
    if cfg.height == 0 || cfg.width == 0 || cfg.height % m != 0 || cfg.width % m != 0 {
        return Err(Error::Invalid {
            op: "synth_scene",
            what: format!(
                "size {}x{} must be a positive multiple of {m}",
                cfg.height, cfg.width
            ),
        });
    }
    if !(cfg.ratio >= 1.0) {
        return Err(Error::Invalid {
            op: "synth_scene",
            what: format!("exposure ratio {} must be >= 1", cfg.ratio),
        });
    }
    let mut scene_rng = rng.split(0);
    let mut noise_rng = rng.split(1);

    let scene = synth_rgb_scene(&mut scene_rng, cfg.height, cfg.width);
    let span = cfg.white_level - cfg.black_level;
    let mut mosaic = Vec::with_capacity(cfg.height * cfg.width);
    for i in 0..cfg.height {
        for j in 0..cfg.width {
            let color = cfa_color_at(cfg.cfa, i, j);
            let gain = cfg.cast.map(|c| c[color]).unwrap_or(1.0);
            let offset = cfg.cast_offset.map(|c| c[color]).unwrap_or(0.0);
            let lit = (scene.at(0, color, i, j) * gain + offset).max(0.0);
            // electrons captured during the short exposure
            let e_short = lit * span / cfg.ratio;
            let sigma =
                (cfg.shot_noise * e_short.max(0.0) + cfg.read_noise * cfg.read_noise).sqrt();
            let noisy = e_short + sigma * noise_rng.normal();
            let counts = (cfg.black_level + noisy).round().clamp(0.0, cfg.white_level);
            mosaic.push(counts as u16);
        }
    }
    let frame = RawFrame::new(
        mosaic,
        cfg.height,
        cfg.width,
        cfg.cfa,
        cfg.black_level,
        cfg.white_level,
        cfg.long_exposure_s / cfg.ratio,
    )?;
    Ok((frame, scene))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bayer_frame(mosaic: Vec<u16>, h: usize, w: usize) -> RawFrame {
        RawFrame::new(mosaic, h, w, Cfa::Bayer, 512.0, 16383.0, 0.1).unwrap()
    }

    #[test]
    fn constant_mosaic_packs_to_constant_channels() {
        let f = bayer_frame(vec![77; 16], 4, 4);
        let p = pack_bayer(&f).unwrap();
        assert_eq!(p.shape(), Shape::new(1, 4, 2, 2));
        assert!(p.data().iter().all(|&v| v == 77.0));

        let fx = RawFrame::new(vec![5; 36], 6, 6, Cfa::XTrans, 512.0, 16383.0, 0.1).unwrap();
        let px = pack_xtrans(&fx).unwrap();
        assert_eq!(px.shape(), Shape::new(1, 9, 2, 2));
        assert!(px.data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn bayer_channels_are_strided_subsamples() {
        // 4x4 mosaic with values 0..15; channel k holds the phase (dy,dx)
        let f = bayer_frame((0..16).collect(), 4, 4);
        let p = pack_bayer(&f).unwrap();
        for (ch, &(dy, dx)) in BAYER_PHASES.iter().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    let expect = ((2 * i + dy) * 4 + (2 * j + dx)) as f32;
                    assert_eq!(p.at(0, ch, i, j), expect, "channel {ch}");
                }
            }
        }
    }

    #[test]
    fn xtrans_channels_are_strided_subsamples() {
        let f = RawFrame::new((0..36).collect(), 6, 6, Cfa::XTrans, 0.0, 1.0, 0.1).unwrap();
        let p = pack_xtrans(&f).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                let ch = dy * 3 + dx;
                for i in 0..2 {
                    for j in 0..2 {
                        let expect = ((3 * i + dy) * 6 + (3 * j + dx)) as f32;
                        assert_eq!(p.at(0, ch, i, j), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn pack_unpack_is_identity() {
        let mut rng = Rng::new(2);
        let mosaic: Vec<u16> = (0..8 * 12)
            .map(|_| (rng.next_u64() & 0xffff) as u16)
            .collect();
        let f = bayer_frame(mosaic.clone(), 8, 12);
        assert_eq!(unpack_bayer(&pack_bayer(&f).unwrap()).unwrap(), mosaic);

        let mosaic9: Vec<u16> = (0..12 * 6)
            .map(|_| (rng.next_u64() & 0xffff) as u16)
            .collect();
        let fx = RawFrame::new(mosaic9.clone(), 12, 6, Cfa::XTrans, 0.0, 1.0, 0.1).unwrap();
        assert_eq!(unpack_xtrans(&pack_xtrans(&fx).unwrap()).unwrap(), mosaic9);
    }

    #[test]
    fn frame_invariants_are_enforced() {
        assert!(RawFrame::new(vec![0; 9], 3, 3, Cfa::Bayer, 0.0, 1.0, 0.1).is_err()); // odd dims
        assert!(RawFrame::new(vec![0; 16], 4, 4, Cfa::XTrans, 0.0, 1.0, 0.1).is_err()); // not %6
        assert!(RawFrame::new(vec![0; 16], 4, 4, Cfa::Bayer, 1.0, 1.0, 0.1).is_err()); // black >= white
        assert!(RawFrame::new(vec![0; 16], 4, 4, Cfa::Bayer, 0.0, 1.0, 0.0).is_err()); // exposure
        let f = bayer_frame(vec![0; 16], 4, 4);
        assert!(pack_xtrans(&f).is_err());
    }

    #[test]
    fn amplification_ratio_is_exposure_ratio() {
        let f = bayer_frame(vec![512; 16], 4, 4);
        // short 1/10 s against a 10 s reference: ratio 100
        let p = preprocess(&f, 10.0, RATIO_CAP).unwrap();
        assert_eq!(p.ratio, 100.0);
        // counts at black level normalize to 0
        assert!(p.tensor.data().iter().all(|&v| v == 0.0));

        let cap = preprocess(&f, 100.0, RATIO_CAP).unwrap();
        assert_eq!(cap.ratio, 300.0);
    }

    #[test]
    fn white_level_at_unit_ratio_normalizes_to_one() {
        let mut f = bayer_frame(vec![16383; 16], 4, 4);
        f.exposure_s = 10.0;
        let p = preprocess(&f, 10.0, RATIO_CAP).unwrap();
        assert_eq!(p.ratio, 1.0);
        for &v in p.tensor.data() {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization_clamps_below_black_level() {
        let f = bayer_frame(vec![100; 16], 4, 4); // below black 512
        let p = preprocess(&f, 10.0, RATIO_CAP).unwrap();
        assert!(p.tensor.data().iter().all(|&v| v == 0.0));
    }

    fn synth_sample(rng: &mut Rng, h: usize, w: usize) -> Sample {
        let cfg = SynthConfig::new(h, w, Cfa::Bayer);
        let (frame, target) = synth_scene(rng, &cfg).unwrap();
        Sample {
            input: preprocess(&frame, cfg.long_exposure_s, RATIO_CAP).unwrap(),
            target,
            id: "synth".to_string(),
        }
    }

    #[test]
    fn augment_patch_sizes_follow_a_times_b() {
        let mut rng = Rng::new(3);
        let sample = synth_sample(&mut rng, 2048, 2048); // packed 1024x1024
        let mut aug_rng = Rng::new(0);
        // force b = 16 by collapsing the range
        let (out, rec) = augment(&sample, &mut aug_rng, 32, (16, 16)).unwrap();
        assert_eq!(rec.b, 16);
        assert_eq!(out.input.tensor.shape(), Shape::new(1, 4, 512, 512));
        assert_eq!(out.target.shape(), Shape::new(1, 3, 1024, 1024));
    }

    #[test]
    fn augment_is_deterministic_for_a_seed() {
        let mut rng = Rng::new(4);
        let sample = synth_sample(&mut rng, 96, 96);
        let (a, ra) = augment(&sample, &mut Rng::new(9), 8, (2, 4)).unwrap();
        let (b, rb) = augment(&sample, &mut Rng::new(9), 8, (2, 4)).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.input.tensor.data(), b.input.tensor.data());
        assert_eq!(a.target.data(), b.target.data());
    }

    #[test]
    fn augment_clamps_oversized_b_and_errors_when_nothing_fits() {
        let mut rng = Rng::new(5);
        let sample = synth_sample(&mut rng, 64, 64); // packed 32x32
        let (_, rec) = augment(&sample, &mut Rng::new(1), 8, (2, 100)).unwrap();
        assert!(rec.b_was_clamped);
        assert!(rec.b <= 4);
        assert!(augment(&sample, &mut Rng::new(1), 8, (5, 100)).is_err());
    }

    #[test]
    fn double_flip_restores_patch() {
        let mut rng = Rng::new(6);
        let sample = synth_sample(&mut rng, 64, 64);
        let t = &sample.input.tensor;
        assert_eq!(t.data(), t.flip_lr().flip_lr().data());
        assert_eq!(t.data(), t.flip_ud().flip_ud().data());
        assert_eq!(t.data(), t.transpose_hw().transpose_hw().data());
    }

    #[test]
    fn augment_preserves_input_target_alignment() {
        // Packed crop offsets map to exactly r x packed offsets in the target.
        let mut rng = Rng::new(7);
        let sample = synth_sample(&mut rng, 96, 96);
        for seed in 0..5 {
            let (out, rec) = augment(&sample, &mut Rng::new(seed), 8, (2, 4)).unwrap();
            let side = 8 * rec.b;
            let mut i = sample
                .input
                .tensor
                .crop_at(rec.crop_y, rec.crop_x, side, side)
                .unwrap();
            let mut t = sample
                .target
                .crop_at(2 * rec.crop_y, 2 * rec.crop_x, 2 * side, 2 * side)
                .unwrap();
            if rec.flip_lr {
                i = i.flip_lr();
                t = t.flip_lr();
            }
            if rec.flip_ud {
                i = i.flip_ud();
                t = t.flip_ud();
            }
            if rec.transpose {
                i = i.transpose_hw();
                t = t.transpose_hw();
            }
            assert_eq!(out.input.tensor.data(), i.data());
            assert_eq!(out.target.data(), t.data());
        }
    }

    #[test]
    fn synth_dims_respect_cfa_divisibility() {
        let rng = Rng::new(8);
        assert!(synth_scene(&rng, &SynthConfig::new(30, 30, Cfa::XTrans)).is_ok());
        assert!(synth_scene(&rng, &SynthConfig::new(32, 30, Cfa::XTrans)).is_err());
        assert!(synth_scene(&rng, &SynthConfig::new(34, 34, Cfa::Bayer)).is_ok());
        assert!(synth_scene(&rng, &SynthConfig::new(33, 34, Cfa::Bayer)).is_err());
    }

    #[test]
    fn zero_noise_unit_ratio_roundtrips_the_mosaiced_scene() {
        let rng = Rng::new(9);
        let mut cfg = SynthConfig::new(32, 32, Cfa::Bayer);
        cfg.ratio = 1.0;
        cfg.read_noise = 0.0;
        cfg.shot_noise = 0.0;
        let (frame, scene) = synth_scene(&rng, &cfg).unwrap();
        // pack/unpack reproduces the mosaic bit-exactly
        assert_eq!(
            unpack_bayer(&pack_bayer(&frame).unwrap()).unwrap(),
            frame.mosaic
        );
        // and the mosaic quantizes the clean scene (within rounding)
        for i in 0..32 {
            for j in 0..32 {
                let color = cfa_color_at(Cfa::Bayer, i, j);
                let expect = cfg.black_level
                    + scene.at(0, color, i, j) * (cfg.white_level - cfg.black_level);
                assert!((frame.mosaic[i * 32 + j] as f32 - expect).abs() <= 0.5);
            }
        }
    }

    /// Test-local PSNR between two equal-shape tensors, in dB.
    fn psnr_of(a: &Tensor, b: &Tensor, peak: f32) -> f64 {
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            / a.numel() as f64;
        10.0 * ((peak as f64) * (peak as f64) / mse).log10()
    }

    #[test]
    fn read_noise_monotonically_degrades_input_psnr() {
        // Monte-Carlo over 20 seeds: expected PSNR of the naive-amplified
        // input against the clean packed reference strictly decreases as the
        // read-noise parameter grows.
        let noise_levels = [1.0f32, 8.0, 64.0];
        let mut means = Vec::new();
        for &noise in &noise_levels {
            let mut total = 0.0;
            for seed in 0..20 {
                let rng = Rng::new(1000 + seed);
                let mut cfg = SynthConfig::new(48, 48, Cfa::Bayer);
                cfg.ratio = 50.0;
                cfg.read_noise = noise;
                cfg.shot_noise = 0.0;
                let (noisy_frame, _) = synth_scene(&rng, &cfg).unwrap();
                let mut clean_cfg = cfg.clone();
                clean_cfg.read_noise = 0.0;
                let (clean_frame, _) = synth_scene(&rng, &clean_cfg).unwrap();
                let noisy = preprocess(&noisy_frame, cfg.long_exposure_s, RATIO_CAP).unwrap();
                let clean = preprocess(&clean_frame, cfg.long_exposure_s, RATIO_CAP).unwrap();
                total += psnr_of(&noisy.tensor, &clean.tensor, 1.0);
            }
            means.push(total / 20.0);
        }
        assert!(
            means[0] > means[1] && means[1] > means[2],
            "PSNR means not decreasing: {means:?}"
        );
    }

    #[test]
    fn same_master_seed_gives_same_scene_across_noise_settings() {
        let rng = Rng::new(77);
        let mut cfg = SynthConfig::new(32, 32, Cfa::Bayer);
        cfg.read_noise = 2.0;
        let (_, scene_a) = synth_scene(&rng, &cfg).unwrap();
        cfg.read_noise = 40.0;
        let (_, scene_b) = synth_scene(&rng, &cfg).unwrap();
        assert_eq!(scene_a.data(), scene_b.data());
    }

    #[test]
    fn xtrans_tile_has_the_right_color_census() {
        let mut counts = [0usize; 3];
        for row in &XTRANS_TILE {
            for &c in row {
                counts[c] += 1;
            }
        }
        assert_eq!(counts, [8, 20, 8]);
    }
}
