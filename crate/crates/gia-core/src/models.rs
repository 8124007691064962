//! Declarative builders for the restoration U-Net and its variants.
//!
//! The backbone is an encoder/decoder with two 3x3 convolutions per scale,
//! 2x2 max pooling between encoder scales, transposed-conv upscaling with
//! skip concatenation in the decoder, and a 1x1 head feeding a sub-pixel
//! rearrangement (18 3x3 convolutions at the default depth of 5). Variants
//! swap the block kind (plain / dilated / see-wider) or insert a module into
//! the bottleneck:
//!
//! - `gia`: global average pool -> 1x1 shrink -> bilinear broadcast ->
//!   concat with the local features -> 1x1 fuse. Two learnable layers whose
//!   global pathway makes every output position depend on the whole input.
//! - `extra2`: two plain 3x3 convolutions, the depth-matched control.

use crate::error::{Error, Result};
use crate::nn::{
    bilinear_upsample, concat_channels, conv2d, conv2d_transposed, depth_to_space,
    global_avg_pool, leaky_relu, maxpool2x2, Conv2dSpec, Padding,
};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};

/// Convolution block family used throughout a variant.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum BlockKind {
    /// Plain 3x3 convolutions.
    Plain,
    /// Every 3x3 convolution dilated by the given rate.
    Dilated(usize),
    /// See-wider block: parallel plain and dilated 3x3 convolutions, each
    /// producing half the output width, concatenated.
    Sw { dilation: usize },
}

/// Optional bottleneck insertion.
#[derive(Clone, Copy, PartialEq, Debug)]
pub enum BottleneckKind {
    None,
    Gia(GiaSpec),
    /// Two extra plain convolutions (depth-matched control).
    ExtraConvs,
}

/// Channel plan of the global-information module.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct GiaSpec {
    /// Channels after the 1x1 shrink of the pooled vector.
    pub c1: usize,
    /// Channels after the fuse convolution (normally the bottleneck width).
    pub c2: usize,
}

/// Declarative description of a network variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    pub variant: String,
    pub in_ch: usize,
    pub base_width: usize,
    pub depth: usize,
    pub width_scale: f32,
    pub block: BlockKind,
    pub bottleneck: BottleneckKind,
    /// Sub-pixel upscale factor of the head (2 for Bayer, 3 for X-Trans).
    pub out_factor: usize,
    pub lrelu_slope: f32,
}

/// The named variants exposed on the command line.
pub const VARIANT_NAMES: [&str; 5] = ["sid", "sid-dilated", "sw", "gia", "gia-l1"];

impl ArchConfig {
    /// Builds a named variant. `in_ch` must be 4 (Bayer) or 9 (X-Trans).
    pub fn variant(name: &str, in_ch: usize, width_scale: f32, depth: usize) -> Result<ArchConfig> {
        let out_factor = match in_ch {
            4 => 2,
            9 => 3,
            other => {
                return Err(Error::Invalid {
                    op: "ArchConfig::variant",
                    what: format!("in_ch must be 4 or 9, got {other}"),
                })
            }
        };
        let mut cfg = ArchConfig {
            variant: name.to_string(),
            in_ch,
            base_width: 32,
            depth,
            width_scale,
            block: BlockKind::Plain,
            bottleneck: BottleneckKind::None,
            out_factor,
            lrelu_slope: 0.2,
        };
        match name {
            "sid" => {}
            "sid-dilated" => cfg.block = BlockKind::Dilated(2),
            "sw" => cfg.block = BlockKind::Sw { dilation: 2 },
            "gia" | "gia-l1" => {
                let bw = cfg.width(cfg.depth - 1);
                cfg.bottleneck = BottleneckKind::Gia(GiaSpec { c1: bw / 2, c2: bw });
            }
            other => {
                return Err(Error::Invalid {
                    op: "ArchConfig::variant",
                    what: format!("unknown variant '{other}' (expected one of {VARIANT_NAMES:?})"),
                })
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Full-size configuration of a named variant.
    pub fn full(name: &str, in_ch: usize) -> Result<ArchConfig> {
        ArchConfig::variant(name, in_ch, 1.0, 5)
    }

    /// Desk-scale preset: quarter width, depth 4. Small enough to train on a
    /// CPU in minutes while exercising the same architecture logic.
    pub fn desk(name: &str, in_ch: usize) -> Result<ArchConfig> {
        ArchConfig::variant(name, in_ch, 0.25, 4)
    }

    /// Encoder width at scale `k` (0-based): `round(base * scale) * 2^k`.
    pub fn width(&self, k: usize) -> usize {
        let base = ((self.base_width as f32 * self.width_scale).round() as usize).max(1);
        base << k
    }

    /// Width of the deepest encoder scale.
    pub fn bottleneck_width(&self) -> usize {
        self.width(self.depth - 1)
    }

    /// Channels leaving the bottleneck (after any insertion).
    pub fn bottleneck_out(&self) -> usize {
        match self.bottleneck {
            BottleneckKind::Gia(g) => g.c2,
            _ => self.bottleneck_width(),
        }
    }

    /// Input dims must be divisible by this for a forward pass.
    pub fn dim_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Invalid {
                op: "ArchConfig",
                what: format!("depth must be >= 2, got {}", self.depth),
            });
        }
        if self.in_ch == 0 || self.out_factor == 0 {
            return Err(Error::Invalid {
                op: "ArchConfig",
                what: "in_ch and out_factor must be positive".to_string(),
            });
        }
        if let BlockKind::Sw { .. } = self.block {
            for k in 0..self.depth {
                if self.width(k) % 2 != 0 {
                    return Err(Error::Invalid {
                        op: "ArchConfig",
                        what: format!("see-wider blocks need even widths, scale {k} has {}", self.width(k)),
                    });
                }
            }
        }
        if let BottleneckKind::Gia(g) = self.bottleneck {
            if g.c1 == 0 || g.c2 == 0 {
                return Err(Error::Invalid {
                    op: "ArchConfig",
                    what: "GIA channel counts must be positive".to_string(),
                });
            }
        }
        if !(0.0..1.0).contains(&self.lrelu_slope) {
            return Err(Error::Invalid {
                op: "ArchConfig",
                what: format!("lrelu slope {} out of [0,1)", self.lrelu_slope),
            });
        }
        Ok(())
    }

    /// Serializes as `key = value` lines (embedded in checkpoints).
    pub fn to_text(&self) -> String {
        let block = match self.block {
            BlockKind::Plain => "plain".to_string(),
            BlockKind::Dilated(d) => format!("dilated:{d}"),
            BlockKind::Sw { dilation } => format!("sw:{dilation}"),
        };
        let bottleneck = match self.bottleneck {
            BottleneckKind::None => "none".to_string(),
            BottleneckKind::Gia(g) => format!("gia:{}:{}", g.c1, g.c2),
            BottleneckKind::ExtraConvs => "extra2".to_string(),
        };
        format!(
            "variant = {}\nin_ch = {}\nbase_width = {}\ndepth = {}\nwidth_scale = {}\nblock = {}\nbottleneck = {}\nout_factor = {}\nlrelu_slope = {}\n",
            self.variant,
            self.in_ch,
            self.base_width,
            self.depth,
            self.width_scale,
            block,
            bottleneck,
            self.out_factor,
            self.lrelu_slope
        )
    }

    /// Parses the `key = value` form written by [`ArchConfig::to_text`].
    pub fn from_text(text: &str) -> Result<ArchConfig> {
        let mut cfg = ArchConfig {
            variant: String::new(),
            in_ch: 0,
            base_width: 32,
            depth: 5,
            width_scale: 1.0,
            block: BlockKind::Plain,
            bottleneck: BottleneckKind::None,
            out_factor: 0,
            lrelu_slope: 0.2,
        };
        let bad = |what: String| Error::Invalid {
            op: "ArchConfig::from_text",
            what,
        };
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected 'key = value', got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "variant" => cfg.variant = value.to_string(),
                "in_ch" => cfg.in_ch = value.parse().map_err(|_| bad(format!("in_ch '{value}'")))?,
                "base_width" => {
                    cfg.base_width = value.parse().map_err(|_| bad(format!("base_width '{value}'")))?
                }
                "depth" => cfg.depth = value.parse().map_err(|_| bad(format!("depth '{value}'")))?,
                "width_scale" => {
                    cfg.width_scale = value.parse().map_err(|_| bad(format!("width_scale '{value}'")))?
                }
                "block" => {
                    cfg.block = if value == "plain" {
                        BlockKind::Plain
                    } else if let Some(d) = value.strip_prefix("dilated:") {
                        BlockKind::Dilated(d.parse().map_err(|_| bad(format!("block '{value}'")))?)
                    } else if let Some(d) = value.strip_prefix("sw:") {
                        BlockKind::Sw {
                            dilation: d.parse().map_err(|_| bad(format!("block '{value}'")))?,
                        }
                    } else {
                        return Err(bad(format!("block '{value}'")));
                    }
                }
                "bottleneck" => {
                    cfg.bottleneck = if value == "none" {
                        BottleneckKind::None
                    } else if value == "extra2" {
                        BottleneckKind::ExtraConvs
                    } else if let Some(rest) = value.strip_prefix("gia:") {
                        let (c1, c2) = rest
                            .split_once(':')
                            .ok_or_else(|| bad(format!("bottleneck '{value}'")))?;
                        BottleneckKind::Gia(GiaSpec {
                            c1: c1.parse().map_err(|_| bad(format!("bottleneck '{value}'")))?,
                            c2: c2.parse().map_err(|_| bad(format!("bottleneck '{value}'")))?,
                        })
                    } else {
                        return Err(bad(format!("bottleneck '{value}'")));
                    }
                }
                "out_factor" => {
                    cfg.out_factor = value.parse().map_err(|_| bad(format!("out_factor '{value}'")))?
                }
                "lrelu_slope" => {
                    cfg.lrelu_slope = value.parse().map_err(|_| bad(format!("lrelu_slope '{value}'")))?
                }
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One learnable convolution with its parameters.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub name: String,
    pub spec: Conv2dSpec,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Per-layer initialization streams keyed by layer name.
struct LayerRng {
    master: Rng,
}

impl LayerRng {
    fn for_layer(&self, name: &str) -> Rng {
        // FNV-1a over the name selects the stream
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        self.master.split(h)
    }
}

impl ConvLayer {
    fn init(name: &str, spec: Conv2dSpec, rng: &LayerRng) -> ConvLayer {
        let mut r = rng.for_layer(name);
        let (kh, kw) = spec.kernel;
        let fan_in = (spec.in_ch * kh * kw) as f32;
        let sigma = (2.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(Shape::new(spec.out_ch, spec.in_ch, kh, kw), |_, _, _, _| {
            r.truncated_normal(sigma)
        })
        .requires_grad(true);
        let bias = spec
            .bias
            .then(|| Tensor::zeros(Shape::new(1, spec.out_ch, 1, 1)).requires_grad(true));
        ConvLayer {
            name: name.to_string(),
            spec,
            weight,
            bias,
        }
    }

    fn init_transposed(name: &str, in_ch: usize, out_ch: usize, rng: &LayerRng) -> ConvLayer {
        let mut r = rng.for_layer(name);
        let spec = Conv2dSpec {
            in_ch,
            out_ch,
            kernel: (2, 2),
            stride: (2, 2),
            dilation: 1,
            padding: Padding::Explicit(0),
            bias: true,
        };
        // transposed layout (in, out, kh, kw); each output sees in_ch taps
        let sigma = (2.0 / in_ch as f32).sqrt();
        let weight = Tensor::from_fn(Shape::new(in_ch, out_ch, 2, 2), |_, _, _, _| {
            r.truncated_normal(sigma)
        })
        .requires_grad(true);
        ConvLayer {
            name: name.to_string(),
            spec,
            weight,
            bias: Some(Tensor::zeros(Shape::new(1, out_ch, 1, 1)).requires_grad(true)),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.spec.param_count()
    }
}

/// A convolution block of the configured kind.
#[derive(Clone, Debug)]
pub enum Block {
    Single(ConvLayer),
    Sw { local: ConvLayer, wide: ConvLayer },
}

impl Block {
    fn init(name: &str, kind: BlockKind, in_ch: usize, out_ch: usize, rng: &LayerRng) -> Block {
        match kind {
            BlockKind::Plain => Block::Single(ConvLayer::init(name, Conv2dSpec::k3(in_ch, out_ch, 1), rng)),
            BlockKind::Dilated(d) => {
                Block::Single(ConvLayer::init(name, Conv2dSpec::k3(in_ch, out_ch, d), rng))
            }
            BlockKind::Sw { dilation } => Block::Sw {
                local: ConvLayer::init(
                    &format!("{name}_local"),
                    Conv2dSpec::k3(in_ch, out_ch / 2, 1),
                    rng,
                ),
                wide: ConvLayer::init(
                    &format!("{name}_wide"),
                    Conv2dSpec::k3(in_ch, out_ch / 2, dilation),
                    rng,
                ),
            },
        }
    }

    fn layers(&self) -> Vec<&ConvLayer> {
        match self {
            Block::Single(c) => vec![c],
            Block::Sw { local, wide } => vec![local, wide],
        }
    }

    fn layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        match self {
            Block::Single(c) => vec![c],
            Block::Sw { local, wide } => vec![local, wide],
        }
    }
}

/// The global-information module: two 1x1 convolutions around a pooled,
/// broadcast global descriptor.
#[derive(Clone, Debug)]
pub struct GiaModule {
    pub shrink: ConvLayer,
    pub fuse: ConvLayer,
    pub slope: f32,
}

impl GiaModule {
    /// Standalone module with seeded initialization.
    pub fn init(c_in: usize, spec: GiaSpec, slope: f32, seed: u64) -> GiaModule {
        let rng = LayerRng {
            master: Rng::new(seed),
        };
        GiaModule::init_in(c_in, spec, slope, &rng)
    }

    fn init_in(c_in: usize, spec: GiaSpec, slope: f32, rng: &LayerRng) -> GiaModule {
        GiaModule {
            shrink: ConvLayer::init("gia_shrink", Conv2dSpec::k1(c_in, spec.c1), rng),
            fuse: ConvLayer::init("gia_fuse", Conv2dSpec::k1(c_in + spec.c1, spec.c2), rng),
            slope,
        }
    }

    /// Learnable parameters of the module alone (the closed-form delta a GIA
    /// insertion adds to a backbone).
    pub fn param_count(&self) -> u64 {
        self.shrink.param_count() + self.fuse.param_count()
    }

    /// Standalone forward (binds its own parameters onto `x`'s tape).
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let sh = bind_conv(tape, &self.shrink);
        let fu = bind_conv(tape, &self.fuse);
        gia_forward(x, &self.shrink.spec, &sh, &self.fuse.spec, &fu, self.slope)
    }
}

type BoundConv<'t> = (Var<'t>, Option<Var<'t>>);

fn bind_conv<'t>(tape: &'t Tape, layer: &ConvLayer) -> BoundConv<'t> {
    (
        tape.leaf(layer.weight.clone()),
        layer.bias.as_ref().map(|b| tape.leaf(b.clone())),
    )
}

fn conv_forward<'t>(x: Var<'t>, spec: &Conv2dSpec, bound: &BoundConv<'t>) -> Result<Var<'t>> {
    conv2d(x, bound.0, bound.1, spec)
}

/// The module composition: pool -> shrink -> activation -> broadcast ->
/// concat -> fuse -> activation.
fn gia_forward<'t>(
    x: Var<'t>,
    shrink_spec: &Conv2dSpec,
    shrink: &BoundConv<'t>,
    fuse_spec: &Conv2dSpec,
    fuse: &BoundConv<'t>,
    slope: f32,
) -> Result<Var<'t>> {
    let s = x.shape();
    let g = global_avg_pool(x)?;
    let g = leaky_relu(conv_forward(g, shrink_spec, shrink)?, slope)?;
    let g = bilinear_upsample(g, (s.h, s.w))?;
    let y = concat_channels(x, g)?;
    leaky_relu(conv_forward(y, fuse_spec, fuse)?, slope)
}

/// Walks a [`Binding`]'s vars in the same order [`Network::bind`] created
/// them.
struct ParamCursor<'a, 't> {
    vars: &'a [Var<'t>],
    pos: usize,
}

impl<'a, 't> ParamCursor<'a, 't> {
    fn next_conv(&mut self, layer: &ConvLayer) -> BoundConv<'t> {
        let w = self.vars[self.pos];
        self.pos += 1;
        let b = layer.bias.as_ref().map(|_| {
            let b = self.vars[self.pos];
            self.pos += 1;
            b
        });
        (w, b)
    }
}

fn block_forward<'t>(
    blk: &Block,
    x: Var<'t>,
    cursor: &mut ParamCursor<'_, 't>,
    slope: f32,
) -> Result<Var<'t>> {
    match blk {
        Block::Single(c) => {
            let bound = cursor.next_conv(c);
            leaky_relu(conv_forward(x, &c.spec, &bound)?, slope)
        }
        Block::Sw { local, wide } => {
            let bl = cursor.next_conv(local);
            let bw = cursor.next_conv(wide);
            let l = leaky_relu(conv_forward(x, &local.spec, &bl)?, slope)?;
            let w = leaky_relu(conv_forward(x, &wide.spec, &bw)?, slope)?;
            concat_channels(l, w)
        }
    }
}

/// Bottleneck insertion with parameters.
#[derive(Clone, Debug)]
pub enum Insert {
    Gia(GiaModule),
    ExtraConvs(ConvLayer, ConvLayer),
}

/// Decoder stage: upscale, skip concat, two blocks.
#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub up: ConvLayer,
    pub blocks: (Block, Block),
}

/// A built network: configuration plus all parameter tensors.
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ArchConfig,
    pub encoder: Vec<(Block, Block)>,
    pub insert: Option<Insert>,
    pub decoder: Vec<DecoderStage>,
    pub head: ConvLayer,
}

/// Builds a network with deterministic truncated-normal initialization
/// (`sigma = sqrt(2 / fan_in)`, zero biases) from `seed`.
///
/// Each layer draws from a stream keyed by its name, so two variants built
/// from the same seed share bit-identical parameters for every layer they
/// have in common (paired comparisons then isolate the architectural
/// difference).
pub fn build(config: &ArchConfig, seed: u64) -> Result<Network> {
    config.validate()?;
    let master = Rng::new(seed);
    let mut rng = LayerRng { master };
    let d = config.depth;
    let kind = config.block;

    let mut encoder = Vec::with_capacity(d);
    for k in 0..d {
        let c_in = if k == 0 { config.in_ch } else { config.width(k - 1) };
        let c = config.width(k);
        encoder.push((
            Block::init(&format!("enc{k}_conv1"), kind, c_in, c, &rng),
            Block::init(&format!("enc{k}_conv2"), kind, c, c, &rng),
        ));
    }

    let bw = config.bottleneck_width();
    let insert = match config.bottleneck {
        BottleneckKind::None => None,
        BottleneckKind::Gia(spec) => Some(Insert::Gia(GiaModule::init_in(
            bw,
            spec,
            config.lrelu_slope,
            &rng,
        ))),
        BottleneckKind::ExtraConvs => Some(Insert::ExtraConvs(
            ConvLayer::init("extra_conv1", Conv2dSpec::k3(bw, bw, 1), &rng),
            ConvLayer::init("extra_conv2", Conv2dSpec::k3(bw, bw, 1), &rng),
        )),
    };

    let mut decoder = Vec::with_capacity(d - 1);
    let mut c_up_in = config.bottleneck_out();
    for j in 0..d - 1 {
        let e = d - 2 - j; // encoder scale this stage pairs with
        let c = config.width(e);
        let up = ConvLayer::init_transposed(&format!("dec{e}_up"), c_up_in, c, &rng);
        let blocks = (
            Block::init(&format!("dec{e}_conv1"), kind, 2 * c, c, &rng),
            Block::init(&format!("dec{e}_conv2"), kind, c, c, &rng),
        );
        decoder.push(DecoderStage { up, blocks });
        c_up_in = c;
    }

    let r = config.out_factor;
    let head = ConvLayer::init("head", Conv2dSpec::k1(config.width(0), 3 * r * r), &rng);

    Ok(Network {
        config: config.clone(),
        encoder,
        insert,
        decoder,
        head,
    })
}

/// Everything of one forward pass a caller may need.
pub struct ForwardTrace<'t> {
    /// Output of the deepest encoder stage, before any insertion.
    pub bottleneck_local: Var<'t>,
    /// Bottleneck features entering the decoder (after the insertion).
    pub bottleneck: Var<'t>,
    /// RGB prediction at `out_factor` times the packed resolution.
    pub output: Var<'t>,
}

/// Network parameters registered on a tape, in [`Network::named_params`]
/// order.
pub struct Binding<'t> {
    pub vars: Vec<Var<'t>>,
}

impl Network {
    fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut out = Vec::new();
        for (b1, b2) in &self.encoder {
            out.extend(b1.layers());
            out.extend(b2.layers());
        }
        match &self.insert {
            Some(Insert::Gia(g)) => {
                out.push(&g.shrink);
                out.push(&g.fuse);
            }
            Some(Insert::ExtraConvs(a, b)) => {
                out.push(a);
                out.push(b);
            }
            None => {}
        }
        for stage in &self.decoder {
            out.push(&stage.up);
            out.extend(stage.blocks.0.layers());
            out.extend(stage.blocks.1.layers());
        }
        out.push(&self.head);
        out
    }

    fn conv_layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        let mut out = Vec::new();
        for (b1, b2) in &mut self.encoder {
            out.extend(b1.layers_mut());
            out.extend(b2.layers_mut());
        }
        match &mut self.insert {
            Some(Insert::Gia(g)) => {
                out.push(&mut g.shrink);
                out.push(&mut g.fuse);
            }
            Some(Insert::ExtraConvs(a, b)) => {
                out.push(a);
                out.push(b);
            }
            None => {}
        }
        for stage in &mut self.decoder {
            out.push(&mut stage.up);
            out.extend(stage.blocks.0.layers_mut());
            out.extend(stage.blocks.1.layers_mut());
        }
        out.push(&mut self.head);
        out
    }

    /// Stable name/tensor enumeration: weights then bias per layer, encoder
    /// to head.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for layer in self.conv_layers() {
            out.push((format!("{}.w", layer.name), &layer.weight));
            if let Some(b) = &layer.bias {
                out.push((format!("{}.b", layer.name), b));
            }
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for layer in self.conv_layers_mut() {
            out.push((format!("{}.w", layer.name), &mut layer.weight));
            if let Some(b) = layer.bias.as_mut() {
                out.push((format!("{}.b", layer.name), b));
            }
        }
        out
    }

    pub fn param_count(&self) -> u64 {
        self.named_params()
            .iter()
            .map(|(_, t)| t.numel() as u64)
            .sum()
    }

    /// Registers every parameter on `tape` as a leaf, in `named_params`
    /// order.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Binding<'t> {
        let mut vars = Vec::new();
        for layer in self.conv_layers() {
            vars.push(tape.leaf(layer.weight.clone()));
            if let Some(b) = &layer.bias {
                vars.push(tape.leaf(b.clone()));
            }
        }
        Binding { vars }
    }

    /// Forward pass using an existing binding (training path: gradients land
    /// on the binding's vars after `backward`).
    pub fn forward_bound<'t>(&self, binding: &Binding<'t>, x: Var<'t>) -> Result<ForwardTrace<'t>> {
        let s = x.shape();
        if s.c != self.config.in_ch {
            return Err(Error::ChannelMismatch {
                op: "Network::forward",
                expected: self.config.in_ch,
                got: s.c,
            });
        }
        let m = self.config.dim_multiple();
        if s.h % m != 0 || s.w % m != 0 {
            return Err(Error::Invalid {
                op: "Network::forward",
                what: format!("input {}x{} not divisible by {m}", s.h, s.w),
            });
        }

        let mut cursor = ParamCursor {
            vars: &binding.vars,
            pos: 0,
        };
        let slope = self.config.lrelu_slope;

        let mut cur = x;
        let mut skips = Vec::new();
        for (k, (b1, b2)) in self.encoder.iter().enumerate() {
            cur = block_forward(b1, cur, &mut cursor, slope)?;
            cur = block_forward(b2, cur, &mut cursor, slope)?;
            if k + 1 < self.encoder.len() {
                skips.push(cur);
                cur = maxpool2x2(cur)?;
            }
        }
        let bottleneck_local = cur;

        cur = match &self.insert {
            None => cur,
            Some(Insert::Gia(g)) => {
                let sh = cursor.next_conv(&g.shrink);
                let fu = cursor.next_conv(&g.fuse);
                gia_forward(cur, &g.shrink.spec, &sh, &g.fuse.spec, &fu, g.slope)?
            }
            Some(Insert::ExtraConvs(a, b)) => {
                let ba = cursor.next_conv(a);
                let bb = cursor.next_conv(b);
                let y = leaky_relu(conv_forward(cur, &a.spec, &ba)?, slope)?;
                leaky_relu(conv_forward(y, &b.spec, &bb)?, slope)?
            }
        };
        let bottleneck = cur;

        for (j, stage) in self.decoder.iter().enumerate() {
            let up = cursor.next_conv(&stage.up);
            cur = conv2d_transposed(cur, up.0, up.1, &stage.up.spec)?;
            let skip = skips[skips.len() - 1 - j];
            cur = concat_channels(cur, skip)?;
            cur = block_forward(&stage.blocks.0, cur, &mut cursor, slope)?;
            cur = block_forward(&stage.blocks.1, cur, &mut cursor, slope)?;
        }

        let hb = cursor.next_conv(&self.head);
        let logits = conv_forward(cur, &self.head.spec, &hb)?;
        let output = depth_to_space(logits, self.config.out_factor)?;
        debug_assert_eq!(cursor.pos, binding.vars.len(), "binding cursor mismatch");

        Ok(ForwardTrace {
            bottleneck_local,
            bottleneck,
            output,
        })
    }

    /// Convenience forward that binds parameters onto `x`'s tape.
    pub fn forward<'t>(&self, x: Var<'t>) -> Result<ForwardTrace<'t>> {
        let binding = self.bind(x.tape());
        self.forward_bound(&binding, x)
    }

    /// Gradient-free forward on a plain tensor. The prediction is not
    /// clamped; clamp to `[0,1]` only when serializing an image.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let mut eval_net = self.clone();
        for (_, t) in eval_net.named_params_mut() {
            *t = t.clone().requires_grad(false);
        }
        let xv = tape.leaf(x.clone());
        Ok(eval_net.forward(xv)?.output.value())
    }
}
