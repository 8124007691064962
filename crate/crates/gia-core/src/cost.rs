//! Analytic parameter and FLOP accounting for a network configuration.
//!
//! Conventions: one multiply-accumulate counts as 2 FLOPs; a bias adds one
//! FLOP per output element; activations and pooling count one (respectively
//! three) FLOPs per output element; rearrangements and concatenation are
//! free. Spatial dims are tracked layer by layer from the packed input;
//! odd dims pool with ceiling division and the decoder re-aligns to the
//! matching encoder resolution, so any packable input resolution can be
//! audited, not only ones divisible by the pooling pyramid.
//!
//! The parameter walk mirrors [`crate::models::build`] exactly; a unit test
//! pins `count_params == Network::param_count` across variants.

use crate::error::{Error, Result};
use crate::models::{ArchConfig, BlockKind, BottleneckKind};
use crate::nn::Conv2dSpec;

/// Cost of one layer of the walk.
#[derive(Clone, Debug)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

/// Exact analytic totals for a configuration at one input resolution.
#[derive(Clone, Debug)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub flops: u64,
}

impl CostReport {
    /// Ratios `(params, flops)` of `self` relative to `base`.
    pub fn relative_to(&self, base: &CostReport) -> (f64, f64) {
        (
            self.params as f64 / base.params as f64,
            self.flops as f64 / base.flops as f64,
        )
    }

    /// Plain-text table: layer, params, flops, cumulative columns.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:>12} {:>16} {:>12} {:>16}\n",
            "layer", "params", "flops", "cum.params", "cum.flops"
        ));
        let (mut cp, mut cf) = (0u64, 0u64);
        for l in &self.layers {
            cp += l.params;
            cf += l.flops;
            out.push_str(&format!(
                "{:<18} {:>12} {:>16} {:>12} {:>16}\n",
                l.name, l.params, l.flops, cp, cf
            ));
        }
        out.push_str(&format!(
            "{:<18} {:>12} {:>16}\n",
            "total", self.params, self.flops
        ));
        out
    }
}

/// FLOPs of one convolution at output dims `(h, w)`:
/// `2*kh*kw*cin*cout*h*w` plus `h*w*cout` when biased.
pub fn conv_flops(spec: &Conv2dSpec, out_h: usize, out_w: usize) -> u64 {
    let area = (out_h * out_w) as u64;
    let (kh, kw) = spec.kernel;
    let mac = 2 * (kh * kw * spec.in_ch * spec.out_ch) as u64 * area;
    mac + if spec.bias { area * spec.out_ch as u64 } else { 0 }
}

struct Walk {
    layers: Vec<LayerCost>,
}

impl Walk {
    fn push(&mut self, name: String, params: u64, flops: u64) {
        self.layers.push(LayerCost {
            name,
            params,
            flops,
        });
    }

    /// One configured block: conv(s) plus activation, "same" dims.
    fn block(&mut self, name: &str, kind: BlockKind, c_in: usize, c_out: usize, h: usize, w: usize) {
        let area = (h * w) as u64;
        match kind {
            BlockKind::Plain | BlockKind::Dilated(_) => {
                let d = if let BlockKind::Dilated(d) = kind { d } else { 1 };
                let spec = Conv2dSpec::k3(c_in, c_out, d);
                let flops = conv_flops(&spec, h, w) + area * c_out as u64; // + lrelu
                self.push(name.to_string(), spec.param_count(), flops);
            }
            BlockKind::Sw { dilation } => {
                let local = Conv2dSpec::k3(c_in, c_out / 2, 1);
                let wide = Conv2dSpec::k3(c_in, c_out / 2, dilation);
                let flops = conv_flops(&local, h, w)
                    + conv_flops(&wide, h, w)
                    + area * c_out as u64; // both lrelus
                self.push(
                    name.to_string(),
                    local.param_count() + wide.param_count(),
                    flops,
                );
            }
        }
    }
}

/// Full per-layer audit of `config` for a raw sensor resolution of
/// `raw_w x raw_h` (packing by `out_factor` happens first).
pub fn cost_report(config: &ArchConfig, raw_w: usize, raw_h: usize) -> Result<CostReport> {
    config.validate()?;
    let r = config.out_factor;
    if raw_w == 0 || raw_h == 0 || raw_w % r != 0 || raw_h % r != 0 {
        return Err(Error::Invalid {
            op: "cost_report",
            what: format!("resolution {raw_w}x{raw_h} not packable by factor {r}"),
        });
    }
    let (mut h, mut w) = (raw_h / r, raw_w / r);
    let d = config.depth;
    let mut walk = Walk { layers: Vec::new() };
    let mut enc_dims = Vec::with_capacity(d);

    for k in 0..d {
        let c_in = if k == 0 { config.in_ch } else { config.width(k - 1) };
        let c = config.width(k);
        walk.block(&format!("enc{k}_conv1"), config.block, c_in, c, h, w);
        walk.block(&format!("enc{k}_conv2"), config.block, c, c, h, w);
        enc_dims.push((h, w));
        if k + 1 < d {
            let (ph, pw) = (h.div_ceil(2), w.div_ceil(2));
            // 3 comparisons per pooled output element
            walk.push(format!("pool{k}"), 0, 3 * (ph * pw * c) as u64);
            h = ph;
            w = pw;
        }
    }

    let bw = config.bottleneck_width();
    match config.bottleneck {
        BottleneckKind::None => {}
        BottleneckKind::Gia(g) => {
            let area = (h * w) as u64;
            walk.push("gia_pool".to_string(), 0, area * bw as u64 + bw as u64);
            let shrink = Conv2dSpec::k1(bw, g.c1);
            walk.push(
                "gia_shrink".to_string(),
                shrink.param_count(),
                conv_flops(&shrink, 1, 1) + g.c1 as u64, // + lrelu on the 1x1 vector
            );
            walk.push("gia_upsample".to_string(), 0, area * g.c1 as u64);
            let fuse = Conv2dSpec::k1(bw + g.c1, g.c2);
            walk.push(
                "gia_fuse".to_string(),
                fuse.param_count(),
                conv_flops(&fuse, h, w) + area * g.c2 as u64,
            );
        }
        BottleneckKind::ExtraConvs => {
            walk.block("extra_conv1", BlockKind::Plain, bw, bw, h, w);
            walk.block("extra_conv2", BlockKind::Plain, bw, bw, h, w);
        }
    }

    let mut c_up_in = config.bottleneck_out();
    for j in 0..d - 1 {
        let e = d - 2 - j;
        let c = config.width(e);
        // transposed conv counted at its true doubled output
        let (uh, uw) = (2 * h, 2 * w);
        let mac = 2 * (c_up_in * c) as u64 * (uh * uw) as u64;
        walk.push(
            format!("dec{e}_up"),
            (c_up_in * c * 4 + c) as u64,
            mac + (uh * uw * c) as u64,
        );
        // skip concat re-aligns to the encoder resolution
        (h, w) = enc_dims[e];
        walk.block(&format!("dec{e}_conv1"), config.block, 2 * c, c, h, w);
        walk.block(&format!("dec{e}_conv2"), config.block, c, c, h, w);
        c_up_in = c;
    }

    let head = Conv2dSpec::k1(config.width(0), 3 * r * r);
    walk.push(
        "head".to_string(),
        head.param_count(),
        conv_flops(&head, h, w), // no activation; depth_to_space is free
    );

    let params = walk.layers.iter().map(|l| l.params).sum();
    let flops = walk.layers.iter().map(|l| l.flops).sum();
    Ok(CostReport {
        layers: walk.layers,
        params,
        flops,
    })
}

/// Exact learnable parameter count of a configuration.
pub fn count_params(config: &ArchConfig) -> Result<u64> {
    // parameters do not depend on resolution; walk at a compliant size
    let r = config.out_factor;
    let side = r * config.dim_multiple();
    Ok(cost_report(config, side, side)?.params)
}

/// Exact FLOP count at a raw input resolution of `raw_w x raw_h`.
pub fn count_flops(config: &ArchConfig, raw_w: usize, raw_h: usize) -> Result<u64> {
    Ok(cost_report(config, raw_w, raw_h)?.flops)
}

/// Receptive-field audit of the bottleneck features.
#[derive(Clone, Copy, Debug)]
pub struct ReceptiveField {
    /// Input pixels (packed resolution) a bottleneck activation can see
    /// through the local convolution path.
    pub local_px: usize,
    /// Input stride of one bottleneck step.
    pub stride: usize,
    /// True when a global pathway (GIA pooling) makes the effective
    /// receptive field unbounded.
    pub global: bool,
}

/// Walks the encoder (including the bottleneck insertion) accumulating the
/// receptive-field extent of the local path.
pub fn receptive_field(config: &ArchConfig) -> ReceptiveField {
    let mut rf = 1usize;
    let mut jump = 1usize;
    let extent = |kind: BlockKind| match kind {
        BlockKind::Plain => 3,
        BlockKind::Dilated(d) => 1 + 2 * d,
        // widest branch dominates
        BlockKind::Sw { dilation } => 1 + 2 * dilation,
    };
    for k in 0..config.depth {
        rf += (extent(config.block) - 1) * jump * 2; // two blocks per scale
        if k + 1 < config.depth {
            rf += jump; // 2x2 pool
            jump *= 2;
        }
    }
    let mut global = false;
    match config.bottleneck {
        BottleneckKind::None => {}
        BottleneckKind::Gia(_) => global = true, // pooled branch sees everything
        BottleneckKind::ExtraConvs => rf += 2 * 2 * jump,
    }
    ReceptiveField {
        local_px: rf,
        stride: jump,
        global,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build;

    #[test]
    fn single_conv_closed_form() {
        let spec = Conv2dSpec::k1(4, 4);
        assert_eq!(spec.param_count(), 20);
        // 2*1*1*4*4*(2*2) + (2*2)*4 = 128 + 16
        assert_eq!(conv_flops(&spec, 2, 2), 144);
    }

    #[test]
    fn count_params_matches_built_networks() {
        for name in ["sid", "sid-dilated", "sw", "gia"] {
            let full = ArchConfig::full(name, 4).unwrap();
            let desk = ArchConfig::desk(name, 9).unwrap();
            for cfg in [full, desk] {
                let net = build(&cfg, 1).unwrap();
                assert_eq!(
                    count_params(&cfg).unwrap(),
                    net.param_count(),
                    "variant {name}"
                );
            }
        }
        let mut extra = ArchConfig::full("sid", 4).unwrap();
        extra.bottleneck = BottleneckKind::ExtraConvs;
        let net = build(&extra, 1).unwrap();
        assert_eq!(count_params(&extra).unwrap(), net.param_count());
    }

    #[test]
    fn sid_absolute_costs_at_sony_resolution() {
        let cfg = ArchConfig::full("sid", 4).unwrap();
        assert_eq!(count_params(&cfg).unwrap(), 7_760_748);
        let params = count_params(&cfg).unwrap() as f64;
        assert!((params - 7.76e6).abs() / 7.76e6 < 0.01);

        let flops = count_flops(&cfg, 4240, 2832).unwrap() as f64;
        let claim = 1112.92e9;
        assert!(
            (flops - claim).abs() / claim < 0.10,
            "flops {flops:.4e} vs {claim:.4e}"
        );
    }

    #[test]
    fn gia_over_sid_cost_ratios() {
        let sid = cost_report(&ArchConfig::full("sid", 4).unwrap(), 4240, 2832).unwrap();
        let gia = cost_report(&ArchConfig::full("gia", 4).unwrap(), 4240, 2832).unwrap();
        let (pr, fr) = gia.relative_to(&sid);
        assert!((pr - 1.07).abs() <= 0.01, "param ratio {pr}");
        assert!((fr - 1.008).abs() <= 0.002, "flop ratio {fr}");
    }

    #[test]
    fn conv_flops_scale_with_area() {
        let cfg = ArchConfig::full("sid", 4).unwrap();
        let f1 = count_flops(&cfg, 512, 512).unwrap() as f64;
        let f2 = count_flops(&cfg, 1024, 1024).unwrap() as f64;
        let ratio = f2 / f1;
        assert!((ratio - 4.0).abs() < 1e-9, "{ratio}");
    }

    #[test]
    fn cost_report_rejects_unpackable_resolutions() {
        let cfg = ArchConfig::full("sid", 4).unwrap();
        assert!(cost_report(&cfg, 641, 480).is_err());
        let fuji = ArchConfig::full("sid", 9).unwrap();
        assert!(cost_report(&fuji, 640, 480).is_err());
        assert!(cost_report(&fuji, 600, 480).is_ok());
    }

    #[test]
    fn receptive_field_grows_monotonically_with_depth() {
        let mut prev = 0;
        for depth in 2..=6 {
            let cfg = ArchConfig::variant("sid", 4, 1.0, depth).unwrap();
            let rf = receptive_field(&cfg);
            assert!(rf.local_px > prev, "depth {depth}: {rf:?}");
            assert!(!rf.global);
            prev = rf.local_px;
        }
        let gia = ArchConfig::full("gia", 4).unwrap();
        assert!(receptive_field(&gia).global);
        // dilation widens the local path
        let dil = ArchConfig::full("sid-dilated", 4).unwrap();
        assert!(receptive_field(&dil).local_px > receptive_field(&ArchConfig::full("sid", 4).unwrap()).local_px);
    }

    #[test]
    fn table_lists_every_layer_and_totals() {
        let cfg = ArchConfig::desk("gia", 4).unwrap();
        let report = cost_report(&cfg, 256, 256).unwrap();
        let table = report.to_table();
        assert!(table.contains("gia_fuse"));
        assert!(table.contains("head"));
        assert!(table.contains("total"));
        assert!(table.lines().count() >= report.layers.len() + 2);
    }
}
