//! Generator (encoder, STU skip chain, upsampling decoder) and the two-headed
//! discriminator.

use std::fmt;

use attriforge_tensor::{DType, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{nested, BatchNorm2d, Conv2d, InstanceNorm2d, Linear, Mode, Module, Slot};
use crate::stu::{
    attribute_var, inject_attribute, stu_forward, tile_attribute, AttributeValue, FeatureMap,
    HiddenState, StuCellParams, StuTrace,
};

pub const DEPTH: usize = 5;
pub const NUM_SKIPS: usize = DEPTH - 1;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Layer widths and working resolution shared by both networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub image_size: usize,
    pub widths: [usize; DEPTH],
}

impl ArchConfig {
    /// 256x256 input, 64..1024 channels.
    pub fn full() -> Self {
        ArchConfig { image_size: 256, widths: [64, 128, 256, 512, 1024] }
    }

    /// 64x64 input, 8..128 channels; fast enough for CPU training runs.
    pub fn tiny() -> Self {
        ArchConfig { image_size: 64, widths: [8, 16, 32, 64, 128] }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown network preset `{other}`"))),
        }
    }

    pub fn latent_size(&self) -> usize {
        self.image_size >> DEPTH
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if !s.is_power_of_two() || s < 32 {
            return Err(Error::Config(format!(
                "image size must be a power of two >= 32, got {s}"
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// How encoder features reach the decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipMode {
    Stu,
    /// Raw concatenation of encoder features (the "without STU" ablation).
    Concat,
}

/// Kinds of layers, for structural inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Strided convolution.
    Conv,
    /// Nearest x2 upsampling followed by a stride-1 convolution.
    UpsampleConv,
    BatchNorm,
    InstanceNorm,
    FullyConnected,
    StuCell,
}

#[derive(Clone, Debug)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
    pub params: usize,
}

struct EncoderBlock {
    conv: Conv2d,
    norm: BatchNorm2d,
}

impl EncoderBlock {
    fn new(in_ch: usize, out_ch: usize, dtype: DType, rng: &mut impl Rng) -> Self {
        EncoderBlock { conv: Conv2d::down4x4(in_ch, out_ch, dtype, rng), norm: BatchNorm2d::new(out_ch, dtype) }
    }

    fn forward(&self, x: &Var, mode: Mode) -> Var {
        self.norm.forward(&self.conv.forward(x), mode).leaky_relu(LEAKY_SLOPE)
    }
}

impl Module for EncoderBlock {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        let mut v = nested("conv", self.conv.slots());
        v.extend(nested("bn", self.norm.slots()));
        v
    }
}

struct DecoderBlock {
    conv: Conv2d,
    /// Absent on the output layer, which ends in tanh.
    norm: Option<InstanceNorm2d>,
}

impl DecoderBlock {
    fn forward(&self, x: &Var) -> Var {
        let y = self.conv.forward(&x.upsample_nearest2x());
        match &self.norm {
            Some(n) => n.forward(&y).relu(),
            None => y.tanh(),
        }
    }
}

impl Module for DecoderBlock {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        let mut v = nested("conv", self.conv.slots());
        if let Some(n) = &self.norm {
            v.extend(nested("in", n.slots()));
        }
        v
    }
}

/// Encoder output: latent code and the four shallower feature maps (shallowest first).
#[derive(Clone)]
pub struct Encoded {
    pub latent: Var,
    pub skips: Vec<FeatureMap>,
}

impl Encoded {
    /// Same values, cut from the graph that produced them.
    pub fn detached(&self) -> Encoded {
        Encoded {
            latent: self.latent.detach(),
            skips: self
                .skips
                .iter()
                .map(|f| FeatureMap { data: f.data.detach(), layer_index: f.layer_index })
                .collect(),
        }
    }
}

/// Everything a generator pass produced, for inspection.
pub struct GeneratorTrace {
    pub output: Var,
    pub latent: Var,
    pub skips: Vec<FeatureMap>,
    /// Skip features as delivered to the decoder (edited by STUs, or raw), shallowest first.
    pub delivered: Vec<Var>,
    /// One entry per STU cell, shallowest first; empty without STUs.
    pub stu: Vec<StuTrace>,
}

pub struct Generator {
    config: ArchConfig,
    skip_mode: SkipMode,
    encoder: Vec<EncoderBlock>,
    /// Index `l` edits the skip of encoder layer `l + 1`.
    stu: Vec<StuCellParams>,
    decoder: Vec<DecoderBlock>,
}

impl Generator {
    pub fn new(config: &ArchConfig, skip_mode: SkipMode, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let mut encoder = Vec::with_capacity(DEPTH);
        let mut in_ch = 3;
        for &out in &w {
            encoder.push(EncoderBlock::new(in_ch, out, dtype, rng));
            in_ch = out;
        }
        let stu = match skip_mode {
            SkipMode::Stu => (0..NUM_SKIPS)
                .map(|l| StuCellParams::new(w[l + 1], w[l], dtype, rng))
                .collect(),
            SkipMode::Concat => Vec::new(),
        };
        // Decoder layer j maps level DEPTH-j to level DEPTH-j-1.
        let mut decoder = Vec::with_capacity(DEPTH);
        for j in 0..DEPTH {
            let level = DEPTH - 1 - j; // index into widths of the input level
            let in_ch = if j == 0 { w[level] + 1 } else { 2 * w[level] };
            let (out_ch, norm) = if j == DEPTH - 1 {
                (3, None)
            } else {
                (w[level - 1], Some(InstanceNorm2d::new(w[level - 1], dtype)))
            };
            decoder.push(DecoderBlock { conv: Conv2d::same3x3(in_ch, out_ch, dtype, rng), norm });
        }
        Ok(Generator { config: config.clone(), skip_mode, encoder, stu, decoder })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn skip_mode(&self) -> SkipMode {
        self.skip_mode
    }

    pub fn stu_cells(&self) -> &[StuCellParams] {
        &self.stu
    }

    pub fn dtype(&self) -> DType {
        self.encoder[0].conv.weight.var().dtype()
    }

    fn check_input(&self, x: &Var) -> Result<()> {
        let s = self.config.image_size;
        match x.shape() {
            [_, 3, h, w] if *h == s && *w == s => Ok(()),
            other => Err(Error::Config(format!("expected input [n,3,{s},{s}], got {other:?}"))),
        }
    }

    pub fn encode(&self, x: &Var, mode: Mode) -> Result<Encoded> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut skips = Vec::with_capacity(NUM_SKIPS);
        for (i, block) in self.encoder.iter().enumerate() {
            h = block.forward(&h, mode);
            if i < NUM_SKIPS {
                skips.push(FeatureMap { data: h.clone(), layer_index: i + 1 });
            }
        }
        Ok(Encoded { latent: h, skips })
    }

    /// Full pass with `att` as a `[n]` node (kept differentiable for gradient checks).
    pub fn forward_traced(&self, x: &Var, att: &Var, mode: Mode) -> Result<GeneratorTrace> {
        let encoded = self.encode(x, mode)?;
        self.decode_traced(encoded, att)
    }

    /// Decoder side only; one encoding can be decoded at several attribute values.
    pub fn decode_traced(&self, encoded: Encoded, att: &Var) -> Result<GeneratorTrace> {
        let n = encoded.latent.shape()[0];
        if att.shape() != [n] {
            return Err(Error::Config(format!("expected {n} attribute values, got {:?}", att.shape())));
        }
        let mut delivered: Vec<Option<Var>> = vec![None; NUM_SKIPS];
        let mut traces: Vec<Option<StuTrace>> = vec![None; NUM_SKIPS];
        match self.skip_mode {
            SkipMode::Stu => {
                let mut state = HiddenState { data: encoded.latent.clone(), layer_index: DEPTH };
                for l in (0..NUM_SKIPS).rev() {
                    let s_hat = inject_attribute(&state, att, &self.stu[l])?;
                    let out = stu_forward(&encoded.skips[l], &s_hat, &self.stu[l])?;
                    delivered[l] = Some(out.edited.data);
                    traces[l] = Some(out.trace);
                    state = out.hidden;
                }
            }
            SkipMode::Concat => {
                for (l, f) in encoded.skips.iter().enumerate() {
                    delivered[l] = Some(f.data.clone());
                }
            }
        }
        let delivered: Vec<Var> = delivered.into_iter().map(Option::unwrap).collect();
        let lat = self.config.latent_size();
        let mut h = Var::cat(&[&encoded.latent, &tile_attribute(att, lat, lat)], 1);
        for (j, block) in self.decoder.iter().enumerate() {
            if j > 0 {
                h = Var::cat(&[&h, &delivered[NUM_SKIPS - j]], 1);
            }
            h = block.forward(&h);
        }
        if !h.value().is_finite() {
            return Err(Error::Numeric { what: "generator output".into(), layer: DEPTH });
        }
        Ok(GeneratorTrace {
            output: h,
            latent: encoded.latent,
            skips: encoded.skips,
            delivered,
            stu: traces.into_iter().flatten().collect(),
        })
    }

    pub fn decode(&self, encoded: &Encoded, att: &Var) -> Result<Var> {
        Ok(self.decode_traced(encoded.clone(), att)?.output)
    }

    pub fn forward_var(&self, x: &Var, att: &Var, mode: Mode) -> Result<Var> {
        Ok(self.forward_traced(x, att, mode)?.output)
    }

    /// `y = G(x, att)`, one attribute per sample.
    pub fn forward(&self, x: &Var, att: &[AttributeValue], mode: Mode) -> Result<Var> {
        self.forward_var(x, &attribute_var(att, x.dtype()), mode)
    }

    /// Layer listing for structural checks and parameter tables.
    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            out.push(info(format!("enc{}.conv", i + 1), LayerKind::Conv, &b.conv));
            out.push(info(format!("enc{}.bn", i + 1), LayerKind::BatchNorm, &b.norm));
        }
        for (l, c) in self.stu.iter().enumerate() {
            out.push(info(format!("stu{}", l + 1), LayerKind::StuCell, c));
        }
        for (j, b) in self.decoder.iter().enumerate() {
            out.push(info(format!("dec{}.conv", j + 1), LayerKind::UpsampleConv, &b.conv));
            if let Some(n) = &b.norm {
                out.push(info(format!("dec{}.in", j + 1), LayerKind::InstanceNorm, n));
            }
        }
        out
    }
}

fn info(name: String, kind: LayerKind, m: &dyn Module) -> LayerInfo {
    LayerInfo { name, kind, params: m.num_params() }
}

impl Module for Generator {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        let mut v = Vec::new();
        for (i, b) in self.encoder.iter().enumerate() {
            v.extend(nested(&format!("enc{}", i + 1), b.slots()));
        }
        for (l, c) in self.stu.iter().enumerate() {
            v.extend(nested(&format!("stu{}", l + 1), c.slots()));
        }
        for (j, b) in self.decoder.iter().enumerate() {
            v.extend(nested(&format!("dec{}", j + 1), b.slots()));
        }
        v
    }
}

/// Critic score and attribute prediction for a batch.
pub struct Discrimination {
    /// `[n]`, unbounded.
    pub adv: Var,
    /// `[n]`, in `(0, 1)`.
    pub att: Var,
}

pub struct Discriminator {
    config: ArchConfig,
    trunk: Vec<EncoderBlock>,
    adv_head: Linear,
    att_head: Linear,
}

impl Discriminator {
    pub fn new(config: &ArchConfig, dtype: DType, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut trunk = Vec::with_capacity(DEPTH);
        let mut in_ch = 3;
        for &out in &config.widths {
            trunk.push(EncoderBlock::new(in_ch, out, dtype, rng));
            in_ch = out;
        }
        let lat = config.latent_size();
        let features = in_ch * lat * lat;
        Ok(Discriminator {
            config: config.clone(),
            trunk,
            adv_head: Linear::new(features, 1, dtype, rng),
            att_head: Linear::new(features, 1, dtype, rng),
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    fn features(&self, x: &Var, mode: Mode) -> Result<Var> {
        let s = self.config.image_size;
        let n = match x.shape() {
            [n, 3, h, w] if *h == s && *w == s => *n,
            other => {
                return Err(Error::Config(format!("expected input [n,3,{s},{s}], got {other:?}")))
            }
        };
        let mut h = x.clone();
        for b in &self.trunk {
            h = b.forward(&h, mode);
        }
        let flat = h.value().numel() / n;
        Ok(h.reshape(&[n, flat]))
    }

    /// Critic head only (what the gradient penalty differentiates).
    pub fn critic(&self, x: &Var, mode: Mode) -> Result<Var> {
        let f = self.features(x, mode)?;
        let n = f.shape()[0];
        Ok(self.adv_head.forward(&f).reshape(&[n]))
    }

    pub fn discriminate(&self, x: &Var, mode: Mode) -> Result<Discrimination> {
        let f = self.features(x, mode)?;
        let n = f.shape()[0];
        let adv = self.adv_head.forward(&f).reshape(&[n]);
        let att = self.att_head.forward(&f).reshape(&[n]).sigmoid();
        if !adv.value().is_finite() || !att.value().is_finite() {
            return Err(Error::Numeric { what: "discriminator heads".into(), layer: DEPTH });
        }
        Ok(Discrimination { adv, att })
    }

    pub fn layers(&self) -> Vec<LayerInfo> {
        let mut out = Vec::new();
        for (i, b) in self.trunk.iter().enumerate() {
            out.push(info(format!("trunk{}.conv", i + 1), LayerKind::Conv, &b.conv));
            out.push(info(format!("trunk{}.bn", i + 1), LayerKind::BatchNorm, &b.norm));
        }
        out.push(info("adv_head".into(), LayerKind::FullyConnected, &self.adv_head));
        out.push(info("att_head".into(), LayerKind::FullyConnected, &self.att_head));
        out
    }
}

impl Module for Discriminator {
    fn slots(&self) -> Vec<(String, Slot<'_>)> {
        let mut v = Vec::new();
        for (i, b) in self.trunk.iter().enumerate() {
            v.extend(nested(&format!("trunk{}", i + 1), b.slots()));
        }
        v.extend(nested("adv_head", self.adv_head.slots()));
        v.extend(nested("att_head", self.att_head.slots()));
        v
    }
}

/// Trainable parameter counts per submodule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterTable {
    pub title: String,
    pub rows: Vec<(String, usize)>,
}

impl ParameterTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|(_, n)| n).sum()
    }
}

/// `1234567` -> `"1 234 567"`.
pub fn group_thousands(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(' ');
        }
        out.push(ch);
    }
    out
}

impl fmt::Display for ParameterTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(16) + 2;
        writeln!(f, "{}", self.title)?;
        writeln!(f, "{:<width$}{:>22}", "Module", "Trainable Parameters")?;
        for (name, n) in &self.rows {
            writeln!(f, "{:<width$}{:>22}", name, group_thousands(*n))?;
        }
        write!(f, "{:<width$}{:>22}", "Total Parameters", group_thousands(self.total()))
    }
}

/// Grouped counts: a module's top-level path segments, merged by `group`.
pub fn count_parameters(title: &str, m: &dyn Module, group: impl Fn(&str) -> String) -> ParameterTable {
    let mut rows: Vec<(String, usize)> = Vec::new();
    for (name, p) in m.params() {
        let g = group(&name);
        match rows.iter_mut().find(|(n, _)| *n == g) {
            Some(row) => row.1 += p.numel(),
            None => rows.push((g, p.numel())),
        }
    }
    ParameterTable { title: title.to_string(), rows }
}

pub fn generator_table(g: &Generator) -> ParameterTable {
    count_parameters("Generator", g, |name| {
        if name.starts_with("enc") {
            "G_enc".into()
        } else if name.starts_with("stu") {
            "G_st".into()
        } else {
            "G_dec".into()
        }
    })
}

pub fn discriminator_table(d: &Discriminator) -> ParameterTable {
    count_parameters("Discriminator", d, |name| {
        if name.starts_with("trunk") {
            "D trunk (shared)".into()
        } else if name.starts_with("adv_head") {
            "D_adv head".into()
        } else {
            "D_att head".into()
        }
    })
}

/// Reference totals for the full model, shown next to ours.
pub const REFERENCE_GENERATOR_PARAMS: usize = 13_758_280;
pub const REFERENCE_DISCRIMINATOR_PARAMS: usize = 19_568_034;
pub const REFERENCE_TOTAL_PARAMS: usize = 33_326_314;

/// Summary table of both networks next to the published reference counts.
pub fn parameter_report(g: &Generator, d: &Discriminator) -> String {
    let (gc, dc) = (g.num_params(), d.num_params());
    let mut s = String::new();
    s.push_str(&format!("{:<42}{:>16}{:>16}\n", "Module", "This build", "Reference"));
    s.push_str(&format!(
        "{:<42}{:>16}{:>16}\n",
        "G (G_enc + G_dec + G_st)",
        group_thousands(gc),
        group_thousands(REFERENCE_GENERATOR_PARAMS)
    ));
    s.push_str(&format!(
        "{:<42}{:>16}{:>16}\n",
        "D (both D_att and D_adv)",
        group_thousands(dc),
        group_thousands(REFERENCE_DISCRIMINATOR_PARAMS)
    ));
    s.push_str(&format!(
        "{:<42}{:>16}{:>16}\n",
        "Total Parameters",
        group_thousands(gc + dc),
        group_thousands(REFERENCE_TOTAL_PARAMS)
    ));
    s
}
