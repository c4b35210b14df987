//! Convolutional feature extractor whose only spatial reduction is attentive
//! Haar downsampling.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::capsules::add_channel_bias;
use crate::dwt::{attentive_downsample_var, AttentionGate};
use crate::error::{Error, Result};
use crate::params::{he_kernel, normal, Bound, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackboneVariant {
    Tiny,
    Resnet18,
}

impl fmt::Display for BackboneVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneVariant::Tiny => "tiny",
            BackboneVariant::Resnet18 => "resnet18",
        })
    }
}

impl FromStr for BackboneVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(BackboneVariant::Tiny),
            "resnet18" => Ok(BackboneVariant::Resnet18),
            other => Err(Error::Config(format!("unknown backbone {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    /// Patch side `n` (patches are `n × n × bands`).
    pub patch: usize,
    pub bands: usize,
    /// Output channels of each stage.
    pub widths: Vec<usize>,
    /// Stages followed by an attentive DWT downsampling.
    pub downsample: Vec<usize>,
}

impl BackboneConfig {
    pub fn tiny(patch: usize, bands: usize) -> Self {
        BackboneConfig {
            variant: BackboneVariant::Tiny,
            patch,
            bands,
            widths: vec![16, 32],
            downsample: vec![0, 1],
        }
    }

    pub fn resnet18(patch: usize, bands: usize) -> Self {
        BackboneConfig {
            variant: BackboneVariant::Resnet18,
            patch,
            bands,
            widths: vec![64, 128, 256, 512],
            downsample: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub name: String,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub padding: usize,
    /// Input spatial side.
    pub size: usize,
}

impl ConvSpec {
    pub fn out_size(&self) -> usize {
        self.size + 2 * self.padding - self.kernel + 1
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.cin * self.cout + self.cout
    }

    /// Multiply-accumulates counted as two operations; bias not included.
    pub fn flops(&self) -> u64 {
        let o = self.out_size() as u64;
        2 * (self.kernel * self.kernel * self.cin * self.cout) as u64 * o * o
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DwtSpec {
    pub name: String,
    pub channels: usize,
    pub size: usize,
}

impl DwtSpec {
    pub fn pad(&self) -> usize {
        self.size % 2
    }

    pub fn out_size(&self) -> usize {
        (self.size + self.pad()) / 2
    }
}

/// Frozen-statistics channel normalisation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormSpec {
    pub name: String,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Block {
    /// 3×3 convolution, bias, relu.
    ConvRelu(ConvSpec),
    /// Convolution, normalisation, relu.
    ConvNormRelu(ConvSpec, NormSpec),
    /// Two conv/norm pairs with an identity or 1×1 projection shortcut.
    Residual {
        conv1: ConvSpec,
        norm1: NormSpec,
        conv2: ConvSpec,
        norm2: NormSpec,
        shortcut: Option<ConvSpec>,
    },
    Downsample(DwtSpec),
}

/// Primitive layer kinds, for structural inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Norm,
    Relu,
    ResidualAdd,
    AttentiveDwt,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub blocks: Vec<Block>,
    pub out_size: usize,
    pub out_channels: usize,
}

impl Backbone {
    pub fn build(cfg: &BackboneConfig) -> Result<Backbone> {
        if cfg.patch == 0 || cfg.bands == 0 || cfg.widths.is_empty() || cfg.widths.contains(&0) {
            return Err(Error::Config("backbone needs a positive patch, bands and widths".into()));
        }
        if let Some(&s) = cfg.downsample.iter().find(|&&s| s >= cfg.widths.len()) {
            return Err(Error::Config(format!(
                "downsample position {s} beyond the {} stages",
                cfg.widths.len()
            )));
        }
        let mut blocks = Vec::new();
        let mut size = cfg.patch;
        let mut channels = cfg.bands;
        let conv = |name: String, kernel, cin, cout, size| ConvSpec {
            name,
            kernel,
            cin,
            cout,
            padding: kernel / 2,
            size,
        };
        let norm = |name: String, channels| NormSpec { name, channels };

        for (s, &width) in cfg.widths.iter().enumerate() {
            match cfg.variant {
                BackboneVariant::Tiny => {
                    blocks.push(Block::ConvRelu(conv(format!("backbone.conv{s}"), 3, channels, width, size)));
                    channels = width;
                }
                BackboneVariant::Resnet18 => {
                    if s == 0 {
                        blocks.push(Block::ConvNormRelu(
                            conv("backbone.stem".into(), 3, channels, width, size),
                            norm("backbone.stem_norm".into(), width),
                        ));
                        channels = width;
                    }
                    for b in 0..2 {
                        let p = format!("backbone.stage{s}.block{b}");
                        let shortcut = (channels != width)
                            .then(|| conv(format!("{p}.shortcut"), 1, channels, width, size));
                        blocks.push(Block::Residual {
                            conv1: conv(format!("{p}.conv1"), 3, channels, width, size),
                            norm1: norm(format!("{p}.norm1"), width),
                            conv2: conv(format!("{p}.conv2"), 3, width, width, size),
                            norm2: norm(format!("{p}.norm2"), width),
                            shortcut,
                        });
                        channels = width;
                    }
                }
            }
            if cfg.downsample.contains(&s) {
                if size < 2 {
                    return Err(Error::Config(format!(
                        "stage {s} output is {size}x{size}; nothing left to downsample"
                    )));
                }
                let d = DwtSpec {
                    name: format!("backbone.dwt{s}"),
                    channels,
                    size,
                };
                size = d.out_size();
                channels *= 4;
                blocks.push(Block::Downsample(d));
            }
        }
        Ok(Backbone {
            config: cfg.clone(),
            blocks,
            out_size: size,
            out_channels: channels,
        })
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        use LayerKind::*;
        let mut kinds = Vec::new();
        for b in &self.blocks {
            match b {
                Block::ConvRelu(_) => kinds.extend([Conv, Relu]),
                Block::ConvNormRelu(..) => kinds.extend([Conv, Norm, Relu]),
                Block::Residual { shortcut, .. } => {
                    kinds.extend([Conv, Norm, Relu, Conv, Norm]);
                    if shortcut.is_some() {
                        kinds.push(Conv);
                    }
                    kinds.extend([ResidualAdd, Relu]);
                }
                Block::Downsample(_) => kinds.push(AttentiveDwt),
            }
        }
        kinds
    }

    pub fn convs(&self) -> Vec<&ConvSpec> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b {
                Block::ConvRelu(c) | Block::ConvNormRelu(c, _) => out.push(c),
                Block::Residual {
                    conv1,
                    conv2,
                    shortcut,
                    ..
                } => {
                    out.push(conv1);
                    out.push(conv2);
                    out.extend(shortcut.as_ref());
                }
                Block::Downsample(_) => {}
            }
        }
        out
    }

    fn norms(&self) -> Vec<&NormSpec> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b {
                Block::ConvNormRelu(_, n) => out.push(n),
                Block::Residual { norm1, norm2, .. } => out.extend([norm1, norm2]),
                _ => {}
            }
        }
        out
    }

    /// Trainable parameter count (frozen normalisation statistics excluded).
    pub fn param_count(&self) -> usize {
        let convs: usize = self.convs().iter().map(|c| c.param_count()).sum();
        let norms: usize = self.norms().iter().map(|n| 2 * n.channels).sum();
        let gates = self
            .blocks
            .iter()
            .filter(|b| matches!(b, Block::Downsample(_)))
            .count()
            * AttentionGate::param_count();
        convs + norms + gates
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        for c in self.convs() {
            store.insert(format!("{}.weight", c.name), he_kernel(c.kernel, c.cin, c.cout, rng), true)?;
            store.insert(format!("{}.bias", c.name), Tensor::zeros(&[c.cout]), true)?;
        }
        for n in self.norms() {
            let ch = [n.channels];
            store.insert(format!("{}.gamma", n.name), Tensor::ones(&ch), true)?;
            store.insert(format!("{}.beta", n.name), Tensor::zeros(&ch), true)?;
            store.insert(format!("{}.running_mean", n.name), Tensor::zeros(&ch), false)?;
            store.insert(format!("{}.running_var", n.name), Tensor::ones(&ch), false)?;
        }
        for b in &self.blocks {
            if let Block::Downsample(d) = b {
                store.insert(format!("{}.gate", d.name), normal(&AttentionGate::SHAPE, 0.1, rng), true)?;
            }
        }
        Ok(())
    }

    pub fn forward_var(&self, tape: &mut Tape, p: &Bound<'_>, patch: Var) -> Result<Var> {
        let expected = [self.config.patch, self.config.patch, self.config.bands];
        if tape.shape(patch) != expected {
            return Err(Error::dim(format!(
                "patch shape {:?}, backbone expects {expected:?}",
                tape.shape(patch)
            )));
        }
        let mut x = patch;
        for b in &self.blocks {
            x = match b {
                Block::ConvRelu(c) => {
                    let y = conv_var(tape, p, c, x)?;
                    tape.relu(y)?
                }
                Block::ConvNormRelu(c, n) => {
                    let y = conv_var(tape, p, c, x)?;
                    let y = norm_var(tape, p, n, y)?;
                    tape.relu(y)?
                }
                Block::Residual {
                    conv1,
                    norm1,
                    conv2,
                    norm2,
                    shortcut,
                } => {
                    let y = conv_var(tape, p, conv1, x)?;
                    let y = norm_var(tape, p, norm1, y)?;
                    let y = tape.relu(y)?;
                    let y = conv_var(tape, p, conv2, y)?;
                    let y = norm_var(tape, p, norm2, y)?;
                    let skip = match shortcut {
                        Some(s) => conv_var(tape, p, s, x)?,
                        None => x,
                    };
                    let y = tape.add(y, skip)?;
                    tape.relu(y)?
                }
                Block::Downsample(d) => {
                    let input = if d.pad() > 0 { tape.pad2d(x, d.pad(), d.pad())? } else { x };
                    let gate = p.get(&format!("{}.gate", d.name))?;
                    attentive_downsample_var(tape, input, gate)?
                }
            };
        }
        Ok(x)
    }

    pub fn forward(&self, params: &ParamStore, patch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(patch.clone());
        let y = self.forward_var(&mut tape, &bound, x)?;
        Ok(tape.value(y).clone())
    }
}

fn conv_var(tape: &mut Tape, p: &Bound<'_>, c: &ConvSpec, x: Var) -> Result<Var> {
    let k = p.get(&format!("{}.weight", c.name))?;
    let b = p.get(&format!("{}.bias", c.name))?;
    let y = tape.conv2d(x, k, 1, c.padding)?;
    add_channel_bias(tape, y, b)
}

fn norm_var(tape: &mut Tape, p: &Bound<'_>, n: &NormSpec, x: Var) -> Result<Var> {
    let gamma = p.get(&format!("{}.gamma", n.name))?;
    let beta = p.get(&format!("{}.beta", n.name))?;
    let mean = tape.value(p.get(&format!("{}.running_mean", n.name))?).clone();
    let var = tape.value(p.get(&format!("{}.running_var", n.name))?).clone();
    let inv_std = var.map(|v| 1.0 / (v + NORM_EPS).sqrt());
    // (x − μ)·γ/σ + β  ==  x·(γ/σ) + (β − μ·γ/σ)
    let inv_std = tape.constant(inv_std);
    let scale = tape.mul(gamma, inv_std)?;
    let neg_mean = tape.constant(mean.map(|m| -m));
    let shift = tape.mul(neg_mean, scale)?;
    let shift = tape.add(shift, beta)?;

    let s = tape.shape(x).to_vec();
    let c = n.channels;
    let positions = tape.value(x).len() / c;
    let ones = tape.constant(Tensor::ones(&[positions, 1]));
    let scale_row = tape.reshape(scale, &[1, c])?;
    let tiled = tape.matmul(ones, scale_row)?;
    let tiled = tape.reshape(tiled, &s)?;
    let y = tape.mul(x, tiled)?;
    add_channel_bias(tape, y, shift)
}
