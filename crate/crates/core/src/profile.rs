//! Analytic parameter and FLOP counts.
//!
//! Convention: a multiply-accumulate is 2 FLOPs, every other arithmetic
//! operation or comparison is 1, and softmax costs 4 per element (max,
//! subtract, exp, divide). Convolutions count `2·kh·kw·Cin·Cout·H'·W'` and
//! matrix products `2·m·k·n`; bias additions are not counted.

use crate::backbone::{Block, ConvSpec, DwtSpec};
use crate::dwt::AttentionGate;
use crate::error::Result;
use crate::model::{Architecture, ModelConfig, RoutingKind, RoutingStage};

pub const CONVENTION: &str = "multiply-accumulate = 2 FLOPs; softmax/exp = 4 FLOPs per element; other element ops = 1";

const SOFTMAX: u64 = 4;

pub fn conv_flops(kernel: usize, cin: usize, cout: usize, out_h: usize, out_w: usize) -> u64 {
    2 * (kernel * kernel * cin * cout * out_h * out_w) as u64
}

pub fn matmul_flops(m: usize, k: usize, n: usize) -> u64 {
    2 * (m * k * n) as u64
}

/// Squash of one `d`-vector: squared norm, `n/(1+n²)` (sqrt, add, divide) and scaling.
pub fn squash_flops(d: usize) -> u64 {
    2 * d as u64 + 3 + d as u64
}

/// Attentive Haar downsampling of an `n × n × k` map (after padding).
pub fn dwt_flops(d: &DwtSpec) -> u64 {
    let out = d.out_size();
    let cells = (out * out * d.channels) as u64;
    let haar = 4 * conv_flops(2, 1, 1, 1, 1) * cells;
    let pooling = 4 * cells;
    let gate = matmul_flops(d.channels, 5, 4);
    let softmax = SOFTMAX * 4 * d.channels as u64;
    let weighting = 4 * cells;
    haar + pooling + gate + softmax + weighting
}

/// Routing-by-agreement from `inputs` to `outputs` capsules of `d` values.
/// The agreement update after the last iteration is not needed and not counted.
pub fn dynamic_routing_flops(inputs: usize, outputs: usize, d: usize, iterations: usize) -> u64 {
    let (m, j, d64) = (inputs as u64, outputs as u64, d as u64);
    let predictions = m * j * matmul_flops(1, d, d);
    let per_iteration = SOFTMAX * m * j + 2 * m * j * d64 + j * squash_flops(d);
    let agreement = 2 * m * j * d64 + m * j;
    predictions + iterations as u64 * per_iteration + iterations.saturating_sub(1) as u64 * agreement
}

/// Pyramid fusion, then scaled dot-product attention over a window of
/// `window` tensors for each of `outputs` capsules of side `nc`.
pub fn multiscale_routing_flops(two_p: usize, outputs: usize, nc: usize, window: usize) -> u64 {
    let d = nc * nc;
    let fused = two_p.saturating_sub(2) as u64;
    let pyramid = fused * (2 * matmul_flops(nc, nc, nc) + (nc * nc) as u64);
    let i = window;
    let per_output = 2 * matmul_flops(i, d, d)
        + matmul_flops(i, d, i)
        + (i * i) as u64
        + SOFTMAX * (i * i) as u64
        + matmul_flops(i, i, d)
        + (i * d) as u64;
    pyramid + outputs as u64 * per_output
}

pub fn stage_flops(stage: &RoutingStage, nc: usize) -> u64 {
    match stage {
        RoutingStage::Multiscale { inputs, plan, .. } => {
            multiscale_routing_flops(*inputs, plan.outputs, nc, plan.window)
        }
        RoutingStage::Dynamic {
            inputs,
            outputs,
            iterations,
        } => dynamic_routing_flops(*inputs, *outputs, nc * nc, *iterations),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfileRow {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileReport {
    pub rows: Vec<ProfileRow>,
    pub total_params: usize,
    pub total_flops: u64,
    /// Routing FLOPs of the same capsule layout under each algorithm.
    pub dynamic_routing_flops: u64,
    pub multiscale_routing_flops: u64,
}

fn conv_row(c: &ConvSpec) -> ProfileRow {
    ProfileRow {
        name: c.name.clone(),
        kind: "conv",
        params: c.param_count(),
        flops: c.flops(),
    }
}

fn routing_total(config: &ModelConfig, routing: RoutingKind) -> Result<u64> {
    let arch = Architecture::plan(&ModelConfig {
        routing,
        ..config.clone()
    })?;
    Ok(arch.stages.iter().map(|s| stage_flops(s, config.capsule_size)).sum())
}

pub fn profile(config: &ModelConfig) -> Result<ProfileReport> {
    let arch = Architecture::plan(config)?;
    let nc = config.capsule_size;
    let mut rows = Vec::new();
    for b in &arch.backbone.blocks {
        match b {
            Block::ConvRelu(c) => rows.push(conv_row(c)),
            Block::ConvNormRelu(c, n) => {
                rows.push(conv_row(c));
                rows.push(ProfileRow {
                    name: n.name.clone(),
                    kind: "norm",
                    params: 2 * n.channels,
                    flops: 2 * (c.out_size() * c.out_size() * n.channels) as u64,
                });
            }
            Block::Residual {
                conv1,
                norm1,
                conv2,
                norm2,
                shortcut,
            } => {
                let cells = (conv1.out_size() * conv1.out_size()) as u64;
                rows.push(conv_row(conv1));
                for n in [norm1, norm2] {
                    rows.push(ProfileRow {
                        name: n.name.clone(),
                        kind: "norm",
                        params: 2 * n.channels,
                        flops: 2 * cells * n.channels as u64,
                    });
                }
                rows.push(conv_row(conv2));
                if let Some(s) = shortcut {
                    rows.push(conv_row(s));
                }
            }
            Block::Downsample(d) => rows.push(ProfileRow {
                name: d.name.clone(),
                kind: "attentive_dwt",
                params: AttentionGate::param_count(),
                flops: dwt_flops(d),
            }),
        }
    }
    rows.push(ProfileRow {
        name: "primary".into(),
        kind: "primary_caps",
        params: arch.primary.param_count(),
        flops: arch.primary.flops(),
    });
    for (r, stage) in arch.stages.iter().enumerate() {
        rows.push(ProfileRow {
            name: format!("route{r}"),
            kind: match stage {
                RoutingStage::Multiscale { .. } => "multiscale_routing",
                RoutingStage::Dynamic { .. } => "dynamic_routing",
            },
            params: stage.param_count(nc),
            flops: stage_flops(stage, nc),
        });
    }
    Ok(ProfileReport {
        total_params: rows.iter().map(|r| r.params).sum(),
        total_flops: rows.iter().map(|r| r.flops).sum(),
        dynamic_routing_flops: routing_total(config, RoutingKind::Dynamic)?,
        multiscale_routing_flops: routing_total(config, RoutingKind::Multiscale)?,
        rows,
    })
}

impl ProfileReport {
    pub fn routing_ratio(&self) -> f64 {
        self.multiscale_routing_flops as f64 / self.dynamic_routing_flops as f64
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# FLOP convention: {CONVENTION}\nlayer\tkind\tparams\tflops\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{}\t{}\n", r.name, r.kind, r.params, r.flops));
        }
        s.push_str(&format!("total\t-\t{}\t{}\n", self.total_params, self.total_flops));
        s.push_str(&format!(
            "# routing only, same capsule layout\nrouting_flops_dynamic={}\nrouting_flops_multiscale={}\nrouting_ratio={:.4}\n",
            self.dynamic_routing_flops,
            self.multiscale_routing_flops,
            self.routing_ratio()
        ));
        s
    }
}
