//! Full classifier: backbone, PrimaryCaps projection and a chain of capsule
//! routing stages ending in one capsule per class.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::backbone::{Backbone, BackboneConfig};
use crate::capsules::{argmax, dynamic_routing_var, lengths_var, margin_loss_var, primary_caps_var};
use crate::error::{Error, Result};
use crate::multiscale::{multiscale_route_var, plan_windows, pyramid_levels, pyramid_output_count, MultiscaleVars, WindowPlan};
use crate::params::{he_kernel, normal, Bound, ParamStore};
use crate::rng::{self, derive_seed, seeded};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingKind {
    Multiscale,
    Dynamic,
}

impl fmt::Display for RoutingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RoutingKind::Multiscale => "multiscale",
            RoutingKind::Dynamic => "dynamic",
        })
    }
}

impl FromStr for RoutingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multiscale" => Ok(RoutingKind::Multiscale),
            "dynamic" => Ok(RoutingKind::Dynamic),
            other => Err(Error::Config(format!("unknown routing {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub classes: usize,
    /// Capsule count `2p` of the PrimaryCaps layer.
    pub primary_capsules: usize,
    /// Intermediate capsule layers between PrimaryCaps and the class capsules.
    pub hidden_capsules: Vec<usize>,
    /// Capsule side `N_c`.
    pub capsule_size: usize,
    pub routing: RoutingKind,
    /// Window length `I` for multi-scale routing.
    pub window: usize,
    /// Iterations for dynamic routing.
    pub iterations: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(backbone: BackboneConfig, classes: usize) -> Self {
        ModelConfig {
            backbone,
            classes,
            primary_capsules: 64,
            hidden_capsules: vec![64],
            capsule_size: 4,
            routing: RoutingKind::Multiscale,
            window: 9,
            iterations: 3,
            seed: 0,
        }
    }

    /// Capsule counts of every layer, PrimaryCaps first.
    pub fn capsule_counts(&self) -> Vec<usize> {
        let mut c = vec![self.primary_capsules];
        c.extend(&self.hidden_capsules);
        c.push(self.classes);
        c
    }

    /// Stable text form of everything that determines parameter shapes and
    /// the fixed permutations.
    pub fn canonical(&self) -> String {
        crate::config::model_config_text(self)
    }
}

/// Convolution geometry feeding PrimaryCaps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PrimarySpec {
    pub kernel: usize,
    pub padding: usize,
    pub in_size: usize,
    pub in_channels: usize,
    pub out_size: usize,
    pub out_channels: usize,
}

impl PrimarySpec {
    /// A 3×3 valid convolution when the map is at least 3 wide, otherwise a
    /// same-padded one; output channels are whatever makes the result hold
    /// exactly `capsules · N_c²` values.
    pub fn plan(in_size: usize, in_channels: usize, capsules: usize, nc: usize) -> Result<Self> {
        let (padding, out_size) = if in_size >= 3 { (0, in_size - 2) } else { (1, in_size) };
        let total = capsules * nc * nc;
        let cells = out_size * out_size;
        if total % cells != 0 {
            return Err(Error::Config(format!(
                "a {out_size}x{out_size} PrimaryCaps grid cannot hold {capsules} capsules of {nc}x{nc}"
            )));
        }
        Ok(PrimarySpec {
            kernel: 3,
            padding,
            in_size,
            in_channels,
            out_size,
            out_channels: total / cells,
        })
    }

    pub fn param_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels + self.out_channels
    }

    pub fn flops(&self) -> u64 {
        let o = (self.out_size * self.out_size) as u64;
        2 * (self.kernel * self.kernel * self.in_channels * self.out_channels) as u64 * o
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoutingStage {
    Multiscale {
        inputs: usize,
        levels: usize,
        plan: WindowPlan,
        permutation: Vec<usize>,
    },
    Dynamic {
        inputs: usize,
        outputs: usize,
        iterations: usize,
    },
}

impl RoutingStage {
    pub fn inputs(&self) -> usize {
        match self {
            RoutingStage::Multiscale { inputs, .. } | RoutingStage::Dynamic { inputs, .. } => *inputs,
        }
    }

    pub fn outputs(&self) -> usize {
        match self {
            RoutingStage::Multiscale { plan, .. } => plan.outputs,
            RoutingStage::Dynamic { outputs, .. } => *outputs,
        }
    }

    pub fn param_count(&self, nc: usize) -> usize {
        let d = nc * nc;
        match self {
            RoutingStage::Multiscale { levels, plan, .. } => levels * 2 * d + plan.outputs * 2 * d * d,
            RoutingStage::Dynamic { inputs, outputs, .. } => inputs * outputs * d * d,
        }
    }
}

/// Layer geometry of a model, without parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub backbone: Backbone,
    pub primary: PrimarySpec,
    pub stages: Vec<RoutingStage>,
}

impl Architecture {
    pub fn plan(config: &ModelConfig) -> Result<Architecture> {
        let backbone = Backbone::build(&config.backbone)?;
        if config.classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if config.capsule_size == 0 {
            return Err(Error::Config("capsule size must be positive".into()));
        }
        let primary = PrimarySpec::plan(
            backbone.out_size,
            backbone.out_channels,
            config.primary_capsules,
            config.capsule_size,
        )?;
        let counts = config.capsule_counts();
        let mut stages = Vec::new();
        for (r, pair) in counts.windows(2).enumerate() {
            let (inputs, outputs) = (pair[0], pair[1]);
            if outputs == 0 {
                return Err(Error::Config("capsule layers must be non-empty".into()));
            }
            stages.push(match config.routing {
                RoutingKind::Multiscale => {
                    let levels = pyramid_levels(inputs)?;
                    let available = pyramid_output_count(inputs)?;
                    let plan = plan_windows(inputs, available, outputs, config.window)?;
                    let permutation = rng::permutation(available, derive_seed(config.seed, &format!("shuffle{r}")));
                    RoutingStage::Multiscale {
                        inputs,
                        levels,
                        plan,
                        permutation,
                    }
                }
                RoutingKind::Dynamic => {
                    if config.iterations == 0 {
                        return Err(Error::Config("routing needs at least one iteration".into()));
                    }
                    RoutingStage::Dynamic {
                        inputs,
                        outputs,
                        iterations: config.iterations,
                    }
                }
            });
        }

        Ok(Architecture {
            backbone,
            primary,
            stages,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    pub primary: PrimarySpec,
    pub stages: Vec<RoutingStage>,
    pub params: ParamStore,
}

fn route_name(r: usize) -> String {
    format!("route{r}")
}

impl Model {
    /// Builds the structure and draws initial parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Model> {
        let Architecture {
            backbone,
            primary,
            stages,
        } = Architecture::plan(&config)?;

        let mut params = ParamStore::new();
        let mut rng = seeded(derive_seed(config.seed, "init"));
        backbone.init_params(&mut params, &mut rng)?;
        params.insert(
            "primary.weight",
            he_kernel(primary.kernel, primary.in_channels, primary.out_channels, &mut rng),
            true,
        )?;
        params.insert("primary.bias", Tensor::zeros(&[primary.out_channels]), true)?;
        let nc = config.capsule_size;
        let d = nc * nc;
        for (r, stage) in stages.iter().enumerate() {
            let p = route_name(r);
            match stage {
                RoutingStage::Multiscale { levels, plan, .. } => {
                    for g in 0..*levels {
                        for w in ["w1", "w2"] {
                            let noise = normal(&[nc, nc], 0.05, &mut rng);
                            let init = Tensor::identity(nc).map(|v| 0.5 * v);
                            let data = init.data().iter().zip(noise.data()).map(|(a, b)| a + b).collect();
                            params.insert(format!("{p}.pyramid{g}.{w}"), Tensor::new(vec![nc, nc], data)?, true)?;
                        }
                    }
                    for j in 0..plan.outputs {
                        params.insert(format!("{p}.attn{j}.query"), normal(&[d, d], 0.05, &mut rng), true)?;
                        params.insert(format!("{p}.attn{j}.key"), normal(&[d, d], 0.05, &mut rng), true)?;
                    }
                }
                RoutingStage::Dynamic { inputs, outputs, .. } => {
                    let std = 1.0 / (d as f64).sqrt();
                    params.insert(format!("{p}.weights"), normal(&[*inputs, d, outputs * d], std, &mut rng), true)?;
                }
            }
        }
        Ok(Model {
            config,
            backbone,
            primary,
            stages,
            params,
        })
    }

    /// Builds the structure for `config` and installs `params`, which must
    /// match it name for name and shape for shape.
    pub fn with_params(config: ModelConfig, params: &ParamStore) -> Result<Model> {
        let mut m = Model::new(config)?;
        m.params.assign(params)?;
        Ok(m)
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// Class capsules `[C, N_c, N_c]` for one `[n, n, bands]` patch.
    pub fn forward_var(&self, tape: &mut Tape, p: &Bound<'_>, patch: Var) -> Result<Var> {
        let fm = self.backbone.forward_var(tape, p, patch)?;
        let nc = self.config.capsule_size;
        let mut u = primary_caps_var(
            tape,
            fm,
            p.get("primary.weight")?,
            p.get("primary.bias")?,
            self.primary.padding,
            self.config.primary_capsules,
            nc,
        )?;
        for (r, stage) in self.stages.iter().enumerate() {
            let name = route_name(r);
            u = match stage {
                RoutingStage::Multiscale {
                    levels,
                    plan,
                    permutation,
                    ..
                } => {
                    let pyramid = (0..*levels)
                        .map(|g| Ok((p.get(&format!("{name}.pyramid{g}.w1"))?, p.get(&format!("{name}.pyramid{g}.w2"))?)))
                        .collect::<Result<Vec<_>>>()?;
                    let attention = (0..plan.outputs)
                        .map(|j| Ok((p.get(&format!("{name}.attn{j}.query"))?, p.get(&format!("{name}.attn{j}.key"))?)))
                        .collect::<Result<Vec<_>>>()?;
                    let vars = MultiscaleVars {
                        pyramid: &pyramid,
                        attention: &attention,
                        permutation,
                        plan,
                    };
                    multiscale_route_var(tape, u, &vars)?.output
                }
                RoutingStage::Dynamic {
                    outputs, iterations, ..
                } => dynamic_routing_var(tape, u, p.get(&format!("{name}.weights"))?, *outputs, *iterations)?.output,
            };
        }
        Ok(u)
    }

    /// Margin loss of one labelled patch (class index 0-based).
    pub fn loss_var(&self, tape: &mut Tape, p: &Bound<'_>, patch: Var, class: usize) -> Result<Var> {
        let caps = self.forward_var(tape, p, patch)?;
        let lengths = lengths_var(tape, caps)?;
        margin_loss_var(tape, lengths, class)
    }

    /// Class-capsule lengths for one patch.
    pub fn lengths(&self, patch: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let frozen = self.frozen_bind(&mut tape);
        let x = tape.constant(patch.clone());
        let caps = self.forward_var(&mut tape, &frozen, x)?;
        let l = lengths_var(&mut tape, caps)?;
        Ok(tape.value(l).clone())
    }

    pub fn predict(&self, patch: &Tensor) -> Result<usize> {
        self.lengths(patch).map(|l| argmax(l.data()))
    }

    /// Binds parameters as constants (no gradient bookkeeping).
    fn frozen_bind<'a>(&'a self, tape: &mut Tape) -> Bound<'a> {
        self.params.bind_constant(tape)
    }
}
