//! `capsroute fixture|train|eval|profile`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    extract_patches, generate_fixture, load_cube, patch_at, split_indices, write_cube, FixtureSpec, HsiCube, LabelMap,
    Normalizer,
};
use crate::error::{DataError, Error, Result};
use crate::model::Model;
use crate::pipeline::prepare;
use crate::profile::profile;
use crate::render::render_ppm;
use crate::train::{batch_lengths, evaluate, train, Evaluation};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const HISTORY_FILE: &str = "history.tsv";
pub const METRICS_FILE: &str = "metrics.txt";
pub const MAP_FILE: &str = "prediction.ppm";
pub const PROFILE_FILE: &str = "profile.tsv";

#[derive(Parser, Debug)]
#[command(name = "capsroute", version, about = "Wavelet-downsampling capsule networks for hyperspectral classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic labelled cube.
    Fixture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "fixture")]
        name: String,
    },
    /// Train from a config file; writes a checkpoint and a history table.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split; writes metrics and a class map.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Defaults to `<out>/checkpoint.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Cube header overriding the config's `data`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Parameter and FLOP counts per layer.
    Profile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("capsroute: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Fixture {
            out,
            classes,
            size,
            bands,
            seed,
            name,
        } => {
            let header = cmd_fixture(&out, &name, &FixtureSpec::new(classes, size, bands, seed))?;
            println!("wrote {}", header.display());
        }
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let r = cmd_train(&cfg, &out)?;
            println!(
                "trained {} epochs (best {} val loss {:.6}); wrote {} and {}",
                r.epochs,
                r.best_epoch,
                r.best_val_loss,
                out.join(CHECKPOINT_FILE).display(),
                out.join(HISTORY_FILE).display()
            );
        }
        Command::Eval {
            config,
            seed,
            out,
            checkpoint,
            data,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(d) = data {
                cfg.data = d;
            }
            let ck = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let e = cmd_eval(&cfg, &ck, &out)?;
            print!("{}", metrics_report(&e));
        }
        Command::Profile { config, seed, out } => {
            let cfg = load_config(&config, seed)?;
            let text = profile(&cfg.model)?.to_text();
            print!("{text}");
            if let Some(dir) = out {
                create_dir(&dir)?;
                write(&dir.join(PROFILE_FILE), text.as_bytes())?;
            }
        }
    }
    Ok(())
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let cfg = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn cmd_fixture(out: &Path, name: &str, spec: &FixtureSpec) -> Result<PathBuf> {
    create_dir(out)?;
    let (cube, labels) = generate_fixture(spec)?;
    write_cube(&out.join(name), &cube, &labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn check_data(cfg: &RunConfig, cube: &HsiCube, labels: &LabelMap) -> Result<()> {
    let m = &cfg.model;
    if cube.bands != m.backbone.bands || labels.classes != m.classes {
        return Err(DataError::ShapeMismatch(format!(
            "data has {} bands and {} classes, model expects {} and {}",
            cube.bands, labels.classes, m.backbone.bands, m.classes
        ))
        .into());
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let (cube, labels) = load_cube(&cfg.data)?;
    check_data(cfg, &cube, &labels)?;
    let data = prepare(&cube, &labels, cfg.model.backbone.patch, &cfg.split_spec())?;
    let model = Model::new(cfg.model.clone())?;
    let (model, history) = train(model, &data.train, &data.val, &cfg.train)?;
    create_dir(out)?;
    Checkpoint::from_model(&model, Some(data.normalizer)).save(&out.join(CHECKPOINT_FILE))?;
    write(&out.join(HISTORY_FILE), history.to_tsv().as_bytes())?;
    Ok(TrainSummary {
        epochs: history.epochs.len(),
        best_epoch: history.best_epoch,
        best_val_loss: history.best_val_loss,
    })
}

/// Evaluates on the config's test split, writes the metrics report and the
/// class map of every labelled pixel.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Evaluation> {
    let (model, normalizer) = Checkpoint::load(checkpoint)?.into_model()?;
    let (cube, labels) = load_cube(&cfg.data)?;
    let mc = &model.config;
    if cube.bands != mc.backbone.bands || labels.classes != mc.classes {
        return Err(DataError::ShapeMismatch(format!(
            "checkpoint expects {} bands and {} classes, data has {} and {}",
            mc.backbone.bands, mc.classes, cube.bands, labels.classes
        ))
        .into());
    }
    let ds = extract_patches(&cube, &labels, mc.backbone.patch)?;
    let idx = split_indices(&ds, &cfg.split_spec())?;
    let normalizer = match normalizer {
        Some(n) => n,
        None => Normalizer::fit(&ds.subset(&idx.train))?,
    };
    let test = normalizer.apply(&ds.subset(&idx.test));
    let evaluation = evaluate(&model, &test)?;
    let map = predict_map(&model, &normalizer, &cube, &labels)?;
    create_dir(out)?;
    write(&out.join(METRICS_FILE), metrics_report(&evaluation).as_bytes())?;
    write(&out.join(MAP_FILE), &render_ppm(labels.height, labels.width, &map))?;
    Ok(evaluation)
}

/// Predicted label (1-based) for every labelled pixel, 0 elsewhere.
pub fn predict_map(model: &Model, normalizer: &Normalizer, cube: &HsiCube, labels: &LabelMap) -> Result<Vec<u16>> {
    let n = model.config.backbone.patch;
    let mut coords = Vec::new();
    let mut patches = Vec::new();
    for r in 0..labels.height {
        for c in 0..labels.width {
            if labels.get(r, c) != 0 {
                coords.push(r * labels.width + c);
                patches.push(normalizer.apply_tensor(&patch_at(cube, r, c, n)?));
            }
        }
    }
    let refs: Vec<_> = patches.iter().collect();
    let lengths = batch_lengths(model, &refs)?;
    let mut map = vec![0u16; labels.labels.len()];
    for (&at, l) in coords.iter().zip(&lengths) {
        map[at] = crate::capsules::argmax(l.data()) as u16 + 1;
    }
    Ok(map)
}

/// `key=value` metrics; recalls of absent classes are written as `nan`.
pub fn metrics_report(e: &Evaluation) -> String {
    let m = &e.metrics;
    let mut s = format!(
        "samples={}\noverall_accuracy={}\naverage_accuracy={}\nkappa={}\n",
        e.confusion.total(),
        m.overall_accuracy,
        m.average_accuracy,
        m.kappa
    );
    for (c, r) in m.recalls.iter().enumerate() {
        s.push_str(&format!("recall_class_{}={}\n", c + 1, r.unwrap_or(f64::NAN)));
    }
    s
}

/// Reads a report written by [`metrics_report`] into key/value pairs.
pub fn parse_metrics_report(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .filter_map(|(k, v)| v.parse().ok().map(|v| (k.to_string(), v)))
        .collect()
}
