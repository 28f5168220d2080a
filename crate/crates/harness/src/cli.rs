use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use maptraj_core::metrics::mean_std;
use maptraj_core::scenes::synth::generate_dataset;
use maptraj_core::scenes::{load_scenes, save_scenes, split_dataset, GeneratorConfig, ScenarioKind, Scene};

use crate::ablation::{parse_modalities, run_ablation, AblationTable};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::{evaluate, write_report};
use crate::plot::{render_scene_plot, PlotTrajectory};
use crate::train::train;

#[derive(Debug, Parser)]
#[command(name = "maptraj", version, about = "Map-aware trajectory prediction with a frozen backbone")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as train/validation/test JSONL files.
    Generate {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to one scenario kind (straight, turn, intersection).
        #[arg(long)]
        kind: Option<ScenarioKind>,
        /// TOML file with generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train/validation/test fractions.
        #[arg(long, default_value = "0.8,0.1,0.1")]
        split: String,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on a JSONL dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path; the per-scene CSV goes next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and evaluate one model per input modality.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of ego_only, ego_neighbor, ego_neighbor_map.
        #[arg(long, default_value = "ego_only,ego_neighbor,ego_neighbor_map")]
        modalities: String,
        /// Comma-separated seeds; each seeds both initialization and batching.
        #[arg(long)]
        seeds: Option<String>,
        /// Write the tables as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render one scene with the checkpoint's prediction to a PNG.
    Plot {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSONL file holding the scene; defaults to the checkpoint's test,
        /// validation, then train data.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            count,
            seed,
            kind,
            config,
            split,
        } => generate(&out, count, seed, kind, config.as_deref(), &split),
        Command::Train { config } => train_command(&config),
        Command::Evaluate { checkpoint, data, report } => evaluate_command(&checkpoint, &data, &report),
        Command::Ablate {
            config,
            modalities,
            seeds,
            out,
        } => ablate_command(&config, &modalities, seeds.as_deref(), out.as_deref()),
        Command::Plot {
            scene,
            checkpoint,
            out,
            data,
        } => plot_command(&scene, &checkpoint, &out, data.as_deref()),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| HarnessError::Config(format!("invalid {what} `{s}`"))))
        .collect()
}

fn generate(out: &Path, count: usize, seed: u64, kind: Option<ScenarioKind>, config: Option<&Path>, split: &str) -> Result<()> {
    let generator = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<GeneratorConfig>(&text).map_err(|e| HarnessError::Config(e.to_string()))?
        }
        None => GeneratorConfig::default(),
    };
    let fractions: Vec<f64> = parse_list(split, "split fraction")?;
    let fractions: [f64; 3] = fractions
        .try_into()
        .map_err(|_| HarnessError::Config("--split needs three fractions".into()))?;
    let scenes = generate_dataset(kind, count, seed, &generator)?;
    let ids: Vec<String> = scenes.iter().map(|s| s.id.clone()).collect();
    let split = split_dataset(&ids, seed, fractions)?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::output(out, e))?;
    for (name, members) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
        let subset: Vec<Scene> = scenes.iter().filter(|s| members.contains(&s.id)).cloned().collect();
        let path = out.join(format!("{name}.jsonl"));
        save_scenes(&subset, &path).map_err(|e| HarnessError::output(&path, e))?;
        println!("{}: {} scenes", path.display(), subset.len());
    }
    Ok(())
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone()
        .ok_or_else(|| HarnessError::Config(format!("`{key}` is not set in the config")))
}

fn train_command(config_path: &Path) -> Result<()> {
    let config = TrainConfig::load(config_path)?;
    config.check_files()?;
    let schema = config.schema();
    let scenes = load_scenes(&require(&config.data.train, "data.train")?, &schema)?;
    let backbone = config.backbone.build()?;
    let log_every = config.log_every;
    let outcome = train(&config, &scenes, backbone.as_ref(), &mut |step, loss| {
        if log_every > 0 && (step % log_every == 0 || step == 1) {
            eprintln!("step {step:>6}  loss {loss:.6}");
        }
    })?;
    outcome.checkpoint.save(&config.checkpoint)?;
    let curve = config.checkpoint.with_extension("loss.csv");
    let mut text = String::from("step,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        text += &format!("{},{l}\n", i + 1);
    }
    std::fs::write(&curve, text).map_err(|e| HarnessError::output(&curve, e))?;
    println!("checkpoint: {}", config.checkpoint.display());
    println!("loss curve: {}", curve.display());
    if let Some(path) = &config.data.validation {
        let validation = load_scenes(path, &schema)?;
        let eval = evaluate(&outcome.checkpoint.model, backbone.as_ref(), &validation, &config.metrics)?;
        println!("validation: {}", serde_json::to_string(&eval.report).expect("report serializes"));
    }
    Ok(())
}

fn evaluate_command(checkpoint: &Path, data: &Path, report: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let backbone = ckpt.backbone()?;
    let scenes = load_scenes(data, &ckpt.config.schema())?;
    let eval = evaluate(&ckpt.model, backbone.as_ref(), &scenes, &ckpt.config.metrics)?;
    write_report(&eval, &ckpt.config.metrics, report)?;
    println!("{}", serde_json::to_string_pretty(&eval.report).expect("report serializes"));
    Ok(())
}

fn ablate_command(config_path: &Path, modalities: &str, seeds: Option<&str>, out: Option<&Path>) -> Result<()> {
    let base = TrainConfig::load(config_path)?;
    base.check_files()?;
    let modalities = parse_modalities(modalities)?;
    let seeds: Vec<u64> = match seeds {
        Some(s) => parse_list(s, "seed")?,
        None => vec![base.seed],
    };
    let schema = base.schema();
    let train_scenes = load_scenes(&require(&base.data.train, "data.train")?, &schema)?;
    let test_scenes = load_scenes(&require(&base.data.test, "data.test")?, &schema)?;
    let backbone = base.backbone.build()?;

    let mut tables: Vec<(u64, AblationTable)> = Vec::new();
    for &seed in &seeds {
        let mut config = base.clone();
        config.seed = seed;
        config.model.init_seed = seed;
        let log_every = config.log_every;
        let table = run_ablation(&config, &modalities, &train_scenes, &test_scenes, backbone.as_ref(), &mut |m, step, loss| {
            if log_every > 0 && step % log_every == 0 {
                eprintln!("seed {seed} {m} step {step:>6}  loss {loss:.6}");
            }
        })?;
        println!("seed {seed}\n{}", table.to_markdown());
        tables.push((seed, table));
    }
    if seeds.len() > 1 {
        println!("ADE(6s) over seeds (mean ± std):");
        for &m in &modalities {
            let values: Vec<f64> = tables.iter().filter_map(|(_, t)| t.ade(m, "6s")).collect();
            if !values.is_empty() {
                let [mean, std] = mean_std(&values);
                println!("  {m}: {mean:.3} ± {std:.3}");
            }
        }
    }
    if let Some(path) = out {
        let json: Vec<serde_json::Value> = tables
            .iter()
            .map(|(seed, t)| serde_json::json!({ "seed": seed, "rows": t.rows }))
            .collect();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::output(path, e))?;
        }
        let text = serde_json::to_string_pretty(&json).expect("tables serialize");
        std::fs::write(path, text).map_err(|e| HarnessError::output(path, e))?;
    }
    Ok(())
}

fn plot_command(scene_id: &str, checkpoint: &Path, out: &Path, data: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let d = &ckpt.config.data;
    let data = match data {
        Some(p) => p.to_path_buf(),
        None => d
            .test
            .clone()
            .or_else(|| d.validation.clone())
            .or_else(|| d.train.clone())
            .ok_or_else(|| HarnessError::Config("no --data given and the checkpoint config names no data".into()))?,
    };
    let scenes = load_scenes(&data, &ckpt.config.schema())?;
    let scene = scenes
        .iter()
        .find(|s| s.id == scene_id)
        .ok_or_else(|| HarnessError::Data(format!("scene `{scene_id}` not found in {}", data.display())))?;
    let backbone = ckpt.backbone()?;
    let prompt = ckpt.model.prompt(backbone.as_ref())?;
    let pred = ckpt.model.predict(backbone.as_ref(), &prompt, scene)?;
    let label = format!("prediction ({})", modality_label(&ckpt));
    let legend = render_scene_plot(scene, &[PlotTrajectory { label, points: pred.points }], out)?;
    println!("{} ({})", out.display(), legend.join("; "));
    Ok(())
}

fn modality_label(ckpt: &Checkpoint) -> &'static str {
    let m = ckpt.model.modality();
    match (m.use_neighbors, m.use_map) {
        (true, true) => "ego+neighbor+map",
        (false, true) => "ego+map",
        (true, false) => "ego+neighbor",
        (false, false) => "ego only",
    }
}
