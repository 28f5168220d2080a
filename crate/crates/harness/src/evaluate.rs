use std::path::Path;
use std::time::Instant;

use maptraj_core::backbone::Backbone;
use maptraj_core::metrics::{aggregate, write_scene_csv, MetricsConfig, MetricsReport, SceneErrors};
use maptraj_core::pipeline::TrajectoryModel;
use maptraj_core::scenes::{normalize_scene, Scene};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub per_scene: Vec<SceneErrors>,
}

/// Predicts every scene in order and scores it against its future. Only
/// the prediction call is timed.
pub fn evaluate(
    model: &TrajectoryModel,
    backbone: &dyn Backbone,
    scenes: &[Scene],
    metrics: &MetricsConfig,
) -> Result<Evaluation> {
    if scenes.is_empty() {
        return Err(HarnessError::Data("no scenes to evaluate".into()));
    }
    let missing_map: Vec<&str> = scenes
        .iter()
        .filter(|s| model.modality().use_map && s.map.is_none())
        .map(|s| s.id.as_str())
        .collect();
    if !missing_map.is_empty() {
        return Err(maptraj_core::Error::Modality(format!(
            "use_map is enabled but these scenes have no map: {}",
            missing_map.join(", ")
        ))
        .into());
    }
    let prompt = model.prompt(backbone)?;
    let mut per_scene = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let truth = normalize_scene(scene)?
            .future
            .clone()
            .ok_or_else(|| HarnessError::Data(format!("scene {} has no ground-truth future", scene.id)))?;
        let start = Instant::now();
        let pred = model.predict(backbone, &prompt, scene)?;
        let seconds = start.elapsed().as_secs_f64();
        let mut errors = SceneErrors::new(scene.id.clone(), &pred.points, &truth)?;
        errors.seconds = Some(seconds);
        per_scene.push(errors);
    }
    Ok(Evaluation {
        report: aggregate(&per_scene, metrics)?,
        per_scene,
    })
}

/// Writes `report` as JSON to `path` and the per-scene table next to it
/// (same stem, `.csv`).
pub fn write_report(evaluation: &Evaluation, metrics: &MetricsConfig, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::output(path, e))?;
    }
    let json = serde_json::to_string_pretty(&evaluation.report).expect("report serializes");
    std::fs::write(path, json + "\n").map_err(|e| HarnessError::output(path, e))?;
    let csv_path = path.with_extension("csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| HarnessError::output(&csv_path, e))?;
    write_scene_csv(&evaluation.per_scene, metrics, std::io::BufWriter::new(file))?;
    Ok(())
}
