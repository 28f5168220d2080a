//! Displacement metrics, miss rate and inference timing.
//!
//! All distances are Euclidean in meters. Horizons are given in seconds and
//! converted to point counts with the 0.5 s sample period.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::scenes::{Point, SAMPLE_PERIOD};
use crate::{Error, Result};

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_horizon(pred: &[Point], truth: &[Point], horizon: usize) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("trajectory length", truth.len(), pred.len()));
    }
    if horizon == 0 || horizon > pred.len() {
        return Err(Error::Config(format!(
            "horizon {horizon} outside 1..={}",
            pred.len()
        )));
    }
    Ok(())
}

/// Mean displacement over the first `horizon` points.
pub fn ade(pred: &[Point], truth: &[Point], horizon: usize) -> Result<f64> {
    check_horizon(pred, truth, horizon)?;
    let sum: f64 = pred.iter().zip(truth).take(horizon).map(|(&p, &t)| distance(p, t)).sum();
    Ok(sum / horizon as f64)
}

/// Displacement at the `horizon`-th point.
pub fn fde(pred: &[Point], truth: &[Point], horizon: usize) -> Result<f64> {
    check_horizon(pred, truth, horizon)?;
    Ok(distance(pred[horizon - 1], truth[horizon - 1]))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissRateMode {
    /// A scene misses when its final displacement exceeds the threshold.
    #[default]
    PerScene,
    /// Fraction of all predicted points whose error exceeds the threshold.
    PerPoint,
}

/// Comparisons are strict: an error of exactly `threshold` is a hit.
pub fn miss_rate<P: AsRef<[Point]>>(pairs: &[(P, P)], threshold: f64, mode: MissRateMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("miss rate of an empty scene list".into()));
    }
    let (mut misses, mut total) = (0usize, 0usize);
    for (pred, truth) in pairs {
        let (pred, truth) = (pred.as_ref(), truth.as_ref());
        check_horizon(pred, truth, pred.len().max(1))?;
        match mode {
            MissRateMode::PerScene => {
                total += 1;
                misses += usize::from(fde(pred, truth, pred.len())? > threshold);
            }
            MissRateMode::PerPoint => {
                total += pred.len();
                misses += pred.iter().zip(truth).filter(|(&p, &t)| distance(p, t) > threshold).count();
            }
        }
    }
    Ok(misses as f64 / total as f64)
}

/// Mean of `samples` after dropping the first `warmup`. At least one sample
/// is always kept.
pub fn inference_efficiency(samples: &[f64], warmup: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("no timing samples".into()));
    }
    let kept = &samples[warmup.min(samples.len() - 1)..];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub ade_horizons_s: Vec<f64>,
    pub fde_horizons_s: Vec<f64>,
    pub miss_threshold: f64,
    pub miss_mode: MissRateMode,
    pub warmup: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ade_horizons_s: vec![2.0, 4.0, 6.0],
            fde_horizons_s: vec![6.0],
            miss_threshold: 2.0,
            miss_mode: MissRateMode::PerScene,
            warmup: 3,
        }
    }
}

/// `"2s"` for 2.0, `"1.5s"` for 1.5.
pub fn horizon_label(seconds: f64) -> String {
    format!("{seconds}s")
}

pub fn horizon_steps(seconds: f64) -> Result<usize> {
    let steps = seconds / SAMPLE_PERIOD;
    if !(steps >= 1.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {seconds} s is not a positive multiple of {SAMPLE_PERIOD} s"
        )));
    }
    Ok(steps.round() as usize)
}

/// Per-scene point errors, the raw table every aggregate derives from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneErrors {
    pub id: String,
    /// Displacement at each predicted point.
    pub errors: Vec<f64>,
    /// Wall-clock seconds spent in prediction, when measured.
    pub seconds: Option<f64>,
}

impl SceneErrors {
    pub fn new(id: impl Into<String>, pred: &[Point], truth: &[Point]) -> Result<Self> {
        check_horizon(pred, truth, pred.len().max(1))?;
        Ok(Self {
            id: id.into(),
            errors: pred.iter().zip(truth).map(|(&p, &t)| distance(p, t)).collect(),
            seconds: None,
        })
    }

    pub fn ade(&self, steps: usize) -> f64 {
        self.errors[..steps].iter().sum::<f64>() / steps as f64
    }

    pub fn fde(&self, steps: usize) -> f64 {
        self.errors[steps - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    /// Horizon label to `[mean, std]`.
    pub ade: BTreeMap<String, [f64; 2]>,
    pub fde: BTreeMap<String, [f64; 2]>,
    pub mr: f64,
    /// `null` when no timing was recorded.
    pub ie_s: Option<f64>,
    pub n_scenes: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> [f64; 2] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    [mean, var.sqrt()]
}

pub fn aggregate(scenes: &[SceneErrors], config: &MetricsConfig) -> Result<MetricsReport> {
    if scenes.is_empty() {
        return Err(Error::Data("no scenes to aggregate".into()));
    }
    let n = scenes[0].errors.len();
    if let Some(bad) = scenes.iter().find(|s| s.errors.len() != n) {
        return Err(Error::Data(format!(
            "scene {} has {} points, scene {} has {n}",
            bad.id,
            bad.errors.len(),
            scenes[0].id
        )));
    }
    let table = |horizons: &[f64], f: fn(&SceneErrors, usize) -> f64| -> Result<BTreeMap<String, [f64; 2]>> {
        horizons
            .iter()
            .map(|&h| {
                let steps = horizon_steps(h)?;
                if steps > n {
                    return Err(Error::Data(format!("horizon {h} s needs {steps} points, scenes have {n}")));
                }
                let values: Vec<f64> = scenes.iter().map(|s| f(s, steps)).collect();
                Ok((horizon_label(h), mean_std(&values)))
            })
            .collect()
    };
    let ade = table(&config.ade_horizons_s, SceneErrors::ade)?;
    let fde = table(&config.fde_horizons_s, SceneErrors::fde)?;
    let mr = match config.miss_mode {
        MissRateMode::PerScene => {
            scenes.iter().filter(|s| s.fde(n) > config.miss_threshold).count() as f64 / scenes.len() as f64
        }
        MissRateMode::PerPoint => {
            let misses: usize = scenes
                .iter()
                .map(|s| s.errors.iter().filter(|&&e| e > config.miss_threshold).count())
                .sum();
            misses as f64 / (scenes.len() * n) as f64
        }
    };
    let samples: Vec<f64> = scenes.iter().filter_map(|s| s.seconds).collect();
    let ie_s = if samples.is_empty() {
        None
    } else {
        Some(inference_efficiency(&samples, config.warmup)?)
    };
    Ok(MetricsReport {
        ade,
        fde,
        mr,
        ie_s,
        n_scenes: scenes.len(),
    })
}

/// One row per scene: id, each ADE and FDE horizon, miss flag, seconds.
pub fn write_scene_csv<W: Write>(scenes: &[SceneErrors], config: &MetricsConfig, mut out: W) -> Result<()> {
    let io = |e| Error::Io {
        path: "<csv>".into(),
        source: e,
    };
    let mut header = vec!["scene_id".to_string()];
    header.extend(config.ade_horizons_s.iter().map(|&h| format!("ade_{}", horizon_label(h))));
    header.extend(config.fde_horizons_s.iter().map(|&h| format!("fde_{}", horizon_label(h))));
    header.extend(["miss".to_string(), "seconds".to_string()]);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for s in scenes {
        let mut row = vec![s.id.replace(',', ";")];
        for &h in &config.ade_horizons_s {
            row.push(s.ade(horizon_steps(h)?).to_string());
        }
        for &h in &config.fde_horizons_s {
            row.push(s.fde(horizon_steps(h)?).to_string());
        }
        let miss = s.fde(s.errors.len()) > config.miss_threshold;
        row.push(u8::from(miss).to_string());
        row.push(s.seconds.map(|v| v.to_string()).unwrap_or_default());
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Checks a parsed report against the documented layout.
pub fn validate_report_json(value: &serde_json::Value) -> Result<()> {
    let fail = |m: &str| Err(Error::Data(format!("report schema: {m}")));
    let Some(obj) = value.as_object() else {
        return fail("not an object");
    };
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort_unstable();
    if keys != ["ade", "fde", "ie_s", "mr", "n_scenes"] {
        return fail(&format!("keys {keys:?}"));
    }
    for table in ["ade", "fde"] {
        let Some(entries) = obj[table].as_object() else {
            return fail(&format!("`{table}` is not an object"));
        };
        for (label, pair) in entries {
            let ok_label = label
                .strip_suffix('s')
                .is_some_and(|n| n.parse::<f64>().is_ok_and(|v| v > 0.0));
            let ok_pair = pair
                .as_array()
                .is_some_and(|a| a.len() == 2 && a.iter().all(|v| v.as_f64().is_some_and(|x| x >= 0.0)));
            if !ok_label || !ok_pair {
                return fail(&format!("`{table}.{label}` must map \"<h>s\" to [mean, std] with nonnegative numbers"));
            }
        }
    }
    if !obj["mr"].as_f64().is_some_and(|v| (0.0..=1.0).contains(&v)) {
        return fail("`mr` must be a number in [0, 1]");
    }
    if !(obj["ie_s"].is_null() || obj["ie_s"].as_f64().is_some_and(|v| v >= 0.0)) {
        return fail("`ie_s` must be a nonnegative number or null");
    }
    if obj["n_scenes"].as_u64().is_none() {
        return fail("`n_scenes` must be a nonnegative integer");
    }
    Ok(())
}
