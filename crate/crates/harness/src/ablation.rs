use serde::{Deserialize, Serialize};

use maptraj_core::backbone::Backbone;
use maptraj_core::metrics::MetricsReport;
use maptraj_core::pipeline::Modality;
use maptraj_core::scenes::Scene;

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;
use crate::train::train;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub modality: Modality,
    pub final_loss: f64,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, modality: Modality) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.modality == modality)
    }

    /// Mean ADE at `label` (e.g. `"6s"`) for `modality`.
    pub fn ade(&self, modality: Modality, label: &str) -> Option<f64> {
        self.row(modality)?.report.ade.get(label).map(|v| v[0])
    }

    /// One row per modality, one column per metric, `mean ± std`.
    pub fn to_markdown(&self) -> String {
        let Some(first) = self.rows.first() else {
            return String::new();
        };
        let ade: Vec<&String> = first.report.ade.keys().collect();
        let fde: Vec<&String> = first.report.fde.keys().collect();
        let mut header = vec!["Modality".to_string()];
        header.extend(ade.iter().map(|h| format!("ADE±STD({h})")));
        header.extend(fde.iter().map(|h| format!("FDE±STD({h})")));
        header.extend(["MR (%)".to_string(), "IE (s)".to_string()]);
        let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
        for row in &self.rows {
            let r = &row.report;
            let mut cells = vec![row.modality.name().to_string()];
            let pair = |v: Option<&[f64; 2]>| v.map_or("-".into(), |[m, s]| format!("{m:.3} ± {s:.3}"));
            cells.extend(ade.iter().map(|h| pair(r.ade.get(*h))));
            cells.extend(fde.iter().map(|h| pair(r.fde.get(*h))));
            cells.push(format!("{:.1}", 100.0 * r.mr));
            cells.push(r.ie_s.map_or("-".into(), |v| format!("{v:.4}")));
            out += &format!("| {} |\n", cells.join(" | "));
        }
        out
    }
}

/// Trains one model per modality from `base` (same seeds and budget) and
/// evaluates each on `test`. Modalities differ only in their input
/// switches.
pub fn run_ablation(
    base: &TrainConfig,
    modalities: &[Modality],
    train_scenes: &[Scene],
    test_scenes: &[Scene],
    backbone: &dyn Backbone,
    on_step: &mut dyn FnMut(Modality, usize, f64),
) -> Result<AblationTable> {
    if modalities.is_empty() {
        return Err(HarnessError::Config("no modalities requested".into()));
    }
    let mut rows = Vec::with_capacity(modalities.len());
    for &modality in modalities {
        let mut config = base.clone();
        config.model.modality = modality.apply(&base.model.modality);
        let outcome = train(&config, train_scenes, backbone, &mut |step, loss| on_step(modality, step, loss))?;
        let eval = evaluate(&outcome.checkpoint.model, backbone, test_scenes, &config.metrics)?;
        rows.push(AblationRow {
            modality,
            final_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
            report: eval.report,
        });
    }
    Ok(AblationTable { rows })
}

/// Parses `ego_only,ego_neighbor_map`.
pub fn parse_modalities(list: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let m: Modality = part.parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config("empty modality list".into()));
    }
    Ok(out)
}
