use maptraj_core::autodiff::{Graph, Mat, Var};
use maptraj_core::scenes::Point;

use crate::config::LossKind;
use crate::error::{HarnessError, Result};

const HUBER_DELTA: f64 = 1.0;

/// Training loss of an `N × 2` prediction against `truth`, averaged over
/// the `N` points.
pub fn trajectory_loss(g: &mut Graph<'_>, pred: Var, truth: &[Point], kind: LossKind) -> Result<Var> {
    let (rows, cols) = g.shape(pred);
    if (rows, cols) != (truth.len(), 2) {
        return Err(HarnessError::Data(format!(
            "prediction is {rows}×{cols}, ground truth has {} points",
            truth.len()
        )));
    }
    let t = g.constant_owned(Mat::from_shape_fn((rows, 2), |(i, j)| truth[i][j]));
    let diff = g.sub(pred, t);
    let per_entry = match kind {
        LossKind::Mse => g.mul(diff, diff),
        LossKind::SmoothL1 => g.huber(diff, HUBER_DELTA),
    };
    let total = g.sum_all(per_entry);
    Ok(g.scale(total, 1.0 / rows as f64))
}

pub fn loss_value(pred: &[Point], truth: &[Point], kind: LossKind) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.input(Mat::from_shape_fn((pred.len(), 2), |(i, j)| pred[i][j]));
    let l = trajectory_loss(&mut g, p, truth, kind)?;
    Ok(g.scalar(l))
}
