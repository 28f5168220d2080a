//! Adam over the trainable parameter store; the backbone only ever appears
//! as graph constants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use maptraj_core::autodiff::{Graph, Mat};
use maptraj_core::backbone::Backbone;
use maptraj_core::pipeline::TrajectoryModel;
use maptraj_core::scenes::{normalize_scene, NormalizedScene, Point, Scene};

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};
use crate::loss::trajectory_loss;

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean batch loss at every step.
    pub losses: Vec<f64>,
}

/// Scenes prepared for training: normalized, with ego-frame targets.
pub(crate) fn prepare(model: &TrajectoryModel, scenes: &[Scene]) -> Result<Vec<(NormalizedScene, Vec<Point>)>> {
    let mut offending = Vec::new();
    let mut out = Vec::with_capacity(scenes.len());
    for scene in scenes {
        match model.check_scene(scene) {
            Ok(()) => {}
            Err(maptraj_core::Error::Modality(_)) => {
                offending.push(scene.id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let normalized = normalize_scene(scene)?;
        let future = normalized
            .future
            .clone()
            .ok_or_else(|| HarnessError::Data(format!("scene {} has no ground-truth future", scene.id)))?;
        if future.len() != model.config.future_steps {
            return Err(HarnessError::Data(format!(
                "scene {}: future length {}, expected {}",
                scene.id,
                future.len(),
                model.config.future_steps
            )));
        }
        out.push((normalized, future));
    }
    if !offending.is_empty() {
        return Err(maptraj_core::Error::Modality(format!(
            "use_map is enabled but these scenes have no map: {}",
            offending.join(", ")
        ))
        .into());
    }
    Ok(out)
}

struct Adam {
    first: Vec<Mat>,
    second: Vec<Mat>,
    steps: i32,
}

impl Adam {
    fn new(model: &TrajectoryModel) -> Self {
        let zeros: Vec<Mat> = model.store.iter().map(|(_, m)| Mat::zeros(m.dim())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    fn update(&mut self, model: &mut TrajectoryModel, grads: &[Mat], lr: f64, config: &TrainConfig) {
        let o = &config.optimizer;
        self.steps += 1;
        let c1 = 1.0 - o.beta1.powi(self.steps);
        let c2 = 1.0 - o.beta2.powi(self.steps);
        let ids: Vec<_> = model.store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v, g) = (&mut self.first[i], &mut self.second[i], &grads[i]);
            m.zip_mut_with(g, |m, &g| *m = o.beta1 * *m + (1.0 - o.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = o.beta2 * *v + (1.0 - o.beta2) * g * g);
            let param = model.store.get_mut(id);
            ndarray::Zip::from(param).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + o.epsilon);
            });
        }
    }
}

/// Trains a fresh model on `scenes`. `on_step` sees each step number
/// (1-based) and its loss.
pub fn train(
    config: &TrainConfig,
    scenes: &[Scene],
    backbone: &dyn Backbone,
    on_step: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(HarnessError::Data("no training scenes".into()));
    }
    let mut model = TrajectoryModel::new(config.model.clone(), backbone.spec())?;
    let prompt = model.prompt(backbone)?;
    let data = prepare(&model, scenes)?;
    let checksum = backbone.parameter_checksum();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let batch_size = config.optimizer.batch_size.min(data.len());
    let mut adam = Adam::new(&model);
    let mut losses = Vec::with_capacity(config.optimizer.steps);

    for step in 0..config.optimizer.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let (loss, grads) = {
            let mut g = Graph::new();
            let protos = model.prototypes(&mut g, &model.store, backbone)?;
            let mut terms = Vec::with_capacity(batch.len());
            for &i in &batch {
                let (scene, truth) = &data[i];
                let pred = model.forward(&mut g, &model.store, backbone, &prompt, protos, scene)?;
                terms.push(trajectory_loss(&mut g, pred, truth, config.loss)?);
            }
            let stacked = g.concat_rows(&terms);
            let total = g.sum_all(stacked);
            let mean = g.scale(total, 1.0 / batch.len() as f64);
            let loss = g.scalar(mean);
            if !loss.is_finite() {
                return Err(HarnessError::Divergence { step: step + 1, loss });
            }
            (loss, g.backward(mean).to_buffer(&model.store))
        };
        if grads.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(HarnessError::Divergence { step: step + 1, loss: f64::NAN });
        }
        adam.update(&mut model, &grads, config.optimizer.learning_rate_at(step), config);
        if !model.store.all_finite() {
            return Err(HarnessError::Divergence { step: step + 1, loss: f64::NAN });
        }
        losses.push(loss);
        on_step(step + 1, loss);
    }

    if backbone.parameter_checksum() != checksum {
        return Err(HarnessError::Config("backbone parameters changed during training".into()));
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            model,
            backbone_identity: backbone.spec().identity.clone(),
            backbone_checksum: checksum,
            step: config.optimizer.steps,
            rng,
        },
        losses,
    })
}
