//! Single-file checkpoint archive.
//!
//! Layout: the 8-byte magic `MAPTRAJ1`, a little-endian `u64` manifest
//! length, the JSON manifest, then every parameter array as little-endian
//! `f64` in row-major order. The manifest records each array's name, shape
//! and element offset. Backbone weights are never stored; the manifest
//! keeps the backbone identity and checksum so the loader can verify that
//! the reconstructed backbone is the one the parameters were trained with.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use maptraj_core::autodiff::Mat;
use maptraj_core::backbone::Backbone;
use maptraj_core::pipeline::TrajectoryModel;

use crate::config::TrainConfig;
use crate::error::{HarnessError, Result};

const MAGIC: &[u8; 8] = b"MAPTRAJ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: TrajectoryModel,
    pub backbone_identity: String,
    pub backbone_checksum: String,
    /// Optimizer steps taken.
    pub step: usize,
    /// Batch-sampling RNG after the last step.
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: TrainConfig,
    backbone: BackboneRecord,
    step: usize,
    rng: ChaCha8Rng,
    arrays: Vec<ArrayRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackboneRecord {
    identity: String,
    checksum: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayRecord {
    name: String,
    shape: [usize; 2],
    /// In elements from the start of the data section.
    offset: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays = Vec::with_capacity(self.model.store.len());
        let mut offset = 0;
        for (name, m) in self.model.store.iter() {
            arrays.push(ArrayRecord {
                name: name.to_string(),
                shape: [m.nrows(), m.ncols()],
                offset,
            });
            offset += m.len();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            backbone: BackboneRecord {
                identity: self.backbone_identity.clone(),
                checksum: self.backbone_checksum.clone(),
            },
            step: self.step,
            rng: self.rng.clone(),
            arrays,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");

        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::output(path, e))?;
        }
        let file = File::create(path).map_err(|e| HarnessError::output(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>, bytes: &[u8]| w.write_all(bytes).map_err(|e| HarnessError::output(path, e));
        write(&mut w, MAGIC)?;
        write(&mut w, &(json.len() as u64).to_le_bytes())?;
        write(&mut w, &json)?;
        for (_, m) in self.model.store.iter() {
            for v in m.iter() {
                write(&mut w, &v.to_le_bytes())?;
            }
        }
        w.flush().map_err(|e| HarnessError::output(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |m: String| HarnessError::Data(format!("checkpoint {}: {m}", path.display()));
        let file = File::open(path).map_err(|e| bad(e.to_string()))?;
        let size = file.metadata().map_err(|e| bad(e.to_string()))?.len();
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint archive".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
        let len = u64::from_le_bytes(len);
        if len > size.saturating_sub(16) {
            return Err(bad(format!("manifest length {len} exceeds the file size {size}")));
        }
        let len = len as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(|e| bad(format!("truncated manifest: {e}")))?;
        let manifest: Manifest = serde_json::from_slice(&json).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!(
                "format version {} (this build reads {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut data = Vec::new();
        r.read_to_end(&mut data).map_err(|e| bad(e.to_string()))?;
        if data.len() % 8 != 0 {
            return Err(bad("data section is not a whole number of f64 values".into()));
        }
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();

        let spec = manifest.config.backbone.build()?.spec().clone();
        let mut model = TrajectoryModel::new(manifest.config.model.clone(), &spec)?;
        if manifest.arrays.len() != model.store.len() {
            return Err(bad(format!(
                "{} arrays stored, model has {}",
                manifest.arrays.len(),
                model.store.len()
            )));
        }
        for rec in &manifest.arrays {
            let id = model
                .store
                .find(&rec.name)
                .ok_or_else(|| bad(format!("unknown array `{}`", rec.name)))?;
            let target = model.store.get_mut(id);
            if target.dim() != (rec.shape[0], rec.shape[1]) {
                return Err(bad(format!(
                    "array `{}` is {}×{}, model expects {}×{}",
                    rec.name,
                    rec.shape[0],
                    rec.shape[1],
                    target.nrows(),
                    target.ncols()
                )));
            }
            let end = rec.offset + target.len();
            let slice = values
                .get(rec.offset..end)
                .ok_or_else(|| bad(format!("array `{}` runs past the data section", rec.name)))?;
            *target = Mat::from_shape_vec(target.dim(), slice.to_vec()).expect("length checked");
        }
        Ok(Checkpoint {
            config: manifest.config,
            model,
            backbone_identity: manifest.backbone.identity,
            backbone_checksum: manifest.backbone.checksum,
            step: manifest.step,
            rng: manifest.rng,
        })
    }

    /// Rebuilds the backbone from the stored config and checks it against
    /// the recorded identity and checksum.
    pub fn backbone(&self) -> Result<Box<dyn Backbone>> {
        let backbone = self.config.backbone.build()?;
        if backbone.spec().identity != self.backbone_identity {
            return Err(HarnessError::Config(format!(
                "checkpoint was trained with backbone `{}`, config builds `{}`",
                self.backbone_identity,
                backbone.spec().identity
            )));
        }
        let checksum = backbone.parameter_checksum();
        if checksum != self.backbone_checksum {
            return Err(HarnessError::Config(format!(
                "backbone checksum {checksum} differs from the recorded {}",
                self.backbone_checksum
            )));
        }
        Ok(backbone)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::train;
    use maptraj_core::scenes::synth::generate_dataset;
    use maptraj_core::scenes::GeneratorConfig;

    fn trained() -> (Checkpoint, Vec<maptraj_core::scenes::Scene>) {
        let scenes = generate_dataset(None, 4, 3, &GeneratorConfig::default()).unwrap();
        let mut config = TrainConfig::default();
        config.optimizer.steps = 2;
        config.optimizer.batch_size = 2;
        let backbone = config.backbone.build().unwrap();
        (train(&config, &scenes, backbone.as_ref(), &mut |_, _| {}).unwrap().checkpoint, scenes)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (ckpt, scenes) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);

        let backbone = loaded.backbone().unwrap();
        let prompt = ckpt.model.prompt(backbone.as_ref()).unwrap();
        for s in &scenes {
            let a = ckpt.model.predict(backbone.as_ref(), &prompt, s).unwrap();
            let b = loaded.model.predict(backbone.as_ref(), &prompt, s).unwrap();
            let bits = |p: &[[f64; 2]]| p.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.points), bits(&b.points));
        }
    }

    #[test]
    fn corrupt_files_are_data_errors() {
        let (ckpt, _) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap_err().exit_code(), 3);
        std::fs::write(&path, b"hello").unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap_err().exit_code(), 3);
        let mut huge = MAGIC.to_vec();
        huge.extend(u64::MAX.to_le_bytes());
        std::fs::write(&path, &huge).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn checksum_mismatch_is_detected() {
        let (mut ckpt, _) = trained();
        ckpt.backbone_checksum = "0".repeat(64);
        assert!(matches!(ckpt.backbone(), Err(HarnessError::Config(_))));
    }
}
