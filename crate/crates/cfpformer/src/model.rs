//! Full segmentation model (encoder backbone + pyramid decoder) with
//! self-contained checkpointing: the serialized config rides inside the
//! checkpoint so evaluation needs no side files.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::decoder::{CfpConfig, Decoder};
use crate::error::{Error, Result};
use crate::io::{load_cfpc, save_cfpc, CfptData, CfptTensor};
use crate::nn::Params;
use crate::rng::SeedSplitter;
use crate::tensor::{Real, Tensor};

/// Checkpoint entry holding the serialized config.
const CONFIG_ENTRY: &str = "__config";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub decoder: CfpConfig,
    /// Image extent the model is built for (seeds per-stage sigma).
    pub input_size: usize,
    /// Weight-init seed.
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            decoder: CfpConfig::tiny(),
            input_size: 64,
            seed: 0,
        }
    }
}

pub struct CfpFormer<T: Real> {
    pub cfg: ModelConfig,
    pub backbone: Backbone<T>,
    pub decoder: Decoder<T>,
    pub params: Params<T>,
}

impl<T: Real> CfpFormer<T> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        if cfg.input_size == 0 || !cfg.input_size.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "input_size must be a positive multiple of 16, got {}",
                cfg.input_size
            )));
        }
        let seeds = SeedSplitter::new(cfg.seed);
        let mut params = Params::new();
        let backbone = Backbone::new(cfg.backbone.clone(), &seeds, &mut params);
        let decoder = Decoder::new(
            cfg.decoder.clone(),
            cfg.backbone.channels,
            cfg.input_size,
            &seeds,
            &mut params,
        )?;
        Ok(Self {
            cfg,
            backbone,
            decoder,
            params,
        })
    }

    /// image [B, C, H, W] -> logits [B, num_classes, H, W].
    pub fn forward<R: Rng>(&self, image: &Tensor<T>, training: bool, rng: &mut R) -> Result<Tensor<T>> {
        let pyramid = self.backbone.forward(image)?;
        self.decoder.forward(&pyramid, training, rng)
    }

    /// Per-pixel argmax over logits: [B, K, H, W] -> B masks of H*W ids.
    pub fn predict_masks(logits: &Tensor<T>) -> Vec<Vec<u8>> {
        let ls = logits.shape();
        let (b, k, hw) = (ls[0], ls[1], ls[2] * ls[3]);
        let data = logits.data();
        (0..b)
            .map(|bi| {
                (0..hw)
                    .map(|p| {
                        let mut best = 0usize;
                        let mut best_v = data[bi * k * hw + p];
                        for c in 1..k {
                            let v = data[(bi * k + c) * hw + p];
                            if v > best_v {
                                best_v = v;
                                best = c;
                            }
                        }
                        best as u8
                    })
                    .collect()
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.params.entries().len() + 1);
        let config_json = serde_json::to_vec(&self.cfg)
            .map_err(|e| Error::Format(format!("config serialization failed: {e}")))?;
        let n = config_json.len();
        entries.push((
            CONFIG_ENTRY.to_string(),
            CfptTensor::new(vec![n], CfptData::U8(config_json))?,
        ));
        for (name, t) in self.params.entries() {
            entries.push((name.clone(), CfptTensor::from_tensor(t)));
        }
        save_cfpc(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_cfpc(path)?;
        let config_json = entries
            .iter()
            .find(|(n, _)| n == CONFIG_ENTRY)
            .ok_or_else(|| Error::Format("checkpoint missing config entry".into()))?;
        let bytes = match &config_json.1.data {
            CfptData::U8(b) => b.clone(),
            _ => return Err(Error::Format("config entry must be a u8 tensor".into())),
        };
        let cfg: ModelConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("checkpoint config invalid: {e}")))?;
        let model = Self::new(cfg)?;
        for (name, param) in model.params.entries() {
            let stored = entries
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))?;
            if stored.1.shape != param.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor {} has shape {:?}, model expects {:?}",
                    name,
                    stored.1.shape,
                    param.shape()
                )));
            }
            param.set_data(&stored.1.to_real_vec::<T>())?;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy_model_cfg() -> ModelConfig {
        ModelConfig {
            decoder: CfpConfig {
                stage_blocks: [1, 1, 1, 1],
                heads: [1, 1, 2, 2],
                widths: [8, 8, 16, 16],
                ..CfpConfig::tiny()
            },
            input_size: 32,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.cfpc");
        let model = CfpFormer::<f32>::new(toy_model_cfg()).unwrap();
        model.save(&path).unwrap();
        let loaded = CfpFormer::<f32>::load(&path).unwrap();

        let seeds = SeedSplitter::new(0);
        let mut rng = seeds.rng("img");
        use rand::Rng;
        let img = Tensor::from_vec(
            &[1, 1, 32, 32],
            (0..1024).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let mut r1 = seeds.rng("d");
        let mut r2 = seeds.rng("d");
        let a = model.forward(&img, false, &mut r1).unwrap();
        let b = loaded.forward(&img, false, &mut r2).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn checkpoint_bytes_are_deterministic() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.cfpc");
        let p2 = dir.path().join("b.cfpc");
        CfpFormer::<f32>::new(toy_model_cfg()).unwrap().save(&p1).unwrap();
        CfpFormer::<f32>::new(toy_model_cfg()).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn load_rejects_truncated_checkpoint() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.cfpc");
        CfpFormer::<f32>::new(toy_model_cfg()).unwrap().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(CfpFormer::<f32>::load(&path).is_err());
    }

    #[test]
    fn predict_masks_argmax() {
        let logits = Tensor::<f32>::from_vec(
            &[1, 2, 1, 2],
            vec![1.0, -1.0, 0.0, 2.0], // class 0 plane, class 1 plane
        )
        .unwrap();
        let masks = CfpFormer::<f32>::predict_masks(&logits);
        assert_eq!(masks, vec![vec![0, 1]]);
    }
}
