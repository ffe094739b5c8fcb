//! Small trainable CNN encoder producing the 4-level feature pyramid the
//! decoder consumes. A deliberate miniature stand-in for large pretrained
//! backbones: each stage is [3x3 conv, norm, gelu] x blocks followed by a
//! stride-2 conv downsample into the next stage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm, Params};
use crate::rng::SeedSplitter;
use crate::tensor::{Real, Tensor};

/// Encoder feature maps, highest resolution first; each successive level
/// halves both spatial extents.
pub struct FeaturePyramid<T: Real> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Real> FeaturePyramid<T> {
    pub fn validate(&self) -> Result<()> {
        if self.levels.len() != 4 {
            return Err(Error::dim(
                "feature_pyramid",
                format!("expected 4 levels, got {}", self.levels.len()),
            ));
        }
        for (i, pair) in self.levels.windows(2).enumerate() {
            let (a, b) = (pair[0].shape(), pair[1].shape());
            if a[2] != b[2] * 2 || a[3] != b[3] * 2 {
                return Err(Error::dim(
                    "feature_pyramid",
                    format!("level {} {:?} does not halve into level {} {:?}", i, a, i + 1, b),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub in_channels: usize,
    /// Channel width of each pyramid level, highest resolution first.
    pub channels: [usize; 4],
    /// Conv blocks per stage.
    pub blocks: [usize; 4],
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: [16, 32, 64, 128],
            blocks: [1, 1, 2, 1],
        }
    }
}

struct ConvBlock<T: Real> {
    conv: Conv2d<T>,
    norm: LayerNorm<T>,
}

impl<T: Real> ConvBlock<T> {
    fn new(c_in: usize, c_out: usize, stride: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        let conv = Conv2d::new(c_in, c_out, 3, stride, 1, 1, seeds, &format!("{label}.conv"), params);
        let norm = LayerNorm::new(c_out, &format!("{label}.norm"), params);
        Self { conv, norm }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.conv.forward(x)?;
        // norm over the channel axis: work in channels-last layout
        let y = y.permute(&[0, 2, 3, 1])?;
        let y = self.norm.forward(&y)?.gelu()?;
        y.permute(&[0, 3, 1, 2])
    }
}

pub struct Backbone<T: Real> {
    pub cfg: BackboneConfig,
    stages: Vec<Vec<ConvBlock<T>>>,
    downsamples: Vec<ConvBlock<T>>,
}

impl<T: Real> Backbone<T> {
    pub fn new(cfg: BackboneConfig, seeds: &SeedSplitter, params: &mut Params<T>) -> Self {
        let mut stages = Vec::new();
        let mut downsamples = Vec::new();
        for s in 0..4 {
            let c = cfg.channels[s];
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks[s] {
                let c_in = if b == 0 {
                    if s == 0 { cfg.in_channels } else { cfg.channels[s] }
                } else {
                    c
                };
                blocks.push(ConvBlock::new(c_in, c, 1, seeds, &format!("enc.s{s}.b{b}"), params));
            }
            stages.push(blocks);
            if s < 3 {
                downsamples.push(ConvBlock::new(
                    c,
                    cfg.channels[s + 1],
                    2,
                    seeds,
                    &format!("enc.down{s}"),
                    params,
                ));
            }
        }
        Self {
            cfg,
            stages,
            downsamples,
        }
    }

    /// image: [B, in_channels, H, W] with H, W divisible by 16.
    pub fn forward(&self, image: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let xs = image.shape();
        if xs.len() != 4 || xs[1] != self.cfg.in_channels {
            return Err(Error::dim(
                "backbone",
                format!("expected [B, {}, H, W], got {:?}", self.cfg.in_channels, xs),
            ));
        }
        if !xs[2].is_multiple_of(16) || !xs[3].is_multiple_of(16) {
            return Err(Error::dim(
                "backbone",
                format!("spatial extents must be divisible by 16, got {}x{}", xs[2], xs[3]),
            ));
        }
        let mut levels = Vec::with_capacity(4);
        let mut x = image.clone();
        for s in 0..4 {
            for block in &self.stages[s] {
                x = block.forward(&x)?;
            }
            levels.push(x.clone());
            if s < 3 {
                x = self.downsamples[s].forward(&x)?;
            }
        }
        let pyramid = FeaturePyramid { levels };
        pyramid.validate()?;
        Ok(pyramid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pyramid_shape_contract() {
        let seeds = SeedSplitter::new(4);
        let mut params = Params::new();
        let bb = Backbone::<f32>::new(BackboneConfig::default(), &seeds, &mut params);
        let img = Tensor::zeros(&[2, 1, 64, 64]);
        let pyr = bb.forward(&img).unwrap();
        let expect = [(16, 64), (32, 32), (64, 16), (128, 8)];
        for (level, (c, s)) in pyr.levels.iter().zip(expect) {
            assert_eq!(level.shape(), &[2, c, s, s]);
        }
    }

    #[test]
    fn indivisible_extent_rejected() {
        let seeds = SeedSplitter::new(4);
        let mut params = Params::new();
        let bb = Backbone::<f32>::new(BackboneConfig::default(), &seeds, &mut params);
        assert!(bb.forward(&Tensor::zeros(&[1, 1, 48, 40])).is_err());
    }

    #[test]
    fn zero_weights_give_zero_pyramid_with_zero_norm_gain() {
        // conv weights and biases zero make pre-norm activations constant
        // zero; zeroing the norm gain then keeps every level exactly zero.
        let seeds = SeedSplitter::new(4);
        let mut params = Params::new();
        let bb = Backbone::<f64>::new(BackboneConfig::default(), &seeds, &mut params);
        for (_, t) in params.entries() {
            t.set_data(&vec![0.0; t.numel()]).unwrap();
        }
        let pyr = bb.forward(&Tensor::full(&[1, 1, 16, 16], 3.0)).unwrap();
        for level in &pyr.levels {
            assert!(level.data().iter().all(|&v| v == 0.0));
        }
    }
}
