//! Layer building blocks and the named parameter registry.

use rand::Rng;

use crate::error::Result;
use crate::rng::SeedSplitter;
use crate::tensor::{Real, Tensor};

/// Ordered, named collection of trainable leaves. Order is construction
/// order and is the canonical order for the optimizer and checkpoints.
pub struct Params<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for Params<T> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.entries.push((name.into(), t));
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }
}

/// Weight init: uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
pub fn init_uniform<T: Real, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::param(shape, data).expect("init shape/data agree")
}

pub fn zeros_param<T: Real>(shape: &[usize]) -> Tensor<T> {
    let numel: usize = shape.iter().product();
    Tensor::param(shape, vec![T::zero(); numel]).expect("zeros param")
}

/// Dense projection over the last axis: x[..., in] -> x[..., out].
pub struct Linear<T: Real> {
    pub weight: Tensor<T>, // [in, out]
    pub bias: Tensor<T>,   // [out]
}

impl<T: Real> Linear<T> {
    pub fn new(d_in: usize, d_out: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        let mut rng = seeds.rng(label);
        let weight = init_uniform(&[d_in, d_out], d_in, &mut rng);
        let bias = zeros_param(&[d_out]);
        params.push(format!("{label}.weight"), weight.clone());
        params.push(format!("{label}.bias"), bias.clone());
        Self { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let d_in = self.weight.shape()[0];
        let d_out = self.weight.shape()[1];
        let lead: Vec<usize> = x.shape()[..x.ndim() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let flat = x.reshape(&[rows, d_in])?;
        let y = flat.matmul(&self.weight)?.add_bias(&self.bias)?;
        let mut out_shape = lead;
        out_shape.push(d_out);
        y.reshape(&out_shape)
    }
}

/// 2-D convolution layer with per-channel bias.
pub struct Conv2d<T: Real> {
    pub kernel: Tensor<T>, // [O, C/groups, k, k]
    pub bias: Tensor<T>,   // [O]
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        seeds: &SeedSplitter,
        label: &str,
        params: &mut Params<T>,
    ) -> Self {
        let mut rng = seeds.rng(label);
        let fan_in = (c_in / groups) * k * k;
        let kernel = init_uniform(&[c_out, c_in / groups, k, k], fan_in, &mut rng);
        let bias = zeros_param(&[c_out]);
        params.push(format!("{label}.kernel"), kernel.clone());
        params.push(format!("{label}.bias"), bias.clone());
        Self {
            kernel,
            bias,
            stride,
            padding,
            groups,
        }
    }

    /// Depthwise conv with zero-initialized kernel (LePE convention).
    pub fn depthwise_zero_init(
        channels: usize,
        k: usize,
        label: &str,
        params: &mut Params<T>,
    ) -> Self {
        let kernel = zeros_param(&[channels, 1, k, k]);
        let bias = zeros_param(&[channels]);
        params.push(format!("{label}.kernel"), kernel.clone());
        params.push(format!("{label}.bias"), bias.clone());
        Self {
            kernel,
            bias,
            stride: 1,
            padding: k / 2,
            groups: channels,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.kernel, self.stride, self.padding, self.groups)?
            .add_channel_bias(&self.bias)
    }
}

/// Layer norm over the last axis, gain initialized to 1 and bias to 0.
pub struct LayerNorm<T: Real> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize, label: &str, params: &mut Params<T>) -> Self {
        let gain = Tensor::param(&[dim], vec![T::one(); dim]).expect("gain");
        let bias = zeros_param(&[dim]);
        params.push(format!("{label}.gain"), gain.clone());
        params.push(format!("{label}.bias"), bias.clone());
        Self { gain, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layer_norm(&self.gain, &self.bias)
    }
}
