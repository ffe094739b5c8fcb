//! Benchmark-only crate; see `benches/attention.rs`. Helpers for building
//! attention layers under test live here so the bench target stays small.

use cfpformer::attention::{AttentionConfig, AttentionVariant, GaussianAttention, MaskFamily};
use cfpformer::nn::Params;
use cfpformer::rng::SeedSplitter;
use cfpformer::{SoftmaxBase, Tensor};

/// Build a single-head attention layer plus a deterministic input grid.
pub fn attention_case(variant: AttentionVariant, h: usize, w: usize) -> (GaussianAttention<f32>, Tensor<f32>) {
    let cfg = AttentionConfig {
        embed_dim: 16,
        num_heads: 1,
        variant,
        family: MaskFamily::Gaussian,
        softmax_base: SoftmaxBase::Two,
        lepe_kernel: 3,
        use_lepe: true,
    };
    let seeds = SeedSplitter::new(11);
    let mut params = Params::new();
    let attn = GaussianAttention::<f32>::new(cfg, h.max(w), &seeds, "bench", &mut params)
        .expect("valid benchmark configuration");
    let x = Tensor::from_vec(
        &[1, h, w, 16],
        (0..h * w * 16).map(|i| (i % 17) as f32 * 0.05 - 0.4).collect(),
    )
    .expect("input shape matches data length");
    (attn, x)
}
