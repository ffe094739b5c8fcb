//! The cross-feature-pyramid decoder: patch embedding, feature re-encoding
//! (FRE) of encoder levels into the attention K/V streams, pre-norm
//! residual CFP blocks, progressive 2x upsampling, and the segmentation
//! head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, AttentionVariant, GaussianAttention, MaskFamily};
use crate::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, LayerNorm, Linear, Params};
use crate::rng::SeedSplitter;
use crate::tensor::{Real, SoftmaxBase, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upsampling {
    Bilinear,
    TransposeConv,
}

/// Full decoder description. Stage index 0 is the highest-resolution stage;
/// the decoder executes stages 3 -> 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfpConfig {
    /// CFP blocks per stage (C1..C4, highest resolution first).
    pub stage_blocks: [usize; 4],
    /// Attention heads per stage (A1..A4).
    pub heads: [usize; 4],
    /// Token width per stage, highest resolution first.
    pub widths: [usize; 4],
    pub mlp_ratio: usize,
    pub drop_path_rate: f64,
    /// Patchify factor at the decoder entry.
    pub patch_size: usize,
    pub upsampling: Upsampling,
    pub use_fre: bool,
    pub use_pyramid_connection: bool,
    pub attention_variant: AttentionVariant,
    pub softmax_base: SoftmaxBase,
    pub mask_family: MaskFamily,
    pub use_lepe: bool,
    pub num_classes: usize,
}

impl Default for CfpConfig {
    fn default() -> Self {
        Self::tiny()
    }
}

impl CfpConfig {
    pub fn tiny() -> Self {
        Self {
            stage_blocks: [1, 1, 3, 1],
            heads: [2, 4, 8, 16],
            widths: [16, 32, 64, 128],
            mlp_ratio: 3,
            drop_path_rate: 0.15,
            patch_size: 1,
            upsampling: Upsampling::Bilinear,
            use_fre: true,
            use_pyramid_connection: true,
            attention_variant: AttentionVariant::AxialGaussian,
            softmax_base: SoftmaxBase::Two,
            mask_family: MaskFamily::Gaussian,
            use_lepe: true,
            num_classes: 4,
        }
    }

    pub fn small() -> Self {
        Self {
            stage_blocks: [2, 2, 6, 2],
            heads: [4, 4, 8, 16],
            drop_path_rate: 0.20,
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_pyramid_connection && !self.use_fre {
            return Err(Error::Config(
                "pyramid connections require feature re-encoding: encoder levels cannot \
                 enter the decoder stages without the FRE projection"
                    .into(),
            ));
        }
        for s in 0..4 {
            if self.heads[s] == 0 || !self.widths[s].is_multiple_of(self.heads[s]) {
                return Err(Error::Config(format!(
                    "stage {}: width {} not divisible by heads {}",
                    s, self.widths[s], self.heads[s]
                )));
            }
            if self.stage_blocks[s] == 0 {
                return Err(Error::Config(format!("stage {} needs at least one block", s)));
            }
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) {
            return Err(Error::Config(format!(
                "drop_path_rate must lie in [0, 1), got {}",
                self.drop_path_rate
            )));
        }
        if self.patch_size == 0 || self.num_classes == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("patch_size, num_classes, mlp_ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Non-overlapping PxP patchify + linear projection, realized as a
/// stride-P convolution. Output is channels-last tokens.
pub struct PatchEmbed<T: Real> {
    conv: Conv2d<T>,
    patch: usize,
}

impl<T: Real> PatchEmbed<T> {
    pub fn new(c_in: usize, d_out: usize, patch: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        let conv = Conv2d::new(c_in, d_out, patch, patch, 0, 1, seeds, label, params);
        Self { conv, patch }
    }

    /// [B, C, H, W] -> [B, H/P, W/P, D]
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 4 || !xs[2].is_multiple_of(self.patch) || !xs[3].is_multiple_of(self.patch) {
            return Err(Error::dim(
                "patch_embed",
                format!("patch {} does not divide feature {:?}", self.patch, xs),
            ));
        }
        self.conv.forward(x)?.permute(&[0, 2, 3, 1])
    }
}

/// Feature re-encoding: projects one encoder pyramid level onto a decoder
/// stage's token grid so it can be added into the K and V streams.
pub struct Fre<T: Real> {
    embed: PatchEmbed<T>,
}

impl<T: Real> Fre<T> {
    pub fn new(c_enc: usize, d_out: usize, patch: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        Self {
            embed: PatchEmbed::new(c_enc, d_out, patch, seeds, label, params),
        }
    }

    pub fn forward(&self, f_enc: &Tensor<T>) -> Result<Tensor<T>> {
        self.embed.forward(f_enc)
    }
}

struct Mlp<T: Real> {
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Real> Mlp<T> {
    fn new(dim: usize, ratio: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        let fc1 = Linear::new(dim, dim * ratio, seeds, &format!("{label}.fc1"), params);
        let fc2 = Linear::new(dim * ratio, dim, seeds, &format!("{label}.fc2"), params);
        Self { fc1, fc2 }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu()?)
    }
}

/// Pre-norm residual transformer block with optional encoder fusion:
/// x + drop_path(attn(norm(x), fre(f_enc))) + drop_path(mlp(norm(.))).
pub struct CfpBlock<T: Real> {
    norm1: LayerNorm<T>,
    pub attn: GaussianAttention<T>,
    norm2: LayerNorm<T>,
    mlp: Mlp<T>,
    fre: Option<Fre<T>>,
    drop_path_rate: f64,
}

impl<T: Real> CfpBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        heads: usize,
        cfg: &CfpConfig,
        grid_extent: usize,
        fre_spec: Option<(usize, usize)>, // (encoder channels, patch)
        seeds: &SeedSplitter,
        label: &str,
        params: &mut Params<T>,
    ) -> Result<Self> {
        let attn_cfg = AttentionConfig {
            embed_dim: dim,
            num_heads: heads,
            variant: cfg.attention_variant,
            family: cfg.mask_family,
            softmax_base: cfg.softmax_base,
            lepe_kernel: 3,
            use_lepe: cfg.use_lepe,
        };
        let norm1 = LayerNorm::new(dim, &format!("{label}.norm1"), params);
        let attn = GaussianAttention::new(attn_cfg, grid_extent, seeds, &format!("{label}.attn"), params)?;
        let norm2 = LayerNorm::new(dim, &format!("{label}.norm2"), params);
        let mlp = Mlp::new(dim, cfg.mlp_ratio, seeds, &format!("{label}.mlp"), params);
        let fre = fre_spec
            .map(|(c_enc, patch)| Fre::new(c_enc, dim, patch, seeds, &format!("{label}.fre"), params));
        Ok(Self {
            norm1,
            attn,
            norm2,
            mlp,
            fre,
            drop_path_rate: cfg.drop_path_rate,
        })
    }

    /// x: [B, H, W, D] tokens; f_enc: raw encoder level [B, C, He, We],
    /// consumed only when this block was built with an FRE projection.
    pub fn forward<R: Rng>(
        &self,
        x: &Tensor<T>,
        f_enc: Option<&Tensor<T>>,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let enc = match (&self.fre, f_enc) {
            (Some(fre), Some(f)) => Some(fre.forward(f)?),
            _ => None,
        };
        let a = self.attn.forward(&self.norm1.forward(x)?, enc.as_ref())?;
        let x = x.add(&a.drop_path(self.drop_path_rate, training, rng)?)?;
        let m = self.mlp.forward(&self.norm2.forward(&x)?)?;
        x.add(&m.drop_path(self.drop_path_rate, training, rng)?)
    }
}

enum Upsample<T: Real> {
    Bilinear { proj: Conv2d<T> },
    TransposeConv { kernel: Tensor<T>, bias: Tensor<T> },
}

impl<T: Real> Upsample<T> {
    fn new(mode: Upsampling, c_in: usize, c_out: usize, seeds: &SeedSplitter, label: &str, params: &mut Params<T>) -> Self {
        match mode {
            Upsampling::Bilinear => Self::Bilinear {
                proj: Conv2d::new(c_in, c_out, 1, 1, 0, 1, seeds, &format!("{label}.proj"), params),
            },
            Upsampling::TransposeConv => {
                let mut rng = seeds.rng(label);
                let kernel = crate::nn::init_uniform(&[c_in, c_out, 2, 2], c_in * 4, &mut rng);
                let bias = crate::nn::zeros_param(&[c_out]);
                params.push(format!("{label}.kernel"), kernel.clone());
                params.push(format!("{label}.bias"), bias.clone());
                Self::TransposeConv { kernel, bias }
            }
        }
    }

    /// [B, C_in, H, W] -> [B, C_out, 2H, 2W]
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Self::Bilinear { proj } => proj.forward(&x.bilinear_upsample_2x()?),
            Self::TransposeConv { kernel, bias } => {
                x.conv_transpose2d(kernel, 2)?.add_channel_bias(bias)
            }
        }
    }
}

pub struct Decoder<T: Real> {
    pub cfg: CfpConfig,
    entry: PatchEmbed<T>,
    /// Execution order: lowest resolution first (stage index 3 down to 0).
    stages: Vec<Vec<CfpBlock<T>>>,
    upsamples: Vec<Upsample<T>>,
    head: Conv2d<T>,
}

impl<T: Real> Decoder<T> {
    /// `enc_channels`: pyramid level widths, highest resolution first.
    /// `input_extent`: training image extent; seeds per-stage sigma.
    pub fn new(
        cfg: CfpConfig,
        enc_channels: [usize; 4],
        input_extent: usize,
        seeds: &SeedSplitter,
        params: &mut Params<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let entry = PatchEmbed::new(
            enc_channels[3],
            cfg.widths[3],
            cfg.patch_size,
            seeds,
            "dec.entry",
            params,
        );
        let mut stages = Vec::new();
        let mut upsamples = Vec::new();
        for s in (0..4).rev() {
            // stage s runs on the level-s grid: input_extent / 2^s / patch
            let grid = input_extent / (1 << s) / cfg.patch_size;
            let fuse = if s == 3 {
                cfg.use_fre
            } else {
                cfg.use_fre && cfg.use_pyramid_connection
            };
            let fre_spec = fuse.then_some((enc_channels[s], cfg.patch_size));
            let mut blocks = Vec::new();
            for b in 0..cfg.stage_blocks[s] {
                blocks.push(CfpBlock::new(
                    cfg.widths[s],
                    cfg.heads[s],
                    &cfg,
                    grid.max(1),
                    fre_spec,
                    seeds,
                    &format!("dec.s{s}.b{b}"),
                    params,
                )?);
            }
            stages.push(blocks);
            if s > 0 {
                upsamples.push(Upsample::new(
                    cfg.upsampling,
                    cfg.widths[s],
                    cfg.widths[s - 1],
                    seeds,
                    &format!("dec.up{s}"),
                    params,
                ));
            }
        }
        let head = Conv2d::new(cfg.widths[0], cfg.num_classes, 1, 1, 0, 1, seeds, "dec.head", params);
        Ok(Self {
            cfg,
            entry,
            stages,
            upsamples,
            head,
        })
    }

    /// pyramid -> logits [B, num_classes, H0, W0] where (H0, W0) is the
    /// resolution of the pyramid's top level times the patch factor.
    pub fn forward<R: Rng>(
        &self,
        pyramid: &FeaturePyramid<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        pyramid.validate()?;
        let top = pyramid.levels[0].shape().to_vec();
        let (h0, w0) = (top[2], top[3]);
        let mut x = self.entry.forward(&pyramid.levels[3])?;
        for (i, s) in (0..4).rev().enumerate() {
            let fused = self.stages[i][0].has_fre().then(|| &pyramid.levels[s]);
            for block in &self.stages[i] {
                x = block.forward(&x, fused, training, rng)?;
            }
            if s > 0 {
                let grid = x.permute(&[0, 3, 1, 2])?;
                x = self.upsamples[i].forward(&grid)?.permute(&[0, 2, 3, 1])?;
            }
        }
        let logits = self.head.forward(&x.permute(&[0, 3, 1, 2])?)?;
        logits.bilinear_resize(h0, w0)
    }

    /// Re-clamp every learnable sigma; call after each optimizer step.
    pub fn clamp_sigmas(&self) {
        for stage in &self.stages {
            for block in stage {
                block.attn.clamp_sigma();
            }
        }
    }
}

impl<T: Real> CfpBlock<T> {
    pub fn has_fre(&self) -> bool {
        self.fre.is_some()
    }
}
