//! Distance-decay attention: axis mask construction, axially-decomposed
//! Gaussian attention (row pass then column pass, each with its own 1-D
//! log-domain decay mask added to the scores before softmax), a full
//! (non-axial) reference variant, and a plain MHSA baseline.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear, Params};
use crate::rng::SeedSplitter;
use crate::tensor::{Real, SoftmaxBase, Tensor};

/// Counts mask-modulated attention score entries across all forwards since
/// the last reset. With batch 1 and a single head, one axial forward adds
/// exactly HW(H+W) and one full forward adds (HW)^2.
static SCORE_ENTRIES: AtomicU64 = AtomicU64::new(0);

pub fn reset_score_entries() {
    SCORE_ENTRIES.store(0, Ordering::Relaxed);
}

pub fn score_entries() -> u64 {
    SCORE_ENTRIES.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFamily {
    /// Entry (n, m) = -(n-m)^2 / (2 sigma^2); sigma learnable per head.
    Gaussian,
    /// Entry (n, m) = |n-m| ln(gamma); gamma fixed per head in (0, 1).
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    AxialGaussian,
    FullGaussian,
    Mhsa,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub variant: AttentionVariant,
    pub family: MaskFamily,
    pub softmax_base: SoftmaxBase,
    pub lepe_kernel: usize,
    pub use_lepe: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.lepe_kernel % 2 != 1 {
            return Err(Error::Config(format!("lepe kernel {} must be odd", self.lepe_kernel)));
        }
        Ok(())
    }
}

/// One-axis decay mask in the log domain: N x N, zero diagonal, symmetric,
/// monotone non-increasing away from the diagonal.
pub fn build_axis_mask(extent: usize, family: MaskFamily, param: f64) -> Result<Vec<f64>> {
    if extent == 0 {
        return Err(Error::Config("mask extent must be at least 1".into()));
    }
    validate_mask_param(family, param)?;
    let mut mask = vec![0.0; extent * extent];
    for i in 0..extent {
        for j in 0..extent {
            mask[i * extent + j] = log_decay(family, param, (i as f64 - j as f64).abs());
        }
    }
    Ok(mask)
}

/// Full 2-D mask over flattened H x W tokens from pairwise Euclidean
/// distances, log domain.
pub fn build_grid_mask(h: usize, w: usize, family: MaskFamily, param: f64) -> Result<Vec<f64>> {
    if h == 0 || w == 0 {
        return Err(Error::Config("mask extents must be at least 1".into()));
    }
    validate_mask_param(family, param)?;
    let n = h * w;
    let mut mask = vec![0.0; n * n];
    for a in 0..n {
        let (ya, xa) = ((a / w) as f64, (a % w) as f64);
        for b in 0..n {
            let (yb, xb) = ((b / w) as f64, (b % w) as f64);
            let d = ((ya - yb).powi(2) + (xa - xb).powi(2)).sqrt();
            mask[a * n + b] = log_decay(family, param, d);
        }
    }
    Ok(mask)
}

fn validate_mask_param(family: MaskFamily, param: f64) -> Result<()> {
    match family {
        MaskFamily::Gaussian if param <= 0.0 => {
            Err(Error::Config(format!("gaussian sigma must be positive, got {param}")))
        }
        MaskFamily::Exponential if !(param > 0.0 && param < 1.0) => {
            Err(Error::Config(format!("exponential gamma must lie in (0, 1), got {param}")))
        }
        _ => Ok(()),
    }
}

fn log_decay(family: MaskFamily, param: f64, distance: f64) -> f64 {
    match family {
        MaskFamily::Gaussian => -(distance * distance) / (2.0 * param * param),
        MaskFamily::Exponential => distance * param.ln(),
    }
}

/// Precomputed per-head row/column masks, for export, benchmarking and
/// inspection. Training paths rebuild the Gaussian mask inside the graph so
/// gradients reach sigma.
#[derive(Debug, Clone)]
pub struct DecayMask {
    pub family: MaskFamily,
    /// Per-head sigma (gaussian) or gamma (exponential).
    pub params: Vec<f64>,
    pub extent_h: usize,
    pub extent_w: usize,
    /// Per head, extent_h x extent_h, log domain.
    pub mask_h: Vec<Vec<f64>>,
    /// Per head, extent_w x extent_w, log domain.
    pub mask_w: Vec<Vec<f64>>,
}

impl DecayMask {
    pub fn build(extent_h: usize, extent_w: usize, family: MaskFamily, params: &[f64]) -> Result<Self> {
        let mask_h = params
            .iter()
            .map(|&p| build_axis_mask(extent_h, family, p))
            .collect::<Result<Vec<_>>>()?;
        let mask_w = params
            .iter()
            .map(|&p| build_axis_mask(extent_w, family, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            family,
            params: params.to_vec(),
            extent_h,
            extent_w,
            mask_h,
            mask_w,
        })
    }
}

/// Default per-head gamma schedule for the exponential family: head h gets
/// 1 - 2^-(3+h), spreading decay rates across heads.
pub fn default_gammas(num_heads: usize) -> Vec<f64> {
    (0..num_heads).map(|h| 1.0 - (2.0f64).powi(-(3 + h as i32))).collect()
}

/// Minimum sigma enforced after optimizer steps.
pub const SIGMA_MIN: f64 = 1e-3;

/// In-graph axis mask for learnable sigma: [heads, n, n] with entry
/// -(i-j)^2 / (2 sigma_h^2). Gradient flows back to sigma.
fn gaussian_axis_mask_node<T: Real>(sigma: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let heads = sigma.numel();
    let mut data = vec![T::zero(); heads * n * n];
    {
        let s = sigma.data();
        for h in 0..heads {
            let sg = s[h].to_f64();
            for i in 0..n {
                for j in 0..n {
                    let d = i as f64 - j as f64;
                    data[(h * n + i) * n + j] = T::from_f64(-(d * d) / (2.0 * sg * sg));
                }
            }
        }
    }
    Tensor::from_op(
        "gaussian_axis_mask",
        vec![heads, n, n],
        data,
        vec![sigma.clone()],
        Box::new(move |g, parents| {
            let s = parents[0].data();
            let mut gs = vec![T::zero(); heads];
            for h in 0..heads {
                let sg = s[h].to_f64();
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let d = i as f64 - j as f64;
                        // d/dsigma of -(d^2)/(2 sigma^2) = d^2 / sigma^3
                        acc += g[(h * n + i) * n + j].to_f64() * (d * d) / (sg * sg * sg);
                    }
                }
                gs[h] = T::from_f64(acc);
            }
            drop(s);
            parents[0].accumulate_grad(&gs);
        }),
    )
}

/// In-graph full-grid mask for learnable sigma: [heads, hw, hw] from 2-D
/// Euclidean token distances.
fn gaussian_grid_mask_node<T: Real>(sigma: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let heads = sigma.numel();
    let n = h * w;
    let mut d2 = vec![0.0f64; n * n];
    for a in 0..n {
        let (ya, xa) = ((a / w) as f64, (a % w) as f64);
        for b in 0..n {
            let (yb, xb) = ((b / w) as f64, (b % w) as f64);
            d2[a * n + b] = (ya - yb).powi(2) + (xa - xb).powi(2);
        }
    }
    let mut data = vec![T::zero(); heads * n * n];
    {
        let s = sigma.data();
        for hd in 0..heads {
            let sg = s[hd].to_f64();
            for i in 0..n * n {
                data[hd * n * n + i] = T::from_f64(-d2[i] / (2.0 * sg * sg));
            }
        }
    }
    let d2b = d2;
    Tensor::from_op(
        "gaussian_grid_mask",
        vec![heads, n, n],
        data,
        vec![sigma.clone()],
        Box::new(move |g, parents| {
            let s = parents[0].data();
            let mut gs = vec![T::zero(); heads];
            for hd in 0..heads {
                let sg = s[hd].to_f64();
                let mut acc = 0.0;
                for i in 0..n * n {
                    acc += g[hd * n * n + i].to_f64() * d2b[i] / (sg * sg * sg);
                }
                gs[hd] = T::from_f64(acc);
            }
            drop(s);
            parents[0].accumulate_grad(&gs);
        }),
    )
}

fn constant_mask_node<T: Real>(per_head: &[Vec<f64>], n: usize) -> Result<Tensor<T>> {
    let heads = per_head.len();
    let mut data = Vec::with_capacity(heads * n * n);
    for m in per_head {
        data.extend(m.iter().map(|&v| T::from_f64(v)));
    }
    Tensor::from_vec(&[heads, n, n], data)
}

/// scores [B, heads, R, N, N] + mask [heads, N, N] broadcast over B and R,
/// counting every modulated score entry. Mask gradients (for learnable
/// sigma) are reduced over B and R.
fn add_axis_mask<T: Real>(scores: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let ss = scores.shape().to_vec();
    let ms = mask.shape().to_vec();
    if ss.len() != 5 || ms.len() != 3 || ss[1] != ms[0] || ss[3] != ms[1] || ss[4] != ms[2] {
        return Err(Error::dim(
            "add_axis_mask",
            format!("scores {:?} vs mask {:?}", ss, ms),
        ));
    }
    let (b, heads, r, n) = (ss[0], ss[1], ss[2], ss[3]);
    let nn = n * n;
    let data = {
        let s = scores.data();
        let m = mask.data();
        let mut out = vec![T::zero(); s.len()];
        for bi in 0..b {
            for h in 0..heads {
                let mh = &m[h * nn..(h + 1) * nn];
                for ri in 0..r {
                    let base = ((bi * heads + h) * r + ri) * nn;
                    for i in 0..nn {
                        out[base + i] = s[base + i] + mh[i];
                    }
                }
            }
        }
        out
    };
    SCORE_ENTRIES.fetch_add(data.len() as u64, Ordering::Relaxed);
    Tensor::from_op(
        "add_axis_mask",
        ss,
        data,
        vec![scores.clone(), mask.clone()],
        Box::new(move |g, parents| {
            parents[0].accumulate_grad(g);
            if parents[1].requires_grad() {
                let mut gm = vec![T::zero(); heads * nn];
                for bi in 0..b {
                    for h in 0..heads {
                        for ri in 0..r {
                            let base = ((bi * heads + h) * r + ri) * nn;
                            for i in 0..nn {
                                gm[h * nn + i] = gm[h * nn + i] + g[base + i];
                            }
                        }
                    }
                }
                parents[1].accumulate_grad(&gm);
            }
        }),
    )
}

/// Multi-head attention unit with optional distance decay and LePE. One
/// instance serves one decoder stage (fixed grid extents).
pub struct GaussianAttention<T: Real> {
    pub cfg: AttentionConfig,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    /// Depthwise conv positional encoding over v, zero-initialized.
    pub lepe: Option<Conv2d<T>>,
    /// Learnable per-head sigma (gaussian family only).
    pub sigma: Option<Tensor<T>>,
    /// Fixed per-head gamma (exponential family only).
    pub gammas: Vec<f64>,
}

impl<T: Real> GaussianAttention<T> {
    /// `grid_extent` seeds sigma at max(H, W) / 4.
    pub fn new(
        cfg: AttentionConfig,
        grid_extent: usize,
        seeds: &SeedSplitter,
        label: &str,
        params: &mut Params<T>,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let mut p = Params::new();
        let wq = Linear::new(d, d, seeds, &format!("{label}.wq"), &mut p);
        let wk = Linear::new(d, d, seeds, &format!("{label}.wk"), &mut p);
        let wv = Linear::new(d, d, seeds, &format!("{label}.wv"), &mut p);
        let use_lepe = cfg.use_lepe && cfg.variant != AttentionVariant::Mhsa;
        let lepe = use_lepe
            .then(|| Conv2d::depthwise_zero_init(d, cfg.lepe_kernel, &format!("{label}.lepe"), &mut p));
        let decayed = cfg.variant != AttentionVariant::Mhsa;
        let (sigma, gammas) = match (decayed, cfg.family) {
            (true, MaskFamily::Gaussian) => {
                let init = T::from_f64((grid_extent as f64 / 4.0).max(SIGMA_MIN));
                let s = Tensor::param(&[cfg.num_heads], vec![init; cfg.num_heads])?;
                p.push(format!("{label}.sigma"), s.clone());
                (Some(s), Vec::new())
            }
            (true, MaskFamily::Exponential) => (None, default_gammas(cfg.num_heads)),
            (false, _) => (None, Vec::new()),
        };
        for (name, t) in p.entries() {
            params.push(name.clone(), t.clone());
        }
        Ok(Self {
            cfg,
            wq,
            wk,
            wv,
            lepe,
            sigma,
            gammas,
        })
    }

    /// Clamp learnable sigma away from zero; call after each optimizer step.
    pub fn clamp_sigma(&self) {
        if let Some(s) = &self.sigma {
            let clamped: Vec<T> = s
                .data()
                .iter()
                .map(|&v| if v.to_f64() < SIGMA_MIN { T::from_f64(SIGMA_MIN) } else { v })
                .collect();
            s.set_data(&clamped).expect("sigma shape unchanged");
        }
    }

    fn axis_mask(&self, n: usize) -> Result<Tensor<T>> {
        match (&self.sigma, self.cfg.family) {
            (Some(s), MaskFamily::Gaussian) => gaussian_axis_mask_node(s, n),
            _ => {
                let per_head: Vec<Vec<f64>> = self
                    .gammas
                    .iter()
                    .map(|&g| build_axis_mask(n, MaskFamily::Exponential, g))
                    .collect::<Result<_>>()?;
                constant_mask_node(&per_head, n)
            }
        }
    }

    fn grid_mask(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        match (&self.sigma, self.cfg.family) {
            (Some(s), MaskFamily::Gaussian) => gaussian_grid_mask_node(s, h, w),
            _ => {
                let per_head: Vec<Vec<f64>> = self
                    .gammas
                    .iter()
                    .map(|&g| build_grid_mask(h, w, MaskFamily::Exponential, g))
                    .collect::<Result<_>>()?;
                constant_mask_node(&per_head, h * w)
            }
        }
    }

    fn lepe_of(&self, v: &Tensor<T>, b: usize, h: usize, w: usize, d: usize) -> Result<Option<Tensor<T>>> {
        match &self.lepe {
            None => Ok(None),
            Some(conv) => {
                let grid = v.reshape(&[b, h, w, d])?.permute(&[0, 3, 1, 2])?;
                let out = conv.forward(&grid)?.permute(&[0, 2, 3, 1])?;
                Ok(Some(out))
            }
        }
    }

    /// x: [B, H, W, D]. `enc`, when present, is the FRE-projected encoder
    /// feature of the same shape; it is added into the K and V paths only.
    pub fn forward(&self, x: &Tensor<T>, enc: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let xs = x.shape();
        if xs.len() != 4 || xs[3] != self.cfg.embed_dim {
            return Err(Error::dim(
                "attention",
                format!("input {:?} vs embed_dim {}", xs, self.cfg.embed_dim),
            ));
        }
        let (b, h, w, d) = (xs[0], xs[1], xs[2], xs[3]);
        if let Some(e) = enc {
            if e.shape() != xs {
                return Err(Error::dim(
                    "attention",
                    format!("encoder feature {:?} vs input {:?}", e.shape(), xs),
                ));
            }
        }
        let heads = self.cfg.num_heads;
        let dk = d / heads;
        let scale = T::from_f64(1.0 / (dk as f64).sqrt());

        let q = self.wq.forward(x)?;
        let mut k = self.wk.forward(x)?;
        let mut v = self.wv.forward(x)?;
        if let Some(e) = enc {
            k = k.add(e)?;
            v = v.add(e)?;
        }
        let lepe = self.lepe_of(&v, b, h, w, d)?;

        let out = match self.cfg.variant {
            AttentionVariant::AxialGaussian => {
                // [B, H, W, D] -> [B, heads, H, W, dk]
                let split = |t: &Tensor<T>| -> Result<Tensor<T>> {
                    t.reshape(&[b, h, w, heads, dk])?.permute(&[0, 3, 1, 2, 4])
                };
                let q5 = split(&q)?;
                let k5 = split(&k)?;
                let v5 = split(&v)?;

                // row pass: attention over the W positions of each row
                let scores_w = q5.matmul(&k5.permute(&[0, 1, 2, 4, 3])?)?.scale(scale)?;
                let scores_w = add_axis_mask(&scores_w, &self.axis_mask(w)?)?;
                let attn_w = scores_w.softmax_rows(self.cfg.softmax_base)?;
                let v_w = attn_w.matmul(&v5)?;

                // column pass over the H positions, consuming v_w
                let qc = q5.permute(&[0, 1, 3, 2, 4])?;
                let kc = k5.permute(&[0, 1, 3, 2, 4])?;
                let vc = v_w.permute(&[0, 1, 3, 2, 4])?;
                let scores_h = qc.matmul(&kc.permute(&[0, 1, 2, 4, 3])?)?.scale(scale)?;
                let scores_h = add_axis_mask(&scores_h, &self.axis_mask(h)?)?;
                let attn_h = scores_h.softmax_rows(self.cfg.softmax_base)?;
                let out_c = attn_h.matmul(&vc)?;

                out_c
                    .permute(&[0, 1, 3, 2, 4])? // back to [B, heads, H, W, dk]
                    .permute(&[0, 2, 3, 1, 4])?
                    .reshape(&[b, h, w, d])?
            }
            AttentionVariant::FullGaussian | AttentionVariant::Mhsa => {
                let n = h * w;
                let split = |t: &Tensor<T>| -> Result<Tensor<T>> {
                    t.reshape(&[b, n, heads, dk])?.permute(&[0, 2, 1, 3])
                };
                let q4 = split(&q)?;
                let k4 = split(&k)?;
                let v4 = split(&v)?;
                let scores = q4.matmul(&k4.permute(&[0, 1, 3, 2])?)?.scale(scale)?;
                let (attn, base) = if self.cfg.variant == AttentionVariant::Mhsa {
                    (scores, SoftmaxBase::Natural)
                } else {
                    let masked = add_axis_mask(
                        &scores.reshape(&[b, heads, 1, n, n])?,
                        &self.grid_mask(h, w)?,
                    )?;
                    (masked.reshape(&[b, heads, n, n])?, self.cfg.softmax_base)
                };
                let attn = attn.softmax_rows(base)?;
                attn.matmul(&v4)?
                    .permute(&[0, 2, 1, 3])?
                    .reshape(&[b, h, w, d])?
            }
        };

        match lepe {
            Some(l) => out.add(&l),
            None => Ok(out),
        }
    }
}
