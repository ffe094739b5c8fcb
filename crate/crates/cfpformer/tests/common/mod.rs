//! Shared oracles for integration tests. Everything here recomputes results
//! from first principles in plain f64 loops, never calling the library's
//! attention, autodiff, or distance-transform code paths under test.

#![allow(dead_code)]

pub mod gradients;

use cfpformer::attention::{AttentionConfig, AttentionVariant, GaussianAttention, MaskFamily};
use cfpformer::nn::Params;
use cfpformer::rng::SeedSplitter;
use cfpformer::tensor::SoftmaxBase;
use cfpformer::Tensor;
use rand::Rng;

/// Raw weights lifted out of a `GaussianAttention<f64>` layer so the oracle
/// can run without touching any Tensor machinery.
pub struct AttnWeights {
    pub d: usize,
    pub heads: usize,
    pub wq: Vec<f64>,
    pub bq: Vec<f64>,
    pub wk: Vec<f64>,
    pub bk: Vec<f64>,
    pub wv: Vec<f64>,
    pub bv: Vec<f64>,
    /// Depthwise kernel [D, 1, k, k] plus bias [D], if LePE is enabled.
    pub lepe: Option<(Vec<f64>, Vec<f64>, usize)>,
    pub family: MaskFamily,
    /// Per-head sigma (gaussian) or gamma (exponential).
    pub mask_params: Vec<f64>,
    pub ln_base: f64,
}

pub fn extract_weights(attn: &GaussianAttention<f64>) -> AttnWeights {
    let d = attn.cfg.embed_dim;
    let mask_params = match &attn.sigma {
        Some(s) => s.to_vec(),
        None => attn.gammas.clone(),
    };
    AttnWeights {
        d,
        heads: attn.cfg.num_heads,
        wq: attn.wq.weight.to_vec(),
        bq: attn.wq.bias.to_vec(),
        wk: attn.wk.weight.to_vec(),
        bk: attn.wk.bias.to_vec(),
        wv: attn.wv.weight.to_vec(),
        bv: attn.wv.bias.to_vec(),
        lepe: attn
            .lepe
            .as_ref()
            .map(|c| (c.kernel.to_vec(), c.bias.to_vec(), c.kernel.shape()[2])),
        family: attn.cfg.family,
        mask_params,
        ln_base: match attn.cfg.softmax_base {
            SoftmaxBase::Natural => 1.0,
            SoftmaxBase::Two => std::f64::consts::LN_2,
        },
    }
}

fn linear(x: &[f64], tokens: usize, d: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; tokens * d];
    for t in 0..tokens {
        for o in 0..d {
            let mut acc = bias[o];
            for i in 0..d {
                acc += x[t * d + i] * w[i * d + o];
            }
            y[t * d + o] = acc;
        }
    }
    y
}

fn log_decay(family: MaskFamily, param: f64, dist: f64) -> f64 {
    match family {
        MaskFamily::Gaussian => -(dist * dist) / (2.0 * param * param),
        MaskFamily::Exponential => dist * param.ln(),
    }
}

/// Row-stochastic attention matrix from raw scores with the given log base.
fn softmax_rows(scores: &mut [f64], n: usize, ln_base: f64) {
    for row in scores.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) * ln_base).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Depthwise zero-padded convolution of `v` seen as a [H, W, D] grid.
fn depthwise_conv(v: &[f64], h: usize, w: usize, d: usize, kernel: &[f64], bias: &[f64], k: usize) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            for c in 0..d {
                let mut acc = bias[c];
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = y as isize + ky as isize - pad as isize;
                        let sx = x as isize + kx as isize - pad as isize;
                        if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                            acc += v[(sy as usize * w + sx as usize) * d + c] * kernel[(c * k + ky) * k + kx];
                        }
                    }
                }
                out[(y * w + x) * d + c] = acc;
            }
        }
    }
    out
}

/// Reference result for axially-factorized decay attention on one batch
/// element, computed by materializing the full (HW) x (HW) composed
/// attention matrix per head and multiplying it against v.
///
/// The factorized operator applies a row pass (attention over the W
/// positions of each row) followed by a column pass, so the composed
/// weight from query token (r, c) to value token (r2, c2) is
/// A_col[c][r, r2] * A_row[r2][c, c2].
pub fn axial_oracle(x: &[f64], h: usize, w: usize, weights: &AttnWeights, enc: Option<&[f64]>) -> Vec<f64> {
    let d = weights.d;
    let heads = weights.heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let tokens = h * w;

    let q = linear(x, tokens, d, &weights.wq, &weights.bq);
    let mut k = linear(x, tokens, d, &weights.wk, &weights.bk);
    let mut v = linear(x, tokens, d, &weights.wv, &weights.bv);
    if let Some(e) = enc {
        for i in 0..tokens * d {
            k[i] += e[i];
            v[i] += e[i];
        }
    }

    let mut out = vec![0.0; tokens * d];
    for hd in 0..heads {
        let p = weights.mask_params[hd];
        let ch0 = hd * dk;
        let dot = |t: &[f64], a: usize, u: &[f64], b: usize| -> f64 {
            (0..dk).map(|i| t[a * d + ch0 + i] * u[b * d + ch0 + i]).sum()
        };

        // Per-row attention over column positions: a_row[r][c, c2].
        let mut a_row = vec![vec![0.0; w * w]; h];
        for (r, mat) in a_row.iter_mut().enumerate() {
            for c in 0..w {
                for c2 in 0..w {
                    let qi = r * w + c;
                    let kj = r * w + c2;
                    mat[c * w + c2] = dot(&q, qi, &k, kj) * scale
                        + log_decay(weights.family, p, (c as f64 - c2 as f64).abs());
                }
            }
            softmax_rows(mat, w, weights.ln_base);
        }
        // Per-column attention over row positions: a_col[c][r, r2].
        let mut a_col = vec![vec![0.0; h * h]; w];
        for (c, mat) in a_col.iter_mut().enumerate() {
            for r in 0..h {
                for r2 in 0..h {
                    let qi = r * w + c;
                    let kj = r2 * w + c;
                    mat[r * h + r2] = dot(&q, qi, &k, kj) * scale
                        + log_decay(weights.family, p, (r as f64 - r2 as f64).abs());
                }
            }
            softmax_rows(mat, h, weights.ln_base);
        }

        // Composed full matrix, then one dense multiply against v.
        let mut full = vec![0.0; tokens * tokens];
        for r in 0..h {
            for c in 0..w {
                for r2 in 0..h {
                    for c2 in 0..w {
                        full[(r * w + c) * tokens + (r2 * w + c2)] =
                            a_col[c][r * h + r2] * a_row[r2][c * w + c2];
                    }
                }
            }
        }
        for t in 0..tokens {
            for i in 0..dk {
                let mut acc = 0.0;
                for t2 in 0..tokens {
                    acc += full[t * tokens + t2] * v[t2 * d + ch0 + i];
                }
                out[t * d + ch0 + i] = acc;
            }
        }
    }

    if let Some((kernel, bias, ksz)) = &weights.lepe {
        let pe = depthwise_conv(&v, h, w, d, kernel, bias, *ksz);
        for i in 0..tokens * d {
            out[i] += pe[i];
        }
    }
    out
}

/// Build an axial-attention layer for oracle comparisons, giving the
/// (normally zero-initialized) LePE kernel real weights so it cannot vanish
/// from the comparison.
pub fn oracle_layer(
    heads: usize,
    family: MaskFamily,
    base: SoftmaxBase,
    grid: usize,
    seed: u64,
) -> GaussianAttention<f64> {
    let cfg = AttentionConfig {
        embed_dim: 4,
        num_heads: heads,
        variant: AttentionVariant::AxialGaussian,
        family,
        softmax_base: base,
        lepe_kernel: 3,
        use_lepe: true,
    };
    let seeds = SeedSplitter::new(seed);
    let mut params = Params::new();
    let attn = GaussianAttention::new(cfg, grid, &seeds, "oracle_case", &mut params).unwrap();
    if let Some(conv) = &attn.lepe {
        let mut rng = seeds.rng("lepe_fill");
        let kv: Vec<f64> = (0..conv.kernel.numel()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        conv.kernel.set_data(&kv).unwrap();
    }
    attn
}

pub fn random_grid(b: usize, h: usize, w: usize, d: usize, seed: u64) -> Tensor<f64> {
    let mut rng = SeedSplitter::new(seed).rng("x");
    Tensor::from_vec(&[b, h, w, d], (0..b * h * w * d).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Every (H, W) in 1..=4 squared, heads 1 and 2, both families, with and
/// without an encoder feature fused into K and V; 1e-5 tolerance.
pub fn run_axial_oracle_sweep() -> Result<(), String> {
    const TOL: f64 = 1e-5;
    let mut cases = 0usize;
    for h in 1..=4usize {
        for w in 1..=4usize {
            for heads in [1usize, 2] {
                for family in [MaskFamily::Gaussian, MaskFamily::Exponential] {
                    for with_enc in [false, true] {
                        let seed = (h * 1000 + w * 100 + heads * 10) as u64 + with_enc as u64;
                        let attn = oracle_layer(heads, family, SoftmaxBase::Two, h.max(w), seed);
                        let x = random_grid(2, h, w, 4, seed ^ 0xabc);
                        let enc = with_enc.then(|| random_grid(2, h, w, 4, seed ^ 0xdef));
                        let diff = axial_vs_oracle_max_diff(&attn, &x, enc.as_ref());
                        if diff > TOL {
                            return Err(format!(
                                "max diff {diff:.3e} > {TOL:.0e} at {h}x{w} heads={heads} {family:?} enc={with_enc}"
                            ));
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 4 * 4 * 2 * 2 * 2);
    Ok(())
}

/// Run the layer and the oracle on the same input; returns the max absolute
/// elementwise difference across `b` batch elements.
pub fn axial_vs_oracle_max_diff(
    attn: &GaussianAttention<f64>,
    x: &Tensor<f64>,
    enc: Option<&Tensor<f64>>,
) -> f64 {
    let shape = x.shape().to_vec();
    let (b, h, w, d) = (shape[0], shape[1], shape[2], shape[3]);
    let weights = extract_weights(attn);
    let got = attn.forward(x, enc).expect("layer forward").to_vec();
    let xv = x.to_vec();
    let ev = enc.map(|e| e.to_vec());
    let mut max_diff: f64 = 0.0;
    for bi in 0..b {
        let sl = &xv[bi * h * w * d..(bi + 1) * h * w * d];
        let es = ev.as_ref().map(|e| &e[bi * h * w * d..(bi + 1) * h * w * d]);
        let want = axial_oracle(sl, h, w, &weights, es);
        for (i, wv) in want.iter().enumerate() {
            max_diff = max_diff.max((got[bi * h * w * d + i] - wv).abs());
        }
    }
    max_diff
}
