//! Finite-difference gradient harness shared by the gradient suite and the
//! acceptance target. The checker re-runs only forward passes, so it stays
//! independent of the reverse-mode engine it validates.
//!
//! 64-bit cases self-check analytic gradients against central differences
//! at 1e-5. For 32-bit cases, differencing directly in f32 drowns the
//! signal in rounding noise well before the 1e-3 tolerance, so analytic
//! f32 gradients are compared against finite differences taken on an f64
//! twin built from the same seeds.

use cfpformer::attention::{AttentionConfig, AttentionVariant, GaussianAttention, MaskFamily};
use cfpformer::decoder::CfpConfig;
use cfpformer::gradcheck::{check_gradients, check_gradients_sampled, GradCheckSettings};
use cfpformer::loss::{DiceCrossEntropy, Loss};
use cfpformer::model::{CfpFormer, ModelConfig};
use cfpformer::nn::Params;
use cfpformer::rng::SeedSplitter;
use cfpformer::tensor::Real;
use cfpformer::{Result, SoftmaxBase, Tensor};

type TestResult = std::result::Result<(), String>;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_param<T: Real>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect()).unwrap()
}

/// Fixed probe weights turn a tensor-valued op into a scalar loss that is
/// sensitive to every output element (a plain sum would cancel softmax and
/// norm gradients to zero).
fn probe<T: Real>(y: &Tensor<T>, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = y.numel();
    let w = Tensor::from_vec(
        y.shape(),
        (0..n).map(|_| T::from_f64(rng.gen_range(-1.0..1.0))).collect(),
    )?;
    y.mul(&w)?.sum_all()
}

pub struct OpCase<T: Real> {
    pub name: &'static str,
    pub params: Vec<Tensor<T>>,
    pub forward: Box<dyn Fn(&[Tensor<T>]) -> Result<Tensor<T>>>,
}

fn op_cases<T: Real>() -> Vec<OpCase<T>> {
    let mut cases: Vec<OpCase<T>> = Vec::new();
    let mut push = |name: &'static str,
                    params: Vec<Tensor<T>>,
                    f: Box<dyn Fn(&[Tensor<T>]) -> Result<Tensor<T>>>| {
        cases.push(OpCase { name, params, forward: f });
    };

    let a = || rand_param::<T>(&[2, 3], 1, -1.0, 1.0);
    let b = || rand_param::<T>(&[2, 3], 2, -1.0, 1.0);
    push("add", vec![a(), b()], Box::new(|p| probe(&p[0].add(&p[1])?, 10)));
    push("sub", vec![a(), b()], Box::new(|p| probe(&p[0].sub(&p[1])?, 11)));
    push("mul", vec![a(), b()], Box::new(|p| probe(&p[0].mul(&p[1])?, 12)));
    push(
        "div",
        vec![a(), rand_param(&[2, 3], 3, 0.5, 2.0)],
        Box::new(|p| probe(&p[0].div(&p[1])?, 13)),
    );
    push("neg", vec![a()], Box::new(|p| probe(&p[0].neg()?, 14)));
    push("scale", vec![a()], Box::new(|p| probe(&p[0].scale(T::from_f64(1.7))?, 15)));
    push("add_scalar", vec![a()], Box::new(|p| probe(&p[0].add_scalar(T::from_f64(0.3))?, 16)));
    push("exp", vec![a()], Box::new(|p| probe(&p[0].exp()?, 17)));
    push(
        "ln",
        vec![rand_param(&[2, 3], 4, 0.2, 3.0)],
        Box::new(|p| probe(&p[0].ln()?, 18)),
    );
    push("gelu", vec![rand_param(&[2, 5], 5, -2.0, 2.0)], Box::new(|p| probe(&p[0].gelu()?, 19)));
    push("mean_all", vec![a()], Box::new(|p| p[0].mean_all()));

    push(
        "matmul",
        vec![rand_param(&[2, 3], 6, -1.0, 1.0), rand_param(&[3, 4], 7, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].matmul(&p[1])?, 20)),
    );
    push(
        "matmul_batched",
        vec![rand_param(&[2, 2, 3, 4], 8, -1.0, 1.0), rand_param(&[2, 2, 4, 2], 9, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].matmul(&p[1])?, 21)),
    );
    push(
        "add_bias",
        vec![rand_param(&[3, 4], 22, -1.0, 1.0), rand_param(&[4], 23, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].add_bias(&p[1])?, 24)),
    );
    push(
        "add_channel_bias",
        vec![rand_param(&[1, 3, 2, 2], 25, -1.0, 1.0), rand_param(&[3], 26, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].add_channel_bias(&p[1])?, 27)),
    );

    push(
        "softmax_base2",
        vec![rand_param(&[3, 5], 30, -2.0, 2.0)],
        Box::new(|p| probe(&p[0].softmax_rows(SoftmaxBase::Two)?, 31)),
    );
    push(
        "softmax_natural",
        vec![rand_param(&[3, 5], 32, -2.0, 2.0)],
        Box::new(|p| probe(&p[0].softmax_rows(SoftmaxBase::Natural)?, 33)),
    );
    push(
        "log_softmax",
        vec![rand_param(&[3, 5], 34, -2.0, 2.0)],
        Box::new(|p| probe(&p[0].log_softmax_rows()?, 35)),
    );
    push(
        "layer_norm",
        vec![
            rand_param(&[2, 3, 6], 36, -1.5, 1.5),
            rand_param(&[6], 37, 0.5, 1.5),
            rand_param(&[6], 38, -0.5, 0.5),
        ],
        Box::new(|p| probe(&p[0].layer_norm(&p[1], &p[2])?, 39)),
    );

    push(
        "conv2d",
        vec![rand_param(&[1, 2, 5, 5], 40, -1.0, 1.0), rand_param(&[3, 2, 3, 3], 41, -0.5, 0.5)],
        Box::new(|p| probe(&p[0].conv2d(&p[1], 1, 1, 1)?, 42)),
    );
    push(
        "conv2d_strided",
        vec![rand_param(&[1, 2, 6, 6], 43, -1.0, 1.0), rand_param(&[2, 2, 3, 3], 44, -0.5, 0.5)],
        Box::new(|p| probe(&p[0].conv2d(&p[1], 2, 1, 1)?, 45)),
    );
    push(
        "conv2d_depthwise",
        vec![rand_param(&[1, 3, 4, 4], 46, -1.0, 1.0), rand_param(&[3, 1, 3, 3], 47, -0.5, 0.5)],
        Box::new(|p| probe(&p[0].conv2d(&p[1], 1, 1, 3)?, 48)),
    );
    push(
        "conv_transpose2d",
        vec![rand_param(&[1, 3, 3, 3], 49, -1.0, 1.0), rand_param(&[3, 2, 2, 2], 50, -0.5, 0.5)],
        Box::new(|p| probe(&p[0].conv_transpose2d(&p[1], 2)?, 51)),
    );
    push(
        "bilinear_resize",
        vec![rand_param(&[1, 2, 4, 4], 52, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].bilinear_resize(7, 5)?, 53)),
    );
    push(
        "bilinear_upsample_2x",
        vec![rand_param(&[1, 2, 3, 3], 54, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].bilinear_upsample_2x()?, 55)),
    );

    push(
        "reshape_permute",
        vec![rand_param(&[2, 3, 4], 56, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].permute(&[2, 0, 1])?.reshape(&[4, 6])?, 57)),
    );
    push(
        "narrow",
        vec![rand_param(&[2, 5], 58, -1.0, 1.0)],
        Box::new(|p| probe(&p[0].narrow(1, 1, 3)?, 59)),
    );
    push(
        "concat",
        vec![rand_param(&[2, 2], 60, -1.0, 1.0), rand_param(&[2, 3], 61, -1.0, 1.0)],
        Box::new(|p| probe(&Tensor::concat(&[p[0].clone(), p[1].clone()], 1)?, 62)),
    );
    push(
        "drop_path_training",
        vec![rand_param(&[2, 2, 2, 3], 63, -1.0, 1.0)],
        Box::new(|p| {
            // fresh identically-seeded rng per call keeps the closure a
            // deterministic function of the parameters
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            probe(&p[0].drop_path(0.4, true, &mut rng)?, 64)
        }),
    );

    cases
}

fn attention_cases<T: Real>() -> Vec<OpCase<T>> {
    let mut cases: Vec<OpCase<T>> = Vec::new();
    for (name, variant, family) in [
        ("attention_axial_gaussian", AttentionVariant::AxialGaussian, MaskFamily::Gaussian),
        ("attention_axial_exponential", AttentionVariant::AxialGaussian, MaskFamily::Exponential),
        ("attention_full_gaussian", AttentionVariant::FullGaussian, MaskFamily::Gaussian),
        ("attention_mhsa", AttentionVariant::Mhsa, MaskFamily::Gaussian),
    ] {
        let cfg = AttentionConfig {
            embed_dim: 4,
            num_heads: 2,
            variant,
            family,
            softmax_base: SoftmaxBase::Two,
            lepe_kernel: 3,
            use_lepe: true,
        };
        let seeds = SeedSplitter::new(5);
        let mut params = Params::new();
        let attn = GaussianAttention::<T>::new(cfg, 3, &seeds, "gc", &mut params).unwrap();
        if let Some(conv) = &attn.lepe {
            let kernel = rand_param::<T>(&[4, 1, 3, 3], 70, -0.3, 0.3);
            conv.kernel.set_data(&kernel.to_vec()).unwrap();
        }
        let x = rand_param::<T>(&[1, 3, 3, 4], 71, -1.0, 1.0);
        let enc = rand_param::<T>(&[1, 3, 3, 4], 72, -1.0, 1.0);
        let mut tensors = params.tensors();
        tensors.push(x.clone());
        tensors.push(enc.clone());
        cases.push(OpCase {
            name,
            params: tensors,
            forward: Box::new(move |_| probe(&attn.forward(&x, Some(&enc))?, 73)),
        });
    }
    cases
}

fn loss_case<T: Real>() -> OpCase<T> {
    let logits = rand_param::<T>(&[2, 3, 4, 4], 80, -2.0, 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let targets: Vec<Vec<u8>> = (0..2).map(|_| (0..16).map(|_| rng.gen_range(0..3u8)).collect()).collect();
    let loss_fn = DiceCrossEntropy::default();
    let l = logits.clone();
    OpCase {
        name: "dice_cross_entropy",
        params: vec![logits],
        forward: Box::new(move |_| loss_fn.compute(&l, &targets, 3)),
    }
}

fn all_cases<T: Real>() -> Vec<OpCase<T>> {
    let mut all = op_cases::<T>();
    all.extend(attention_cases::<T>());
    all.push(loss_case::<T>());
    all
}

fn analytic_grads<T: Real>(case: &OpCase<T>) -> Vec<Vec<f64>> {
    for p in &case.params {
        p.zero_grad();
    }
    let loss = (case.forward)(&case.params).unwrap_or_else(|e| panic!("{}: {e}", case.name));
    loss.backward().unwrap();
    case.params
        .iter()
        .map(|p| {
            p.grad()
                .unwrap_or_else(|| vec![T::zero(); p.numel()])
                .iter()
                .map(|&v| Real::to_f64(v))
                .collect()
        })
        .collect()
}

/// Central finite differences on an f64 case at selected elements.
fn fd_grads_f64(case: &OpCase<f64>, indices: &[Vec<usize>], step: f64) -> Vec<Vec<(usize, f64)>> {
    let eval = || -> f64 { (case.forward)(&case.params).unwrap().item().unwrap() };
    let mut out = Vec::with_capacity(case.params.len());
    for (pi, p) in case.params.iter().enumerate() {
        let base = p.to_vec();
        let mut grads = Vec::with_capacity(indices[pi].len());
        for &i in &indices[pi] {
            let h = step * base[i].abs().max(1.0);
            let mut probe_data = base.clone();
            probe_data[i] = base[i] + h;
            p.set_data(&probe_data).unwrap();
            let fp = eval();
            probe_data[i] = base[i] - h;
            p.set_data(&probe_data).unwrap();
            let fm = eval();
            p.set_data(&base).unwrap();
            grads.push((i, (fp - fm) / (2.0 * h)));
        }
        out.push(grads);
    }
    out
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn compare_twin(
    name: &str,
    analytic: &[Vec<f64>],
    fd: &[Vec<(usize, f64)>],
    tol: f64,
) -> TestResult {
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for (pi, grads) in fd.iter().enumerate() {
        for &(i, g) in grads {
            worst = worst.max(rel_err(analytic[pi][i], g, 1e-4));
            checked += 1;
        }
    }
    if checked == 0 {
        return Err(format!("{name}: checked nothing"));
    }
    if worst >= tol {
        return Err(format!("{name}: rel. err {worst:.3e} >= {tol:.0e}"));
    }
    Ok(())
}

/// Every op case, analytic f64 against f64 central differences at 1e-5.
pub fn run_per_op_f64() -> TestResult {
    for case in &all_cases::<f64>() {
        let report =
            check_gradients(&case.params, || (case.forward)(&case.params), GradCheckSettings::f64_default())
                .map_err(|e| format!("{}: {e}", case.name))?;
        if report.checked == 0 {
            return Err(format!("{}: checked nothing", case.name));
        }
    }
    Ok(())
}

/// Every op case, analytic f32 against the f64 twin's differences at 1e-3.
pub fn run_per_op_f32() -> TestResult {
    let cases32 = all_cases::<f32>();
    let cases64 = all_cases::<f64>();
    for (c32, c64) in cases32.iter().zip(&cases64) {
        assert_eq!(c32.name, c64.name);
        let analytic = analytic_grads(c32);
        let indices: Vec<Vec<usize>> = c64.params.iter().map(|p| (0..p.numel()).collect()).collect();
        let fd = fd_grads_f64(c64, &indices, 1e-5);
        compare_twin(c32.name, &analytic, &fd, 1e-3)?;
    }
    Ok(())
}

fn model_case<T: Real>() -> OpCase<T> {
    let cfg = ModelConfig {
        decoder: CfpConfig::tiny(),
        input_size: 32,
        seed: 13,
        ..ModelConfig::default()
    };
    let model = CfpFormer::<T>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let image = Tensor::from_vec(
        &[1, 1, 32, 32],
        (0..32 * 32).map(|_| T::from_f64(rng.gen_range(0.0..1.0))).collect(),
    )
    .unwrap();
    let targets: Vec<Vec<u8>> = vec![(0..32 * 32).map(|_| rng.gen_range(0..4u8)).collect()];
    let loss_fn = DiceCrossEntropy::default();
    let num_classes = model.cfg.decoder.num_classes;
    let params = model.params.tensors();
    OpCase {
        name: "full_tiny_model",
        params,
        forward: Box::new(move |_| {
            let mut rng = ChaCha8Rng::seed_from_u64(91); // deterministic drop-path
            let logits = model.forward(&image, true, &mut rng)?;
            loss_fn.compute(&logits, &targets, num_classes)
        }),
    }
}

/// Same seeded element sampling as `check_gradients_sampled`, shared by the
/// f32 graph and its f64 twin.
fn sampled_indices(case: &OpCase<f64>, per_param: usize, seed: u64) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    case.params
        .iter()
        .map(|p| {
            let mut all: Vec<usize> = (0..p.numel()).collect();
            all.shuffle(&mut rng);
            all.truncate(per_param);
            all
        })
        .collect()
}

/// Full Tiny model, f64 verification mode, sampled elements per parameter.
pub fn run_full_model_f64() -> TestResult {
    let case = model_case::<f64>();
    let report = check_gradients_sampled(
        &case.params,
        || (case.forward)(&case.params),
        GradCheckSettings::f64_default(),
        2,
        92,
    )
    .map_err(|e| format!("full_tiny_model f64: {e}"))?;
    if report.checked < case.params.len() {
        return Err("full_tiny_model f64: too few elements checked".into());
    }
    Ok(())
}

/// Full Tiny model at 32-bit training precision against the f64 twin.
pub fn run_full_model_f32() -> TestResult {
    let case32 = model_case::<f32>();
    let case64 = model_case::<f64>();
    let analytic = analytic_grads(&case32);
    let indices = sampled_indices(&case64, 2, 92);
    let fd = fd_grads_f64(&case64, &indices, 1e-5);
    compare_twin("full_tiny_model f32", &analytic, &fd, 1e-3)
}
