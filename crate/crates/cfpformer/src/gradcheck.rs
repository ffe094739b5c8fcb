//! Central finite-difference gradient checking.
//!
//! This is the independent oracle for the autodiff engine: it only uses the
//! forward pass (re-run under perturbed parameters) and never touches
//! `backward`, so it stays independent of the implementation it verifies.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Base finite-difference step, scaled by max(|x|, 1) per element.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tol: f64,
    /// Absolute floor below which both gradients count as matching zero.
    pub floor: f64,
}

impl GradCheckSettings {
    /// 32-bit training precision: rel. err < 1e-3.
    pub fn f32_default() -> Self {
        Self {
            step: 5e-2,
            tol: 1e-3,
            floor: 1e-4,
        }
    }

    /// 64-bit verification mode: rel. err < 1e-5.
    pub fn f64_default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-5,
            floor: 1e-10,
        }
    }
}

/// Outcome of a gradient check: worst relative error seen and where.
#[derive(Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    pub checked: usize,
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Check analytic gradients of `forward` (a scalar-producing graph build)
/// against central finite differences, for every element of every listed
/// parameter.
pub fn check_gradients<T, F>(
    params: &[Tensor<T>],
    forward: F,
    settings: GradCheckSettings,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn() -> Result<Tensor<T>>,
{
    let all: Vec<Vec<usize>> = params.iter().map(|p| (0..p.numel()).collect()).collect();
    check_gradients_at(params, forward, settings, &all)
}

/// Like [`check_gradients`] but only at a seeded random sample of parameter
/// elements; used for whole-model checks where the full sweep is too slow.
pub fn check_gradients_sampled<T, F>(
    params: &[Tensor<T>],
    forward: F,
    settings: GradCheckSettings,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn() -> Result<Tensor<T>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<Vec<usize>> = params
        .iter()
        .map(|p| {
            let mut all: Vec<usize> = (0..p.numel()).collect();
            all.shuffle(&mut rng);
            all.truncate(per_param);
            all
        })
        .collect();
    check_gradients_at(params, forward, settings, &indices)
}

fn check_gradients_at<T, F>(
    params: &[Tensor<T>],
    forward: F,
    settings: GradCheckSettings,
    indices: &[Vec<usize>],
) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn() -> Result<Tensor<T>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = forward()?;
    loss.backward()?;
    let analytic: Vec<Vec<T>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![T::zero(); p.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_index: 0,
        checked: 0,
    };
    for (pi, p) in params.iter().enumerate() {
        let base = p.to_vec();
        for &i in &indices[pi] {
            let x = base[i].to_f64();
            let h = settings.step * x.abs().max(1.0);

            let mut plus = base.clone();
            plus[i] = T::from_f64(x + h);
            p.set_data(&plus)?;
            let fp = forward()?.item()?.to_f64();

            let mut minus = base.clone();
            minus[i] = T::from_f64(x - h);
            p.set_data(&minus)?;
            let fm = forward()?.item()?.to_f64();

            p.set_data(&base)?;

            let fd = (fp - fm) / (2.0 * h);
            let err = rel_err(analytic[pi][i].to_f64(), fd, settings.floor);
            report.checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_param = pi;
                report.worst_index = i;
            }
        }
    }
    if report.max_rel_err > settings.tol {
        return Err(Error::Numeric {
            op: "gradcheck",
            detail: format!(
                "rel. err {:.3e} > tol {:.1e} at param {} index {} ({} elements checked)",
                report.max_rel_err, settings.tol, report.worst_param, report.worst_index, report.checked
            ),
        });
    }
    Ok(report)
}
