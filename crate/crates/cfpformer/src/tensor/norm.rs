//! Normalization and activation ops: softmax (natural and base-2 variants),
//! log-softmax, layer norm, gelu.

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Exponent base used inside softmax. The base-2 variant mirrors the
/// log2-softmax attention scoring; it equals natural softmax of the input
/// scaled by ln 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SoftmaxBase {
    Natural,
    Two,
}

impl SoftmaxBase {
    fn ln_base(self) -> f64 {
        match self {
            SoftmaxBase::Natural => 1.0,
            SoftmaxBase::Two => std::f64::consts::LN_2,
        }
    }
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

impl<T: Real> Tensor<T> {
    /// Row-wise softmax over the last axis. Max-subtraction keeps it
    /// overflow-safe for any finite input.
    pub fn softmax_rows(&self, base: SoftmaxBase) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("softmax_rows", "0-d input"))?;
        if d == 0 {
            return Err(Error::dim("softmax_rows", "empty last axis"));
        }
        let ln_base = T::from_f64(base.ln_base());
        let mut data = self.to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = ((*v - max) * ln_base).exp();
                sum = sum + *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        let saved = data.clone();
        Tensor::from_op(
            "softmax_rows",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); g.len()];
                for ((grow, yrow), orow) in g.chunks(d).zip(saved.chunks(d)).zip(gx.chunks_mut(d)) {
                    let mut dot = T::zero();
                    for (&gi, &yi) in grow.iter().zip(yrow) {
                        dot = dot + gi * yi;
                    }
                    for ((o, &gi), &yi) in orow.iter_mut().zip(grow).zip(yrow) {
                        *o = ln_base * yi * (gi - dot);
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Natural log-softmax over the last axis (for cross-entropy).
    pub fn log_softmax_rows(&self) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("log_softmax_rows", "0-d input"))?;
        let mut data = self.to_vec();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row.iter() {
                sum = sum + (v - max).exp();
            }
            let log_z = max + sum.ln();
            for v in row.iter_mut() {
                *v = *v - log_z;
            }
        }
        let saved = data.clone();
        Tensor::from_op(
            "log_softmax_rows",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); g.len()];
                for ((grow, lrow), orow) in g.chunks(d).zip(saved.chunks(d)).zip(gx.chunks_mut(d)) {
                    let mut gsum = T::zero();
                    for &gi in grow {
                        gsum = gsum + gi;
                    }
                    for ((o, &gi), &li) in orow.iter_mut().zip(grow).zip(lrow) {
                        *o = gi - li.exp() * gsum;
                    }
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Layer norm over the last axis: normalize to mean 0 / unit variance
    /// (denominator sqrt(var + 1e-5)), then affine gain/bias.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::dim("layer_norm", "0-d input"))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!(
                    "gain {:?} / bias {:?} vs last axis {d} of {:?}",
                    gain.shape(),
                    bias.shape(),
                    self.shape()
                ),
            ));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_f64(d as f64);
        let gd = gain.to_vec();
        let bd = bias.to_vec();

        let src = self.data();
        let rows = src.len() / d;
        let mut data = vec![T::zero(); src.len()];
        let mut xhat = vec![T::zero(); src.len()];
        let mut inv_std = vec![T::zero(); rows];
        for (r, row) in src.chunks(d).enumerate() {
            let mut mean = T::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_d;
            let mut var = T::zero();
            for &v in row {
                let c = v - mean;
                var = var + c * c;
            }
            var = var * inv_d;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for (i, &v) in row.iter().enumerate() {
                let xh = (v - mean) * istd;
                xhat[r * d + i] = xh;
                data[r * d + i] = gd[i] * xh + bd[i];
            }
        }
        drop(src);
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); g.len()];
                let mut ggain = vec![T::zero(); d];
                let mut gbias = vec![T::zero(); d];
                for (r, grow) in g.chunks(d).enumerate() {
                    let xh = &xhat[r * d..(r + 1) * d];
                    // gh = g * gain; dx = istd * (gh - mean(gh) - xhat * mean(gh*xhat))
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for i in 0..d {
                        let gh = grow[i] * gd[i];
                        m1 = m1 + gh;
                        m2 = m2 + gh * xh[i];
                        ggain[i] = ggain[i] + grow[i] * xh[i];
                        gbias[i] = gbias[i] + grow[i];
                    }
                    m1 = m1 * inv_d;
                    m2 = m2 * inv_d;
                    let istd = inv_std[r];
                    for i in 0..d {
                        let gh = grow[i] * gd[i];
                        gx[r * d + i] = istd * (gh - m1 - xh[i] * m2);
                    }
                }
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&ggain);
                parents[2].accumulate_grad(&gbias);
            }),
        )
    }

    /// Gelu (tanh approximation).
    pub fn gelu(&self) -> Result<Tensor<T>> {
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| {
                let t = (c * (x + k * x * x * x)).tanh();
                half * x * (T::one() + t)
            })
            .collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let x = parents[0].data();
                let three = T::from_f64(3.0);
                let gx: Vec<T> = g
                    .iter()
                    .zip(x.iter())
                    .map(|(&gi, &xi)| {
                        let u = c * (xi + k * xi * xi * xi);
                        let t = u.tanh();
                        let du = c * (T::one() + three * k * xi * xi);
                        let dy = half * (T::one() + t) + half * xi * (T::one() - t * t) * du;
                        gi * dy
                    })
                    .collect();
                drop(x);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_row_is_uniform_in_both_bases() {
        let x = Tensor::<f32>::full(&[1, 4], 0.7);
        for base in [SoftmaxBase::Natural, SoftmaxBase::Two] {
            let y = x.softmax_rows(base).unwrap();
            for &v in y.data().iter() {
                assert!((v - 0.25).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn natural_softmax_closed_form() {
        let x = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let y = x.softmax_rows(SoftmaxBase::Natural).unwrap();
        let v = y.to_vec();
        assert!((v[0] - 0.26894).abs() < 1e-5);
        assert!((v[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn base_change_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![0.3, -1.2, 2.0, 4.0, 0.0, -0.5]).unwrap();
        let two = x.softmax_rows(SoftmaxBase::Two).unwrap();
        let nat = x
            .scale(std::f64::consts::LN_2)
            .unwrap()
            .softmax_rows(SoftmaxBase::Natural)
            .unwrap();
        for (&a, &b) in two.data().iter().zip(nat.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rows_sum_to_one_and_shift_invariant() {
        let x = Tensor::<f64>::from_vec(&[1, 5], vec![10.0, -3.0, 0.5, 2.2, 7.9]).unwrap();
        let shifted = x.add_scalar(123.0).unwrap();
        for base in [SoftmaxBase::Natural, SoftmaxBase::Two] {
            let y = x.softmax_rows(base).unwrap();
            let ys = shifted.softmax_rows(base).unwrap();
            let sum: f64 = y.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for (&a, &b) in y.data().iter().zip(ys.data().iter()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn softmax_overflow_safe() {
        let x = Tensor::<f32>::from_vec(&[1, 2], vec![1e4, 1e4 - 1.0]).unwrap();
        let y = x.softmax_rows(SoftmaxBase::Natural).unwrap();
        assert!(y.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn layer_norm_of_constant_row_is_bias() {
        let x = Tensor::<f32>::full(&[2, 4], 3.5);
        let gain = Tensor::<f32>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bias = Tensor::<f32>::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let y = x.layer_norm(&gain, &bias).unwrap();
        for row in y.data().chunks(4) {
            for (v, b) in row.iter().zip(bias.data().iter()) {
                assert_eq!(v, b);
            }
        }
    }

    #[test]
    fn gelu_zero_is_fixed_point() {
        let x = Tensor::<f32>::zeros(&[3]);
        let y = x.gelu().unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_softmax_matches_ln_of_softmax() {
        let x = Tensor::<f64>::from_vec(&[1, 4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let a = x.log_softmax_rows().unwrap();
        let b = x.softmax_rows(SoftmaxBase::Natural).unwrap().ln().unwrap();
        for (&u, &v) in a.data().iter().zip(b.data().iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}
