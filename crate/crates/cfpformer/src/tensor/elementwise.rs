//! Elementwise and reduction ops.

use rand::Rng;

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                parents[1].accumulate_grad(g);
            }),
        )
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                parents[0].accumulate_grad(g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                parents[1].accumulate_grad(&neg);
            }),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let ga: Vec<T> = g.iter().zip(b.iter()).map(|(&gi, &bi)| gi * bi).collect();
                let gb: Vec<T> = g.iter().zip(a.iter()).map(|(&gi, &ai)| gi * ai).collect();
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        )
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data().iter())
            .map(|(&a, &b)| a / b)
            .collect();
        Tensor::from_op(
            "div",
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                let ga: Vec<T> = g.iter().zip(b.iter()).map(|(&gi, &bi)| gi / bi).collect();
                let gb: Vec<T> = g
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(&gi, (&ai, &bi))| -gi * ai / (bi * bi))
                    .collect();
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.scale(-T::one())
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<T> = g.iter().map(|&v| v * c).collect();
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn add_scalar(&self, c: T) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::from_op(
            "add_scalar",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        )
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&v| v.exp()).collect();
        let saved = data.clone();
        Tensor::from_op(
            "exp",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<T> = g.iter().zip(saved.iter()).map(|(&gi, &yi)| gi * yi).collect();
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        let data = self.data().iter().map(|&v| v.ln()).collect();
        Tensor::from_op(
            "ln",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, parents| {
                let x = parents[0].data();
                let gx: Vec<T> = g.iter().zip(x.iter()).map(|(&gi, &xi)| gi / xi).collect();
                drop(x);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Sum of all elements, as a scalar tensor of shape [1].
    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let mut acc = T::zero();
        for &v in self.data().iter() {
            acc = acc + v;
        }
        let n = self.numel();
        Tensor::from_op(
            "sum_all",
            vec![1],
            vec![acc],
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx = vec![g[0]; n];
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = T::from_f64(self.numel() as f64);
        self.sum_all()?.scale(T::one() / n)
    }

    /// Add a bias vector over the last axis: x[..., d] + b[d].
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or_else(|| Error::dim("add_bias", "0-d input"))?;
        if bias.shape() != [d] {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} vs last axis {} of {:?}", bias.shape(), d, self.shape()),
            ));
        }
        let bd = bias.to_vec();
        let data = self
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bd.iter()).map(|(&x, &b)| x + b))
            .collect();
        Tensor::from_op(
            "add_bias",
            self.shape().to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(g);
                let mut gb = vec![T::zero(); d];
                for row in g.chunks(d) {
                    for (s, &gi) in gb.iter_mut().zip(row) {
                        *s = *s + gi;
                    }
                }
                parents[1].accumulate_grad(&gb);
            }),
        )
    }

    /// Add a per-channel bias to a [B, C, H, W] tensor: x + b[c].
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 || bias.shape() != [xs[1]] {
            return Err(Error::dim(
                "add_channel_bias",
                format!("bias {:?} vs channel axis of {:?}", bias.shape(), xs),
            ));
        }
        let (c, hw) = (xs[1], xs[2] * xs[3]);
        let bd = bias.to_vec();
        let data = self
            .data()
            .chunks(hw)
            .enumerate()
            .flat_map(|(i, plane)| {
                let b = bd[i % c];
                plane.iter().map(move |&v| v + b)
            })
            .collect();
        Tensor::from_op(
            "add_channel_bias",
            xs.to_vec(),
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                parents[0].accumulate_grad(g);
                let mut gb = vec![T::zero(); c];
                for (i, plane) in g.chunks(hw).enumerate() {
                    let mut acc = T::zero();
                    for &v in plane {
                        acc = acc + v;
                    }
                    gb[i % c] = gb[i % c] + acc;
                }
                parents[1].accumulate_grad(&gb);
            }),
        )
    }

    /// Stochastic depth over the leading (batch) axis. In training, each
    /// sample's value is zeroed with probability `rate` and survivors are
    /// scaled by 1/(1-rate); in inference this is the identity.
    pub fn drop_path<R: Rng>(&self, rate: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("drop_path rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            // Identity node so the graph still links through.
            return self.scale(T::one());
        }
        let batch = self.shape()[0];
        let per = self.numel() / batch;
        let keep = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..batch)
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = self
            .data()
            .chunks(per)
            .zip(mask.iter())
            .flat_map(|(chunk, &m)| chunk.iter().map(move |&v| v * m))
            .collect();
        Tensor::from_op(
            "drop_path",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let gx: Vec<T> = g
                    .chunks(per)
                    .zip(mask.iter())
                    .flat_map(|(chunk, &m)| chunk.iter().map(move |&v| v * m))
                    .collect();
                parents[0].accumulate_grad(&gx);
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn add_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[3, 2]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn drop_path_rate_zero_is_identity() {
        let x = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = x.drop_path(0.0, true, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn drop_path_inference_is_identity() {
        let x = Tensor::<f32>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = x.drop_path(0.9, false, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn drop_path_rejects_rate_one() {
        let x = Tensor::<f32>::zeros(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(x.drop_path(1.0, true, &mut rng).is_err());
    }

    #[test]
    fn drop_path_survivor_fraction() {
        // rate 0.5 over 10_000 samples: survivors within 0.5 +- 0.02
        let n = 10_000;
        let x = Tensor::<f32>::full(&[n], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = x.drop_path(0.5, true, &mut rng).unwrap();
        let survivors = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "survivor fraction {frac}");
        // survivors scaled by 1/(1-rate)
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-6));
    }

    #[test]
    fn div_backward_matches_analytic() {
        let a = Tensor::<f64>::param(&[2], vec![1.0, 4.0]).unwrap();
        let b = Tensor::<f64>::param(&[2], vec![2.0, 8.0]).unwrap();
        let loss = a.div(&b).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.5, 0.125]);
        assert_eq!(b.grad().unwrap(), vec![-0.25, -0.0625]);
    }
}
