//! Differentiable bilinear resampling.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Per-axis sample: two source indices and the interpolation weight of the
/// second one. Half-pixel-center convention with edge clamping.
fn axis_taps(dst: usize, src: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
            let i0 = pos.floor();
            let w1 = pos - i0;
            let a = (i0 as isize).clamp(0, src as isize - 1) as usize;
            let b = (i0 as isize + 1).clamp(0, src as isize - 1) as usize;
            (a, b, w1)
        })
        .collect()
}

impl<T: Real> Tensor<T> {
    /// Resample [B, C, H, W] to [B, C, th, tw] with bilinear interpolation.
    pub fn bilinear_resize(&self, th: usize, tw: usize) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::dim("bilinear_resize", format!("need 4-d input, got {:?}", xs)));
        }
        if th == 0 || tw == 0 {
            return Err(Error::dim("bilinear_resize", "zero target extent"));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let ytaps = axis_taps(th, h);
        let xtaps = axis_taps(tw, w);

        let out = {
            let xref = self.data();
            let x: &[T] = &xref;
            let mut out = vec![T::zero(); b * c * th * tw];
            out.par_chunks_mut(th * tw).enumerate().for_each(|(bc, plane)| {
                let src = &x[bc * h * w..(bc + 1) * h * w];
                for (flat, dst) in plane.iter_mut().enumerate() {
                    let (y0, y1, wy) = ytaps[flat / tw];
                    let (x0, x1, wx) = xtaps[flat % tw];
                    let wy = T::from_f64(wy);
                    let wx = T::from_f64(wx);
                    let one = T::one();
                    let top = src[y0 * w + x0] * (one - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (one - wx) + src[y1 * w + x1] * wx;
                    *dst = top * (one - wy) + bot * wy;
                }
            });
            out
        };

        let (yt, xt) = (ytaps, xtaps);
        Tensor::from_op(
            "bilinear_resize",
            vec![b, c, th, tw],
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); b * c * h * w];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(bc, plane)| {
                    let gsrc = &g[bc * th * tw..(bc + 1) * th * tw];
                    for (flat, &gv) in gsrc.iter().enumerate() {
                        let (y0, y1, wy) = yt[flat / tw];
                        let (x0, x1, wx) = xt[flat % tw];
                        let wy1 = T::from_f64(wy);
                        let wx1 = T::from_f64(wx);
                        let one = T::one();
                        plane[y0 * w + x0] = plane[y0 * w + x0] + gv * (one - wy1) * (one - wx1);
                        plane[y0 * w + x1] = plane[y0 * w + x1] + gv * (one - wy1) * wx1;
                        plane[y1 * w + x0] = plane[y1 * w + x0] + gv * wy1 * (one - wx1);
                        plane[y1 * w + x1] = plane[y1 * w + x1] + gv * wy1 * wx1;
                    }
                });
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Double both spatial extents: output (i, j) samples the input at
    /// ((i+0.5)/2 - 0.5, (j+0.5)/2 - 0.5), edge-clamped.
    pub fn bilinear_upsample_2x(&self) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::dim("bilinear_upsample_2x", format!("need 4-d input, got {:?}", xs)));
        }
        self.bilinear_resize(xs[2] * 2, xs[3] * 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let x = Tensor::<f32>::full(&[1, 2, 3, 3], 4.25);
        let y = x.bilinear_upsample_2x().unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        for &v in y.data().iter() {
            assert!((v - 4.25).abs() < 1e-6);
        }
    }

    #[test]
    fn one_by_one_clamps_to_value() {
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 1], vec![7.0]).unwrap();
        let y = x.bilinear_upsample_2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![7.0; 4]);
    }

    #[test]
    fn row_interpolation_hand_values() {
        // 1x2 row [0, 4] -> [0, 1, 3, 4]
        let x = Tensor::<f32>::from_vec(&[1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let y = x.bilinear_upsample_2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        for row in y.data().chunks(4) {
            assert_eq!(row, &[0.0, 1.0, 3.0, 4.0]);
        }
    }
}
