//! 2-D convolution (cross-correlation), grouped/depthwise variants, and
//! fractionally-strided (transpose) convolution.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn conv_out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (input + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

/// Inclusive output-column range [lo, hi] for which the input column
/// ox * stride + kx - padding stays inside [0, w). Empty when lo > hi.
fn ox_range(ow: usize, w: usize, stride: usize, kx: usize, padding: usize) -> (usize, usize) {
    let lo = if padding > kx {
        (padding - kx).div_ceil(stride)
    } else {
        0
    };
    if w + padding <= kx {
        return (1, 0);
    }
    let hi = ((w - 1 + padding - kx) / stride).min(ow.saturating_sub(1));
    if lo >= ow {
        (1, 0)
    } else {
        (lo, hi)
    }
}

impl<T: Real> Tensor<T> {
    /// x: [B, C, H, W], kernel: [O, C/groups, k, k]. Cross-correlation
    /// semantics, zero padding.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("need 4-d input and kernel, got {:?} and {:?}", xs, ks),
            ));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, ck, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kh != kw || stride == 0 || groups == 0 || c % groups != 0 || o % groups != 0 || ck != c / groups {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {:?} incompatible with input {:?} (groups {groups})", ks, xs),
            ));
        }
        let (oh, ow) = match (conv_out_extent(h, kh, stride, padding), conv_out_extent(w, kw, stride, padding)) {
            (Some(oh), Some(ow)) => (oh, ow),
            _ => {
                return Err(Error::dim(
                    "conv2d",
                    format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"),
                ))
            }
        };
        let cg = c / groups; // input channels per group
        let og = o / groups;

        let out = {
            let xref = self.data();
            let x: &[T] = &xref;
            let kref = kernel.data();
            let k: &[T] = &kref;
            let mut out = vec![T::zero(); b * o * oh * ow];
            out.par_chunks_mut(oh * ow).enumerate().for_each(|(bo, plane)| {
                let bi = bo / o;
                let oc = bo % o;
                let gi = oc / og;
                for cl in 0..cg {
                    let ci = gi * cg + cl;
                    let xplane = &x[((bi * c + ci) * h) * w..((bi * c + ci) * h + h) * w];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let kv = k[((oc * cg + cl) * kh + ky) * kw + kx];
                            let (lo, hi) = ox_range(ow, w, stride, kx, padding);
                            if lo > hi {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                                let orow = &mut plane[oy * ow..(oy + 1) * ow];
                                let ix0 = lo * stride + kx - padding;
                                if stride == 1 {
                                    let src = &xrow[ix0..ix0 + (hi - lo + 1)];
                                    for (dst, &xv) in orow[lo..=hi].iter_mut().zip(src) {
                                        *dst = *dst + kv * xv;
                                    }
                                } else {
                                    let mut ix = ix0;
                                    for dst in orow[lo..=hi].iter_mut() {
                                        *dst = *dst + kv * xrow[ix];
                                        ix += stride;
                                    }
                                }
                            }
                        }
                    }
                }
            });
            out
        };

        Tensor::from_op(
            "conv2d",
            vec![b, o, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, parents| {
                let xref = parents[0].data();
                let x: &[T] = &xref;
                let kref = parents[1].data();
                let k: &[T] = &kref;

                // dX: scatter each output row back through the taps; planes
                // are partitioned per (batch, input channel), so writes stay
                // local to the worker.
                let mut gx = vec![T::zero(); b * c * h * w];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(bc, plane)| {
                    let bi = bc / c;
                    let ci = bc % c;
                    let gi = ci / cg;
                    let cl = ci % cg;
                    for ol in 0..og {
                        let oc = gi * og + ol;
                        let gplane = &g[((bi * o + oc) * oh) * ow..((bi * o + oc) * oh + oh) * ow];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let kv = k[((oc * cg + cl) * kh + ky) * kw + kx];
                                let (lo, hi) = ox_range(ow, w, stride, kx, padding);
                                if lo > hi {
                                    continue;
                                }
                                for oy in 0..oh {
                                    let iy = (oy * stride + ky) as isize - padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    let grow = &gplane[oy * ow..(oy + 1) * ow];
                                    let xrow = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                                    let ix0 = lo * stride + kx - padding;
                                    if stride == 1 {
                                        let dst = &mut xrow[ix0..ix0 + (hi - lo + 1)];
                                        for (d, &gv) in dst.iter_mut().zip(&grow[lo..=hi]) {
                                            *d = *d + kv * gv;
                                        }
                                    } else {
                                        let mut ix = ix0;
                                        for &gv in grow[lo..=hi].iter() {
                                            xrow[ix] = xrow[ix] + kv * gv;
                                            ix += stride;
                                        }
                                    }
                                }
                            }
                        }
                    }
                });

                // dK: per-tap dot products of output rows with input rows.
                let mut gk = vec![T::zero(); o * cg * kh * kw];
                gk.par_chunks_mut(cg * kh * kw).enumerate().for_each(|(oc, kplane)| {
                    let gi = oc / og;
                    for cl in 0..cg {
                        let ci = gi * cg + cl;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (lo, hi) = ox_range(ow, w, stride, kx, padding);
                                if lo > hi {
                                    continue;
                                }
                                let mut acc = T::zero();
                                for bi in 0..b {
                                    let gplane = &g[((bi * o + oc) * oh) * ow..((bi * o + oc) * oh + oh) * ow];
                                    let xplane = &x[((bi * c + ci) * h) * w..((bi * c + ci) * h + h) * w];
                                    for oy in 0..oh {
                                        let iy = (oy * stride + ky) as isize - padding as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                                        let xrow = &xplane[iy as usize * w..(iy as usize + 1) * w];
                                        let ix0 = lo * stride + kx - padding;
                                        if stride == 1 {
                                            for (&gv, &xv) in grow[lo..=hi].iter().zip(&xrow[ix0..]) {
                                                acc = acc + gv * xv;
                                            }
                                        } else {
                                            let mut ix = ix0;
                                            for &gv in grow[lo..=hi].iter() {
                                                acc = acc + gv * xrow[ix];
                                                ix += stride;
                                            }
                                        }
                                    }
                                }
                                kplane[(cl * kh + ky) * kw + kx] = acc;
                            }
                        }
                    }
                });

                drop(xref);
                drop(kref);
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gk);
            }),
        )
    }

    /// Fractionally-strided convolution. x: [B, C, H, W], kernel:
    /// [C, O, k, k], output extents (H-1)*stride + k. With k == stride == 2
    /// this exactly doubles the spatial extents.
    pub fn conv_transpose2d(&self, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ks = kernel.shape();
        if xs.len() != 4 || ks.len() != 4 || ks[0] != xs[1] {
            return Err(Error::dim(
                "conv_transpose2d",
                format!("input {:?} and kernel {:?} incompatible", xs, ks),
            ));
        }
        if stride == 0 {
            return Err(Error::Config("conv_transpose2d stride must be positive".into()));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ks[1], ks[2], ks[3]);
        if kh != kw {
            return Err(Error::dim("conv_transpose2d", format!("non-square kernel {:?}", ks)));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;

        let out = {
            let xref = self.data();
            let x: &[T] = &xref;
            let kref = kernel.data();
            let k: &[T] = &kref;
            let mut out = vec![T::zero(); b * o * oh * ow];
            out.par_chunks_mut(oh * ow).enumerate().for_each(|(bo, plane)| {
                let bi = bo / o;
                let oc = bo % o;
                for (flat, dst) in plane.iter_mut().enumerate() {
                    let oy = flat / ow;
                    let ox = flat % ow;
                    let mut acc = T::zero();
                    for ci in 0..c {
                        for ky in 0..kh {
                            if oy < ky || !(oy - ky).is_multiple_of(stride) {
                                continue;
                            }
                            let iy = (oy - ky) / stride;
                            if iy >= h {
                                continue;
                            }
                            for kx in 0..kw {
                                if ox < kx || !(ox - kx).is_multiple_of(stride) {
                                    continue;
                                }
                                let ix = (ox - kx) / stride;
                                if ix >= w {
                                    continue;
                                }
                                let xv = x[((bi * c + ci) * h + iy) * w + ix];
                                let kv = k[((ci * o + oc) * kh + ky) * kw + kx];
                                acc = acc + xv * kv;
                            }
                        }
                    }
                    *dst = acc;
                }
            });
            out
        };

        Tensor::from_op(
            "conv_transpose2d",
            vec![b, o, oh, ow],
            out,
            vec![self.clone(), kernel.clone()],
            Box::new(move |g, parents| {
                let xref = parents[0].data();
                let x: &[T] = &xref;
                let kref = parents[1].data();
                let k: &[T] = &kref;

                let mut gx = vec![T::zero(); b * c * h * w];
                gx.par_chunks_mut(h * w).enumerate().for_each(|(bc, plane)| {
                    let bi = bc / c;
                    let ci = bc % c;
                    for (flat, dst) in plane.iter_mut().enumerate() {
                        let iy = flat / w;
                        let ix = flat % w;
                        let mut acc = T::zero();
                        for oc in 0..o {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let oy = iy * stride + ky;
                                    let ox = ix * stride + kx;
                                    let gv = g[((bi * o + oc) * oh + oy) * ow + ox];
                                    let kv = k[((ci * o + oc) * kh + ky) * kw + kx];
                                    acc = acc + gv * kv;
                                }
                            }
                        }
                        *dst = acc;
                    }
                });

                let mut gk = vec![T::zero(); c * o * kh * kw];
                gk.par_chunks_mut(o * kh * kw).enumerate().for_each(|(ci, kplane)| {
                    for oc in 0..o {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let mut acc = T::zero();
                                for bi in 0..b {
                                    for iy in 0..h {
                                        for ix in 0..w {
                                            let xv = x[((bi * c + ci) * h + iy) * w + ix];
                                            let gv = g[((bi * o + oc) * oh + iy * stride + ky) * ow
                                                + ix * stride
                                                + kx];
                                            acc = acc + xv * gv;
                                        }
                                    }
                                }
                                kplane[(oc * kh + ky) * kw + kx] = acc;
                            }
                        }
                    }
                });

                drop(xref);
                drop(kref);
                parents[0].accumulate_grad(&gx);
                parents[1].accumulate_grad(&gk);
            }),
        )
    }
}
