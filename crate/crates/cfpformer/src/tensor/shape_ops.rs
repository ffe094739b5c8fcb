//! Layout ops: reshape, permute, concat, narrow.

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Copy `src` (laid out per `shape`) into the axis order given by `axes`,
/// walking an odometer over the output index space so no per-element
/// division or index map is needed.
fn permute_copy<T: Copy>(src: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    if numel == 0 {
        return (out_shape, out);
    }
    let nd = out_shape.len();
    let inner = out_shape[nd - 1];
    let inner_stride = perm_strides[nd - 1];
    let mut idx = vec![0usize; nd - 1];
    let mut base = 0usize;
    loop {
        let mut src_i = base;
        for _ in 0..inner {
            out.push(src[src_i]);
            src_i += inner_stride;
        }
        // advance the odometer over the outer axes
        let mut axis = nd - 1;
        loop {
            if axis == 0 {
                return (out_shape, out);
            }
            axis -= 1;
            idx[axis] += 1;
            base += perm_strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= perm_strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape(), shape),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| parents[0].accumulate_grad(g)),
        )
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::dim(
                "permute",
                format!("axes {:?} are not a permutation of 0..{}", axes, nd),
            ));
        }
        let (out_shape, data) = {
            let src = self.data();
            permute_copy(&src, self.shape(), axes)
        };
        // gradient of a permutation is the inverse permutation
        let mut inverse = vec![0usize; nd];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let grad_shape = out_shape.clone();
        Tensor::from_op(
            "permute",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let (_, gx) = permute_copy(g, &grad_shape, &inverse);
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Slice `len` extents starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("axis {axis} range {start}..{} of {:?}", start + len, shape),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis];
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        drop(src);
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let total = self.numel();
        Tensor::from_op(
            "narrow",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, parents| {
                let mut gx = vec![T::zero(); total];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let srcb = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[srcb..srcb + len * inner]);
                }
                parents[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let nd = first.ndim();
        if axis >= nd {
            return Err(Error::dim("concat", format!("axis {axis} of {nd}-d tensors")));
        }
        let mut total_axis = 0;
        for p in parts {
            if p.ndim() != nd
                || p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::dim(
                    "concat",
                    format!("shapes {:?} and {:?} disagree off axis {axis}", first.shape(), p.shape()),
                ));
            }
            total_axis += p.shape()[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total_axis;

        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let pa = p.shape()[axis];
                let src = p.data();
                data.extend_from_slice(&src[o * pa * inner..(o + 1) * pa * inner]);
            }
        }
        let axis_sizes: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Tensor::from_op(
            "concat",
            out_shape,
            data,
            parts.to_vec(),
            Box::new(move |g, parents| {
                for (pi, parent) in parents.iter().enumerate() {
                    let pa = axis_sizes[pi];
                    let offset: usize = axis_sizes[..pi].iter().sum();
                    let mut gp = Vec::with_capacity(outer * pa * inner);
                    for o in 0..outer {
                        let base = (o * total_axis + offset) * inner;
                        gp.extend_from_slice(&g[base..base + pa * inner]);
                    }
                    parent.accumulate_grad(&gp);
                }
            }),
        )
    }
}
