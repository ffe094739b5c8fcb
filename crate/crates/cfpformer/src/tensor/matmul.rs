//! Batched matrix multiplication.

use rayon::prelude::*;

use super::{Real, Tensor};
use crate::error::{Error, Result};

impl<T: Real> Tensor<T> {
    /// [.., M, K] x [.., K, N] -> [.., M, N]; leading batch extents must
    /// agree exactly. Plain 2-D matmul is the batch-of-one case.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ashape, bshape) = (self.shape(), other.shape());
        if ashape.len() < 2 || bshape.len() < 2 || ashape.len() != bshape.len() {
            return Err(Error::dim(
                "matmul",
                format!("ranks of {:?} and {:?} incompatible", ashape, bshape),
            ));
        }
        let nd = ashape.len();
        let (m, k) = (ashape[nd - 2], ashape[nd - 1]);
        let (k2, n) = (bshape[nd - 2], bshape[nd - 1]);
        if k != k2 || ashape[..nd - 2] != bshape[..nd - 2] {
            return Err(Error::dim(
                "matmul",
                format!("shapes {:?} and {:?} do not compose", ashape, bshape),
            ));
        }
        let batch: usize = ashape[..nd - 2].iter().product();

        let out = {
            let a = self.data();
            let b = other.data();
            mm_batch(&a, &b, batch, m, k, n)
        };

        let mut shape = ashape[..nd - 2].to_vec();
        shape.push(m);
        shape.push(n);
        Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents| {
                let a = parents[0].data();
                let b = parents[1].data();
                // dA = g . B^T, dB = A^T . g
                let ga = mm_batch_nt(g, &b, batch, m, n, k);
                let gb = mm_batch_tn(&a, g, batch, m, k, n);
                drop(a);
                drop(b);
                parents[0].accumulate_grad(&ga);
                parents[1].accumulate_grad(&gb);
            }),
        )
    }
}

/// C[b] = A[b] (m x k) . B[b] (k x n)
fn mm_batch<T: Real>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    out.par_chunks_mut(n).enumerate().for_each(|(row, orow)| {
        let bi = row / m;
        let mi = row % m;
        let arow = &a[(bi * m + mi) * k..(bi * m + mi + 1) * k];
        let bmat = &b[bi * k * n..(bi + 1) * k * n];
        for (ki, &av) in arow.iter().enumerate() {
            let brow = &bmat[ki * n..(ki + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    });
    out
}

/// C[b] = G[b] (m x n) . B[b]^T (n x k)  -- B stored (k x n)
fn mm_batch_nt<T: Real>(g: &[T], b: &[T], batch: usize, m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * k];
    out.par_chunks_mut(k).enumerate().for_each(|(row, orow)| {
        let bi = row / m;
        let mi = row % m;
        let grow = &g[(bi * m + mi) * n..(bi * m + mi + 1) * n];
        let bmat = &b[bi * k * n..(bi + 1) * k * n];
        for (ki, o) in orow.iter_mut().enumerate() {
            let brow = &bmat[ki * n..(ki + 1) * n];
            let mut acc = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                acc = acc + gv * bv;
            }
            *o = acc;
        }
    });
    out
}

/// C[b] = A[b]^T (k x m) . G[b] (m x n)  -- A stored (m x k)
fn mm_batch_tn<T: Real>(a: &[T], g: &[T], batch: usize, m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * k * n];
    out.par_chunks_mut(k * n).enumerate().for_each(|(bi, omat)| {
        let amat = &a[bi * m * k..(bi + 1) * m * k];
        let gmat = &g[bi * m * n..(bi + 1) * m * n];
        for mi in 0..m {
            let arow = &amat[mi * k..(mi + 1) * k];
            let grow = &gmat[mi * n..(mi + 1) * n];
            for (ki, &av) in arow.iter().enumerate() {
                let orow = &mut omat[ki * n..(ki + 1) * n];
                for (o, &gv) in orow.iter_mut().zip(grow) {
                    *o = *o + av * gv;
                }
            }
        }
    });
    out
}
