//! Training losses behind a named seam so alternatives can be swapped in
//! without touching the training loop.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub trait Loss<T: Real> {
    fn name(&self) -> &'static str;

    /// logits: [B, K, H, W]; targets: one mask of H*W class ids per sample.
    fn compute(&self, logits: &Tensor<T>, targets: &[Vec<u8>], num_classes: usize) -> Result<Tensor<T>>;
}

/// Mean over classes of (1 - soft Dice) plus pixel-wise cross-entropy.
pub struct DiceCrossEntropy {
    pub smooth: f64,
}

impl Default for DiceCrossEntropy {
    fn default() -> Self {
        Self { smooth: 1e-6 }
    }
}

fn one_hot<T: Real>(targets: &[Vec<u8>], hw: usize, k: usize) -> Result<Tensor<T>> {
    let b = targets.len();
    let mut data = vec![T::zero(); b * hw * k];
    for (bi, mask) in targets.iter().enumerate() {
        if mask.len() != hw {
            return Err(Error::dim(
                "one_hot",
                format!("mask length {} vs grid {}", mask.len(), hw),
            ));
        }
        for (p, &id) in mask.iter().enumerate() {
            if (id as usize) >= k {
                return Err(Error::Usage(format!("class id {id} out of range (num_classes {k})")));
            }
            data[(bi * hw + p) * k + id as usize] = T::one();
        }
    }
    Tensor::from_vec(&[b, hw, k], data)
}

impl<T: Real> Loss<T> for DiceCrossEntropy {
    fn name(&self) -> &'static str {
        "soft_dice_plus_cross_entropy"
    }

    fn compute(&self, logits: &Tensor<T>, targets: &[Vec<u8>], num_classes: usize) -> Result<Tensor<T>> {
        let ls = logits.shape().to_vec();
        if ls.len() != 4 || ls[1] != num_classes {
            return Err(Error::dim(
                "loss",
                format!("logits {:?} vs num_classes {}", ls, num_classes),
            ));
        }
        let (b, k, hw) = (ls[0], ls[1], ls[2] * ls[3]);
        if targets.len() != b {
            return Err(Error::dim(
                "loss",
                format!("{} targets for batch of {}", targets.len(), b),
            ));
        }
        // channels-last [B, HW, K] so softmax runs over classes
        let flat = logits.reshape(&[b, k, hw])?.permute(&[0, 2, 1])?;
        let onehot = one_hot::<T>(targets, hw, k)?;

        let logp = flat.log_softmax_rows()?;
        let npix = T::from_f64((b * hw) as f64);
        let ce = logp.mul(&onehot)?.sum_all()?.neg()?.scale(T::one() / npix)?;

        let probs = logp.exp()?;
        let smooth = T::from_f64(self.smooth);
        let mut dice_sum: Option<Tensor<T>> = None;
        for c in 0..k {
            let p = probs.narrow(2, c, 1)?;
            let g = onehot.narrow(2, c, 1)?;
            let inter = p.mul(&g)?.sum_all()?;
            let denom = p.sum_all()?.add(&g.sum_all()?)?.add_scalar(smooth)?;
            let dice = inter.scale(T::from_f64(2.0))?.add_scalar(smooth)?.div(&denom)?;
            dice_sum = Some(match dice_sum {
                Some(acc) => acc.add(&dice)?,
                None => dice,
            });
        }
        let mean_dice = dice_sum.expect("at least one class").scale(T::one() / T::from_f64(k as f64))?;
        let dice_loss = mean_dice.neg()?.add_scalar(T::one())?;
        ce.add(&dice_loss)
    }
}
