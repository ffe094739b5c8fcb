//! Segmentation metrics: Dice similarity and exact Euclidean Hausdorff
//! distance over per-class pixel sets, plus CSV report assembly.

use crate::error::{Error, Result};

/// 2 |P ∩ G| / (|P| + |G|) over the class's pixel sets. Both sets empty
/// yields 1 (a perfect all-background prediction is not penalized); exactly
/// one empty yields 0.
pub fn dice(pred: &[u8], gt: &[u8], class_id: u8) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Usage(format!(
            "mask lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut inter = 0usize;
    let mut p_count = 0usize;
    let mut g_count = 0usize;
    for (&p, &g) in pred.iter().zip(gt) {
        let pi = p == class_id;
        let gi = g == class_id;
        p_count += pi as usize;
        g_count += gi as usize;
        inter += (pi && gi) as usize;
    }
    if p_count + g_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p_count + g_count) as f64)
}

/// 1-D squared Euclidean distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n]; // parabola locations
    let mut z = vec![0.0f64; n + 1]; // boundaries
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q].is_infinite() {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p].is_infinite() {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        out[q] = d * d + f[p];
    }
}

/// Exact squared Euclidean distance transform of a binary grid: each cell's
/// squared distance to the nearest set cell (infinity if the set is empty).
pub fn squared_edt(set: &[bool], h: usize, w: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; h * w];
    for (i, &s) in set.iter().enumerate() {
        if s {
            d[i] = 0.0;
        }
    }
    // columns then rows
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = d[y * w + x];
        }
        if col_in.iter().all(|v| v.is_infinite()) {
            continue;
        }
        edt_1d(&col_in, &mut col_out);
        for y in 0..h {
            d[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0f64; w];
    for y in 0..h {
        let row = d[y * w..(y + 1) * w].to_vec();
        if row.iter().all(|v| v.is_infinite()) {
            continue;
        }
        edt_1d(&row, &mut row_out);
        d[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    d
}

/// Max of the two directed sup-inf Euclidean distances between the class's
/// pixel coordinate sets. Returns None when either set is empty (undefined;
/// callers exclude such samples from averages).
pub fn hausdorff(pred: &[u8], gt: &[u8], h: usize, w: usize, class_id: u8) -> Result<Option<f64>> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::Usage(format!(
            "mask length mismatch: pred {}, gt {}, grid {}x{}",
            pred.len(),
            gt.len(),
            h,
            w
        )));
    }
    let p_set: Vec<bool> = pred.iter().map(|&v| v == class_id).collect();
    let g_set: Vec<bool> = gt.iter().map(|&v| v == class_id).collect();
    if !p_set.iter().any(|&v| v) || !g_set.iter().any(|&v| v) {
        return Ok(None);
    }
    let dp = squared_edt(&p_set, h, w);
    let dg = squared_edt(&g_set, h, w);
    let mut worst = 0.0f64;
    for i in 0..h * w {
        if p_set[i] && dg[i] > worst {
            worst = dg[i];
        }
        if g_set[i] && dp[i] > worst {
            worst = dp[i];
        }
    }
    Ok(Some(worst.sqrt()))
}

/// O(|P| * |G|) reference Hausdorff used as the oracle in tests.
pub fn hausdorff_brute_force(pred: &[u8], gt: &[u8], h: usize, w: usize, class_id: u8) -> Option<f64> {
    let coords = |mask: &[u8]| -> Vec<(f64, f64)> {
        mask.iter()
            .enumerate()
            .filter(|&(_, &v)| v == class_id)
            .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
            .collect()
    };
    let p = coords(pred);
    let g = coords(gt);
    let _ = h;
    if p.is_empty() || g.is_empty() {
        return None;
    }
    let directed = |a: &[(f64, f64)], b: &[(f64, f64)]| -> f64 {
        a.iter()
            .map(|&(ya, xa)| {
                b.iter()
                    .map(|&(yb, xb)| ((ya - yb).powi(2) + (xa - xb).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Some(directed(&p, &g).max(directed(&g, &p)))
}

/// Per-class means over a set of (pred, gt) mask pairs. Hausdorff means
/// skip undefined (empty-set) samples.
pub struct EvalReport {
    /// One entry per class: (mean dice, mean hausdorff if ever defined).
    pub per_class: Vec<(f64, Option<f64>)>,
}

impl EvalReport {
    pub fn mean_dice(&self) -> f64 {
        self.per_class.iter().map(|(d, _)| d).sum::<f64>() / self.per_class.len() as f64
    }

    pub fn mean_hd(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class.iter().filter_map(|(_, h)| *h).collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }

    /// CSV with header `class,dice,hd`, one row per class plus a mean row;
    /// 6-decimal fixed formatting, `nan` for undefined Hausdorff.
    pub fn to_csv(&self) -> String {
        let fmt_hd = |h: Option<f64>| match h {
            Some(v) => format!("{v:.6}"),
            None => "nan".to_string(),
        };
        let mut out = String::from("class,dice,hd\n");
        for (c, (d, h)) in self.per_class.iter().enumerate() {
            out.push_str(&format!("{c},{d:.6},{}\n", fmt_hd(*h)));
        }
        out.push_str(&format!("mean,{:.6},{}\n", self.mean_dice(), fmt_hd(self.mean_hd())));
        out
    }
}

/// pairs: (predicted mask, ground-truth mask), each of length h*w.
pub fn evaluate_pairs(
    pairs: &[(Vec<u8>, Vec<u8>)],
    h: usize,
    w: usize,
    num_classes: usize,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Usage("evaluation needs at least one sample".into()));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let mut dice_sum = 0.0;
        let mut hd_sum = 0.0;
        let mut hd_count = 0usize;
        for (pred, gt) in pairs {
            dice_sum += dice(pred, gt, c as u8)?;
            if let Some(hd) = hausdorff(pred, gt, h, w, c as u8)? {
                hd_sum += hd;
                hd_count += 1;
            }
        }
        let hd_mean = (hd_count > 0).then(|| hd_sum / hd_count as f64);
        per_class.push((dice_sum / pairs.len() as f64, hd_mean));
    }
    Ok(EvalReport { per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn dice_spec_cases() {
        // perfect overlap
        let m = vec![1u8, 0, 1, 0];
        assert_eq!(dice(&m, &m, 1).unwrap(), 1.0);
        // disjoint nonempty
        assert_eq!(dice(&[1, 1, 0, 0], &[0, 0, 1, 1], 1).unwrap(), 0.0);
        // |P| = |G| = 4, intersection 2 -> 0.5
        let p = vec![1u8, 1, 1, 1, 0, 0];
        let g = vec![1u8, 1, 0, 0, 1, 1];
        assert_eq!(dice(&p, &g, 1).unwrap(), 0.5);
        // empty conventions
        assert_eq!(dice(&[0, 0], &[0, 0], 1).unwrap(), 1.0);
        assert_eq!(dice(&[1, 0], &[0, 0], 1).unwrap(), 0.0);
    }

    #[test]
    fn dice_is_symmetric() {
        let mut rng = crate::rng::SeedSplitter::new(3).rng("dice");
        for _ in 0..20 {
            let p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..3)).collect();
            let g: Vec<u8> = (0..64).map(|_| rng.gen_range(0..3)).collect();
            for c in 0..3 {
                assert_eq!(dice(&p, &g, c).unwrap(), dice(&g, &p, c).unwrap());
            }
        }
    }

    #[test]
    fn hausdorff_spec_cases() {
        let m = vec![0u8, 1, 1, 0, 1, 0, 0, 0, 0];
        assert_eq!(hausdorff(&m, &m, 3, 3, 1).unwrap(), Some(0.0));

        // single pixels at (0,0) and (3,4): distance 5
        let mut p = vec![0u8; 5 * 5];
        let mut g = vec![0u8; 5 * 5];
        p[0] = 1;
        g[3 * 5 + 4] = 1;
        assert_eq!(hausdorff(&p, &g, 5, 5, 1).unwrap(), Some(5.0));

        // empty set -> undefined
        assert_eq!(hausdorff(&p, &[0u8; 25], 5, 5, 1).unwrap(), None);
    }

    #[test]
    fn hausdorff_matches_brute_force_on_random_sets() {
        let mut rng = crate::rng::SeedSplitter::new(9).rng("hd");
        for _ in 0..50 {
            let p: Vec<u8> = (0..256).map(|_| (rng.gen_range(0..13) == 0) as u8).collect();
            let g: Vec<u8> = (0..256).map(|_| (rng.gen_range(0..13) == 0) as u8).collect();
            let fast = hausdorff(&p, &g, 16, 16, 1).unwrap();
            let slow = hausdorff_brute_force(&p, &g, 16, 16, 1);
            match (fast, slow) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
                (a, b) => assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn report_formatting() {
        let pairs = vec![(vec![0u8, 1, 1, 0], vec![0u8, 1, 1, 0])];
        let report = evaluate_pairs(&pairs, 2, 2, 2).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,dice,hd");
        assert_eq!(lines[1], "0,1.000000,0.000000");
        assert_eq!(lines[2], "1,1.000000,0.000000");
        assert_eq!(lines[3], "mean,1.000000,0.000000");
    }
}
