//! Synthetic cardiac-like segmentation corpus: nested ellipses standing in
//! for the right ventricle (class 1), myocardium annulus (class 2) and
//! left ventricle disc (class 3) on a dark background (class 0), plus the
//! rotation/flip augmentation protocol and cubic image resizing.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_cfpt, load_pgm, save_cfpt, save_pgm, CfptData, CfptTensor};
use crate::rng::SeedSplitter;

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-axes.
    pub a: f64,
    pub b: f64,
    /// Rotation in radians.
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cx;
        let dy = y - self.cy;
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    /// Loose axis-aligned bound on the ellipse extent.
    fn radius_bound(&self) -> f64 {
        self.a.max(self.b)
    }
}

/// One sampled scene. The myocardium is the annulus between `myo_outer`
/// and `lv`; the three foreground regions are disjoint by construction
/// (label priority LV > MYO > RV).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: usize,
    pub rv: Ellipse,
    pub myo_outer: Ellipse,
    pub lv: Ellipse,
    /// Per-class mean intensity (background, RV, MYO, LV).
    pub intensity: [f64; NUM_CLASSES],
    pub noise_sigma: f64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let s = self.size as f64;
        let inside = |e: &Ellipse| {
            let r = e.radius_bound();
            e.cx - r >= 1.0 && e.cx + r <= s - 2.0 && e.cy - r >= 1.0 && e.cy + r <= s - 2.0
        };
        if !(inside(&self.rv) && inside(&self.myo_outer) && inside(&self.lv)) {
            return Err(Error::Config("scene structure leaves the image".into()));
        }
        // the LV disc must sit strictly inside the annulus's outer ellipse
        if self.lv.cx != self.myo_outer.cx
            || self.lv.cy != self.myo_outer.cy
            || self.lv.a >= self.myo_outer.a
            || self.lv.b >= self.myo_outer.b
        {
            return Err(Error::Config("annulus does not contain the LV disc".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub size: usize,
    pub noise_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 64,
            noise_sigma: 8.0,
        }
    }
}

pub struct SegSample {
    /// 8-bit grayscale, row-major, size x size.
    pub image: Vec<u8>,
    /// Class ids, same layout.
    pub mask: Vec<u8>,
    pub size: usize,
}

/// Draw scene parameters until the containment invariants hold.
pub fn sample_scene<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> SceneSpec {
    let s = cfg.size as f64;
    for _ in 0..1000 {
        let cx = rng.gen_range(0.48..0.60) * s;
        let cy = rng.gen_range(0.40..0.60) * s;
        let aspect = rng.gen_range(0.85..1.15);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let r_lv = rng.gen_range(0.08..0.13) * s;
        let wall = rng.gen_range(0.05..0.09) * s;
        let lv = Ellipse {
            cx,
            cy,
            a: r_lv * aspect,
            b: r_lv / aspect,
            theta,
        };
        let myo_outer = Ellipse {
            cx,
            cy,
            a: (r_lv + wall) * aspect,
            b: (r_lv + wall) / aspect,
            theta,
        };
        // RV sits to the left of the annulus
        let gap = rng.gen_range(0.01..0.03) * s;
        let rv_a = rng.gen_range(0.07..0.11) * s;
        let rv_b = rng.gen_range(0.05..0.08) * s;
        let rv = Ellipse {
            cx: cx - myo_outer.radius_bound() - gap - rv_a,
            cy: cy + rng.gen_range(-0.06..0.06) * s,
            a: rv_a,
            b: rv_b,
            theta: rng.gen_range(-0.4..0.4),
        };
        let jitter = |base: f64, rng: &mut R| base + rng.gen_range(-10.0..10.0);
        let spec = SceneSpec {
            size: cfg.size,
            rv,
            myo_outer,
            lv,
            intensity: [
                jitter(40.0, rng),
                jitter(120.0, rng),
                jitter(90.0, rng),
                jitter(200.0, rng),
            ],
            noise_sigma: cfg.noise_sigma,
        };
        if spec.validate().is_ok() {
            return spec;
        }
    }
    unreachable!("scene parameter ranges admit valid scenes");
}

/// Rasterize a scene to an image/mask pair. Labels use priority
/// LV > MYO > RV, which makes the class regions disjoint.
pub fn rasterize<R: Rng>(spec: &SceneSpec, rng: &mut R) -> SegSample {
    let s = spec.size;
    let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
    let mut mask = vec![0u8; s * s];
    let mut image = vec![0u8; s * s];
    for y in 0..s {
        for x in 0..s {
            let (fx, fy) = (x as f64, y as f64);
            let class = if spec.lv.contains(fx, fy) {
                3
            } else if spec.myo_outer.contains(fx, fy) {
                2
            } else if spec.rv.contains(fx, fy) {
                1
            } else {
                0
            };
            mask[y * s + x] = class;
            let v = spec.intensity[class as usize] + normal.sample(rng);
            image[y * s + x] = v.clamp(0.0, 255.0) as u8;
        }
    }
    SegSample { image, mask, size: s }
}

pub fn generate_sample(cfg: &GeneratorConfig, seeds: &SeedSplitter, index: u64) -> SegSample {
    let child = seeds.child_index(index);
    let mut rng = child.rng("scene");
    let spec = sample_scene(cfg, &mut rng);
    rasterize(&spec, &mut rng)
}

/// Corpus split sizes: val ≈ count/13, test ≈ 2·count/13, train the rest.
/// At the default count of 260 this gives 200/20/40.
pub fn split_sizes(count: usize) -> (usize, usize, usize) {
    let val = ((count as f64) / 13.0).round() as usize;
    let test = ((2.0 * count as f64) / 13.0).round() as usize;
    (count - val - test, val, test)
}

fn split_of(index: usize, train: usize, val: usize) -> &'static str {
    if index < train {
        "train"
    } else if index < train + val {
        "val"
    } else {
        "test"
    }
}

/// Generate `count` samples under `dir`: PGM images, CFPT u8 masks, and a
/// CSV manifest `split,image_path,mask_path` (paths relative to `dir`).
/// Byte-identical for identical (cfg, count, seed).
pub fn write_corpus(dir: &Path, cfg: &GeneratorConfig, count: usize, seed: u64) -> Result<PathBuf> {
    if count == 0 {
        return Err(Error::Usage("corpus count must be at least 1".into()));
    }
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let seeds = SeedSplitter::new(seed);
    let samples: Vec<SegSample> = (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sample(cfg, &seeds, i))
        .collect();
    let (train, val, _) = split_sizes(count);
    let mut manifest = String::from("split,image_path,mask_path\n");
    for (i, sample) in samples.iter().enumerate() {
        let img_rel = format!("images/img_{i:04}.pgm");
        let mask_rel = format!("masks/mask_{i:04}.cfpt");
        save_pgm(&dir.join(&img_rel), sample.size, sample.size, &sample.image)?;
        save_cfpt(
            &dir.join(&mask_rel),
            &CfptTensor::new(vec![sample.size, sample.size], CfptData::U8(sample.mask.clone()))?,
        )?;
        manifest.push_str(&format!("{},{},{}\n", split_of(i, train, val), img_rel, mask_rel));
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest)?;
    Ok(manifest_path)
}

/// Load one split of a corpus back into memory.
pub fn load_split(manifest: &Path, split: &str) -> Result<Vec<SegSample>> {
    let dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(manifest)?;
    let mut samples = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!("manifest line {} malformed: {line}", ln + 1)));
        }
        if fields[0] != split {
            continue;
        }
        let (w, h, image) = load_pgm(&dir.join(fields[1]))?;
        let mask_t = load_cfpt(&dir.join(fields[2]))?;
        let mask = match mask_t.data {
            CfptData::U8(m) => m,
            _ => return Err(Error::Format(format!("mask {} is not a u8 tensor", fields[2]))),
        };
        if w != h || mask.len() != w * h {
            return Err(Error::Format(format!("sample {} has inconsistent extents", fields[1])));
        }
        samples.push(SegSample {
            image,
            mask,
            size: w,
        });
    }
    if samples.is_empty() {
        return Err(Error::Usage(format!("manifest has no rows for split '{split}'")));
    }
    Ok(samples)
}

/// The transform actually drawn by `augment`, for consistency checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentChoice {
    /// Number of 90-degree counter-clockwise rotations (0..=3).
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

fn rotate90<Tv: Copy>(grid: &[Tv], s: usize) -> Vec<Tv> {
    // (x, y) -> (y, s-1-x): counter-clockwise quarter turn
    let mut out = grid.to_vec();
    for y in 0..s {
        for x in 0..s {
            out[(s - 1 - x) * s + y] = grid[y * s + x];
        }
    }
    out
}

fn flip_h<Tv: Copy>(grid: &[Tv], s: usize) -> Vec<Tv> {
    let mut out = grid.to_vec();
    for y in 0..s {
        for x in 0..s {
            out[y * s + (s - 1 - x)] = grid[y * s + x];
        }
    }
    out
}

fn flip_v<Tv: Copy>(grid: &[Tv], s: usize) -> Vec<Tv> {
    let mut out = grid.to_vec();
    for y in 0..s {
        for x in 0..s {
            out[(s - 1 - y) * s + x] = grid[y * s + x];
        }
    }
    out
}

pub fn apply_transform<Tv: Copy>(grid: &[Tv], s: usize, t: AugmentChoice) -> Vec<Tv> {
    let mut g = grid.to_vec();
    for _ in 0..t.quarter_turns {
        g = rotate90(&g, s);
    }
    if t.hflip {
        g = flip_h(&g, s);
    }
    if t.vflip {
        g = flip_v(&g, s);
    }
    g
}

/// Rotation uniform over {0, 90, 180, 270} degrees; horizontal and
/// vertical flips each with probability 1/2; identical transform applied
/// to image and mask. Returns the drawn transform for auditability.
pub fn augment<R: Rng>(sample: &SegSample, rng: &mut R) -> Result<(SegSample, AugmentChoice)> {
    if sample.image.len() != sample.size * sample.size {
        return Err(Error::Usage("augment requires square samples".into()));
    }
    let choice = AugmentChoice {
        quarter_turns: rng.gen_range(0..4),
        hflip: rng.gen_bool(0.5),
        vflip: rng.gen_bool(0.5),
    };
    let s = sample.size;
    Ok((
        SegSample {
            image: apply_transform(&sample.image, s, choice),
            mask: apply_transform(&sample.mask, s, choice),
            size: s,
        },
        choice,
    ))
}

/// Catmull-Rom (a = -0.5) kernel weight at offset t in [0, 2).
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t < 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Cubic resampling of a grayscale image (images only; masks are resized
/// nearest-neighbor elsewhere). Half-pixel centers, edge clamped.
pub fn resize_cubic(img: &[f64], sh: usize, sw: usize, th: usize, tw: usize) -> Result<Vec<f64>> {
    if img.len() != sh * sw || th == 0 || tw == 0 {
        return Err(Error::dim(
            "resize_cubic",
            format!("image {} vs {}x{}, target {}x{}", img.len(), sh, sw, th, tw),
        ));
    }
    let taps = |dst: usize, src: usize| -> Vec<([usize; 4], [f64; 4])> {
        (0..dst)
            .map(|i| {
                let pos = (i as f64 + 0.5) * src as f64 / dst as f64 - 0.5;
                let base = pos.floor() as isize;
                let frac = pos - base as f64;
                let mut idx = [0usize; 4];
                let mut w = [0f64; 4];
                for k in 0..4 {
                    let j = base - 1 + k as isize;
                    idx[k] = j.clamp(0, src as isize - 1) as usize;
                    w[k] = cubic_weight(frac - (k as f64 - 1.0));
                }
                (idx, w)
            })
            .collect()
    };
    let xt = taps(tw, sw);
    let yt = taps(th, sh);
    // horizontal pass then vertical pass
    let mut tmp = vec![0.0; sh * tw];
    for y in 0..sh {
        for (x, (idx, w)) in xt.iter().enumerate() {
            tmp[y * tw + x] = (0..4).map(|k| img[y * sw + idx[k]] * w[k]).sum();
        }
    }
    let mut out = vec![0.0; th * tw];
    for (y, (idx, w)) in yt.iter().enumerate() {
        for x in 0..tw {
            out[y * tw + x] = (0..4).map(|k| tmp[idx[k] * tw + x] * w[k]).sum();
        }
    }
    Ok(out)
}

/// Structural invariants every generated mask must satisfy; used by the
/// corpus audit. The LV region must be fully enclosed by myocardium (no LV
/// pixel touches background or RV), all three structures must be present,
/// and no foreground pixel may sit on the image border.
pub fn audit_mask(mask: &[u8], s: usize) -> Result<()> {
    if mask.len() != s * s {
        return Err(Error::Usage("mask extent mismatch".into()));
    }
    let mut present = [false; NUM_CLASSES];
    for &v in mask {
        if (v as usize) >= NUM_CLASSES {
            return Err(Error::Format(format!("class id {v} out of range")));
        }
        present[v as usize] = true;
    }
    if !present.iter().all(|&p| p) {
        return Err(Error::Format("mask missing a structure class".into()));
    }
    for y in 0..s {
        for x in 0..s {
            let v = mask[y * s + x];
            if v != 0 && (y == 0 || x == 0 || y == s - 1 || x == s - 1) {
                return Err(Error::Format("foreground touches the image border".into()));
            }
            if v == 3 {
                for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= s as i64 || nx >= s as i64 {
                        return Err(Error::Format("LV touches the image border".into()));
                    }
                    let n = mask[ny as usize * s + nx as usize];
                    if n != 2 && n != 3 {
                        return Err(Error::Format("LV not enclosed by myocardium".into()));
                    }
                }
            }
        }
    }
    Ok(())
}
