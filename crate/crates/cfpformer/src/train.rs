//! Training loop: seeded shuffling and augmentation, Adam updates with
//! post-step sigma clamping, per-epoch validation, CSV logs, SVG curves,
//! and best-checkpoint saving.
//!
//! metrics.csv deliberately excludes wall-clock time so that two identical
//! seeded runs produce byte-identical logs; timings go to timing.csv.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{DiceCrossEntropy, Loss};
use crate::metrics::{evaluate_pairs, EvalReport};
use crate::model::{CfpFormer, ModelConfig};
use crate::optim::{Adam, AdamConfig};
use crate::rng::SeedSplitter;
use crate::synth::{augment, SegSample};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds weight init, shuffling, augmentation and drop-path.
    pub seed: u64,
    pub augment: bool,
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    /// Stop once mean validation dice reaches this value (checked after
    /// each epoch); `null` trains for the full epoch budget.
    pub target_val_dice: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: AdamConfig::default(),
            epochs: 30,
            batch_size: 8,
            seed: 7,
            augment: true,
            manifest: PathBuf::from("data/manifest.csv"),
            out_dir: PathBuf::from("runs/default"),
            target_val_dice: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Usage("epochs and batch_size must be positive".into()));
        }
        self.model.decoder.validate()
    }
}

pub struct TrainOutcome {
    pub best_val_dice: f64,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
}

fn batch_tensor(samples: &[&SegSample]) -> Result<(Tensor<f32>, Vec<Vec<u8>>)> {
    let s = samples[0].size;
    let mut data = Vec::with_capacity(samples.len() * s * s);
    let mut targets = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.size != s {
            return Err(Error::Usage("mixed sample sizes in one batch".into()));
        }
        data.extend(sample.image.iter().map(|&v| v as f32 / 255.0));
        targets.push(sample.mask.clone());
    }
    Ok((Tensor::from_vec(&[samples.len(), 1, s, s], data)?, targets))
}

/// Run inference over `samples` and score predictions against the masks.
pub fn evaluate_model(model: &CfpFormer<f32>, samples: &[SegSample], batch_size: usize) -> Result<EvalReport> {
    let num_classes = model.cfg.decoder.num_classes;
    let mut pairs = Vec::with_capacity(samples.len());
    let mut rng = SeedSplitter::new(0).rng("eval"); // inference: rng unused
    let refs: Vec<&SegSample> = samples.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (images, targets) = batch_tensor(chunk)?;
        let logits = model.forward(&images, false, &mut rng)?;
        let preds = CfpFormer::predict_masks(&logits);
        for (pred, gt) in preds.into_iter().zip(targets) {
            pairs.push((pred, gt));
        }
    }
    let s = samples[0].size;
    evaluate_pairs(&pairs, s, s, num_classes)
}

fn fmt_hd(h: Option<f64>) -> String {
    match h {
        Some(v) => format!("{v:.6}"),
        None => "nan".to_string(),
    }
}

/// Minimal line-chart SVG for the training curves, emitted as plain text.
fn curves_svg(loss: &[f64], dice: &[f64]) -> String {
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let polyline = |values: &[f64], lo: f64, hi: f64, color: &str| -> String {
        if values.is_empty() {
            return String::new();
        }
        let span = (hi - lo).max(1e-12);
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let x = pad + (w - 2.0 * pad) * i as f64 / (values.len().max(2) - 1) as f64;
                let y = h - pad - (h - 2.0 * pad) * (v - lo) / span;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        )
    };
    let loss_hi = loss.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
    let loss_lo = loss.iter().cloned().fold(f64::MAX, f64::min).min(loss_hi);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{pad}\" y=\"20\" font-size=\"13\">train loss (blue, [{loss_lo:.3}, {loss_hi:.3}]) / val dice (green, [0, 1])</text>\n"
    );
    svg.push_str(&polyline(loss, loss_lo, loss_hi, "#1f4e9c"));
    svg.push_str(&polyline(dice, 0.0, 1.0, "#2a8c4a"));
    svg.push_str("</svg>\n");
    svg
}

/// Train per `cfg`, writing metrics.csv, timing.csv, curves.svg, the
/// effective config echo, and the best-validation checkpoint to
/// `cfg.out_dir`.
pub fn train(cfg: &RunConfig, train_set: &[SegSample], val_set: &[SegSample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Usage("train and val splits must be non-empty".into()));
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    let config_echo = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Format(format!("config echo failed: {e}")))?;
    std::fs::write(cfg.out_dir.join("config.json"), config_echo)?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = cfg.seed;
    let model = CfpFormer::<f32>::new(model_cfg)?;
    let mut optimizer = Adam::new(cfg.optimizer, &model.params.tensors());
    let loss_fn = DiceCrossEntropy::default();
    let seeds = SeedSplitter::new(cfg.seed);

    let checkpoint = cfg.out_dir.join("best.cfpc");
    let metrics_csv = cfg.out_dir.join("metrics.csv");
    let mut metrics = String::from("epoch,train_loss,val_dice_mean,val_hd_mean\n");
    let mut timing = String::from("epoch,wall_seconds\n");
    let mut loss_curve = Vec::new();
    let mut dice_curve = Vec::new();
    let mut best_val_dice = f64::MIN;
    let mut best_epoch = 0usize;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let epoch_seeds = seeds.child(&format!("epoch{epoch}"));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut epoch_seeds.rng("shuffle"));
        let mut aug_rng = epoch_seeds.rng("augment");
        let mut drop_rng = epoch_seeds.rng("drop_path");

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let augmented: Vec<SegSample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        augment(&train_set[i], &mut aug_rng).map(|(s, _)| s)
                    } else {
                        Ok(SegSample {
                            image: train_set[i].image.clone(),
                            mask: train_set[i].mask.clone(),
                            size: train_set[i].size,
                        })
                    }
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&SegSample> = augmented.iter().collect();
            let (images, targets) = batch_tensor(&refs)?;
            model.params.zero_grad();
            let logits = model.forward(&images, true, &mut drop_rng)?;
            let loss = loss_fn.compute(&logits, &targets, model.cfg.decoder.num_classes)?;
            let loss_value = Real::to_f64(loss.item()?);
            if !loss_value.is_finite() {
                return Err(Error::Numeric {
                    op: "train_step",
                    detail: format!("non-finite loss {loss_value} at epoch {epoch}"),
                });
            }
            loss.backward()?;
            optimizer.step(&model.params.tensors())?;
            model.decoder.clamp_sigmas();
            loss_sum += loss_value;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let report = evaluate_model(&model, val_set, cfg.batch_size)?;
        let val_dice = report.mean_dice();
        metrics.push_str(&format!(
            "{epoch},{train_loss:.6},{val_dice:.6},{}\n",
            fmt_hd(report.mean_hd())
        ));
        timing.push_str(&format!("{epoch},{:.3}\n", t0.elapsed().as_secs_f64()));
        loss_curve.push(train_loss);
        dice_curve.push(val_dice);

        if val_dice > best_val_dice {
            best_val_dice = val_dice;
            best_epoch = epoch;
            model.save(&checkpoint)?;
        }
        // rewrite the logs each epoch so interrupted runs keep their history
        std::fs::write(&metrics_csv, &metrics)?;
        std::fs::write(cfg.out_dir.join("timing.csv"), &timing)?;
        if cfg.target_val_dice.is_some_and(|t| val_dice >= t) {
            break;
        }
    }

    std::fs::write(&metrics_csv, metrics)?;
    std::fs::write(cfg.out_dir.join("timing.csv"), timing)?;
    std::fs::write(cfg.out_dir.join("curves.svg"), curves_svg(&loss_curve, &dice_curve))?;

    Ok(TrainOutcome {
        best_val_dice,
        best_epoch,
        checkpoint,
        metrics_csv,
    })
}
