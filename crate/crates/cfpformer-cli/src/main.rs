//! Command-line harness: data generation, training, evaluation, ablation
//! sweeps, decay-mask export, corpus auditing, and the attention
//! complexity benchmark.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 I/O or format error,
//! 4 numeric failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use cfpformer::attention::{
    build_axis_mask, reset_score_entries, score_entries, AttentionConfig, AttentionVariant,
    GaussianAttention, MaskFamily,
};
use cfpformer::error::{Error, Result};
use cfpformer::io::{save_cfpt, save_pgm, CfptData, CfptTensor};
use cfpformer::model::CfpFormer;
use cfpformer::nn::Params;
use cfpformer::rng::SeedSplitter;
use cfpformer::synth::{audit_mask, load_split, write_corpus, GeneratorConfig};
use cfpformer::tensor::{SoftmaxBase, Tensor};
use cfpformer::train::{evaluate_model, train, RunConfig};

#[derive(Parser)]
#[command(name = "cfpformer", version, about = "Pyramid transformer decoder for desk-scale segmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic segmentation corpus
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 260)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 8.0)]
        noise_sigma: f64,
    },
    /// Train a model from a JSON run config
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one corpus split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Write the CSV report here as well as printing it
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count mask-modulated score entries and time attention variants
    BenchAttention {
        /// Comma-separated HxW pairs, e.g. 8x8,16x16
        #[arg(long, default_value = "8x8,8x16,16x16,32x32")]
        sizes: String,
        /// Comma-separated subset of axial,full
        #[arg(long, default_value = "axial,full")]
        variants: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the base config and its four single-toggle variants
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Export decay-mask matrices as tensors and PGM heatmaps
    ExportMasks {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        extent_h: usize,
        #[arg(long, default_value_t = 16)]
        extent_w: usize,
        /// gaussian or exponential
        #[arg(long, default_value = "gaussian")]
        family: String,
        /// sigma (gaussian) or gamma (exponential)
        #[arg(long, default_value_t = 4.0)]
        param: f64,
    },
    /// Check a generated corpus against the scene invariants
    AuditData {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Dimension { .. } => 2,
        Error::Io(_) | Error::Format(_) => 3,
        Error::Numeric { .. } => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenData {
            out,
            count,
            size,
            seed,
            noise_sigma,
        } => cmd_gen_data(&out, count, size, seed, noise_sigma),
        Cmd::Train { config, seed, out } => cmd_train(&config, seed, out),
        Cmd::Eval {
            checkpoint,
            manifest,
            split,
            out,
        } => cmd_eval(&checkpoint, &manifest, &split, out.as_deref()),
        Cmd::BenchAttention {
            sizes,
            variants,
            repeats,
            out,
        } => cmd_bench_attention(&sizes, &variants, repeats, out.as_deref()),
        Cmd::Ablate { config } => cmd_ablate(&config),
        Cmd::ExportMasks {
            out,
            extent_h,
            extent_w,
            family,
            param,
        } => cmd_export_masks(&out, extent_h, extent_w, &family, param),
        Cmd::AuditData { manifest } => cmd_audit_data(&manifest),
    }
}

fn cmd_gen_data(out: &Path, count: usize, size: usize, seed: u64, noise_sigma: f64) -> Result<()> {
    if size < 16 || !size.is_multiple_of(16) {
        return Err(Error::Usage(format!("--size must be a positive multiple of 16, got {size}")));
    }
    let cfg = GeneratorConfig { size, noise_sigma };
    let manifest = write_corpus(out, &cfg, count, seed)?;
    println!("{}", manifest.display());
    Ok(())
}

fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid run config {}: {e}", path.display())))
}

fn cmd_train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_run_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = out {
        cfg.out_dir = o;
    }
    let train_set = load_split(&cfg.manifest, "train")?;
    let val_set = load_split(&cfg.manifest, "val")?;
    let outcome = train(&cfg, &train_set, &val_set)?;
    println!(
        "best val dice {:.6} at epoch {} -> {}",
        outcome.best_val_dice,
        outcome.best_epoch,
        outcome.checkpoint.display()
    );
    if let Ok(test_set) = load_split(&cfg.manifest, "test") {
        let model = CfpFormer::<f32>::load(&outcome.checkpoint)?;
        let report = evaluate_model(&model, &test_set, cfg.batch_size)?;
        std::fs::write(cfg.out_dir.join("test_report.csv"), report.to_csv())?;
        println!("test mean dice {:.6}", report.mean_dice());
    }
    Ok(())
}

fn cmd_eval(checkpoint: &Path, manifest: &Path, split: &str, out: Option<&Path>) -> Result<()> {
    let model = CfpFormer::<f32>::load(checkpoint)?;
    let samples = load_split(manifest, split)?;
    let report = evaluate_model(&model, &samples, 8)?;
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn parse_sizes(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|pair| {
            let (h, w) = pair
                .split_once('x')
                .ok_or_else(|| Error::Usage(format!("bad size '{pair}', expected HxW")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Usage(format!("bad extent '{v}'")))
            };
            Ok((parse(h)?, parse(w)?))
        })
        .collect()
}

fn cmd_bench_attention(sizes: &str, variants: &str, repeats: usize, out: Option<&Path>) -> Result<()> {
    let sizes = parse_sizes(sizes)?;
    let variants: Vec<AttentionVariant> = variants
        .split(',')
        .map(|v| match v.trim() {
            "axial" => Ok(AttentionVariant::AxialGaussian),
            "full" => Ok(AttentionVariant::FullGaussian),
            other => Err(Error::Usage(format!("unknown variant '{other}' (expected axial or full)"))),
        })
        .collect::<Result<_>>()?;
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let seeds = SeedSplitter::new(0);
    let mut csv = String::from("variant,h,w,score_entries,wall_ms_median\n");
    for &(h, w) in &sizes {
        for &variant in &variants {
            let name = match variant {
                AttentionVariant::AxialGaussian => "axial",
                AttentionVariant::FullGaussian => "full",
                AttentionVariant::Mhsa => "mhsa",
            };
            let cfg = AttentionConfig {
                embed_dim: 16,
                num_heads: 1,
                variant,
                family: MaskFamily::Gaussian,
                softmax_base: SoftmaxBase::Two,
                lepe_kernel: 3,
                use_lepe: true,
            };
            let mut params = Params::new();
            let attn = GaussianAttention::<f32>::new(cfg, h.max(w), &seeds, "bench", &mut params)?;
            let x = Tensor::from_vec(
                &[1, h, w, 16],
                (0..h * w * 16).map(|i| (i % 17) as f32 * 0.05 - 0.4).collect(),
            )?;
            let mut times = Vec::with_capacity(repeats);
            let mut count = 0u64;
            for _ in 0..repeats {
                reset_score_entries();
                let t0 = Instant::now();
                attn.forward(&x, None)?;
                times.push(t0.elapsed().as_secs_f64() * 1e3);
                count = score_entries();
            }
            times.sort_by(f64::total_cmp);
            let median = times[times.len() / 2];
            csv.push_str(&format!("{name},{h},{w},{count},{median:.3}\n"));
        }
    }
    print!("{csv}");
    if let Some(path) = out {
        std::fs::write(path, csv)?;
    }
    Ok(())
}

fn cmd_ablate(config: &Path) -> Result<()> {
    let base = load_run_config(config)?;
    let train_set = load_split(&base.manifest, "train")?;
    let val_set = load_split(&base.manifest, "val")?;
    std::fs::create_dir_all(&base.out_dir)?;

    let variants: Vec<(&str, Box<dyn Fn(&mut RunConfig)>)> = vec![
        ("base", Box::new(|_| {})),
        (
            "ga_to_mhsa",
            Box::new(|c| c.model.decoder.attention_variant = AttentionVariant::Mhsa),
        ),
        (
            "no_pyramid_connection",
            Box::new(|c| c.model.decoder.use_pyramid_connection = false),
        ),
        (
            "log2softmax_to_softmax",
            Box::new(|c| c.model.decoder.softmax_base = SoftmaxBase::Natural),
        ),
        ("no_fre", Box::new(|c| c.model.decoder.use_fre = false)),
    ];

    let mut csv = String::from("variant,status,mean_val_dice,param_count\n");
    for (name, mutate) in variants {
        let mut cfg = base.clone();
        cfg.out_dir = base.out_dir.join(name);
        mutate(&mut cfg);
        match train(&cfg, &train_set, &val_set) {
            Ok(outcome) => {
                let mut model_cfg = cfg.model.clone();
                model_cfg.seed = cfg.seed;
                let params = CfpFormer::<f32>::new(model_cfg)?.params.total_elements();
                csv.push_str(&format!("{name},ok,{:.6},{params}\n", outcome.best_val_dice));
            }
            Err(e @ (Error::Config(_) | Error::Usage(_))) => {
                eprintln!("variant {name}: {e}");
                csv.push_str(&format!("{name},error,,\n"));
            }
            Err(e) => return Err(e),
        }
    }
    let path = base.out_dir.join("ablation.csv");
    std::fs::write(&path, &csv)?;
    print!("{csv}");
    println!("{}", path.display());
    Ok(())
}

fn cmd_export_masks(out: &Path, extent_h: usize, extent_w: usize, family: &str, param: f64) -> Result<()> {
    let family = match family {
        "gaussian" => MaskFamily::Gaussian,
        "exponential" => MaskFamily::Exponential,
        other => return Err(Error::Usage(format!("unknown family '{other}'"))),
    };
    std::fs::create_dir_all(out)?;
    for (tag, extent) in [("mask_h", extent_h), ("mask_w", extent_w)] {
        let log = build_axis_mask(extent, family, param)?;
        let linear: Vec<f64> = log.iter().map(|v| v.exp()).collect();
        save_cfpt(
            &out.join(format!("{tag}_log.cfpt")),
            &CfptTensor::new(vec![extent, extent], CfptData::F64(log))?,
        )?;
        save_cfpt(
            &out.join(format!("{tag}_linear.cfpt")),
            &CfptTensor::new(vec![extent, extent], CfptData::F64(linear.clone()))?,
        )?;
        let pixels: Vec<u8> = linear.iter().map(|&v| (v * 255.0).round() as u8).collect();
        save_pgm(&out.join(format!("{tag}.pgm")), extent, extent, &pixels)?;
    }
    println!("{}", out.display());
    Ok(())
}

fn cmd_audit_data(manifest: &Path) -> Result<()> {
    let mut total = 0usize;
    for split in ["train", "val", "test"] {
        let samples = load_split(manifest, split)?;
        for (i, s) in samples.iter().enumerate() {
            audit_mask(&s.mask, s.size)
                .map_err(|e| Error::Format(format!("{split} sample {i}: {e}")))?;
        }
        total += samples.len();
        println!("{split}: {} samples ok", samples.len());
    }
    println!("audited {total} samples");
    Ok(())
}
