//! `mash`: denoise single images with adaptive blind-spot training and run
//! the masking/shuffling experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mash_core::image::{load_image, save_image, ImageFormat};
use mash_core::metrics::MetricReport;
use mash_core::noise::{autocovariance_csv, empirical_autocovariance, sample_noise_exact, NoiseModel};
use mash_core::pipeline::{
    gap_curves, masking_accuracy_audit, run_fixed, run_mash, sweep, synthesize, AuditCase, InputInfo, NamedImage,
    Preset, RunConfig, RunReport, Settings, SweepSpec,
};
use mash_core::rng::{noise_index, Purpose, SeedStreams};
use mash_core::{Error, Image};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mash",
    version,
    about = "Single-image blind-spot denoising with adaptive masking"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value config file; later flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "mash-out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Desk,
    Ci,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Rawf32,
    Png,
}

impl From<Format> for ImageFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Rawf32 => ImageFormat::RawF32,
            Format::Png => ImageFormat::Png8,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Add correlated Gaussian noise to a clean image.
    Synth {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 25.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.0)]
        beta: f64,
        #[arg(long, default_value_t = 3.0)]
        kernel_width: f64,
        /// Sample with the dense eigendecomposition (small images only).
        #[arg(long)]
        exact: bool,
        /// Largest lag in the written autocovariance table.
        #[arg(long, default_value_t = 4)]
        max_lag: usize,
        #[arg(long, value_enum, default_value_t = Format::Rawf32)]
        format: Format,
    },
    /// Full adaptive run on one noisy image.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        /// Ground truth for PSNR/SSIM.
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Rawf32)]
        format: Format,
    },
    /// Fixed-ratio blind-spot run.
    Baseline {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Enable local pixel shuffling.
        #[arg(long)]
        lps: bool,
        #[arg(long)]
        clean: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Rawf32)]
        format: Format,
    },
    /// Grid of fixed-ratio runs over synthetic noisy images.
    Sweep {
        #[command(flatten)]
        suite: Suite,
    },
    /// Warm-up estimate traces at the low and high ratios per beta.
    GapCurves {
        #[command(flatten)]
        suite: Suite,
    },
    /// How often the gap selection picks a PSNR-best ratio.
    AuditMasking {
        #[command(flatten)]
        suite: Suite,
    },
    /// PSNR and SSIM of a test image against a reference.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
}

#[derive(Args, Debug)]
struct Suite {
    /// Clean images (comma-separated or repeated).
    #[arg(long, required = true, value_delimiter = ',')]
    images: Vec<PathBuf>,
    /// Center crop size; defaults to the preset's crop, 0 keeps the full image.
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    kernel_width: Option<f64>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// LPS flags per cell, e.g. `false,true`.
    #[arg(long, value_delimiter = ',')]
    lps: Option<Vec<bool>>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::UnsupportedFormat(_) | Error::CorruptHeader(_) => EXIT_IO,
        Error::Divergence { .. } => EXIT_DIVERGED,
        _ => EXIT_USAGE,
    }
}

fn init_threads(n: usize) -> Result<(), Error> {
    #[cfg(feature = "parallel")]
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

/// Preset defaults, then the config file, then `--set`, then `--seed`.
fn build_spec(common: &Common) -> Result<SweepSpec, Error> {
    let mut spec = SweepSpec::new(Vec::new(), RunConfig::preset(preset_of(common)));
    let mut settings = match &common.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        settings.insert(k.trim(), v.trim());
    }
    settings.apply(|k, v| spec.set(k, v))?;
    if let Some(seed) = common.seed {
        spec.run.mash.seed = seed;
    }
    spec.run.validate()?;
    Ok(spec)
}

fn preset_of(common: &Common) -> Preset {
    match common.preset {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Ci => Preset::Ci,
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn output_path(dir: &Path, stem: &str, format: Format) -> PathBuf {
    dir.join(match format {
        Format::Rawf32 => format!("{stem}.rawf32"),
        Format::Png => format!("{stem}.png"),
    })
}

fn center_crop(img: Image, size: usize) -> Result<Image, Error> {
    if size == 0 || (img.height() <= size && img.width() <= size) {
        return Ok(img);
    }
    let h = size.min(img.height());
    let w = size.min(img.width());
    img.crop((img.height() - h) / 2, (img.width() - w) / 2, h, w)
}

fn load_suite(suite: &Suite, preset: Preset) -> Result<Vec<NamedImage>, Error> {
    let crop = suite.crop.unwrap_or(preset.crop_size());
    suite
        .images
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(NamedImage {
                name,
                clean: center_crop(load_image(p)?, crop)?,
            })
        })
        .collect()
}

fn apply_suite_flags(spec: &mut SweepSpec, suite: &Suite) {
    if let Some(t) = &suite.taus {
        spec.taus = t.clone();
    }
    if let Some(b) = &suite.betas {
        spec.betas = b.clone();
    }
    if let Some(s) = suite.sigma {
        spec.sigma = s;
    }
    if let Some(k) = suite.kernel_width {
        spec.kernel_width = k;
    }
    if let Some(r) = suite.repetitions {
        spec.repetitions = r;
    }
    if let Some(l) = &suite.lps {
        spec.lps = l.clone();
    }
}

fn finish_run(
    out_dir: &Path,
    input: &Path,
    denoised: &Image,
    mut report: RunReport,
    format: Format,
) -> Result<(), Error> {
    report.input = InputInfo {
        source: input.display().to_string(),
        ..report.input
    };
    report.write_to(out_dir)?;
    save_image(denoised, output_path(out_dir, "denoised", format), format.into())?;
    if let Some(g) = &report.gap {
        println!(
            "epsilon={:.4} tau_optimal={} shuffle_enabled={}",
            g.epsilon, g.tau_optimal, g.shuffle_enabled
        );
    }
    if let Some(m) = &report.metrics {
        println!("psnr={:.4} ssim={:.4}", m.psnr, m.ssim);
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    let common = &cli.common;
    init_threads(common.threads)?;
    let mut spec = build_spec(common)?;
    let out_dir = &common.out_dir;
    match &cli.command {
        Command::Synth {
            input,
            sigma,
            beta,
            kernel_width,
            exact,
            max_lag,
            format,
        } => {
            let clean = load_image(input)?;
            let model = NoiseModel::new(*sigma, *beta, *kernel_width)?;
            let seed = spec.run.mash.seed;
            let noisy = if *exact {
                let mut rng = SeedStreams::new(seed).rng(Purpose::Noise, noise_index(0, *beta));
                let (h, w, c) = clean.shape();
                clean.add(&sample_noise_exact(&model, h, w, c, &mut rng)?)?
            } else {
                synthesize(&clean, &model, seed, 0)?
            };
            create_dir(out_dir)?;
            let path = output_path(out_dir, "noisy", *format);
            save_image(&noisy, &path, (*format).into())?;
            let noise = noisy.sub(&clean)?;
            save_image(&noise, out_dir.join("noise.rawf32"), ImageFormat::RawF32)?;
            let table = empirical_autocovariance(std::slice::from_ref(&noise), *max_lag)?;
            write_text(&out_dir.join("autocovariance.csv"), &autocovariance_csv(&table)?)?;
            println!("wrote {}", path.display());
        }
        Command::Denoise { input, clean, format } => {
            let y = load_image(input)?;
            let truth = clean.as_ref().map(load_image).transpose()?;
            let (denoised, report) = run_mash(&y, &spec.run, truth.as_ref())?;
            finish_run(out_dir, input, &denoised, report, *format)?;
        }
        Command::Baseline {
            input,
            tau,
            lps,
            clean,
            format,
        } => {
            let y = load_image(input)?;
            let truth = clean.as_ref().map(load_image).transpose()?;
            let (denoised, report) = run_fixed(&y, *tau, *lps, &spec.run, truth.as_ref())?;
            finish_run(out_dir, input, &denoised, report, *format)?;
        }
        Command::Sweep { suite } => {
            apply_suite_flags(&mut spec, suite);
            spec.images = load_suite(suite, preset_of(common))?;
            spec.out_dir = Some(out_dir.clone());
            let table = sweep(&spec)?;
            println!(
                "{} rows, {} failures; wrote {}",
                table.rows.len(),
                table.failures.len(),
                out_dir.join("sweep.csv").display()
            );
        }
        Command::GapCurves { suite } => {
            apply_suite_flags(&mut spec, suite);
            if suite.betas.is_none() {
                spec.betas = vec![0.0, 0.5, 1.0];
            }
            let images = load_suite(suite, preset_of(common))?;
            let curves = gap_curves(&images, &spec.betas, spec.sigma, spec.kernel_width, &spec.run)?;
            create_dir(out_dir)?;
            write_text(&out_dir.join("gap_traces.csv"), &curves.traces_csv()?)?;
            write_text(
                &out_dir.join("gap_summary.csv"),
                &curves.summary_csv(spec.run.mash.sigma_window)?,
            )?;
            for (beta, eps) in curves.mean_epsilon() {
                println!("beta={beta} mean_epsilon={eps:.4}");
            }
        }
        Command::AuditMasking { suite } => {
            apply_suite_flags(&mut spec, suite);
            let images = load_suite(suite, preset_of(common))?;
            let mut cases = Vec::new();
            for (i, img) in images.iter().enumerate() {
                for &beta in &spec.betas {
                    let model = NoiseModel::new(spec.sigma, beta, spec.kernel_width)?;
                    cases.push(AuditCase {
                        name: format!("{}_beta{beta}", img.name),
                        noisy: synthesize(&img.clean, &model, spec.run.mash.seed, i)?,
                        clean: img.clean.clone(),
                    });
                }
            }
            let report = masking_accuracy_audit(&cases, &spec.run)?;
            create_dir(out_dir)?;
            write_text(&out_dir.join("audit.csv"), &report.to_csv()?)?;
            let hits = report.entries.iter().filter(|e| e.success).count();
            println!("accuracy={} ({hits}/{})", report.accuracy, report.entries.len());
        }
        Command::Metrics { reference, test } => {
            let m = MetricReport::compute(&load_image(reference)?, &load_image(test)?)?;
            println!("psnr={}", m.psnr);
            println!("ssim={}", m.ssim);
        }
    }
    Ok(())
}
