//! Single-image runs: warm-ups, the fixed-ratio baseline and the adaptive run.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::bsd::{ensemble_predict, GapReport, Trainer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::MetricReport;
use crate::net::{DenoiserModel, OptimState};
use crate::noise::NoiseModel;
use crate::par;
use crate::rng::{ensemble_stage, ratio_index, Purpose, SeedStreams};
use crate::shuffle::{flatness_map, local_shuffle, FlatnessMap};

use super::config::RunConfig;

/// Description of the input image.
#[derive(Debug, Clone, PartialEq)]
pub struct InputInfo {
    pub source: String,
    pub shape: (usize, usize, usize),
    pub noise: Option<NoiseModel>,
}

impl InputInfo {
    pub fn of(img: &Image) -> Self {
        InputInfo {
            source: "memory".into(),
            shape: img.shape(),
            noise: None,
        }
    }
}

/// Per-iteration loss and noise-level estimate of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub tau: f64,
    pub loss: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TrainingTrace {
    fn new(tau: f64, capacity: usize) -> Self {
        TrainingTrace {
            tau,
            loss: Vec::with_capacity(capacity),
            sigma: Vec::with_capacity(capacity),
        }
    }

    /// Mean estimate over the last `window` iterations.
    pub fn converged_sigma(&self, window: usize) -> f64 {
        let n = self.sigma.len();
        let tail = &self.sigma[n - window.min(n)..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub input: InputInfo,
    /// Ratio selection; `None` for fixed-ratio runs.
    pub gap: Option<GapReport>,
    pub tau: f64,
    pub shuffle_enabled: bool,
    /// Fraction of flat pixels when shuffling ran.
    pub flat_fraction: Option<f64>,
    pub trace: TrainingTrace,
    pub warmup_low: Option<TrainingTrace>,
    pub warmup_high: Option<TrainingTrace>,
    pub metrics: Option<MetricReport>,
    pub wall_clock: f64,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunReport {
    /// Converged estimate of the final run.
    pub fn sigma_converged(&self) -> f64 {
        self.trace.converged_sigma(self.config.mash.sigma_window)
    }

    /// Flat `key = value` summary followed by the config snapshot.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let (h, w, c) = self.input.shape;
        let _ = writeln!(s, "source = {}", self.input.source);
        let _ = writeln!(s, "shape = {h}x{w}x{c}");
        if let Some(n) = &self.input.noise {
            let _ = writeln!(s, "noise_sigma = {}", n.sigma);
            let _ = writeln!(s, "noise_beta = {}", n.beta);
            let _ = writeln!(s, "noise_kernel_width = {}", n.kernel_width);
        }
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "shuffle_enabled = {}", self.shuffle_enabled);
        if let Some(f) = self.flat_fraction {
            let _ = writeln!(s, "flat_fraction = {f}");
        }
        if let Some(g) = &self.gap {
            let _ = writeln!(s, "sigma_low = {}", g.sigma_low);
            let _ = writeln!(s, "sigma_high = {}", g.sigma_high);
            let _ = writeln!(s, "epsilon = {}", g.epsilon);
        }
        let _ = writeln!(s, "sigma_converged = {}", self.sigma_converged());
        if let Some(m) = &self.metrics {
            let _ = writeln!(s, "psnr = {}", m.psnr);
            let _ = writeln!(s, "ssim = {}", m.ssim);
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "wall_clock = {:.3}", self.wall_clock);
        s.push_str("# config\n");
        s.push_str(&self.config.to_string());
        s
    }

    /// Per-iteration traces of every training run, as CSV.
    pub fn traces_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "tau", "iteration", "loss", "sigma_hat"])
            .map_err(csv_err)?;
        let runs = [
            ("warmup_low", self.warmup_low.as_ref()),
            ("warmup_high", self.warmup_high.as_ref()),
            ("final", Some(&self.trace)),
        ];
        for (name, trace) in runs {
            let Some(t) = trace else { continue };
            for (i, (l, s)) in t.loss.iter().zip(&t.sigma).enumerate() {
                w.write_record([
                    name.to_string(),
                    t.tau.to_string(),
                    (i + 1).to_string(),
                    l.to_string(),
                    s.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
        finish_csv(w)
    }

    /// Writes `report.txt`, `traces.csv` and, for adaptive runs, `gap.txt` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("report.txt"), self.to_record().as_bytes())?;
        write_file(&dir.join("traces.csv"), self.traces_csv()?.as_bytes())?;
        if let Some(g) = &self.gap {
            write_file(&dir.join("gap.txt"), g.to_string().as_bytes())?;
        }
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

pub(crate) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn new_trainer(cfg: &RunConfig, channels: usize, total_steps: usize, streams: &SeedStreams) -> Result<Trainer> {
    let net = cfg.net_for(channels);
    let model = DenoiserModel::<f32>::init(net, &mut streams.rng(Purpose::Init, 0))?;
    let opt = OptimState::new(&model, cfg.adam(total_steps));
    Ok(Trainer::new(model, opt))
}

/// Reflect-pads `y` to the network's size multiple.
fn pad_for_net(y: &Image, cfg: &RunConfig) -> Result<Image> {
    let padded = y.reflect_pad_to_multiple(cfg.net.size_multiple())?;
    cfg.net_for(y.channels())
        .check_input(padded.height(), padded.width(), padded.channels())?;
    Ok(padded)
}

fn crop_back(out: &Image, y: &Image) -> Result<Image> {
    out.crop(0, 0, y.height(), y.width())
}

/// Outcome of one fixed-ratio training run on a padded image.
struct FixedRun {
    output: Image,
    trace: TrainingTrace,
    flatness: Option<FlatnessMap>,
}

/// Trains a fresh model for `iterations` steps at ratio `tau`.
///
/// With `lps`, the first `shuffle_start` steps use target `y`; then a
/// pseudo-clean ensemble decides the flat tiles, `y` is shuffled inside them
/// and the remaining steps use the shuffled target.
fn fixed_run(yp: &Image, tau: f64, lps: bool, cfg: &RunConfig, streams: &SeedStreams) -> Result<FixedRun> {
    let m = &cfg.mash;
    let mut trainer = new_trainer(cfg, yp.channels(), m.iterations, streams)?;
    let mut masks = streams.rng(Purpose::TrainMask, ratio_index(tau));
    let mut trace = TrainingTrace::new(tau, m.iterations);
    let ens_index = |stage: u64| (ratio_index(tau) << 1) | stage;

    let mut flatness = None;
    let mut target = yp.clone();
    for step in 0..m.iterations {
        if lps && step == m.shuffle_start {
            let mut rng = streams.rng(Purpose::Ensemble, ens_index(ensemble_stage::PSEUDO_CLEAN));
            let pseudo = ensemble_predict(&trainer.model, yp, tau, m.ensemble_k, &mut rng)?;
            let fmap = flatness_map(&pseudo, m.tile, m.lambda)?;
            target = local_shuffle(yp, &fmap, &mut streams.rng(Purpose::Shuffle, ratio_index(tau)))?.image;
            flatness = Some(fmap);
        }
        let out = trainer.step(yp, &target, tau, &mut masks)?;
        trace.loss.push(out.loss);
        trace.sigma.push(out.sigma);
    }
    let mut rng = streams.rng(Purpose::Ensemble, ens_index(ensemble_stage::OUTPUT));
    let output = ensemble_predict(&trainer.model, yp, tau, m.ensemble_k, &mut rng)?;
    Ok(FixedRun {
        output,
        trace,
        flatness,
    })
}

fn warmup_padded(yp: &Image, tau: f64, cfg: &RunConfig, streams: &SeedStreams) -> Result<TrainingTrace> {
    let iters = cfg.mash.warmup_iters;
    let mut trainer = new_trainer(cfg, yp.channels(), iters, streams)?;
    let mut masks = streams.rng(Purpose::TrainMask, ratio_index(tau));
    let mut trace = TrainingTrace::new(tau, iters);
    for _ in 0..iters {
        let out = trainer.step(yp, yp, tau, &mut masks)?;
        trace.loss.push(out.loss);
        trace.sigma.push(out.sigma);
    }
    Ok(trace)
}

/// Warm-up training at ratio `tau`: `warmup_iters` steps from a fresh model,
/// returning the per-iteration trace. The model is discarded.
pub fn warmup(y: &Image, tau: f64, cfg: &RunConfig) -> Result<TrainingTrace> {
    cfg.validate()?;
    warmup_padded(&pad_for_net(y, cfg)?, tau, cfg, &SeedStreams::new(cfg.mash.seed))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    y: &Image,
    clean: Option<&Image>,
    cfg: &RunConfig,
    started: Instant,
    run: FixedRun,
    tau: f64,
    shuffle_enabled: bool,
) -> Result<(Image, RunReport)> {
    let denoised = crop_back(&run.output, y)?;
    let metrics = clean.map(|c| MetricReport::compute(c, &denoised)).transpose()?;
    let report = RunReport {
        input: InputInfo::of(y),
        gap: None,
        tau,
        shuffle_enabled,
        flat_fraction: run.flatness.as_ref().map(FlatnessMap::flat_fraction),
        trace: run.trace,
        warmup_low: None,
        warmup_high: None,
        metrics,
        wall_clock: started.elapsed().as_secs_f64(),
        seed: cfg.mash.seed,
        config: *cfg,
    };
    Ok((denoised, report))
}

/// Fixed-ratio run with local shuffling switched on or off.
pub fn run_fixed(y: &Image, tau: f64, lps: bool, cfg: &RunConfig, clean: Option<&Image>) -> Result<(Image, RunReport)> {
    let started = Instant::now();
    cfg.validate()?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("masking ratio {tau} outside [0, 1]")));
    }
    let yp = pad_for_net(y, cfg)?;
    let run = fixed_run(&yp, tau, lps, cfg, &SeedStreams::new(cfg.mash.seed))?;
    finish(y, clean, cfg, started, run, tau, lps)
}

/// Blind-spot baseline: `iterations` steps at a fixed ratio, no shuffling,
/// ensemble output.
pub fn run_baseline(y: &Image, tau: f64, cfg: &RunConfig, clean: Option<&Image>) -> Result<(Image, RunReport)> {
    run_fixed(y, tau, false, cfg, clean)
}

/// The adaptive procedure: two warm-ups at the low and high ratios, the
/// estimation gap, ratio selection, then a fresh final run at the selected
/// ratio with shuffling when the gap is large.
pub fn run_mash(y: &Image, cfg: &RunConfig, clean: Option<&Image>) -> Result<(Image, RunReport)> {
    let started = Instant::now();
    cfg.validate()?;
    let m = &cfg.mash;
    let yp = pad_for_net(y, cfg)?;
    let streams = SeedStreams::new(m.seed);
    let (low, high) = par::join(
        || warmup_padded(&yp, m.tau_low, cfg, &streams),
        || warmup_padded(&yp, m.tau_high, cfg, &streams),
    );
    let (low, high) = (low?, high?);
    let gap = GapReport::from_estimates(
        low.converged_sigma(m.sigma_window),
        high.converged_sigma(m.sigma_window),
        m,
    );
    let run = fixed_run(&yp, gap.tau_optimal, gap.shuffle_enabled, cfg, &streams)?;
    let (denoised, mut report) = finish(y, clean, cfg, started, run, gap.tau_optimal, gap.shuffle_enabled)?;
    report.gap = Some(gap);
    report.warmup_low = Some(low);
    report.warmup_high = Some(high);
    report.wall_clock = started.elapsed().as_secs_f64();
    Ok((denoised, report))
}
