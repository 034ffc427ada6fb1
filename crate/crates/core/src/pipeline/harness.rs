//! Experiment harness: masking-ratio sweeps, the selection audit and
//! noise-level estimate curves over synthetic noisy images.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use crate::bsd::GapReport;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::psnr;
use crate::noise::{add_noise, NoiseModel};
use crate::par;
use crate::rng::{noise_index, Purpose, SeedStreams};

use super::config::{parse, parse_list, RunConfig};
use super::run::{csv_err, finish_csv, run_baseline, run_fixed, warmup, write_file, TrainingTrace};

/// A clean image with a display name.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedImage {
    pub name: String,
    pub clean: Image,
}

/// Adds correlated noise to image number `index` of a suite. The same
/// `(seed, index, beta)` always gives the same noisy image, whatever else
/// the experiment does.
pub fn synthesize(clean: &Image, model: &NoiseModel, seed: u64, index: usize) -> Result<Image> {
    let mut rng = SeedStreams::new(seed).rng(Purpose::Noise, noise_index(index, model.beta));
    add_noise(clean, model, &mut rng)
}

/// Grid of fixed-ratio runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub images: Vec<NamedImage>,
    pub taus: Vec<f64>,
    pub betas: Vec<f64>,
    pub sigma: f64,
    pub kernel_width: f64,
    /// Seeds per cell: `run.mash.seed`, `run.mash.seed + 1`, ...
    pub repetitions: usize,
    pub lps: Vec<bool>,
    pub out_dir: Option<PathBuf>,
    pub run: RunConfig,
}

impl SweepSpec {
    pub fn new(images: Vec<NamedImage>, run: RunConfig) -> Self {
        SweepSpec {
            images,
            taus: vec![0.1, 0.2, 0.3, 0.5, 0.7, 0.8],
            betas: vec![0.0, 1.0],
            sigma: 25.0,
            kernel_width: 3.0,
            repetitions: 1,
            lps: vec![false],
            out_dir: None,
            run,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.images.is_empty() {
            return bad("sweep needs at least one image");
        }
        if self.taus.is_empty() || self.betas.is_empty() || self.lps.is_empty() {
            return bad("sweep grids must be non-empty");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return bad("masking ratios must lie in [0, 1]");
        }
        for &b in &self.betas {
            NoiseModel::new(self.sigma, b, self.kernel_width)?;
        }
        self.run.validate()
    }

    /// Number of cells including repetitions.
    pub fn cardinality(&self) -> usize {
        self.images.len() * self.betas.len() * self.taus.len() * self.repetitions * self.lps.len()
    }

    /// Sets one sweep field by name. Returns `Ok(false)` for keys it does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "taus" => self.taus = parse_list(key, value)?,
            "betas" => self.betas = parse_list(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "kernel_width" => self.kernel_width = parse(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "lps" => self.lps = parse_list(key, value)?,
            _ => return self.run.set(key, value),
        }
        Ok(true)
    }

    fn noise(&self, beta: f64) -> Result<NoiseModel> {
        NoiseModel::new(self.sigma, beta, self.kernel_width)
    }
}

/// One successful sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub image: String,
    pub tau: f64,
    pub beta: f64,
    pub seed: u64,
    pub lps: bool,
    pub psnr: f64,
    pub ssim: f64,
    pub noisy_psnr: f64,
    pub sigma_hat: f64,
    pub wall_clock: f64,
}

/// A sweep cell whose run returned an error.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepFailure {
    pub image: String,
    pub tau: f64,
    pub beta: f64,
    pub seed: u64,
    pub lps: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "image",
    "tau",
    "beta",
    "seed",
    "lps",
    "psnr",
    "ssim",
    "noisy_psnr",
    "sigma_hat",
    "wall_clock",
];

impl SweepTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SWEEP_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.image.clone(),
                r.tau.to_string(),
                r.beta.to_string(),
                r.seed.to_string(),
                r.lps.to_string(),
                r.psnr.to_string(),
                r.ssim.to_string(),
                r.noisy_psnr.to_string(),
                r.sigma_hat.to_string(),
                format!("{:.3}", r.wall_clock),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn failures_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image", "tau", "beta", "seed", "lps", "error"])
            .map_err(csv_err)?;
        for f in &self.failures {
            w.write_record([
                f.image.clone(),
                f.tau.to_string(),
                f.beta.to_string(),
                f.seed.to_string(),
                f.lps.to_string(),
                f.error.clone(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Rows matching a predicate.
    pub fn select(&self, mut pred: impl FnMut(&SweepRow) -> bool) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| pred(r)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    image: usize,
    beta: f64,
    tau: f64,
    rep: usize,
    lps: bool,
}

/// Runs every `(image, beta, tau, seed, lps)` cell and collects one row per
/// cell, ordered by grid coordinates. Failed cells are recorded, not dropped.
/// Writes `sweep.csv` and `failures.csv` when an output directory is set.
pub fn sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let base_seed = spec.run.mash.seed;
    let mut noisy = BTreeMap::new();
    for (i, img) in spec.images.iter().enumerate() {
        for (b, &beta) in spec.betas.iter().enumerate() {
            for rep in 0..spec.repetitions {
                let y = synthesize(&img.clean, &spec.noise(beta)?, base_seed + rep as u64, i)?;
                noisy.insert((i, b, rep), y);
            }
        }
    }
    let mut cells = Vec::with_capacity(spec.cardinality());
    for image in 0..spec.images.len() {
        for (b, &beta) in spec.betas.iter().enumerate() {
            for &tau in &spec.taus {
                for rep in 0..spec.repetitions {
                    for &lps in &spec.lps {
                        cells.push((
                            b,
                            Cell {
                                image,
                                beta,
                                tau,
                                rep,
                                lps,
                            },
                        ));
                    }
                }
            }
        }
    }
    let results = par::map(cells, |(b, cell)| {
        let started = Instant::now();
        let y = &noisy[&(cell.image, b, cell.rep)];
        let clean = &spec.images[cell.image].clean;
        let mut cfg = spec.run;
        cfg.mash.seed = base_seed + cell.rep as u64;
        let out = run_fixed(y, cell.tau, cell.lps, &cfg, Some(clean)).and_then(|(_, report)| {
            let m = report.metrics.expect("ground truth supplied");
            Ok((m, report.sigma_converged(), psnr(clean, y, 255.0)?))
        });
        (cell, cfg.mash.seed, out, started.elapsed().as_secs_f64())
    });
    let mut table = SweepTable::default();
    for (cell, seed, out, secs) in results {
        let image = spec.images[cell.image].name.clone();
        match out {
            Ok((m, sigma_hat, noisy_psnr)) => table.rows.push(SweepRow {
                image,
                tau: cell.tau,
                beta: cell.beta,
                seed,
                lps: cell.lps,
                psnr: m.psnr,
                ssim: m.ssim,
                noisy_psnr,
                sigma_hat,
                wall_clock: secs,
            }),
            Err(e) => table.failures.push(SweepFailure {
                image,
                tau: cell.tau,
                beta: cell.beta,
                seed,
                lps: cell.lps,
                error: e.to_string(),
            }),
        }
    }
    if let Some(dir) = &spec.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("sweep.csv"), table.to_csv()?.as_bytes())?;
        write_file(&dir.join("failures.csv"), table.failures_csv()?.as_bytes())?;
    }
    Ok(table)
}

/// Noisy input with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditCase {
    pub name: String,
    pub noisy: Image,
    pub clean: Image,
}

/// Selection outcome on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    /// `(tau, psnr)` of the three fixed-ratio baselines.
    pub psnr_by_tau: Vec<(f64, f64)>,
    pub gap: GapReport,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
    pub accuracy: f64,
}

impl AuditReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "image",
            "psnr_low",
            "psnr_medium",
            "psnr_high",
            "sigma_low",
            "sigma_high",
            "epsilon",
            "tau_optimal",
            "shuffle_enabled",
            "success",
        ])
        .map_err(csv_err)?;
        for e in &self.entries {
            let mut rec = vec![e.name.clone()];
            rec.extend(e.psnr_by_tau.iter().map(|(_, p)| p.to_string()));
            rec.extend([
                e.gap.sigma_low.to_string(),
                e.gap.sigma_high.to_string(),
                e.gap.epsilon.to_string(),
                e.gap.tau_optimal.to_string(),
                e.gap.shuffle_enabled.to_string(),
                e.success.to_string(),
            ]);
            w.write_record(rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

/// The selected ratio counts as correct when its PSNR equals the best of
/// the fixed-ratio runs, so exact ties accept any maximiser.
pub fn selection_matches(psnr_by_tau: &[(f64, f64)], tau_optimal: f64) -> bool {
    let best = psnr_by_tau.iter().map(|&(_, p)| p).fold(f64::NEG_INFINITY, f64::max);
    psnr_by_tau.iter().any(|&(t, p)| t == tau_optimal && p == best)
}

/// Runs the three fixed-ratio baselines and the gap selection on every case
/// and reports how often the selected ratio is a PSNR maximiser.
///
/// A warm-up at ratio `tau` is the baseline run at `tau` cut to
/// `warmup_iters` steps, so when `warmup_iters == iterations` the baseline
/// traces at the low and high ratios double as the warm-ups.
pub fn masking_accuracy_audit(cases: &[AuditCase], cfg: &RunConfig) -> Result<AuditReport> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("audit needs at least one image".into()));
    }
    cfg.validate()?;
    let m = cfg.mash;
    let taus = [m.tau_low, m.tau_medium, m.tau_high];
    let jobs: Vec<(usize, f64)> = (0..cases.len()).flat_map(|i| taus.map(|t| (i, t))).collect();
    let runs = par::map(jobs, |(i, tau)| {
        run_baseline(&cases[i].noisy, tau, cfg, Some(&cases[i].clean))
    });
    let mut runs = runs.into_iter();
    let mut entries = Vec::with_capacity(cases.len());
    for case in cases {
        let mut psnr_by_tau = Vec::with_capacity(3);
        let mut traces = Vec::with_capacity(3);
        for &tau in &taus {
            let (_, report) = runs.next().expect("one run per job")?;
            psnr_by_tau.push((tau, report.metrics.expect("ground truth supplied").psnr));
            traces.push(report.trace);
        }
        let (low, high) = if m.warmup_iters == m.iterations {
            let high = traces.pop().expect("three traces");
            (traces.swap_remove(0), high)
        } else {
            let (a, b) = par::join(
                || warmup(&case.noisy, m.tau_low, cfg),
                || warmup(&case.noisy, m.tau_high, cfg),
            );
            (a?, b?)
        };
        let gap = GapReport::from_estimates(
            low.converged_sigma(m.sigma_window),
            high.converged_sigma(m.sigma_window),
            &m,
        );
        entries.push(AuditEntry {
            name: case.name.clone(),
            success: selection_matches(&psnr_by_tau, gap.tau_optimal),
            psnr_by_tau,
            gap,
        });
    }
    let accuracy = entries.iter().filter(|e| e.success).count() as f64 / entries.len() as f64;
    Ok(AuditReport { entries, accuracy })
}

/// Warm-up estimate traces for every image and correlation strength.
#[derive(Debug, Clone, PartialEq)]
pub struct GapCurves {
    pub curves: Vec<GapCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapCurve {
    pub image: String,
    pub beta: f64,
    pub low: TrainingTrace,
    pub high: TrainingTrace,
    pub epsilon: f64,
}

impl GapCurves {
    /// `image,beta,tau,iteration,sigma_hat`, one row per warm-up iteration.
    pub fn traces_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image", "beta", "tau", "iteration", "sigma_hat"])
            .map_err(csv_err)?;
        for c in &self.curves {
            for t in [&c.low, &c.high] {
                for (i, s) in t.sigma.iter().enumerate() {
                    w.write_record([
                        c.image.clone(),
                        c.beta.to_string(),
                        t.tau.to_string(),
                        (i + 1).to_string(),
                        s.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        finish_csv(w)
    }

    /// `image,beta,sigma_low,sigma_high,epsilon`, plus one `mean` row per beta.
    pub fn summary_csv(&self, window: usize) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["image", "beta", "sigma_low", "sigma_high", "epsilon"])
            .map_err(csv_err)?;
        for c in &self.curves {
            w.write_record([
                c.image.clone(),
                c.beta.to_string(),
                c.low.converged_sigma(window).to_string(),
                c.high.converged_sigma(window).to_string(),
                c.epsilon.to_string(),
            ])
            .map_err(csv_err)?;
        }
        for (beta, eps) in self.mean_epsilon() {
            w.write_record([
                "mean".to_string(),
                beta.to_string(),
                String::new(),
                String::new(),
                eps.to_string(),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// Mean gap over images per beta, in first-seen beta order.
    pub fn mean_epsilon(&self) -> Vec<(f64, f64)> {
        let mut betas: Vec<f64> = Vec::new();
        for c in &self.curves {
            if !betas.contains(&c.beta) {
                betas.push(c.beta);
            }
        }
        betas
            .into_iter()
            .map(|b| {
                let e: Vec<f64> = self.curves.iter().filter(|c| c.beta == b).map(|c| c.epsilon).collect();
                (b, e.iter().sum::<f64>() / e.len() as f64)
            })
            .collect()
    }
}

/// Warm-ups at the low and high ratios for every image and beta, with the
/// converged gap of each pair.
pub fn gap_curves(
    images: &[NamedImage],
    betas: &[f64],
    sigma: f64,
    kernel_width: f64,
    cfg: &RunConfig,
) -> Result<GapCurves> {
    if images.is_empty() || betas.is_empty() {
        return Err(Error::InvalidArgument("gap curves need images and betas".into()));
    }
    cfg.validate()?;
    let m = cfg.mash;
    let mut jobs = Vec::new();
    for (i, img) in images.iter().enumerate() {
        for &beta in betas {
            let y = synthesize(&img.clean, &NoiseModel::new(sigma, beta, kernel_width)?, m.seed, i)?;
            jobs.push((i, beta, y.clone(), m.tau_low));
            jobs.push((i, beta, y, m.tau_high));
        }
    }
    let traces = par::map(jobs, |(i, beta, y, tau)| (i, beta, warmup(&y, tau, cfg)));
    let mut curves = Vec::with_capacity(traces.len() / 2);
    let mut it = traces.into_iter();
    while let (Some((i, beta, low)), Some((_, _, high))) = (it.next(), it.next()) {
        let (low, high) = (low?, high?);
        let gap = GapReport::from_estimates(
            low.converged_sigma(m.sigma_window),
            high.converged_sigma(m.sigma_window),
            &m,
        );
        curves.push(GapCurve {
            image: images[i].name.clone(),
            beta,
            low,
            high,
            epsilon: gap.epsilon,
        });
    }
    Ok(GapCurves { curves })
}

/// Mean of the PSNR-argmax ratio over images for one beta, reading
/// lps-off rows of a sweep with a single repetition per cell.
pub fn mean_argmax_tau(table: &SweepTable, beta: f64) -> Option<f64> {
    let mut best: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in table.rows.iter().filter(|r| r.beta == beta && !r.lps) {
        let e = best.entry(&r.image).or_insert((r.tau, r.psnr));
        if r.psnr > e.1 {
            *e = (r.tau, r.psnr);
        }
    }
    if best.is_empty() {
        return None;
    }
    Some(best.values().map(|&(t, _)| t).sum::<f64>() / best.len() as f64)
}
