//! Blind-spot training machinery: Bernoulli masks, the masked loss step,
//! noise-level estimation, the estimation gap, adaptive ratio selection and
//! masked ensemble inference.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{adam_step, DenoiserModel, OptimState, Real, Workspace};
use crate::rng::Rng;

/// Binary blindness mask: `0` hides an element from the network, `1` shows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    channels: usize,
    bits: Vec<u8>,
    tau: f64,
}

impl Mask {
    pub fn from_bits(height: usize, width: usize, channels: usize, bits: Vec<u8>, tau: f64) -> Result<Self> {
        if bits.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "mask of {} bits for {height}x{width}x{channels}",
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask bits must be 0 or 1".into()));
        }
        Ok(Mask {
            height,
            width,
            channels,
            bits,
            tau,
        })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Nominal masking ratio the mask was drawn with.
    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Realised fraction of blinded elements.
    pub fn zero_fraction(&self) -> f64 {
        self.bits.iter().filter(|&&b| b == 0).count() as f64 / self.bits.len() as f64
    }

    /// `y * m`: blinded elements become 0.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.shape() != self.shape() {
            return Err(Error::ShapeMismatch(format!(
                "mask {:?} vs image {:?}",
                self.shape(),
                img.shape()
            )));
        }
        let mut out = img.clone();
        out.data_mut().iter_mut().zip(&self.bits).for_each(|(v, &b)| {
            if b == 0 {
                *v = 0.0;
            }
        });
        Ok(out)
    }

    /// Loss weights `1 - m`: one on blinded elements, zero elsewhere.
    pub fn blind_weights(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| (1 - b) as f32).collect()
    }
}

/// Draws an independent Bernoulli mask: each element is hidden with probability `tau`.
pub fn sample_mask(h: usize, w: usize, c: usize, tau: f64, rng: &mut Rng) -> Result<Mask> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("masking ratio {tau} outside [0, 1]")));
    }
    let bits = (0..h * w * c)
        .map(|_| if rng.random::<f64>() < tau { 0 } else { 1 })
        .collect();
    Mask::from_bits(h, w, c, bits, tau)
}

/// Root-mean-square residual `sqrt(mean((prediction - y)^2))`.
pub fn rms_residual(prediction: &Image, y: &Image) -> Result<f64> {
    Ok(crate::metrics::mse(prediction, y)?.sqrt())
}

/// Outcome of one masked training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Noise-level estimate from this step's masked prediction against `y`.
    pub sigma: f64,
}

/// Model, optimizer and scratch space for one training run.
#[derive(Debug)]
pub struct Trainer<T: Real = f32> {
    pub model: DenoiserModel<T>,
    pub opt: OptimState<T>,
    ws: Workspace<T>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: DenoiserModel<T>, opt: OptimState<T>) -> Self {
        Trainer {
            model,
            opt,
            ws: Workspace::new(),
        }
    }

    /// Draws a fresh mask, evaluates the masked loss against `target` with
    /// input `y * m`, and applies one Adam step.
    pub fn step(&mut self, y: &Image, target: &Image, tau: f64, rng: &mut Rng) -> Result<StepOutcome> {
        y.check_same_shape(target, "training target")?;
        let (h, w, c) = y.shape();
        let mask = sample_mask(h, w, c, tau, rng)?;
        let input = mask.apply(y)?;
        let step = self.opt.step;
        let eval = self
            .model
            .evaluate(&input, target, &mask.blind_weights(), &mut self.ws)
            .map_err(|e| match e {
                Error::Divergence { detail, .. } => Error::Divergence { step, detail },
                other => other,
            })?;
        let sigma = rms_residual(&eval.prediction, y)?;
        adam_step(&mut self.model, &mut self.opt, &eval.grads)?;
        if !self.model.all_finite() {
            return Err(Error::Divergence {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }
        Ok(StepOutcome { loss: eval.loss, sigma })
    }

    pub fn forward(&mut self, input: &Image) -> Result<Image> {
        self.model.forward_with(input, &mut self.ws)
    }
}

/// One masked training step on a bare model/optimizer pair; returns the loss.
pub fn bsd_train_step<T: Real>(
    model: &mut DenoiserModel<T>,
    opt: &mut OptimState<T>,
    y: &Image,
    target: &Image,
    tau: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let mut trainer = Trainer::new(model.clone(), opt.clone());
    let out = trainer.step(y, target, tau, rng)?;
    *model = trainer.model;
    *opt = trainer.opt;
    Ok(out.loss)
}

/// Noise-level estimate: the RMS residual of `f(m * y)` against `y`,
/// averaged over `n_eval` fresh masks at ratio `tau`.
pub fn estimate_sigma<T: Real>(
    model: &DenoiserModel<T>,
    y: &Image,
    tau: f64,
    rng: &mut Rng,
    n_eval: usize,
) -> Result<f64> {
    estimate_sigma_with(|input| model.forward(input), y, tau, rng, n_eval)
}

/// [`estimate_sigma`] for any predictor `f`.
pub fn estimate_sigma_with(
    mut f: impl FnMut(&Image) -> Result<Image>,
    y: &Image,
    tau: f64,
    rng: &mut Rng,
    n_eval: usize,
) -> Result<f64> {
    if n_eval == 0 {
        return Err(Error::InvalidArgument("n_eval must be positive".into()));
    }
    let (h, w, c) = y.shape();
    let mut total = 0.0;
    for _ in 0..n_eval {
        let mask = sample_mask(h, w, c, tau, rng)?;
        let pred = f(&mask.apply(y)?)?;
        total += rms_residual(&pred, y)?;
    }
    Ok(total / n_eval as f64)
}

/// `|sigma_high - sigma_low|`
pub fn estimation_gap(sigma_high: f64, sigma_low: f64) -> f64 {
    (sigma_high - sigma_low).abs()
}

/// Hyperparameters of the adaptive procedure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MashConfig {
    pub tau_low: f64,
    pub tau_medium: f64,
    pub tau_high: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    /// Total training iterations of the final run.
    pub iterations: usize,
    /// Iteration at which the shuffled target is built.
    pub shuffle_start: usize,
    pub warmup_iters: usize,
    pub ensemble_k: usize,
    pub tile: usize,
    pub lambda: f64,
    /// Number of final warm-up iterations averaged into the converged estimate.
    pub sigma_window: usize,
    pub seed: u64,
}

impl Default for MashConfig {
    fn default() -> Self {
        MashConfig {
            tau_low: 0.2,
            tau_medium: 0.5,
            tau_high: 0.8,
            eps_low: 1.5,
            eps_high: 2.5,
            iterations: 800,
            shuffle_start: 400,
            warmup_iters: 800,
            ensemble_k: 10,
            tile: 4,
            lambda: 5.0,
            sigma_window: 50,
            seed: 0,
        }
    }
}

impl MashConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(0.0 < self.tau_low
            && self.tau_low < self.tau_medium
            && self.tau_medium < self.tau_high
            && self.tau_high < 1.0)
        {
            return bad(format!(
                "need 0 < tau_low < tau_medium < tau_high < 1, got {} / {} / {}",
                self.tau_low, self.tau_medium, self.tau_high
            ));
        }
        if !(0.0 < self.eps_low && self.eps_low < self.eps_high) {
            return bad(format!(
                "need 0 < eps_low < eps_high, got {} / {}",
                self.eps_low, self.eps_high
            ));
        }
        if !(0 < self.shuffle_start && self.shuffle_start < self.iterations) {
            return bad(format!(
                "need 0 < shuffle_start < iterations, got {} / {}",
                self.shuffle_start, self.iterations
            ));
        }
        if self.ensemble_k == 0 {
            return bad("ensemble_k must be >= 1".into());
        }
        if self.tile < 2 {
            return bad(format!("tile must be >= 2, got {}", self.tile));
        }
        if self.lambda.is_nan() || self.lambda <= 0.0 {
            return bad(format!("lambda must be > 0, got {}", self.lambda));
        }
        if self.warmup_iters == 0 || self.sigma_window == 0 || self.sigma_window > self.warmup_iters {
            return bad(format!(
                "need 0 < sigma_window <= warmup_iters, got {} / {}",
                self.sigma_window, self.warmup_iters
            ));
        }
        Ok(())
    }
}

/// Selects the masking ratio from the estimation gap.
///
/// `eps <= eps_low` picks `tau_low`; `eps_low < eps <= eps_high` picks
/// `tau_medium`; `eps > eps_high` picks `tau_high` and enables shuffling.
/// The gap exactly at `eps_high` falls in the middle band.
pub fn select_tau(eps: f64, cfg: &MashConfig) -> (f64, bool) {
    if eps <= cfg.eps_low {
        (cfg.tau_low, false)
    } else if eps <= cfg.eps_high {
        (cfg.tau_medium, false)
    } else {
        (cfg.tau_high, true)
    }
}

/// Decision record of the adaptive ratio selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport {
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub epsilon: f64,
    pub tau_optimal: f64,
    pub shuffle_enabled: bool,
    pub seed: u64,
}

impl GapReport {
    pub fn from_estimates(sigma_low: f64, sigma_high: f64, cfg: &MashConfig) -> Self {
        let epsilon = estimation_gap(sigma_high, sigma_low);
        let (tau_optimal, shuffle_enabled) = select_tau(epsilon, cfg);
        GapReport {
            sigma_low,
            sigma_high,
            epsilon,
            tau_optimal,
            shuffle_enabled,
            seed: cfg.seed,
        }
    }
}

/// Flat `key=value` record, one field per line.
impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sigma_low={}", self.sigma_low)?;
        writeln!(f, "sigma_high={}", self.sigma_high)?;
        writeln!(f, "epsilon={}", self.epsilon)?;
        writeln!(f, "tau_optimal={}", self.tau_optimal)?;
        writeln!(f, "shuffle_enabled={}", self.shuffle_enabled)?;
        writeln!(f, "seed={}", self.seed)
    }
}

impl FromStr for GapReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .ok_or_else(|| Error::InvalidConfig(format!("gap report missing {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("gap report field {k} is not a number")))
        };
        Ok(GapReport {
            sigma_low: num("sigma_low")?,
            sigma_high: num("sigma_high")?,
            epsilon: num("epsilon")?,
            tau_optimal: num("tau_optimal")?,
            shuffle_enabled: get("shuffle_enabled")?
                .parse()
                .map_err(|_| Error::InvalidConfig("shuffle_enabled must be true/false".into()))?,
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::InvalidConfig("seed must be an integer".into()))?,
        })
    }
}

/// Averages `k` predictions `f(m_p * y)` under fresh masks at ratio `tau`.
pub fn ensemble_predict<T: Real>(
    model: &DenoiserModel<T>,
    y: &Image,
    tau: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<Image> {
    let mut ws = Workspace::new();
    ensemble_predict_with(|input| model.forward_with(input, &mut ws), y, tau, k, rng)
}

/// [`ensemble_predict`] for any predictor `f`.
pub fn ensemble_predict_with(
    mut f: impl FnMut(&Image) -> Result<Image>,
    y: &Image,
    tau: f64,
    k: usize,
    rng: &mut Rng,
) -> Result<Image> {
    if k == 0 {
        return Err(Error::InvalidArgument("ensemble size must be >= 1".into()));
    }
    let (h, w, c) = y.shape();
    let mut acc = vec![0.0f64; y.len()];
    for _ in 0..k {
        let mask = sample_mask(h, w, c, tau, rng)?;
        let pred = f(&mask.apply(y)?)?;
        acc.iter_mut().zip(pred.data()).for_each(|(a, &p)| *a += p as f64);
    }
    let inv = 1.0 / k as f64;
    Image::new(h, w, c, acc.into_iter().map(|v| (v * inv) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{AdamConfig, NetConfig};
    use crate::rng::seeded;

    #[test]
    fn degenerate_masks() {
        let m = sample_mask(4, 5, 3, 0.0, &mut seeded(1)).unwrap();
        assert!(m.bits().iter().all(|&b| b == 1));
        let m = sample_mask(4, 5, 3, 1.0, &mut seeded(1)).unwrap();
        assert!(m.bits().iter().all(|&b| b == 0));
        assert!(sample_mask(2, 2, 1, 1.5, &mut seeded(1)).is_err());
        assert!(sample_mask(2, 2, 1, -0.1, &mut seeded(1)).is_err());
    }

    #[test]
    fn mask_ratio_concentrates() {
        let m = sample_mask(256, 256, 3, 0.8, &mut seeded(5)).unwrap();
        assert!((m.zero_fraction() - 0.8).abs() < 0.004, "{}", m.zero_fraction());
    }

    #[test]
    fn mask_apply_and_weights() {
        let m = Mask::from_bits(1, 2, 1, vec![0, 1], 0.5).unwrap();
        let y = Image::new(1, 2, 1, vec![7.0, 9.0]).unwrap();
        assert_eq!(m.apply(&y).unwrap().data(), &[0.0, 9.0]);
        assert_eq!(m.blind_weights(), vec![1.0, 0.0]);
    }

    #[test]
    fn gap_is_symmetric_absolute_difference() {
        assert_eq!(estimation_gap(5.0, 5.0), 0.0);
        assert_eq!(estimation_gap(9.0, 6.5), 2.5);
        assert_eq!(estimation_gap(6.5, 9.0), 2.5);
    }

    #[test]
    fn selection_boundaries() {
        let cfg = MashConfig::default();
        assert_eq!(select_tau(1.5, &cfg), (0.2, false));
        assert_eq!(select_tau(2.0, &cfg), (0.5, false));
        assert_eq!(select_tau(2.5, &cfg), (0.5, false));
        assert_eq!(select_tau(3.0, &cfg), (0.8, true));
        assert_eq!(select_tau(0.0, &cfg), (0.2, false));
    }

    #[test]
    fn sigma_estimate_closed_forms() {
        let y = Image::from_fn(8, 8, 1, |r, c, _| (r * 8 + c) as f32).unwrap();
        let exact = estimate_sigma_with(|_| Ok(y.clone()), &y, 0.5, &mut seeded(0), 3).unwrap();
        assert_eq!(exact, 0.0);
        let shifted = estimate_sigma_with(|_| Ok(y.map(|v| v + 10.0)), &y, 0.5, &mut seeded(0), 3).unwrap();
        assert!((shifted - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ensemble_single_pass_is_forward() {
        let model = DenoiserModel::<f32>::init(NetConfig::reduced(3), &mut seeded(2)).unwrap();
        let y = Image::from_fn(16, 16, 3, |r, c, ch| ((r * 11 + c * 5 + ch * 60) % 256) as f32).unwrap();
        let ens = ensemble_predict(&model, &y, 0.0, 1, &mut seeded(3)).unwrap();
        assert_eq!(ens, model.forward(&y).unwrap());
    }

    #[test]
    fn ensemble_of_constant_model_is_constant() {
        // zeroed final layer with bias b: output is the constant 255 b
        let mut model = DenoiserModel::<f32>::init(NetConfig::reduced(1), &mut seeded(2)).unwrap();
        let last = model.layers().len() - 1;
        let layer = &mut model.layers_mut()[last];
        layer.weight.iter_mut().for_each(|w| *w = 0.0);
        layer.bias[0] = 0.5;
        let y = Image::from_fn(16, 16, 1, |r, c, _| (r * 16 + c) as f32).unwrap();
        for k in [1, 4, 10] {
            let out = ensemble_predict(&model, &y, 0.5, k, &mut seeded(k as u64)).unwrap();
            assert!(out.data().iter().all(|&v| v == 127.5));
        }
    }

    #[test]
    fn zero_ratio_step_leaves_model_unchanged() {
        let mut model = DenoiserModel::<f32>::init(NetConfig::reduced(1), &mut seeded(2)).unwrap();
        let before = model.clone();
        let mut opt = OptimState::new(&model, AdamConfig::new(10));
        let y = Image::from_fn(16, 16, 1, |r, c, _| (r * 16 + c) as f32).unwrap();
        let loss = bsd_train_step(&mut model, &mut opt, &y, &y, 0.0, &mut seeded(1)).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(model, before);
    }

    #[test]
    fn gap_report_round_trips_as_key_value() {
        let cfg = MashConfig {
            seed: 42,
            ..MashConfig::default()
        };
        let r = GapReport::from_estimates(21.25, 24.5, &cfg);
        assert_eq!(r.epsilon, 3.25);
        assert!(r.shuffle_enabled);
        let text = r.to_string();
        assert!(text.contains("tau_optimal=0.8\n"));
        assert_eq!(text.parse::<GapReport>().unwrap(), r);
    }

    #[test]
    fn config_validation() {
        assert!(MashConfig::default().validate().is_ok());
        let bad = MashConfig {
            shuffle_start: 800,
            ..MashConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MashConfig {
            tau_low: 0.6,
            ..MashConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
