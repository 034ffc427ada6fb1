//! Spatially correlated Gaussian noise.
//!
//! The covariance between pixels `i` and `j` at distance `d` is
//! `sigma^2` on the diagonal, `beta (k - d) / k sigma^2` for `0 < d <= k` and
//! zero beyond. In two dimensions this triangular kernel is not always
//! positive semidefinite, so both samplers clip negative spectral mass and
//! restore the diagonal to exactly `sigma^2`.
//!
//! Two samplers are provided: an exact eigen-factor sampler for grids up to
//! 4096 pixels and a circulant-embedding sampler for arbitrary sizes. The
//! exact one is the oracle the fast one is validated against.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Largest grid (in pixels) accepted by the exact covariance path.
pub const EXACT_MAX_PIXELS: usize = 4096;

/// Norm used for the pixel distance in the covariance kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    Chebyshev,
}

impl DistanceMetric {
    pub fn distance(self, dr: f64, dc: f64) -> f64 {
        match self {
            DistanceMetric::Euclidean => (dr * dr + dc * dc).sqrt(),
            DistanceMetric::Chebyshev => dr.abs().max(dc.abs()),
        }
    }
}

/// Parameters `(sigma, beta, k)` of the correlated noise covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub sigma: f64,
    pub beta: f64,
    pub kernel_width: f64,
    pub metric: DistanceMetric,
}

impl NoiseModel {
    pub fn new(sigma: f64, beta: f64, kernel_width: f64) -> Result<Self> {
        let model = NoiseModel {
            sigma,
            beta,
            kernel_width,
            metric: DistanceMetric::Euclidean,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_metric(mut self, metric: DistanceMetric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.kernel_width >= 1.0 && self.kernel_width.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be >= 1, got {}",
                self.kernel_width
            )));
        }
        Ok(())
    }

    /// Covariance for a pixel offset `(dr, dc)`.
    pub fn covariance_at_lag(&self, dr: f64, dc: f64) -> f64 {
        let var = self.sigma * self.sigma;
        if dr == 0.0 && dc == 0.0 {
            return var;
        }
        let d = self.metric.distance(dr, dc);
        if d <= self.kernel_width {
            self.beta * (self.kernel_width - d) / self.kernel_width * var
        } else {
            0.0
        }
    }
}

/// Covariance between pixel coordinates `i = (row, col)` and `j`.
pub fn covariance_entry(model: &NoiseModel, i: (usize, usize), j: (usize, usize)) -> f64 {
    model.covariance_at_lag(i.0 as f64 - j.0 as f64, i.1 as f64 - j.1 as f64)
}

/// Dense covariance over an `h x w` grid, pixels in row-major order.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    n: usize,
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_exact_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(Error::EmptyImage);
    }
    if h * w > EXACT_MAX_PIXELS {
        return Err(Error::GridTooLarge(h * w));
    }
    Ok(())
}

/// Raw kernel matrix without PSD repair.
pub fn raw_covariance(model: &NoiseModel, h: usize, w: usize) -> Result<DMatrix<f64>> {
    check_exact_size(h, w)?;
    let n = h * w;
    Ok(DMatrix::from_fn(n, n, |a, b| {
        covariance_entry(model, (a / w, a % w), (b / w, b % w))
    }))
}

/// Assembles the grid covariance and repairs it: negative eigenvalues are
/// clipped to zero, then a diagonal congruence `S C S` puts `sigma^2` back on
/// the diagonal (which keeps the matrix PSD).
pub fn build_covariance(model: &NoiseModel, h: usize, w: usize) -> Result<CovarianceMatrix> {
    model.validate()?;
    let raw = raw_covariance(model, h, w)?;
    let n = raw.nrows();
    let eig = SymmetricEigen::new(raw);
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let mut repaired = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    let var = model.sigma * model.sigma;
    let scale = DVector::from_fn(n, |i, _| {
        let d = repaired[(i, i)];
        if d > 0.0 {
            (var / d).sqrt()
        } else {
            0.0
        }
    });
    for i in 0..n {
        for j in 0..n {
            repaired[(i, j)] *= scale[i] * scale[j];
        }
    }
    // exact symmetry and diagonal, independent of round-off above
    for i in 0..n {
        repaired[(i, i)] = var;
        for j in 0..i {
            let m = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            repaired[(i, j)] = m;
            repaired[(j, i)] = m;
        }
    }
    Ok(CovarianceMatrix { n, entries: repaired })
}

/// Exact sampler: `x = L z` with `L = V sqrt(max(Lambda, 0))` of the repaired covariance.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    h: usize,
    w: usize,
    factor: DMatrix<f64>,
}

impl ExactSampler {
    pub fn new(model: &NoiseModel, h: usize, w: usize) -> Result<Self> {
        let cov = build_covariance(model, h, w)?;
        let eig = SymmetricEigen::new(cov.entries);
        let tol = -1e-8 * model.sigma * model.sigma;
        if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v < tol || !v.is_finite()) {
            return Err(Error::Factorization(format!(
                "repaired covariance has eigenvalue {bad}"
            )));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let mut factor = eig.eigenvectors;
        for (j, r) in roots.iter().enumerate() {
            factor.column_mut(j).scale_mut(*r);
        }
        Ok(ExactSampler { h, w, factor })
    }

    /// One correlated field of `h * w` values in row-major order.
    pub fn sample_field(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.h * self.w;
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.factor * z).iter().cloned().collect()
    }

    pub fn sample(&self, channels: usize, rng: &mut Rng) -> Result<Image> {
        let fields: Vec<Vec<f64>> = (0..channels).map(|_| self.sample_field(rng)).collect();
        Image::from_fn(self.h, self.w, channels, |r, c, ch| fields[ch][r * self.w + c] as f32)
    }
}

/// Draws correlated noise with the exact eigen-factor sampler.
/// Channels receive independent fields.
pub fn sample_noise_exact(model: &NoiseModel, h: usize, w: usize, c: usize, rng: &mut Rng) -> Result<Image> {
    ExactSampler::new(model, h, w)?.sample(c, rng)
}

/// Circulant-embedding sampler on a `2h x 2w` torus.
#[derive(Clone)]
pub struct FastSampler {
    h: usize,
    w: usize,
    rows: usize,
    cols: usize,
    /// `sqrt(lambda / M)` per torus frequency, row-major.
    spectral_root: Vec<f64>,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FastSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FastSampler")
            .field("h", &self.h)
            .field("w", &self.w)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

fn fft_2d(data: &mut [Complex<f64>], rows: usize, cols: usize, row_fft: &dyn Fft<f64>, col_fft: &dyn Fft<f64>) {
    for row in data.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

impl FastSampler {
    pub fn new(model: &NoiseModel, h: usize, w: usize) -> Result<Self> {
        model.validate()?;
        if h == 0 || w == 0 {
            return Err(Error::EmptyImage);
        }
        let (rows, cols) = (2 * h, 2 * w);
        let m = rows * cols;
        // stationary kernel on the torus, minimum-image lags
        let mut kernel: Vec<Complex<f64>> = (0..m)
            .map(|idx| {
                let (r, c) = (idx / cols, idx % cols);
                let dr = r.min(rows - r) as f64;
                let dc = c.min(cols - c) as f64;
                Complex::new(model.covariance_at_lag(dr, dc), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd_r = planner.plan_fft_forward(cols);
        let fwd_c = planner.plan_fft_forward(rows);
        fft_2d(&mut kernel, rows, cols, fwd_r.as_ref(), fwd_c.as_ref());
        let mut lambda: Vec<f64> = kernel.iter().map(|z| z.re.max(0.0)).collect();
        // clipping adds variance; rescale so the lag-0 covariance is sigma^2 again
        let lag0 = lambda.iter().sum::<f64>() / m as f64;
        let var = model.sigma * model.sigma;
        if lag0 > 0.0 {
            let s = var / lag0;
            lambda.iter_mut().for_each(|l| *l *= s);
        }
        let spectral_root = lambda.iter().map(|l| (l / m as f64).sqrt()).collect();
        Ok(FastSampler {
            h,
            w,
            rows,
            cols,
            spectral_root,
            row_fft: planner.plan_fft_inverse(cols),
            col_fft: planner.plan_fft_inverse(rows),
        })
    }

    /// Two independent fields (real and imaginary parts of one torus draw).
    pub fn sample_pair(&self, rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex<f64>> = self
            .spectral_root
            .iter()
            .map(|&s| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft_2d(
            &mut buf,
            self.rows,
            self.cols,
            self.row_fft.as_ref(),
            self.col_fft.as_ref(),
        );
        let mut a = Vec::with_capacity(self.h * self.w);
        let mut b = Vec::with_capacity(self.h * self.w);
        for r in 0..self.h {
            for z in &buf[r * self.cols..r * self.cols + self.w] {
                a.push(z.re);
                b.push(z.im);
            }
        }
        (a, b)
    }

    pub fn sample(&self, channels: usize, rng: &mut Rng) -> Result<Image> {
        let mut fields = Vec::with_capacity(channels + 1);
        while fields.len() < channels {
            let (a, b) = self.sample_pair(rng);
            fields.push(a);
            fields.push(b);
        }
        Image::from_fn(self.h, self.w, channels, |r, c, ch| fields[ch][r * self.w + c] as f32)
    }
}

/// Draws correlated noise with the circulant-embedding sampler.
pub fn sample_noise_fast(model: &NoiseModel, h: usize, w: usize, c: usize, rng: &mut Rng) -> Result<Image> {
    FastSampler::new(model, h, w)?.sample(c, rng)
}

/// `clean + noise`, unclamped.
pub fn add_noise(clean: &Image, model: &NoiseModel, rng: &mut Rng) -> Result<Image> {
    let (h, w, c) = clean.shape();
    let noise = sample_noise_fast(model, h, w, c, rng)?;
    clean.add(&noise)
}

/// One row of an autocovariance table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagCovariance {
    pub lag_row: i64,
    pub lag_col: i64,
    pub covariance: f64,
}

/// Mean of `n[p] * n[p + lag]` over samples, positions and channels, for
/// every lag in the half-plane `0 <= lag_row <= max_lag`,
/// `|lag_col| <= max_lag` (excluding `lag_row = 0, lag_col < 0`, which
/// duplicate their mirror). Assumes zero-mean noise.
pub fn empirical_autocovariance(samples: &[Image], max_lag: usize) -> Result<Vec<LagCovariance>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no noise samples".into()))?;
    for s in samples {
        first.check_same_shape(s, "autocovariance samples")?;
    }
    let (h, w, c) = first.shape();
    let ml = max_lag as i64;
    let mut table = Vec::new();
    for dr in 0..=ml {
        for dc in -ml..=ml {
            if dr == 0 && dc < 0 {
                continue;
            }
            if dr as usize >= h || dc.unsigned_abs() as usize >= w {
                continue;
            }
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for s in samples {
                let d = s.data();
                for r in 0..h - dr as usize {
                    let r2 = r + dr as usize;
                    for col in 0..w {
                        let col2 = col as i64 + dc;
                        if col2 < 0 || col2 >= w as i64 {
                            continue;
                        }
                        let a = (r * w + col) * c;
                        let b = (r2 * w + col2 as usize) * c;
                        for ch in 0..c {
                            acc += d[a + ch] as f64 * d[b + ch] as f64;
                        }
                        count += c;
                    }
                }
            }
            table.push(LagCovariance {
                lag_row: dr,
                lag_col: dc,
                covariance: acc / count as f64,
            });
        }
    }
    Ok(table)
}

/// `lag_row,lag_col,covariance` CSV of an autocovariance table.
pub fn autocovariance_csv(table: &[LagCovariance]) -> Result<String> {
    let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lag_row", "lag_col", "covariance"]).map_err(err)?;
    for e in table {
        w.write_record([e.lag_row.to_string(), e.lag_col.to_string(), e.covariance.to_string()])
            .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
}

/// Looks up one lag in a table built by [`empirical_autocovariance`].
pub fn lag_value(table: &[LagCovariance], lag_row: i64, lag_col: i64) -> Option<f64> {
    table
        .iter()
        .find(|e| e.lag_row == lag_row && e.lag_col == lag_col)
        .map(|e| e.covariance)
}

/// Accumulates the empirical covariance matrix of many row-major fields.
#[derive(Debug, Clone)]
pub struct CovarianceAccumulator {
    n: usize,
    sum: DMatrix<f64>,
    count: usize,
}

impl CovarianceAccumulator {
    pub fn new(n: usize) -> Self {
        CovarianceAccumulator {
            n,
            sum: DMatrix::zeros(n, n),
            count: 0,
        }
    }

    pub fn push(&mut self, field: &[f64]) {
        debug_assert_eq!(field.len(), self.n);
        let v = DVector::from_column_slice(field);
        self.sum.ger(1.0, &v, &v, 1.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &CovarianceAccumulator) {
        self.sum += &other.sum;
        self.count += other.count;
    }

    /// Zero-mean covariance estimate.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sum / self.count.max(1) as f64
    }
}
