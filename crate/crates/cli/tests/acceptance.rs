//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria 3-6 train 48 desk-scale models (128x128, full network, 800
//! iterations each) and are skipped unless `--include-ignored`/`--ignored` is
//! passed or `MASH_ACCEPTANCE_DESK=1` is set. Their sweep tables are written to
//! `MASH_ACCEPTANCE_OUT` (default `target/acceptance-desk`).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;

use mash_core::bsd::{ensemble_predict, sample_mask, select_tau, MashConfig};
use mash_core::image::{downscale, load_image, save_image, ImageFormat};
use mash_core::metrics::psnr;
use mash_core::net::{DenoiserModel, NetConfig, Real};
use mash_core::noise::{build_covariance, CovarianceAccumulator, ExactSampler, FastSampler, NoiseModel};
use mash_core::pipeline::{
    mean_argmax_tau, selection_matches, sweep, synthesize, NamedImage, Preset, RunConfig, SweepSpec, SweepTable,
};
use mash_core::rng::seeded;
use mash_core::shuffle::{flatness_map, local_shuffle};
use mash_core::{Image, Result};

// tolerances
const COV_TOL_EXACT: f64 = 0.03;
const COV_TOL_FAST: f64 = 0.05;
const COV_DRAWS: usize = 200_000;
const FD_STEP: f64 = 1e-3;
const FD_PARAMS: usize = 60;
const FD_TOL_F32: f64 = 1e-2;
const FD_TOL_F64: f64 = 1e-5;
const ARGMAX_TAU_IID_MAX: f64 = 0.3;
const ARGMAX_TAU_CORR_MIN: f64 = 0.6;
const REGIME_GAP_DB: f64 = 2.0;
const AUDIT_MIN_HITS: usize = 4;
const LPS_GAIN_DB: f64 = 0.3;
const DECORRELATION_SEEDS: u64 = 10_000;
const DECORRELATION_RATIO: f64 = 0.2;
const PARAMS_MIN: usize = 840_000;
const PARAMS_MAX: usize = 1_140_000;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

fn crops() -> Vec<NamedImage> {
    ["astronaut", "coffee", "rocket"]
        .iter()
        .map(|n| NamedImage {
            name: n.to_string(),
            clean: load_image(data_dir().join(format!("{n}.png"))).expect("fixture image"),
        })
        .collect()
}

fn empirical(acc: &CovarianceAccumulator, n: usize) -> Vec<f64> {
    let cov = acc.covariance();
    (0..n * n).map(|k| cov[(k / n, k % n)]).collect()
}

fn criterion_1() -> Result<Outcome> {
    let (h, w, sigma) = (6, 6, 25.0);
    let var = sigma * sigma;
    let n = h * w;
    let mut details = Vec::new();
    let mut pass = true;
    for (i, beta) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let model = NoiseModel::new(sigma, beta, 3.0)?;
        let target = build_covariance(&model, h, w)?;
        let exact = ExactSampler::new(&model, h, w)?;
        let fast = FastSampler::new(&model, h, w)?;
        let mut rng = seeded(100 + i as u64);
        let mut acc_exact = CovarianceAccumulator::new(n);
        for _ in 0..COV_DRAWS {
            acc_exact.push(&exact.sample_field(&mut rng));
        }
        let mut acc_fast = CovarianceAccumulator::new(n);
        for _ in 0..COV_DRAWS / 2 {
            let (a, b) = fast.sample_pair(&mut rng);
            acc_fast.push(&a);
            acc_fast.push(&b);
        }
        let emp_exact = empirical(&acc_exact, n);
        let emp_fast = empirical(&acc_fast, n);
        let (mut err_exact, mut err_fast) = (0.0f64, 0.0f64);
        for k in 0..n * n {
            err_exact = err_exact.max((emp_exact[k] - target.get(k / n, k % n)).abs() / var);
            err_fast = err_fast.max((emp_fast[k] - emp_exact[k]).abs() / var);
        }
        pass &= err_exact < COV_TOL_EXACT && err_fast < COV_TOL_FAST;
        details.push(format!("beta={beta}: exact {err_exact:.4} fast {err_fast:.4}"));
    }
    Ok(Outcome::new(
        pass,
        format!(
            "max |cov err|/sigma^2, exact vs target and fast vs exact ({}; tol {COV_TOL_EXACT}/{COV_TOL_FAST})",
            details.join(", ")
        ),
    ))
}

struct GradCheck {
    worst: f64,
    checked: usize,
    straddling: usize,
}

/// Worst relative error of analytic `T` gradients against central differences.
///
/// Differences are taken on a 64-bit copy of the same parameters, so the
/// oracle is free of 32-bit rounding in the loss. Parameters are drawn
/// round-robin over layers. A draw whose `+-h` probe changes the rectifier
/// signs or pooling argmaxes straddles a kink, where the central difference is
/// not a derivative estimate; it is counted and redrawn.
fn gradient_error<T: Real>() -> Result<GradCheck> {
    let analytic = DenoiserModel::<T>::init(NetConfig::reduced(3), &mut seeded(11))?;
    let mut model = DenoiserModel::<f64>::zeros(*analytic.config())?;
    for p in 0..analytic.param_count() {
        model.set_param(p, analytic.param(p).as_f64());
    }
    let input = Image::from_fn(8, 8, 3, |r, c, ch| ((r * 37 + c * 11 + ch * 71) % 256) as f32)?;
    let target = Image::from_fn(8, 8, 3, |r, c, ch| ((r * 5 + c * 29 + ch * 13 + 40) % 256) as f32)?;
    let mask = sample_mask(8, 8, 3, 0.5, &mut seeded(12))?;
    let weight = mask.blind_weights();
    let masked = mask.apply(&input)?;
    let flat = analytic.loss_and_grads(&masked, &target, &weight)?.1.flat();
    let base_pattern = model.activation_pattern(&masked)?;

    let spans: Vec<(usize, usize, usize)> = model
        .layers()
        .iter()
        .scan(0, |off, c| {
            let start = *off;
            *off += c.weight.len() + c.bias.len();
            Some((start, c.weight.len(), c.bias.len()))
        })
        .collect();
    let mut rng = seeded(13);
    let h = FD_STEP;
    let mut out = GradCheck {
        worst: 0.0,
        checked: 0,
        straddling: 0,
    };
    let mut draw = 0usize;
    while out.checked < FD_PARAMS && draw < 50 * FD_PARAMS {
        let (start, nw, nb) = spans[draw % spans.len()];
        // every third draw in a layer is a bias
        let p = if (draw / spans.len()).is_multiple_of(3) {
            start + nw + rng.random_range(0..nb)
        } else {
            start + rng.random_range(0..nw)
        };
        draw += 1;
        let orig = model.param(p);
        model.set_param(p, orig + h);
        let (lp, _) = model.loss_and_grads(&masked, &target, &weight)?;
        let smooth_plus = model.activation_pattern(&masked)? == base_pattern;
        model.set_param(p, orig - h);
        let (lm, _) = model.loss_and_grads(&masked, &target, &weight)?;
        let smooth_minus = model.activation_pattern(&masked)? == base_pattern;
        model.set_param(p, orig);
        if !(smooth_plus && smooth_minus) {
            out.straddling += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * FD_STEP);
        let an = flat[p].as_f64();
        out.worst = out.worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-12));
        out.checked += 1;
    }
    Ok(out)
}

fn criterion_2() -> Result<Outcome> {
    let g32 = gradient_error::<f32>()?;
    let g64 = gradient_error::<f64>()?;
    Ok(Outcome::new(
        g32.checked >= FD_PARAMS && g64.checked >= FD_PARAMS && g32.worst < FD_TOL_F32 && g64.worst < FD_TOL_F64,
        format!(
            "h={FD_STEP:.0e}, worst relative error: f32 {:.2e} over {} params (tol {FD_TOL_F32:.0e}), f64 {:.2e} over {} params (tol {FD_TOL_F64:.0e}); kink-straddling draws redrawn: {}/{}",
            g32.worst, g32.checked, g64.worst, g64.checked, g32.straddling, g64.straddling
        ),
    ))
}

/// Shared desk-scale runs behind criteria 3-6.
struct DeskRuns {
    main: SweepTable,
    mid: SweepTable,
    lps: SweepTable,
    cfg: RunConfig,
}

fn desk_runs(out: &Path) -> Result<DeskRuns> {
    let cfg = RunConfig::preset(Preset::Desk);
    let mut main = SweepSpec::new(crops(), cfg);
    main.out_dir = Some(out.join("fig2"));
    let mut mid = SweepSpec::new(crops(), cfg);
    mid.taus = vec![0.2, 0.8];
    mid.betas = vec![0.5];
    mid.out_dir = Some(out.join("beta05"));
    let mut lps = SweepSpec::new(crops(), cfg);
    lps.taus = vec![0.5, 0.8];
    lps.betas = vec![1.0];
    lps.lps = vec![true];
    lps.out_dir = Some(out.join("lps"));
    let mut tables = Vec::new();
    for spec in [&main, &mid, &lps] {
        let started = Instant::now();
        let t = sweep(spec)?;
        println!(
            "  desk sweep {}: {} rows, {} failures, {:.0} s",
            spec.out_dir.as_ref().unwrap().display(),
            t.rows.len(),
            t.failures.len(),
            started.elapsed().as_secs_f64()
        );
        tables.push(t);
    }
    let lps = tables.pop().unwrap();
    let mid = tables.pop().unwrap();
    let main = tables.pop().unwrap();
    Ok(DeskRuns { main, mid, lps, cfg })
}

fn row_value(
    t: &SweepTable,
    image: &str,
    beta: f64,
    tau: f64,
    lps: bool,
    f: impl Fn(&mash_core::pipeline::SweepRow) -> f64,
) -> Option<f64> {
    t.rows
        .iter()
        .find(|r| r.image == image && r.beta == beta && r.tau == tau && r.lps == lps)
        .map(f)
}

fn criterion_3(d: &DeskRuns) -> Outcome {
    let iid = mean_argmax_tau(&d.main, 0.0).unwrap_or(f64::NAN);
    let corr = mean_argmax_tau(&d.main, 1.0).unwrap_or(f64::NAN);
    let best = |beta: f64| {
        let names: Vec<String> = crops().into_iter().map(|c| c.name).collect();
        let per: Vec<f64> = names
            .iter()
            .map(|n| {
                d.main
                    .rows
                    .iter()
                    .filter(|r| &r.image == n && r.beta == beta)
                    .map(|r| r.psnr)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        per.iter().sum::<f64>() / per.len() as f64
    };
    let gap = best(0.0) - best(1.0);
    Outcome::new(
        iid <= ARGMAX_TAU_IID_MAX && corr >= ARGMAX_TAU_CORR_MIN && gap >= REGIME_GAP_DB && d.main.failures.is_empty(),
        format!(
            "mean argmax tau: beta=0 {iid:.3} (<= {ARGMAX_TAU_IID_MAX}), beta=1 {corr:.3} (>= {ARGMAX_TAU_CORR_MIN}); best-PSNR gap {gap:.2} dB (>= {REGIME_GAP_DB})"
        ),
    )
}

fn epsilon(d: &DeskRuns, image: &str, beta: f64) -> f64 {
    let table = if beta == 0.5 { &d.mid } else { &d.main };
    let m = &d.cfg.mash;
    let low = row_value(table, image, beta, m.tau_low, false, |r| r.sigma_hat).unwrap_or(f64::NAN);
    let high = row_value(table, image, beta, m.tau_high, false, |r| r.sigma_hat).unwrap_or(f64::NAN);
    (high - low).abs()
}

fn criterion_4(d: &DeskRuns) -> Outcome {
    // a warm-up at tau is the fixed-ratio run at tau when warmup_iters == iterations
    let same_schedule = d.cfg.mash.warmup_iters == d.cfg.mash.iterations;
    let names: Vec<String> = crops().into_iter().map(|c| c.name).collect();
    let mean = |beta: f64| names.iter().map(|n| epsilon(d, n, beta)).sum::<f64>() / names.len() as f64;
    let (e0, e05, e1) = (mean(0.0), mean(0.5), mean(1.0));
    Outcome::new(
        same_schedule && e0 < e05 && e05 < e1,
        format!("mean epsilon: beta=0 {e0:.3}, beta=0.5 {e05:.3}, beta=1 {e1:.3} (strictly increasing)"),
    )
}

fn criterion_5(d: &DeskRuns) -> Outcome {
    let m = d.cfg.mash;
    let mut hits = 0;
    let mut cells = Vec::new();
    for name in crops().into_iter().map(|c| c.name) {
        for beta in [0.0, 1.0] {
            let psnr_by_tau: Vec<(f64, f64)> = [m.tau_low, m.tau_medium, m.tau_high]
                .iter()
                .map(|&t| {
                    (
                        t,
                        row_value(&d.main, &name, beta, t, false, |r| r.psnr).unwrap_or(f64::NAN),
                    )
                })
                .collect();
            let (tau, _) = select_tau(epsilon(d, &name, beta), &m);
            let ok = selection_matches(&psnr_by_tau, tau);
            hits += ok as usize;
            cells.push(format!("{name}/b{beta}:{tau}{}", if ok { "+" } else { "-" }));
        }
    }
    Outcome::new(
        hits >= AUDIT_MIN_HITS,
        format!(
            "{hits}/6 selections match the PSNR argmax (>= {AUDIT_MIN_HITS}); {}",
            cells.join(" ")
        ),
    )
}

fn criterion_6(d: &DeskRuns) -> Outcome {
    let names: Vec<String> = crops().into_iter().map(|c| c.name).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for tau in [0.5, 0.8] {
        let mean = |table: &SweepTable, lps: bool| {
            names
                .iter()
                .map(|n| row_value(table, n, 1.0, tau, lps, |r| r.psnr).unwrap_or(f64::NAN))
                .sum::<f64>()
                / names.len() as f64
        };
        let on = mean(&d.lps, true);
        let off = mean(&d.main, false);
        pass &= on >= off + LPS_GAIN_DB;
        parts.push(format!("tau={tau}: on {on:.2} vs off {off:.2} ({:+.2} dB)", on - off));
    }
    Outcome::new(
        pass,
        format!("beta=1 mean PSNR {} (gain >= {LPS_GAIN_DB})", parts.join(", ")),
    )
}

/// Mean of tile-centred products over horizontally and vertically adjacent pairs.
fn lag1_centered(tile: &[f64], s: usize) -> f64 {
    let mean = tile.iter().sum::<f64>() / tile.len() as f64;
    let mut acc = 0.0;
    let mut pairs = 0;
    for r in 0..s {
        for c in 0..s {
            let v = tile[r * s + c] - mean;
            if c + 1 < s {
                acc += v * (tile[r * s + c + 1] - mean);
                pairs += 1;
            }
            if r + 1 < s {
                acc += v * (tile[(r + 1) * s + c] - mean);
                pairs += 1;
            }
        }
    }
    acc / pairs as f64
}

fn criterion_7() -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();

    // multiset preservation and identity outside flat tiles on a mixed image
    let pseudo = Image::from_fn(32, 32, 3, |r, c, ch| {
        if (r / 4 + c / 4) % 2 == 0 {
            90.0 + ch as f32
        } else if (r + c) % 2 == 0 {
            0.0
        } else {
            255.0
        }
    })?;
    let y = Image::from_fn(32, 32, 3, |r, c, ch| ((r * 131 + c * 71 + ch * 17) % 251) as f32 + 0.25)?;
    let fmap = flatness_map(&pseudo, 4, 5.0)?;
    for seed in 0..50 {
        let out = local_shuffle(&y, &fmap, &mut seeded(seed))?.image;
        for t in fmap.tiles() {
            for ch in 0..3 {
                let collect = |img: &Image| {
                    let mut v: Vec<f32> = (0..t.pixels())
                        .map(|k| {
                            let (r, c) = t.coord(k);
                            img.get(r, c, ch)
                        })
                        .collect();
                    v.sort_by(f32::total_cmp);
                    v
                };
                pass &= collect(&out) == collect(&y);
            }
            if !fmap.is_flat(t.row, t.col) {
                for k in 0..t.pixels() {
                    let (r, c) = t.coord(k);
                    for ch in 0..3 {
                        pass &= out.get(r, c, ch).to_bits() == y.get(r, c, ch).to_bits();
                    }
                }
            }
        }
    }
    notes.push(format!(
        "multiset/identity checks {}",
        if pass { "ok" } else { "failed" }
    ));

    let none_flat = flatness_map(&y, 4, 0.0)?;
    let identity = local_shuffle(&y, &none_flat, &mut seeded(1))?.image == y;
    pass &= identity;
    notes.push(format!(
        "all-non-flat identity {}",
        if identity { "ok" } else { "failed" }
    ));

    // decorrelation on a flat 4x4 tile carrying beta = 1 noise
    let s = 4;
    let model = NoiseModel::new(25.0, 1.0, 3.0)?;
    let sampler = ExactSampler::new(&model, s, s)?;
    let flat = flatness_map(&Image::filled(s, s, 1, 128.0)?, s, 5.0)?;
    let mut noise_rng = seeded(2024);
    let (mut pre, mut post) = (0.0, 0.0);
    for seed in 0..DECORRELATION_SEEDS {
        let field = sampler.sample_field(&mut noise_rng);
        let img = Image::new(s, s, 1, field.iter().map(|&v| (128.0 + v) as f32).collect())?;
        let shuffled = local_shuffle(&img, &flat, &mut seeded(seed))?.image;
        let as_f64 = |im: &Image| im.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        pre += lag1_centered(&as_f64(&img), s);
        post += lag1_centered(&as_f64(&shuffled), s);
    }
    pre /= DECORRELATION_SEEDS as f64;
    post /= DECORRELATION_SEEDS as f64;
    let ratio = post.abs() / pre;
    pass &= pre > 0.0 && ratio < DECORRELATION_RATIO;
    notes.push(format!(
        "lag-1 autocovariance {pre:.1} -> {post:.1} (|ratio| {ratio:.3} < {DECORRELATION_RATIO})"
    ));
    Ok(Outcome::new(pass, notes.join("; ")))
}

fn criterion_8() -> Result<Outcome> {
    let cfg = MashConfig::default();
    let table = [
        (1.5, 0.2, false),
        (2.0, 0.5, false),
        (2.5, 0.5, false),
        (3.0, 0.8, true),
    ];
    let select_ok = table.iter().all(|&(e, t, s)| select_tau(e, &cfg) == (t, s));

    let (hwc, tau) = (256.0 * 256.0 * 3.0, 0.8f64);
    let bound = 4.0 * (tau * (1.0 - tau) / hwc).sqrt();
    let mut mask_ok = true;
    for seed in 0..5 {
        let m = sample_mask(256, 256, 3, tau, &mut seeded(seed))?;
        mask_ok &= (m.zero_fraction() - tau).abs() <= bound;
    }

    let a = Image::from_fn(32, 32, 3, |r, c, ch| ((r * 7 + c * 3 + ch * 40) % 200) as f32)?;
    let p25 = psnr(&a, &a.map(|v| v + 25.0), 255.0)?;
    let p10 = psnr(&a, &a.map(|v| v + 10.0), 255.0)?;
    let psnr_ok = (p25 - 20.17).abs() < 0.005 && (p10 - 28.13).abs() < 0.005;

    let model = DenoiserModel::<f32>::init(NetConfig::reduced(3), &mut seeded(5))?;
    let y = Image::from_fn(16, 16, 3, |r, c, ch| ((r * 13 + c * 17 + ch * 50) % 256) as f32)?;
    let ens = ensemble_predict(&model, &y, 0.0, 1, &mut seeded(6))?;
    let ens_ok = ens == model.forward(&y)?;

    Ok(Outcome::new(
        select_ok && mask_ok && psnr_ok && ens_ok,
        format!(
            "select_tau table {select_ok}; mask zero-fraction within {bound:.4} {mask_ok}; psnr {p25:.3}/{p10:.3} dB {psnr_ok}; ensemble identity {ens_ok}"
        ),
    ))
}

fn criterion_9() -> Outcome {
    let n = NetConfig::standard(3).param_count();
    Outcome::new(
        (PARAMS_MIN..=PARAMS_MAX).contains(&n),
        format!("{n} parameters (window [{PARAMS_MIN}, {PARAMS_MAX}])"),
    )
}

fn criterion_10() -> Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| mash_core::Error::InvalidArgument(e.to_string()))?;
    let clean = downscale(&load_image(data_dir().join("astronaut.png"))?, 2)?;
    let noisy = synthesize(&clean, &NoiseModel::new(25.0, 1.0, 3.0)?, 3, 0)?;
    let input = dir.path().join("noisy.rawf32");
    save_image(&noisy, &input, ImageFormat::RawF32)?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_mash"))
            .args(["denoise", "--preset", "ci", "--seed", "7", "--input"])
            .arg(&input)
            .arg("--out-dir")
            .arg(&out)
            .output()
            .map_err(|e| mash_core::Error::InvalidArgument(e.to_string()))?;
        if !status.status.success() {
            return Ok(Outcome::new(
                false,
                format!("denoise failed: {}", String::from_utf8_lossy(&status.stderr)),
            ));
        }
        let read = |name: &str| std::fs::read(out.join(name)).unwrap_or_default();
        let report: String = String::from_utf8_lossy(&read("report.txt"))
            .lines()
            .filter(|l| !l.starts_with("wall_clock"))
            .collect::<Vec<_>>()
            .join("\n");
        outputs.push((read("denoised.rawf32"), read("traces.csv"), read("gap.txt"), report));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let same = !a.0.is_empty() && a.0 == b.0 && !a.1.is_empty() && a.1 == b.1 && a.2 == b.2 && a.3 == b.3;
    Ok(Outcome::new(
        same,
        format!(
            "two seeded ci denoise runs: image {} bytes, traces {} bytes, identical={same}",
            a.0.len(),
            a.1.len()
        ),
    ))
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let desk = args.iter().any(|a| a == "--include-ignored" || a == "--ignored")
        || std::env::var("MASH_ACCEPTANCE_DESK").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut emit = |n: usize, name: &str, started: Instant, r: Result<Outcome>| {
        let secs = started.elapsed().as_secs_f64();
        match r {
            Ok(o) => {
                failed += !o.pass as usize;
                println!(
                    "criterion {n:>2} [{name}]: {} ({}) [{secs:.1} s]",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.detail
                );
            }
            Err(e) => {
                failed += 1;
                println!("criterion {n:>2} [{name}]: FAIL (error: {e}) [{secs:.1} s]");
            }
        }
    };

    let t = Instant::now();
    emit(1, "noise model fidelity", t, criterion_1());
    let t = Instant::now();
    emit(2, "gradient exactness", t, criterion_2());

    if desk {
        let out = std::env::var("MASH_ACCEPTANCE_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|_| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance-desk"));
        let t = Instant::now();
        match desk_runs(&out) {
            Ok(d) => {
                emit(3, "masking ratio trend", t, Ok(criterion_3(&d)));
                emit(4, "gap ordering", t, Ok(criterion_4(&d)));
                emit(5, "ratio selection", t, Ok(criterion_5(&d)));
                emit(6, "shuffling benefit", t, Ok(criterion_6(&d)));
            }
            Err(e) => {
                for (n, name) in [
                    (3, "masking ratio trend"),
                    (4, "gap ordering"),
                    (5, "ratio selection"),
                    (6, "shuffling benefit"),
                ] {
                    emit(
                        n,
                        name,
                        t,
                        Err(mash_core::Error::InvalidArgument(format!("desk runs: {e}"))),
                    );
                }
            }
        }
    } else {
        for (n, name) in [
            (3, "masking ratio trend"),
            (4, "gap ordering"),
            (5, "ratio selection"),
            (6, "shuffling benefit"),
        ] {
            println!(
                "criterion {n:>2} [{name}]: SKIPPED (desk scale, several hours on one core; pass --include-ignored)"
            );
        }
    }

    let t = Instant::now();
    emit(7, "shuffling invariants", t, criterion_7());
    let t = Instant::now();
    emit(8, "unit contracts", t, criterion_8());
    let t = Instant::now();
    emit(9, "model size", t, Ok(criterion_9()));
    let t = Instant::now();
    emit(10, "reproducibility", t, criterion_10());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
