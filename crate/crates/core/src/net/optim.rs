//! Adam with a cosine-annealed learning rate.

use super::layers::Conv;
use super::model::{DenoiserModel, Gradients};
use super::real::Real;
use crate::error::{Error, Result};

pub const DEFAULT_BASE_LR: f64 = 1e-3;
pub const DEFAULT_FLOOR_LR: f64 = 1e-6;

/// Schedule and hyperparameters of the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub floor_lr: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero disables it.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(total_steps: usize) -> Self {
        AdamConfig {
            base_lr: DEFAULT_BASE_LR,
            floor_lr: DEFAULT_FLOOR_LR,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    /// `floor + (base - floor) (1 + cos(pi t / N)) / 2`, held at `floor` past `N`.
    pub fn learning_rate(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.base_lr;
        }
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        self.base_lr * cos + self.floor_lr * (1.0 - cos)
    }
}

/// Optimizer state: step counter and first/second moments shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    pub step: usize,
    pub first: Vec<Conv<T>>,
    pub second: Vec<Conv<T>>,
}

impl<T: Real> OptimState<T> {
    pub fn new(model: &DenoiserModel<T>, config: AdamConfig) -> Self {
        let zeros = || {
            model
                .layers()
                .iter()
                .map(|c| Conv::zeros(c.cin, c.cout))
                .collect::<Vec<_>>()
        };
        OptimState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate(self.step)
    }
}

fn update<T: Real>(params: &mut [T], grads: &[T], m: &mut [T], v: &mut [T], k: &StepConsts) {
    let (b1, b2) = (T::of(k.beta1), T::of(k.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - k.beta1), T::of(1.0 - k.beta2));
    let (c1, c2) = (T::of(k.bias1), T::of(k.bias2));
    let (lr, eps, decay) = (T::of(k.lr), T::of(k.eps), T::of(k.decay));
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + one_b1 * g;
        v[i] = b2 * v[i] + one_b2 * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        let mut p = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        if k.decay != 0.0 {
            p = p - lr * decay * params[i];
        }
        params[i] = p;
    }
}

struct StepConsts {
    beta1: f64,
    beta2: f64,
    bias1: f64,
    bias2: f64,
    lr: f64,
    eps: f64,
    decay: f64,
}

/// One bias-corrected Adam update at the scheduled learning rate.
pub fn adam_step<T: Real>(model: &mut DenoiserModel<T>, opt: &mut OptimState<T>, grads: &Gradients<T>) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Divergence {
            step: opt.step,
            detail: "non-finite gradient".into(),
        });
    }
    let cfg = opt.config;
    let t = (opt.step + 1) as i32;
    let consts = StepConsts {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        bias1: 1.0 - cfg.beta1.powi(t),
        bias2: 1.0 - cfg.beta2.powi(t),
        lr: opt.learning_rate(),
        eps: cfg.eps,
        decay: cfg.weight_decay,
    };
    for (l, layer) in model.layers_mut().iter_mut().enumerate() {
        let g = &grads.layers[l];
        let (m, v) = (&mut opt.first[l], &mut opt.second[l]);
        update(&mut layer.weight, &g.weight, &mut m.weight, &mut v.weight, &consts);
        update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, &consts);
    }
    opt.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::NetConfig;
    use crate::rng::seeded;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let cfg = AdamConfig::new(800);
        assert_eq!(cfg.learning_rate(0), cfg.base_lr);
        assert!((cfg.learning_rate(800) - cfg.floor_lr).abs() < 1e-18);
        let mid = 0.5 * (cfg.base_lr + cfg.floor_lr);
        assert!((cfg.learning_rate(400) - mid).abs() < 1e-15);
    }

    #[test]
    fn schedule_matches_closed_form() {
        let cfg = AdamConfig {
            base_lr: 3e-3,
            floor_lr: 1e-5,
            ..AdamConfig::new(123)
        };
        for t in 0..=123 {
            let c = 0.5 * (1.0 + (std::f64::consts::PI * t as f64 / 123.0).cos());
            let expected = 3e-3 * c + 1e-5 * (1.0 - c);
            assert!((cfg.learning_rate(t) - expected).abs() < 1e-18);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut model = DenoiserModel::<f32>::init(NetConfig::reduced(1), &mut seeded(0)).unwrap();
        let before = model.clone();
        let mut opt = OptimState::new(&model, AdamConfig::new(10));
        let grads = Gradients::zeros_like(&model);
        for _ in 0..3 {
            adam_step(&mut model, &mut opt, &grads).unwrap();
        }
        assert_eq!(model, before);
        assert_eq!(opt.step, 3);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut model = DenoiserModel::<f32>::zeros(NetConfig::reduced(1)).unwrap();
        let mut opt = OptimState::new(&model, AdamConfig::new(10));
        let mut grads = Gradients::zeros_like(&model);
        grads.layers[0].bias[0] = f32::NAN;
        assert!(matches!(
            adam_step(&mut model, &mut opt, &grads),
            Err(Error::Divergence { .. })
        ));
    }

    /// Scalar Adam on f(w) = w^2, written out independently of the layer code.
    fn scalar_adam(steps: usize, lr: f64) -> f64 {
        let (mut w, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * w;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32));
            let vh = v / (1.0 - 0.999f64.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + 1e-8);
        }
        w
    }

    #[test]
    fn quadratic_descends_like_scalar_oracle() {
        // drive the last bias of a zero model as a lone scalar parameter
        let mut model = DenoiserModel::<f64>::zeros(NetConfig::reduced(1)).unwrap();
        let idx = model.param_count() - 1;
        model.set_param(idx, 1.0);
        let cfg = AdamConfig {
            base_lr: 0.01,
            floor_lr: 0.01,
            ..AdamConfig::new(200)
        };
        let mut opt = OptimState::new(&model, cfg);
        for _ in 0..200 {
            let mut grads = Gradients::zeros_like(&model);
            let w = model.param(idx);
            let last = grads.layers.len() - 1;
            grads.layers[last].bias[0] = 2.0 * w;
            adam_step(&mut model, &mut opt, &grads).unwrap();
        }
        let w = model.param(idx);
        assert!(w.abs() < 0.1, "{w}");
        assert!((w - scalar_adam(200, 0.01)).abs() < 1e-12);
    }
}
