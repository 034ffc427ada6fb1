//! The denoiser: a Noise2Noise-style U-Net with exact reverse-mode gradients.
//!
//! Topology for `depth = D`, encoder width `B`, decoder width `2B`:
//!
//! ```text
//! enc0a, enc0b, pool            -> skip 1
//! enc_s, pool   (s = 1..D-1)    -> skip s+1 (the deepest pool is not a skip)
//! bottleneck
//! dec_s: up, concat skip s, conv a, conv b   (s = D-1..1)
//! head:  up, concat input, conv 64, conv 32, linear conv to C
//! ```
//!
//! Every convolution is 3x3 with "same" padding; all but the last are
//! followed by a leaky rectifier. Intensities enter divided by 255 and the
//! output is scaled back by 255.

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::layers::{self, Conv, Padding};
use super::real::Real;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

const HEAD_WIDTHS: [usize; 2] = [64, 32];
const INTENSITY_SCALE: f64 = 255.0;

/// Smallest spatial size accepted by the network.
pub const MIN_SPATIAL: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub leaky_slope: f64,
    /// Marks the small CI-scale variant (base width 16, depth 3).
    pub reduced: bool,
    pub padding: Padding,
}

impl NetConfig {
    /// Full-size network (width 48, five pooling stages).
    pub fn standard(in_channels: usize) -> Self {
        NetConfig {
            in_channels,
            base_width: 48,
            depth: 5,
            leaky_slope: 0.1,
            reduced: false,
            padding: Padding::Zero,
        }
    }

    /// CI-scale network (width 16, three pooling stages).
    pub fn reduced(in_channels: usize) -> Self {
        NetConfig {
            base_width: 16,
            depth: 3,
            reduced: true,
            ..NetConfig::standard(in_channels)
        }
    }

    pub fn preset(in_channels: usize, reduced: bool) -> Self {
        if reduced {
            NetConfig::reduced(in_channels)
        } else {
            NetConfig::standard(in_channels)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::InvalidConfig(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.base_width == 0 || self.depth == 0 || self.depth > 10 {
            return Err(Error::InvalidConfig(format!(
                "base_width {} / depth {} out of range",
                self.base_width, self.depth
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky_slope must be in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Spatial dimensions must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_input(&self, h: usize, w: usize, c: usize) -> Result<()> {
        if c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} channels, image has {c}",
                self.in_channels
            )));
        }
        let m = self.size_multiple();
        if h < MIN_SPATIAL || w < MIN_SPATIAL || !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::ShapeMismatch(format!(
                "{h}x{w} must be at least {MIN_SPATIAL} and divisible by {m}"
            )));
        }
        Ok(())
    }

    /// `(cin, cout)` of every convolution in topology order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize)> {
        let (c, b, d) = (self.in_channels, self.base_width, self.depth);
        let mut shapes = vec![(c, b), (b, b)];
        shapes.extend((1..d).map(|_| (b, b)));
        shapes.push((b, b)); // bottleneck
        let mut width = b;
        for _ in (1..d).rev() {
            shapes.push((width + b, 2 * b));
            shapes.push((2 * b, 2 * b));
            width = 2 * b;
        }
        shapes.push((width + c, HEAD_WIDTHS[0]));
        shapes.push((HEAD_WIDTHS[0], HEAD_WIDTHS[1]));
        shapes.push((HEAD_WIDTHS[1], c));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(cin, cout)| cout * cin * 9 + cout)
            .sum()
    }

    /// Conservative half-width of the receptive field in pixels: outputs
    /// farther than this from a pixel cannot depend on it.
    pub fn receptive_radius(&self) -> usize {
        let d = self.depth;
        // enc0a, enc0b and the first pool at full resolution
        let mut r = 3;
        for l in 1..d {
            r += 2 << l; // conv + pool at level l
        }
        r += 1 << d; // bottleneck
        for l in (1..d).rev() {
            r += 3 << l; // upsample + two convs at level l
        }
        r + 4 // upsample, two head convs, final conv
    }
}

/// Parameter gradients, one entry per convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Conv<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &DenoiserModel<T>) -> Self {
        Gradients {
            layers: model.convs.iter().map(|c| Conv::zeros(c.cin, c.cout)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| *v == T::zero()))
    }

    /// Flattened view in parameter order.
    pub fn flat(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias).cloned())
            .collect()
    }
}

/// Result of one masked-loss evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation<T> {
    pub loss: f64,
    pub grads: Gradients<T>,
    /// Network output for the given input, in intensity units.
    pub prediction: Image,
}

/// Reusable scratch memory for forward and backward passes.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    col: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Workspace { col: Vec::new() }
    }
}

/// Activations retained for the backward pass.
struct Tape<T> {
    /// Input to every convolution.
    inputs: Vec<Tensor<T>>,
    /// Post-activation output of every rectified convolution.
    outputs: Vec<Tensor<T>>,
    /// Argmax and input size per pooling stage.
    pools: Vec<(Vec<u8>, usize, usize)>,
}

/// The network `f_theta`: configuration plus convolution parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel<T: Real = f32> {
    config: NetConfig,
    pub(crate) convs: Vec<Conv<T>>,
}

impl<T: Real> DenoiserModel<T> {
    /// Kaiming-normal initialisation for leaky rectifiers, zero biases.
    pub fn init(config: NetConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let slope = config.leaky_slope;
        let convs = config
            .conv_shapes()
            .into_iter()
            .map(|(cin, cout)| {
                let fan_in = (cin * 9) as f64;
                let std = (2.0 / (fan_in * (1.0 + slope * slope))).sqrt();
                let mut conv = Conv::zeros(cin, cout);
                for w in conv.weight.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *w = T::of(z * std);
                }
                conv
            })
            .collect();
        Ok(DenoiserModel { config, convs })
    }

    /// All-zero parameters.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let convs = config
            .conv_shapes()
            .into_iter()
            .map(|(cin, cout)| Conv::zeros(cin, cout))
            .collect();
        Ok(DenoiserModel { config, convs })
    }

    pub(crate) fn from_parts(config: NetConfig, convs: Vec<Conv<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.conv_shapes();
        if shapes.len() != convs.len()
            || shapes
                .iter()
                .zip(&convs)
                .any(|(&(cin, cout), c)| c.cin != cin || c.cout != cout)
        {
            return Err(Error::InvalidConfig("layer shapes do not match config".into()));
        }
        Ok(DenoiserModel { config, convs })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Conv<T>] {
        &self.convs
    }

    pub fn layers_mut(&mut self) -> &mut [Conv<T>] {
        &mut self.convs
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv::param_count).sum()
    }

    /// Reads parameter `index` in flattened order (weights then bias, per layer).
    pub fn param(&self, index: usize) -> T {
        let (l, i) = self.locate(index);
        let c = &self.convs[l];
        if i < c.weight.len() {
            c.weight[i]
        } else {
            c.bias[i - c.weight.len()]
        }
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        let (l, i) = self.locate(index);
        let c = &mut self.convs[l];
        if i < c.weight.len() {
            c.weight[i] = value;
        } else {
            let j = i - c.weight.len();
            c.bias[j] = value;
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (l, c) in self.convs.iter().enumerate() {
            if index < c.param_count() {
                return (l, index);
            }
            index -= c.param_count();
        }
        panic!("parameter index out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.convs
            .iter()
            .all(|c| c.weight.iter().chain(&c.bias).all(|v| v.is_finite()))
    }

    fn to_tensor(&self, img: &Image) -> Result<Tensor<T>> {
        let (h, w, c) = img.shape();
        self.config.check_input(h, w, c)?;
        let scale = 1.0 / INTENSITY_SCALE;
        Ok(Tensor {
            channels: c,
            height: h,
            width: w,
            data: img.to_planar().into_iter().map(|v| T::of(v as f64 * scale)).collect(),
        })
    }

    fn to_image(&self, t: &Tensor<T>) -> Result<Image> {
        let planar: Vec<f32> = t.data.iter().map(|v| (v.as_f64() * INTENSITY_SCALE) as f32).collect();
        Image::from_planar(t.height, t.width, t.channels, &planar)
    }

    /// Runs `f_theta` on an image in intensity units.
    pub fn forward(&self, input: &Image) -> Result<Image> {
        self.forward_with(input, &mut Workspace::new())
    }

    pub fn forward_with(&self, input: &Image, ws: &mut Workspace<T>) -> Result<Image> {
        let x = self.to_tensor(input)?;
        let out = self.run(x, ws, None);
        self.to_image(&out)
    }

    fn conv_act(&self, idx: usize, x: Tensor<T>, ws: &mut Workspace<T>, tape: &mut Option<&mut Tape<T>>) -> Tensor<T> {
        let mut y = self.convs[idx].forward(&x, self.config.padding, &mut ws.col);
        layers::leaky_relu_inplace(&mut y, T::of(self.config.leaky_slope));
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(x);
            t.outputs.push(y.clone());
        }
        y
    }

    fn pool(&self, x: Tensor<T>, tape: &mut Option<&mut Tape<T>>) -> Tensor<T> {
        let (p, arg) = layers::max_pool(&x);
        if let Some(t) = tape.as_deref_mut() {
            t.pools.push((arg, x.height, x.width));
        }
        p
    }

    fn run(&self, x0: Tensor<T>, ws: &mut Workspace<T>, mut tape: Option<&mut Tape<T>>) -> Tensor<T> {
        let d = self.config.depth;
        let mut idx = 0;
        let mut skips = Vec::with_capacity(d);
        let mut h = self.conv_act(idx, x0.clone(), ws, &mut tape);
        idx += 1;
        h = self.conv_act(idx, h, ws, &mut tape);
        idx += 1;
        h = self.pool(h, &mut tape);
        for _ in 1..d {
            skips.push(h.clone());
            h = self.conv_act(idx, h, ws, &mut tape);
            idx += 1;
            h = self.pool(h, &mut tape);
        }
        h = self.conv_act(idx, h, ws, &mut tape);
        idx += 1;
        for _ in (1..d).rev() {
            let skip = skips.pop().expect("skip stack");
            h = layers::upsample2(&h).concat(&skip);
            h = self.conv_act(idx, h, ws, &mut tape);
            idx += 1;
            h = self.conv_act(idx, h, ws, &mut tape);
            idx += 1;
        }
        h = layers::upsample2(&h).concat(&x0);
        h = self.conv_act(idx, h, ws, &mut tape);
        idx += 1;
        h = self.conv_act(idx, h, ws, &mut tape);
        idx += 1;
        let last = &self.convs[idx];
        let out = last.forward(&h, self.config.padding, &mut ws.col);
        if let Some(t) = tape {
            t.inputs.push(h);
        }
        out
    }

    fn conv_act_backward(
        &self,
        idx: usize,
        mut g: Tensor<T>,
        tape: &Tape<T>,
        ws: &mut Workspace<T>,
        grads: &mut Gradients<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        layers::leaky_relu_backward(&mut g, &tape.outputs[idx], T::of(self.config.leaky_slope));
        self.convs[idx].backward(
            &tape.inputs[idx],
            &g,
            self.config.padding,
            &mut ws.col,
            &mut grads.layers[idx],
            need_input_grad,
        )
    }

    fn backward(&self, grad_out: Tensor<T>, tape: &Tape<T>, ws: &mut Workspace<T>) -> Gradients<T> {
        let d = self.config.depth;
        let c = self.config.in_channels;
        let b = self.config.base_width;
        let mut grads = Gradients::zeros_like(self);
        let mut idx = self.convs.len() - 1;
        let pad = self.config.padding;

        let mut g = self.convs[idx]
            .backward(
                &tape.inputs[idx],
                &grad_out,
                pad,
                &mut ws.col,
                &mut grads.layers[idx],
                true,
            )
            .unwrap();
        for _ in 0..2 {
            idx -= 1;
            g = self.conv_act_backward(idx, g, tape, ws, &mut grads, true).unwrap();
        }
        // head concat: [upsampled deepest-decoder output, input]; input grad discarded
        let up_channels = g.channels - c;
        let (g_up, _) = g.split(up_channels);
        g = layers::upsample2_backward(&g_up);

        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..d.saturating_sub(1)).map(|_| None).collect();
        for s in 1..d {
            for _ in 0..2 {
                idx -= 1;
                g = self.conv_act_backward(idx, g, tape, ws, &mut grads, true).unwrap();
            }
            let first = g.channels - b;
            let (g_up, g_skip) = g.split(first);
            skip_grads[s - 1] = Some(g_skip);
            g = layers::upsample2_backward(&g_up);
        }
        idx -= 1;
        g = self.conv_act_backward(idx, g, tape, ws, &mut grads, true).unwrap();

        for s in (1..d).rev() {
            let (arg, ph, pw) = &tape.pools[s];
            g = layers::max_pool_backward(&g, arg, *ph, *pw);
            idx -= 1;
            g = self.conv_act_backward(idx, g, tape, ws, &mut grads, true).unwrap();
            if let Some(sg) = skip_grads[s - 1].take() {
                g.add_assign(&sg);
            }
        }
        let (arg, ph, pw) = &tape.pools[0];
        g = layers::max_pool_backward(&g, arg, *ph, *pw);
        idx -= 1;
        g = self.conv_act_backward(idx, g, tape, ws, &mut grads, true).unwrap();
        idx -= 1;
        debug_assert_eq!(idx, 0);
        self.conv_act_backward(idx, g, tape, ws, &mut grads, false);
        grads
    }

    /// Weighted squared error `sum(weight (f(input) - target)^2) / (H W C)`
    /// and its exact gradient with respect to every parameter.
    pub fn loss_and_grads(&self, input: &Image, target: &Image, weight: &[f32]) -> Result<(f64, Gradients<T>)> {
        let e = self.evaluate(input, target, weight, &mut Workspace::new())?;
        Ok((e.loss, e.grads))
    }

    /// Sign of every rectifier input and every pooling argmax for `input`.
    ///
    /// Two parameter settings with equal patterns lie in the same linear piece
    /// of the network, where the loss is quadratic in any single parameter.
    pub fn activation_pattern(&self, input: &Image) -> Result<Vec<u8>> {
        let x = self.to_tensor(input)?;
        let mut tape = Tape {
            inputs: Vec::new(),
            outputs: Vec::new(),
            pools: Vec::new(),
        };
        self.run(x, &mut Workspace::new(), Some(&mut tape));
        let mut pattern: Vec<u8> = tape
            .outputs
            .iter()
            .flat_map(|t| t.data.iter().map(|&v| (v > T::zero()) as u8))
            .collect();
        for (arg, _, _) in tape.pools {
            pattern.extend(arg);
        }
        Ok(pattern)
    }

    /// As [`DenoiserModel::loss_and_grads`], also returning the prediction.
    pub fn evaluate(
        &self,
        input: &Image,
        target: &Image,
        weight: &[f32],
        ws: &mut Workspace<T>,
    ) -> Result<Evaluation<T>> {
        input.check_same_shape(target, "loss target")?;
        if weight.len() != input.len() {
            return Err(Error::ShapeMismatch(format!(
                "weight has {} entries, image has {}",
                weight.len(),
                input.len()
            )));
        }
        let x = self.to_tensor(input)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.convs.len()),
            outputs: Vec::with_capacity(self.convs.len()),
            pools: Vec::with_capacity(self.config.depth),
        };
        let out = self.run(x, ws, Some(&mut tape));
        let prediction = self.to_image(&out)?;

        let (h, w, c) = input.shape();
        let plane = h * w;
        let n = input.len() as f64;
        let tgt = target.data();
        let mut loss = 0.0f64;
        let mut grad_out = Tensor::zeros(c, h, w);
        for p in 0..plane {
            for ch in 0..c {
                let i = p * c + ch;
                let wv = weight[i] as f64;
                if wv == 0.0 {
                    continue;
                }
                let pred = out.data[ch * plane + p].as_f64() * INTENSITY_SCALE;
                let r = pred - tgt[i] as f64;
                loss += wv * r * r;
                // chain through the output scale of the intensity wrapper
                grad_out.data[ch * plane + p] = T::of(2.0 * wv * r / n * INTENSITY_SCALE);
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: 0,
                detail: format!("non-finite loss {loss}"),
            });
        }
        let grads = self.backward(grad_out, &tape, ws);
        Ok(Evaluation {
            loss,
            grads,
            prediction,
        })
    }
}
