//! Layer kernels: 3x3 convolution (im2col + GEMM), leaky rectifier,
//! 2x2 max-pool and 2x nearest upsampling, each with its backward pass.

use super::real::Real;
use super::tensor::Tensor;
use crate::par::{self, SendPtr};

/// Columns per GEMM task. Fixed so results do not depend on thread count.
const GEMM_COL_BLOCK: usize = 1024;

/// Spatial border handling of the 3x3 convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    #[default]
    Zero,
    Reflect,
}

impl Padding {
    /// Source index for a tap landing at `i` (possibly -1 or `n`).
    #[inline]
    fn source(self, i: isize, n: usize) -> Option<usize> {
        if i >= 0 && (i as usize) < n {
            return Some(i as usize);
        }
        match self {
            Padding::Zero => None,
            Padding::Reflect => {
                if n == 1 {
                    Some(0)
                } else if i < 0 {
                    Some((-i) as usize)
                } else {
                    Some(2 * (n - 1) - i as usize)
                }
            }
        }
    }
}

/// Dense matrix operand: slice plus row and column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], cols: usize) -> Self {
        MatRef { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        MatRef { data, rs: 1, cs: cols }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// `C = alpha A B + beta C` with `A: m x k`, `B: k x n`, `C: m x n` row-major.
/// Work is split over fixed column blocks of `C`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
) {
    a.check(m, k);
    b.check(k, n);
    assert!(c.len() >= m * n, "gemm output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let blocks = n.div_ceil(GEMM_COL_BLOCK);
    let c_ptr = SendPtr(c.as_mut_ptr());
    let (a_ptr, b_ptr) = (a.data.as_ptr() as usize, b.data.as_ptr() as usize);
    par::for_each_index(blocks, |blk| {
        let j0 = blk * GEMM_COL_BLOCK;
        let cols = GEMM_COL_BLOCK.min(n - j0);
        // SAFETY: operands were bounds-checked above; column blocks of C are disjoint.
        unsafe {
            let a_ptr = a_ptr as *const T;
            let b_ptr = (b_ptr as *const T).add(j0 * b.cs);
            let c_blk = c_ptr.get().add(j0);
            T::gemm_raw(
                m,
                k,
                cols,
                alpha,
                a_ptr,
                a.rs as isize,
                a.cs as isize,
                b_ptr,
                b.rs as isize,
                b.cs as isize,
                beta,
                c_blk,
                n as isize,
                1,
            );
        }
    });
}

/// Unfolds 3x3 neighbourhoods: row `ci*9 + ky*3 + kx`, column `y*W + x`.
pub(crate) fn im2col<T: Real>(input: &Tensor<T>, padding: Padding, col: &mut Vec<T>) {
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    col.clear();
    col.resize(input.channels * 9 * plane, T::zero());
    par::for_each_chunk_mut(col, plane, |row, out| {
        let ci = row / 9;
        let ky = (row % 9) / 3;
        let kx = row % 3;
        let src = &input.data[ci * plane..(ci + 1) * plane];
        for y in 0..h {
            let dst = &mut out[y * w..(y + 1) * w];
            let Some(sy) = padding.source(y as isize + ky as isize - 1, h) else {
                continue;
            };
            let src_row = &src[sy * w..(sy + 1) * w];
            match kx {
                1 => dst.copy_from_slice(src_row),
                0 => {
                    dst[1..].copy_from_slice(&src_row[..w - 1]);
                    if let Some(sx) = padding.source(-1, w) {
                        dst[0] = src_row[sx];
                    }
                }
                _ => {
                    dst[..w - 1].copy_from_slice(&src_row[1..]);
                    if let Some(sx) = padding.source(w as isize, w) {
                        dst[w - 1] = src_row[sx];
                    }
                }
            }
        }
    });
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
pub(crate) fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize, padding: Padding) -> Tensor<T> {
    let plane = h * w;
    let mut out = Tensor::zeros(channels, h, w);
    par::for_each_chunk_mut(&mut out.data, plane, |ci, dst| {
        for tap in 0..9 {
            let (ky, kx) = (tap / 3, tap % 3);
            let src = &col[(ci * 9 + tap) * plane..(ci * 9 + tap + 1) * plane];
            for y in 0..h {
                let Some(sy) = padding.source(y as isize + ky as isize - 1, h) else {
                    continue;
                };
                let g = &src[y * w..(y + 1) * w];
                let d = &mut dst[sy * w..(sy + 1) * w];
                match kx {
                    1 => d.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                    0 => {
                        d[..w - 1].iter_mut().zip(&g[1..]).for_each(|(a, &b)| *a += b);
                        if let Some(sx) = padding.source(-1, w) {
                            d[sx] += g[0];
                        }
                    }
                    _ => {
                        d[1..].iter_mut().zip(&g[..w - 1]).for_each(|(a, &b)| *a += b);
                        if let Some(sx) = padding.source(w as isize, w) {
                            d[sx] += g[w - 1];
                        }
                    }
                }
            }
        }
    });
    out
}

/// Parameters of one 3x3 convolution; weights are `cout x (cin * 9)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Conv {
            cin,
            cout,
            weight: vec![T::zero(); cout * cin * 9],
            bias: vec![T::zero(); cout],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Forward pass; `col` is scratch space that ends up holding the unfolded input.
    pub(crate) fn forward(&self, input: &Tensor<T>, padding: Padding, col: &mut Vec<T>) -> Tensor<T> {
        assert_eq!(input.channels, self.cin, "conv input channels");
        let plane = input.plane();
        im2col(input, padding, col);
        let mut out = Tensor::zeros(self.cout, input.height, input.width);
        for (co, chunk) in out.data.chunks_exact_mut(plane).enumerate() {
            chunk.fill(self.bias[co]);
        }
        gemm(
            self.cout,
            self.cin * 9,
            plane,
            T::one(),
            MatRef::row_major(&self.weight, self.cin * 9),
            MatRef::row_major(col, plane),
            T::one(),
            &mut out.data,
        );
        out
    }

    /// Backward pass given the layer input and the output gradient.
    /// Accumulates into `grad` and returns the input gradient when requested.
    pub(crate) fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        padding: Padding,
        col: &mut Vec<T>,
        grad: &mut Conv<T>,
        need_input_grad: bool,
    ) -> Option<Tensor<T>> {
        let plane = input.plane();
        let k = self.cin * 9;
        for (co, g) in grad_out.data.chunks_exact(plane).enumerate() {
            let mut s = 0.0f64;
            for &v in g {
                s += v.as_f64();
            }
            grad.bias[co] += T::of(s);
        }
        im2col(input, padding, col);
        // dW += dOut . col^T
        gemm(
            self.cout,
            plane,
            k,
            T::one(),
            MatRef::row_major(&grad_out.data, plane),
            MatRef::transposed(col, plane),
            T::one(),
            &mut grad.weight,
        );
        if !need_input_grad {
            return None;
        }
        // dcol = W^T . dOut, reusing the scratch buffer
        gemm(
            k,
            self.cout,
            plane,
            T::one(),
            MatRef::transposed(&self.weight, k),
            MatRef::row_major(&grad_out.data, plane),
            T::zero(),
            col,
        );
        Some(col2im(col, self.cin, input.height, input.width, padding))
    }
}

pub(crate) fn leaky_relu_inplace<T: Real>(t: &mut Tensor<T>, slope: T) {
    t.data.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v *= slope;
        }
    });
}

/// Multiplies `grad` by the rectifier derivative, read off the activated output.
pub(crate) fn leaky_relu_backward<T: Real>(grad: &mut Tensor<T>, activated: &Tensor<T>, slope: T) {
    grad.data.iter_mut().zip(&activated.data).for_each(|(g, &a)| {
        if a <= T::zero() {
            *g *= slope;
        }
    });
}

/// 2x2 max-pool, stride 2. Returns the pooled map and the winning offset
/// (0..4, row-major within the window; first maximum wins ties).
pub(crate) fn max_pool<T: Real>(input: &Tensor<T>) -> (Tensor<T>, Vec<u8>) {
    let (h, w) = (input.height / 2, input.width / 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    let mut arg = vec![0u8; out.data.len()];
    let iw = input.width;
    for c in 0..input.channels {
        let src = &input.data[c * input.plane()..(c + 1) * input.plane()];
        for y in 0..h {
            for x in 0..w {
                let base = 2 * y * iw + 2 * x;
                let cand = [src[base], src[base + 1], src[base + iw], src[base + iw + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cand[i] > cand[best] {
                        best = i;
                    }
                }
                let o = c * h * w + y * w + x;
                out.data[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
    (out, arg)
}

pub(crate) fn max_pool_backward<T: Real>(grad_out: &Tensor<T>, arg: &[u8], in_h: usize, in_w: usize) -> Tensor<T> {
    let mut grad = Tensor::zeros(grad_out.channels, in_h, in_w);
    let (h, w) = (grad_out.height, grad_out.width);
    for c in 0..grad_out.channels {
        for y in 0..h {
            for x in 0..w {
                let o = c * h * w + y * w + x;
                let a = arg[o] as usize;
                let (dy, dx) = (a / 2, a % 2);
                grad.data[c * in_h * in_w + (2 * y + dy) * in_w + 2 * x + dx] += grad_out.data[o];
            }
        }
    }
    grad
}

pub(crate) fn upsample2<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input.height * 2, input.width * 2);
    let mut out = Tensor::zeros(input.channels, h, w);
    for c in 0..input.channels {
        for y in 0..h {
            for x in 0..w {
                out.data[c * h * w + y * w + x] = input.data[c * input.plane() + (y / 2) * input.width + x / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (grad_out.height / 2, grad_out.width / 2);
    let mut grad = Tensor::zeros(grad_out.channels, h, w);
    let ow = grad_out.width;
    for c in 0..grad_out.channels {
        let src = &grad_out.data[c * grad_out.plane()..(c + 1) * grad_out.plane()];
        for y in 0..h {
            for x in 0..w {
                let b = 2 * y * ow + 2 * x;
                grad.data[c * h * w + y * w + x] = src[b] + src[b + 1] + src[b + ow] + src[b + ow + 1];
            }
        }
    }
    grad
}
