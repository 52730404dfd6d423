//! Convolutional layers for the CNN baselines, operating on `C x H x W` tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array3, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use super::params::{grad_view, Init, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            out_ch,
            in_ch * kernel * kernel,
            Init::KaimingNormal { fan_out: out_ch * kernel * kernel },
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[out_ch], 1, out_ch, Init::Zeros, rng));
        Self { weight, bias, in_ch, out_ch, kernel, stride, padding }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn im2col<T: Scalar>(&self, x: ArrayView3<'_, T>) -> Array2<T> {
        let (c, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut cols = Array2::zeros((c * k * k, oh * ow));
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let mut r = cols.row_mut(row);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                r[oy * ow + ox] = x[[ci, iy as usize, ix as usize]];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Scalar>(&self, cols: &Array2<T>, h: usize, w: usize) -> Array3<T> {
        let (oh, ow) = self.out_size(h, w);
        let k = self.kernel;
        let mut x = Array3::zeros((self.in_ch, h, w));
        for ci in 0..self.in_ch {
            for ky in 0..k {
                for kx in 0..k {
                    let r = cols.row((ci * k + ky) * k + kx);
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                x[[ci, iy as usize, ix as usize]] += r[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the im2col buffer needed by `backward`.
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView3<'_, T>) -> (Array3<T>, Array2<T>) {
        let (_, h, w) = x.dim();
        let (oh, ow) = self.out_size(h, w);
        let cols = self.im2col(x);
        let mut y = p.view(self.weight).dot(&cols);
        if let Some(b) = self.bias {
            let b = p.row(b);
            for (mut row, &bv) in y.rows_mut().into_iter().zip(b.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        let y = y.into_shape_with_order((self.out_ch, oh, ow)).expect("conv output shape");
        (y, cols)
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cols: &Array2<T>,
        in_hw: (usize, usize),
        dy: ArrayView3<'_, T>,
        grads: &mut [T],
    ) -> Array3<T> {
        let (oc, oh, ow) = dy.dim();
        let dy2 = dy.to_owned().into_shape_with_order((oc, oh * ow)).expect("conv grad shape");
        {
            let mut gw = grad_view(grads, self.weight);
            general_mat_mul(T::one(), &dy2, &cols.t(), T::one(), &mut gw);
        }
        if let Some(b) = self.bias {
            let s = dy2.sum_axis(Axis(1));
            let mut gb = grad_view(grads, b);
            gb.row_mut(0).zip_mut_with(&s, |g, &v| *g += v);
        }
        let dcols = p.view(self.weight).t().dot(&dy2);
        self.col2im(&dcols, in_hw.0, in_hw.1)
    }
}

/// Batch normalization with frozen running statistics and trainable affine terms.
#[derive(Debug, Clone, Copy)]
pub struct FrozenBatchNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl FrozenBatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), &[ch], 1, ch, Init::Ones, rng),
            bias: store.add(format!("{name}.bias"), &[ch], 1, ch, Init::Zeros, rng),
            running_mean: store.add(format!("{name}.running_mean"), &[ch], 1, ch, Init::Zeros, rng),
            running_var: store.add(format!("{name}.running_var"), &[ch], 1, ch, Init::Ones, rng),
            eps: 1e-5,
        }
    }

    fn scale_shift<T: Scalar>(&self, p: &ParamStore<T>) -> (Vec<T>, Vec<T>) {
        let w = p.row(self.weight);
        let b = p.row(self.bias);
        let m = p.row(self.running_mean);
        let v = p.row(self.running_var);
        let eps = T::lit(self.eps);
        let scale: Vec<T> = w.iter().zip(v.iter()).map(|(&w, &v)| w / (v + eps).sqrt()).collect();
        let shift = b.iter().zip(m.iter()).zip(&scale).map(|((&b, &m), &s)| b - m * s).collect();
        (scale, shift)
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView3<'_, T>) -> Array3<T> {
        let (scale, shift) = self.scale_shift(p);
        let mut y = x.to_owned();
        for (c, mut plane) in y.outer_iter_mut().enumerate() {
            let (s, t) = (scale[c], shift[c]);
            plane.mapv_inplace(|v| v * s + t);
        }
        y
    }

    /// Gradients flow to the affine weight and bias; running statistics stay fixed.
    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView3<'_, T>, dy: ArrayView3<'_, T>, grads: &mut [T]) -> Array3<T> {
        let v = p.row(self.running_var).to_owned();
        let m = p.row(self.running_mean).to_owned();
        let w = p.row(self.weight).to_owned();
        let eps = T::lit(self.eps);
        let mut dx = dy.to_owned();
        let ch = dy.dim().0;
        let mut dw = vec![T::zero(); ch];
        let mut db = vec![T::zero(); ch];
        for c in 0..ch {
            let rstd = T::one() / (v[c] + eps).sqrt();
            let xs = x.index_axis(Axis(0), c);
            let ds = dy.index_axis(Axis(0), c);
            db[c] = ds.sum();
            dw[c] = xs.iter().zip(ds.iter()).map(|(&xv, &g)| (xv - m[c]) * rstd * g).sum();
            let s = w[c] * rstd;
            dx.index_axis_mut(Axis(0), c).mapv_inplace(|g| g * s);
        }
        grad_view(grads, self.weight).row_mut(0).iter_mut().zip(&dw).for_each(|(g, &v)| *g += v);
        grad_view(grads, self.bias).row_mut(0).iter_mut().zip(&db).for_each(|(g, &v)| *g += v);
        dx
    }
}

pub fn relu3<T: Scalar>(x: &Array3<T>) -> Array3<T> {
    x.mapv(|v| v.max(T::zero()))
}

/// Passes gradient where the forward *output* was positive.
pub fn relu3_backward<T: Scalar>(out: &Array3<T>, dy: ArrayView3<'_, T>) -> Array3<T> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(out, |g, &o| {
        if o <= T::zero() {
            *g = T::zero();
        }
    });
    dx
}

/// Max pooling; returns the output and the flat argmax index of every output cell.
pub fn max_pool<T: Scalar>(x: ArrayView3<'_, T>, kernel: usize, stride: usize, padding: usize) -> (Array3<T>, Vec<usize>) {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * padding - kernel) / stride + 1;
    let ow = (w + 2 * padding - kernel) / stride + 1;
    let mut y = Array3::from_elem((c, oh, ow), T::neg_infinity());
    let mut arg = vec![0usize; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = T::neg_infinity();
                let mut best_i = 0;
                for ky in 0..kernel {
                    let iy = (oy * stride + ky) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel {
                        let ix = (ox * stride + kx) as isize - padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let v = x[[ci, iy as usize, ix as usize]];
                        if v > best {
                            best = v;
                            best_i = (ci * h + iy as usize) * w + ix as usize;
                        }
                    }
                }
                y[[ci, oy, ox]] = best;
                arg[(ci * oh + oy) * ow + ox] = best_i;
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward<T: Scalar>(arg: &[usize], in_dim: (usize, usize, usize), dy: ArrayView3<'_, T>) -> Array3<T> {
    let mut dx = Array3::zeros(in_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (&i, &g) in arg.iter().zip(dy.iter()) {
        flat[i] += g;
    }
    dx
}

fn pool_bounds(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

/// Adaptive average pooling to `out x out` with the standard bin boundaries.
pub fn adaptive_avg_pool<T: Scalar>(x: ArrayView3<'_, T>, out: usize) -> Array3<T> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, out, out));
    for ci in 0..c {
        for oy in 0..out {
            let (y0, y1) = pool_bounds(oy, h, out);
            for ox in 0..out {
                let (x0, x1) = pool_bounds(ox, w, out);
                let mut s = T::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        s += x[[ci, iy, ix]];
                    }
                }
                y[[ci, oy, ox]] = s / T::from_usize_lossy((y1 - y0) * (x1 - x0));
            }
        }
    }
    y
}

pub fn adaptive_avg_pool_backward<T: Scalar>(in_dim: (usize, usize, usize), dy: ArrayView3<'_, T>) -> Array3<T> {
    let (c, h, w) = in_dim;
    let out = dy.dim().1;
    let mut dx = Array3::zeros(in_dim);
    for ci in 0..c {
        for oy in 0..out {
            let (y0, y1) = pool_bounds(oy, h, out);
            for ox in 0..out {
                let (x0, x1) = pool_bounds(ox, w, out);
                let g = dy[[ci, oy, ox]] / T::from_usize_lossy((y1 - y0) * (x1 - x0));
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[[ci, iy, ix]] += g;
                    }
                }
            }
        }
    }
    dx
}
