//! Dense building blocks with explicit backward passes.
//!
//! Activations are `tokens x features` matrices. Each `backward` adds the
//! parameter gradients into the flat gradient buffer and returns the
//! gradient with respect to the layer input.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::params::{grad_view, Init, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    /// Weight stored `out x in`, matching the usual checkpoint layout.
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            &[out_dim, in_dim],
            out_dim,
            in_dim,
            Init::XavierUniform { fan_in: in_dim, fan_out: out_dim },
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[out_dim], 1, out_dim, Init::Zeros, rng));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut y = x.dot(&p.view(self.weight).t());
        if let Some(b) = self.bias {
            y += &p.row(b);
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: ArrayView2<'_, T>,
        dy: ArrayView2<'_, T>,
        grads: &mut [T],
    ) -> Array2<T> {
        {
            let mut gw = grad_view(grads, self.weight);
            general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut gw);
        }
        if let Some(b) = self.bias {
            let mut gb = grad_view(grads, b);
            let s = dy.sum_axis(Axis(0));
            gb.row_mut(0).zip_mut_with(&s, |g, &v| *g += v);
        }
        dy.dot(&p.view(self.weight))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub weight: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub eps: f64,
}

pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add(format!("{name}.weight"), &[dim], 1, dim, Init::Ones, rng);
        let bias = store.add(format!("{name}.bias"), &[dim], 1, dim, Init::Zeros, rng);
        Self { weight, bias, dim, eps: 1e-6 }
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: ArrayView2<'_, T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::from_usize_lossy(self.dim);
        let eps = T::lit(self.eps);
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *r = T::one() / (var + eps).sqrt();
            let s = *r;
            row.mapv_inplace(|v| v * s);
        }
        let gamma = p.row(self.weight);
        let beta = p.row(self.bias);
        let y = &xhat * &gamma + &beta;
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: ArrayView2<'_, T>,
        grads: &mut [T],
    ) -> Array2<T> {
        {
            let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
            let mut gw = grad_view(grads, self.weight);
            gw.row_mut(0).zip_mut_with(&dgamma, |g, &v| *g += v);
        }
        {
            let dbeta = dy.sum_axis(Axis(0));
            let mut gb = grad_view(grads, self.bias);
            gb.row_mut(0).zip_mut_with(&dbeta, |g, &v| *g += v);
        }
        let gamma = p.row(self.weight);
        let dxhat = &dy * &gamma;
        let d = T::from_usize_lossy(self.dim);
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, dxh), xh), &r) in
            dx.rows_mut().into_iter().zip(dxhat.rows()).zip(cache.xhat.rows()).zip(cache.rstd.iter())
        {
            let m1 = dxh.sum() / d;
            let m2 = dxh.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
            for ((o, &a), &b) in out.iter_mut().zip(dxh.iter()).zip(xh.iter()) {
                *o = r * (a - m1 - b * m2);
            }
        }
        dx
    }
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    x.mapv(|v| T::lit(0.5) * v * (T::one() + (v * inv_sqrt2).erf()))
}

pub fn gelu_backward<T: Scalar>(x: &Array2<T>, dy: ArrayView2<'_, T>) -> Array2<T> {
    let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let mut dx = x.mapv(|v| {
        let cdf = T::lit(0.5) * (T::one() + (v * inv_sqrt2).erf());
        let pdf = inv_sqrt_2pi * (-(v * v) * T::lit(0.5)).exp();
        cdf + v * pdf
    });
    dx *= &dy;
    dx
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}
