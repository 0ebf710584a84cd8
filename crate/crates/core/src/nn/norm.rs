use ndarray::{Array1, Array4, Axis, Zip};

use super::{Mode, Module, Param, ParamKind};
use crate::{Error, Result, Scalar};

#[derive(Clone)]
enum NormCache<T> {
    /// Normalized input and per-channel `1/sqrt(var + eps)` of the batch.
    Batch { x_hat: Array4<T>, inv_std: Array1<T> },
    /// Running statistics were used; the layer is a per-channel affine map.
    Running { x_hat: Array4<T>, scale: Array1<T> },
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    channels: usize,
    momentum: T,
    eps: T,
    cache: Vec<NormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::filled(format!("{name}.gamma"), ParamKind::Weight, &[channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), ParamKind::Weight, &[channels]),
            running_mean: Param::zeros(format!("{name}.running_mean"), ParamKind::Buffer, &[channels]),
            running_var: Param::filled(
                format!("{name}.running_var"),
                ParamKind::Buffer,
                &[channels],
                T::one(),
            ),
            channels,
            momentum: T::c(0.1),
            eps: T::c(1e-5),
            cache: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let (n, c, h, w) = x.dim();
        if c != self.channels {
            return Err(Error::arg(format!(
                "{}: expected {} channels, got {c}",
                self.gamma.name, self.channels
            )));
        }
        let count = n * h * w;
        let gamma = self.gamma.value.iter().copied().collect::<Array1<T>>();
        let beta = self.beta.value.iter().copied().collect::<Array1<T>>();

        if !mode.batch_stats {
            let mut scale = Array1::zeros(c);
            let mut x_hat = x.clone();
            for (ch, mut plane) in x_hat.axis_iter_mut(Axis(1)).enumerate() {
                let inv = T::one() / (self.running_var.value[ch] + self.eps).sqrt();
                let mean = self.running_mean.value[ch];
                scale[ch] = gamma[ch] * inv;
                plane.mapv_inplace(|v| (v - mean) * inv);
            }
            let mut y = x_hat.clone();
            for (ch, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
                let (g, b) = (gamma[ch], beta[ch]);
                plane.mapv_inplace(|v| v * g + b);
            }
            if mode.record {
                self.cache.push(NormCache::Running { x_hat, scale });
            }
            return Ok(y);
        }

        let m = T::from_usize(count).expect("count fits");
        let mut x_hat = x.clone();
        let mut inv_std = Array1::zeros(c);
        for (ch, mut plane) in x_hat.axis_iter_mut(Axis(1)).enumerate() {
            let mean = plane.sum() / m;
            let var = plane.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
            let inv = T::one() / (var + self.eps).sqrt();
            plane.mapv_inplace(|v| (v - mean) * inv);
            inv_std[ch] = inv;
            if mode.update_running {
                let unbiased = if count > 1 {
                    var * m / (m - T::one())
                } else {
                    var
                };
                let mo = self.momentum;
                let rm = &mut self.running_mean.value[ch];
                *rm = (T::one() - mo) * *rm + mo * mean;
                let rv = &mut self.running_var.value[ch];
                *rv = (T::one() - mo) * *rv + mo * unbiased;
            }
        }
        let mut y = x_hat.clone();
        for (ch, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (gamma[ch], beta[ch]);
            plane.mapv_inplace(|v| v * g + b);
        }
        if mode.record {
            self.cache.push(NormCache::Batch { x_hat, inv_std });
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        match self.cache.pop().expect("batchnorm backward without forward") {
            NormCache::Running { x_hat, scale } => {
                let mut dx = dy.clone();
                for (ch, mut plane) in dx.axis_iter_mut(Axis(1)).enumerate() {
                    let xh_c = x_hat.index_axis(Axis(1), ch);
                    let sum_dy_xh = Zip::from(&plane)
                        .and(&xh_c)
                        .fold(T::zero(), |acc, &a, &b| acc + a * b);
                    self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xh;
                    self.beta.grad[ch] = self.beta.grad[ch] + plane.sum();
                    let s = scale[ch];
                    plane.mapv_inplace(|v| v * s);
                }
                dx
            }
            NormCache::Batch { x_hat, inv_std } => {
                let (n, _, h, w) = dy.dim();
                let m = T::from_usize(n * h * w).expect("count fits");
                let mut dx = Array4::zeros(dy.raw_dim());
                for ch in 0..self.channels {
                    let dy_c = dy.index_axis(Axis(1), ch);
                    let xh_c = x_hat.index_axis(Axis(1), ch);
                    let sum_dy = dy_c.sum();
                    let sum_dy_xh = Zip::from(&dy_c)
                        .and(&xh_c)
                        .fold(T::zero(), |acc, &a, &b| acc + a * b);
                    self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
                    self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xh;
                    let k = self.gamma.value[ch] * inv_std[ch] / m;
                    let mut dx_c = dx.index_axis_mut(Axis(1), ch);
                    Zip::from(&mut dx_c)
                        .and(&dy_c)
                        .and(&xh_c)
                        .for_each(|o, &g, &xh| *o = k * (m * g - sum_dy - xh * sum_dy_xh));
                }
                dx
            }
        }
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
