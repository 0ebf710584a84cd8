use ndarray::{Array2, Array4, Axis, Ix2};
use rand::Rng;

use super::activation::sigmoid;
use super::{Mode, Module, Param, ParamKind};
use crate::{Error, Result, Scalar};

#[derive(Clone)]
struct AttentionCache<T> {
    input: Array4<T>,
    pooled: Array2<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    gates: Array2<T>,
}

/// Squeeze-and-excitation style channel gating.
///
/// Each channel is scaled by `g_c = sigmoid(W2 relu(W1 avgpool(x) + b1) + b2)`
/// where `W1` squeezes `C` to `C / reduction`.
#[derive(Clone)]
pub struct ChannelAttention<T> {
    pub squeeze_weight: Param<T>,
    pub squeeze_bias: Param<T>,
    pub excite_weight: Param<T>,
    pub excite_bias: Param<T>,
    channels: usize,
    hidden: usize,
    cache: Vec<AttentionCache<T>>,
}

fn as_matrix<T: Scalar>(p: &Param<T>) -> ndarray::ArrayView2<'_, T> {
    p.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
}

impl<T: Scalar> ChannelAttention<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, channels: usize, reduction: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 || channels < reduction {
            return Err(Error::arg(format!(
                "{name}: {channels} channels cannot be reduced by {reduction}"
            )));
        }
        if channels % reduction != 0 {
            return Err(Error::arg(format!(
                "{name}: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(ChannelAttention {
            squeeze_weight: Param::uniform(format!("{name}.squeeze.weight"), &[hidden, channels], channels, rng),
            // Pooled post-ReLU descriptors are all positive and nearly equal, so a
            // unit whose weight row sums negative would start (and stay) dead.
            squeeze_bias: Param::filled(format!("{name}.squeeze.bias"), ParamKind::Weight, &[hidden], T::one()),
            excite_weight: Param::uniform(format!("{name}.excite.weight"), &[channels, hidden], hidden, rng),
            excite_bias: Param::uniform(format!("{name}.excite.bias"), &[channels], hidden, rng),
            channels,
            hidden,
            cache: Vec::new(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Per-sample, per-channel gates for `x`, in `(0, 1)`.
    pub fn gates(&self, x: &Array4<T>) -> Result<Array2<T>> {
        Ok(self.compute(x)?.3)
    }

    #[allow(clippy::type_complexity)]
    fn compute(&self, x: &Array4<T>) -> Result<(Array2<T>, Array2<T>, Array2<T>, Array2<T>)> {
        let (_, c, h, w) = x.dim();
        if c != self.channels {
            return Err(Error::arg(format!(
                "channel attention expects {} channels, got {c}",
                self.channels
            )));
        }
        let hw = T::from_usize(h * w).expect("fits");
        let pooled = x.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v / hw);
        let mut hidden_pre = pooled.dot(&as_matrix(&self.squeeze_weight).t());
        for mut row in hidden_pre.rows_mut() {
            for (v, &b) in row.iter_mut().zip(self.squeeze_bias.value.iter()) {
                *v = *v + b;
            }
        }
        let hidden = hidden_pre.mapv(|v| v.max(T::zero()));
        let mut logits = hidden.dot(&as_matrix(&self.excite_weight).t());
        for mut row in logits.rows_mut() {
            for (v, &b) in row.iter_mut().zip(self.excite_bias.value.iter()) {
                *v = *v + b;
            }
        }
        let gates = logits.mapv(sigmoid);
        Ok((pooled, hidden_pre, hidden, gates))
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let (pooled, hidden_pre, hidden, gates) = self.compute(x)?;
        let mut y = x.clone();
        for (mut sample, g) in y.axis_iter_mut(Axis(0)).zip(gates.rows()) {
            for (mut plane, &gc) in sample.axis_iter_mut(Axis(0)).zip(g.iter()) {
                plane.mapv_inplace(|v| v * gc);
            }
        }
        if mode.record {
            self.cache.push(AttentionCache {
                input: x.clone(),
                pooled,
                hidden_pre,
                hidden,
                gates,
            });
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let AttentionCache {
            input,
            pooled,
            hidden_pre,
            hidden,
            gates,
        } = self.cache.pop().expect("attention backward without forward");
        let (n, c, h, w) = input.dim();
        let hw = T::from_usize(h * w).expect("fits");

        // dL/dg[n, c] = sum_hw dy * x
        let mut d_logits = Array2::zeros((n, c));
        for b in 0..n {
            for ch in 0..c {
                let s: T = dy
                    .index_axis(Axis(0), b)
                    .index_axis(Axis(0), ch)
                    .iter()
                    .zip(input.index_axis(Axis(0), b).index_axis(Axis(0), ch).iter())
                    .map(|(&a, &x)| a * x)
                    .sum();
                let g = gates[[b, ch]];
                d_logits[[b, ch]] = s * g * (T::one() - g);
            }
        }
        {
            let mut gw = self.excite_weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d");
            gw.scaled_add(T::one(), &d_logits.t().dot(&hidden));
        }
        for (g, col) in self.excite_bias.grad.iter_mut().zip(d_logits.columns()) {
            *g = *g + col.sum();
        }
        let mut d_hidden = d_logits.dot(&as_matrix(&self.excite_weight));
        ndarray::Zip::from(&mut d_hidden).and(&hidden_pre).for_each(|d, &z| {
            if z <= T::zero() {
                *d = T::zero();
            }
        });
        {
            let mut gw = self.squeeze_weight.grad.view_mut().into_dimensionality::<Ix2>().expect("2-d");
            gw.scaled_add(T::one(), &d_hidden.t().dot(&pooled));
        }
        for (g, col) in self.squeeze_bias.grad.iter_mut().zip(d_hidden.columns()) {
            *g = *g + col.sum();
        }
        let d_pooled = d_hidden.dot(&as_matrix(&self.squeeze_weight));

        let mut dx = dy.clone();
        for b in 0..n {
            for ch in 0..c {
                let g = gates[[b, ch]];
                let extra = d_pooled[[b, ch]] / hw;
                dx.index_axis_mut(Axis(0), b)
                    .index_axis_mut(Axis(0), ch)
                    .mapv_inplace(|v| v * g + extra);
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for ChannelAttention<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![
            &self.squeeze_weight,
            &self.squeeze_bias,
            &self.excite_weight,
            &self.excite_bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.squeeze_weight,
            &mut self.squeeze_bias,
            &mut self.excite_weight,
            &mut self.excite_bias,
        ]
    }
}
