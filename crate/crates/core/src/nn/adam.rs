use ndarray::{ArrayD, Zip};

use super::Param;
use crate::{Error, Result, Scalar};

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T> {
    pub name: String,
    pub m: ArrayD<T>,
    pub v: ArrayD<T>,
}

/// Adaptive-moment optimizer without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: Vec<AdamMoments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    /// Applies one update to every weight in `params` (buffers are skipped).
    pub fn update(&mut self, params: Vec<&mut Param<T>>) -> Result<()> {
        let weights: Vec<&mut Param<T>> = params.into_iter().filter(|p| p.is_weight()).collect();
        if self.moments.is_empty() {
            self.moments = weights
                .iter()
                .map(|p| AdamMoments {
                    name: p.name.clone(),
                    m: ArrayD::zeros(p.value.raw_dim()),
                    v: ArrayD::zeros(p.value.raw_dim()),
                })
                .collect();
        }
        if self.moments.len() != weights.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, model has {}",
                self.moments.len(),
                weights.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
        let bc1 = T::c(1.0 - self.beta1.powi(t));
        let bc2 = T::c(1.0 - self.beta2.powi(t));
        let lr = T::c(self.learning_rate);
        let eps = T::c(self.eps);
        for (p, st) in weights.into_iter().zip(self.moments.iter_mut()) {
            if p.name != st.name || p.value.shape() != st.m.shape() {
                return Err(Error::invalid(format!(
                    "optimizer state for {} does not match parameter {}",
                    st.name, p.name
                )));
            }
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut st.m)
                .and(&mut st.v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.moments.clear();
    }
}
