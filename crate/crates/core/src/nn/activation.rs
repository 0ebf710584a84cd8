use ndarray::{Array4, Zip};

use super::Mode;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

/// Parameter-free elementwise nonlinearity.
#[derive(Clone)]
pub struct Activation<T> {
    kind: ActivationKind,
    // Input for the rectifiers, output for tanh/sigmoid.
    cache: Vec<Array4<T>>,
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation {
            kind,
            cache: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Array4<T> {
        let y = match self.kind {
            ActivationKind::Relu => x.mapv(|v| v.max(T::zero())),
            ActivationKind::LeakyRelu(slope) => {
                let s = T::c(slope);
                x.mapv(|v| if v > T::zero() { v } else { v * s })
            }
            ActivationKind::Tanh => x.mapv(|v| v.tanh()),
            ActivationKind::Sigmoid => x.mapv(sigmoid),
        };
        if mode.record {
            match self.kind {
                ActivationKind::Relu | ActivationKind::LeakyRelu(_) => self.cache.push(x.clone()),
                ActivationKind::Tanh | ActivationKind::Sigmoid => self.cache.push(y.clone()),
            }
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let saved = self.cache.pop().expect("activation backward without forward");
        let mut dx = dy.clone();
        match self.kind {
            ActivationKind::Relu => Zip::from(&mut dx).and(&saved).for_each(|d, &x| {
                if x <= T::zero() {
                    *d = T::zero();
                }
            }),
            ActivationKind::LeakyRelu(slope) => {
                let s = T::c(slope);
                Zip::from(&mut dx).and(&saved).for_each(|d, &x| {
                    if x <= T::zero() {
                        *d = *d * s;
                    }
                })
            }
            ActivationKind::Tanh => {
                Zip::from(&mut dx).and(&saved).for_each(|d, &y| *d = *d * (T::one() - y * y))
            }
            ActivationKind::Sigmoid => {
                Zip::from(&mut dx).and(&saved).for_each(|d, &y| *d = *d * y * (T::one() - y))
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        assert!(sigmoid(-800.0f32).is_finite());
    }

    #[test]
    fn tanh_output_bounded() {
        let mut act = Activation::<f32>::new(ActivationKind::Tanh);
        let x = Array4::from_shape_fn((1, 1, 2, 2), |(_, _, h, w)| (h as f32 - w as f32) * 100.0);
        let y = act.forward(&x, Mode::EVAL);
        assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
