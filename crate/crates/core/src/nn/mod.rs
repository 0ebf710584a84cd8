//! Minimal layer library with hand-written backward passes.
//!
//! Layers cache what their backward pass needs on a LIFO stack, so a layer
//! whose weights are shared between two forward calls (the spatial and
//! temporal encoder streams) back-propagates correctly as long as the
//! backward calls arrive in reverse order.

mod activation;
mod adam;
mod attention;
mod conv;
mod norm;
mod shift;

pub use activation::{Activation, ActivationKind};
pub use adam::{Adam, AdamMoments};
pub use attention::ChannelAttention;
pub use conv::{conv_output_size, Conv2d, ConvTranspose2d};
pub use norm::BatchNorm2d;
pub use shift::{temporal_shift, temporal_shift_backward, FeatureMap, ShiftFraction};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use sha2::{Digest, Sha256};

use crate::Scalar;

/// Controls normalization statistics and whether a forward pass is recorded
/// for a later backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Normalize with statistics of the current batch instead of running ones.
    pub batch_stats: bool,
    /// Fold batch statistics into the running estimates.
    pub update_running: bool,
    /// Push backward caches.
    pub record: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        batch_stats: true,
        update_running: true,
        record: true,
    };
    /// Training-time behaviour without touching running statistics; used when
    /// gradients must flow through a network whose state is frozen.
    pub const FROZEN_TRAIN: Mode = Mode {
        batch_stats: true,
        update_running: false,
        record: true,
    };
    pub const EVAL: Mode = Mode {
        batch_stats: false,
        update_running: false,
        record: false,
    };
    /// Inference statistics, but recorded so gradients can be probed.
    pub const EVAL_RECORD: Mode = Mode {
        batch_stats: false,
        update_running: false,
        record: true,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Learned by the optimizer.
    Weight,
    /// State carried alongside weights (running statistics).
    Buffer,
}

/// A named tensor together with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            kind,
            value,
            grad,
        }
    }

    pub fn zeros(name: impl Into<String>, kind: ParamKind, shape: &[usize]) -> Self {
        Self::new(name, kind, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(name: impl Into<String>, kind: ParamKind, shape: &[usize], v: T) -> Self {
        Self::new(name, kind, ArrayD::from_elem(IxDyn(shape), v))
    }

    /// Uniform in `±1/sqrt(fan_in)`, the usual default for conv and linear layers.
    pub fn uniform<R: Rng + ?Sized>(
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let len = shape.iter().product();
        let data: Vec<T> = (0..len).map(|_| T::c(dist.sample(rng))).collect();
        let value = ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length");
        Self::new(name, ParamKind::Weight, value)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn is_weight(&self) -> bool {
        self.kind == ParamKind::Weight
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<&Param<T>>;
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_weights(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.is_weight())
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names and little-endian values of every parameter and
    /// buffer. Used to assert that a network is untouched by a training step.
    fn weight_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for p in self.params() {
            hasher.update(p.name.as_bytes());
            buf.clear();
            for &v in p.value.iter() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        hex::encode(hasher.finalize())
    }

    /// Whether every accumulated gradient is finite; returns the first
    /// offending parameter name otherwise.
    fn first_non_finite_grad(&self) -> Option<String> {
        self.params()
            .into_iter()
            .find(|p| p.grad.iter().any(|g| !g.is_finite()))
            .map(|p| p.name.clone())
    }
}
