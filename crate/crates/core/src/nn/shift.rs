use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array4, Array5};
use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result, Scalar};

/// Exact fraction of channels moved one step forward in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShiftFraction(Ratio<usize>);

impl ShiftFraction {
    pub fn new(numer: usize, denom: usize) -> Result<Self> {
        if denom == 0 || numer >= denom {
            return Err(Error::arg(format!("shift fraction {numer}/{denom} not in [0, 1)")));
        }
        Ok(ShiftFraction(Ratio::new(numer, denom)))
    }

    pub const fn zero() -> Self {
        ShiftFraction(Ratio::new_raw(0, 1))
    }

    pub fn is_zero(&self) -> bool {
        *self.0.numer() == 0
    }

    /// Number of shifted channels out of `channels`; errors unless exact.
    pub fn shifted_channels(&self, channels: usize) -> Result<usize> {
        let scaled = self.0 * channels;
        if !scaled.is_integer() {
            return Err(Error::arg(format!(
                "shift fraction {self} of {channels} channels is not integral"
            )));
        }
        Ok(scaled.to_integer())
    }
}

impl Default for ShiftFraction {
    fn default() -> Self {
        ShiftFraction(Ratio::new(1, 8))
    }
}

impl fmt::Display for ShiftFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for ShiftFraction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::arg(format!("malformed shift fraction {s:?}")))
        };
        ShiftFraction::new(parse(n)?, parse(d)?)
    }
}

impl Serialize for ShiftFraction {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ShiftFraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-frame features of a batch of windows, laid out `N x T x C x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T>(Array5<T>);

impl<T: Scalar> FeatureMap<T> {
    pub fn new(data: Array5<T>) -> Result<Self> {
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::arg(format!("feature map has an empty axis: {:?}", data.shape())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature map contains non-finite values"));
        }
        Ok(FeatureMap(data))
    }

    /// Regroups `(N*T) x C x H x W` frame features into windows of `t` frames.
    pub fn from_frames(frames: Array4<T>, t: usize) -> Result<Self> {
        let (nt, c, h, w) = frames.dim();
        if t == 0 || nt % t != 0 {
            return Err(Error::arg(format!("{nt} frames do not split into windows of {t}")));
        }
        let data = frames
            .into_shape_with_order((nt / t, t, c, h, w))
            .map_err(|e| Error::arg(e.to_string()))?;
        Ok(FeatureMap(data))
    }

    pub fn data(&self) -> &Array5<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array5<T> {
        self.0
    }

    pub fn dim(&self) -> (usize, usize, usize, usize, usize) {
        self.0.dim()
    }

    /// Flattens back to `(N*T) x C x H x W`.
    pub fn into_frames(self) -> Array4<T> {
        let (n, t, c, h, w) = self.0.dim();
        self.0
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * t, c, h, w))
            .expect("contiguous")
    }

    /// Stacks the time axis into channels: `N x (T*C) x H x W`.
    pub fn stack_time(&self) -> Array4<T> {
        let (n, t, c, h, w) = self.0.dim();
        self.0
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, t * c, h, w))
            .expect("contiguous")
    }
}

fn shift_in_place<T: Scalar>(data: &mut Array5<T>, shifted: usize, forward: bool) {
    let t = data.shape()[1];
    if shifted == 0 || t == 0 {
        return;
    }
    if forward {
        // out[t] = in[t-1]; walk backwards so sources are read before overwritten.
        for step in (1..t).rev() {
            let src = data.slice(s![.., step - 1, ..shifted, .., ..]).to_owned();
            data.slice_mut(s![.., step, ..shifted, .., ..]).assign(&src);
        }
        data.slice_mut(s![.., 0, ..shifted, .., ..]).fill(T::zero());
    } else {
        for step in 0..t - 1 {
            let src = data.slice(s![.., step + 1, ..shifted, .., ..]).to_owned();
            data.slice_mut(s![.., step, ..shifted, .., ..]).assign(&src);
        }
        data.slice_mut(s![.., t - 1, ..shifted, .., ..]).fill(T::zero());
    }
}

/// Moves the first `fraction * C` channels one step forward in time.
///
/// Output at time `t` takes those channels from time `t - 1`; time 0
/// receives zeros. The remaining channels pass through unchanged.
pub fn temporal_shift<T: Scalar>(f: &FeatureMap<T>, fraction: ShiftFraction) -> Result<FeatureMap<T>> {
    let shifted = fraction.shifted_channels(f.dim().2)?;
    let mut out = f.0.clone();
    shift_in_place(&mut out, shifted, true);
    Ok(FeatureMap(out))
}

/// Adjoint of [`temporal_shift`]: routes gradients from time `t` back to `t - 1`.
pub fn temporal_shift_backward<T: Scalar>(
    grad: &FeatureMap<T>,
    fraction: ShiftFraction,
) -> Result<FeatureMap<T>> {
    let shifted = fraction.shifted_channels(grad.dim().2)?;
    let mut out = grad.0.clone();
    shift_in_place(&mut out, shifted, false);
    Ok(FeatureMap(out))
}
