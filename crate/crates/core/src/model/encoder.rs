use ndarray::{Array4, Array5};
use rand::Rng;

use super::{concat_channels, split_channels, GeneratorConfig};
use crate::nn::{
    temporal_shift, temporal_shift_backward, Activation, ActivationKind, BatchNorm2d, Conv2d, FeatureMap, Mode,
    Module, Param, ShiftFraction,
};
use crate::{Error, Result, Scalar};

#[derive(Clone)]
struct ConvBnRelu<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    act: Activation<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    fn new<R: Rng + ?Sized>(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(&format!("{name}.conv"), cin, cout, 3, stride, 1, false, rng),
            bn: BatchNorm2d::new(&format!("{name}.bn"), cout),
            act: Activation::new(ActivationKind::Relu),
        }
    }

    fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        Ok(self.act.forward(&y, mode))
    }

    fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.act.backward(dy);
        let d = self.bn.backward(&d);
        self.conv.backward(&d)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv.params();
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv.params_mut();
        v.extend(self.bn.params_mut());
        v
    }
}

/// `relu(x + bn(conv(relu(bn(conv(shift(x)))))))`, with the shift only on the
/// temporal stream.
#[derive(Clone)]
struct ResidualBlock<T> {
    first: ConvBnRelu<T>,
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    out: Activation<T>,
    shifts: Vec<Option<(ShiftFraction, usize)>>,
}

impl<T: Scalar> ResidualBlock<T> {
    fn new<R: Rng + ?Sized>(name: &str, channels: usize, rng: &mut R) -> Self {
        ResidualBlock {
            first: ConvBnRelu::new(&format!("{name}.a"), channels, channels, 1, rng),
            conv: Conv2d::new(&format!("{name}.b.conv"), channels, channels, 3, 1, 1, false, rng),
            bn: BatchNorm2d::new(&format!("{name}.b.bn"), channels),
            out: Activation::new(ActivationKind::Relu),
            shifts: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Array4<T>, shift: Option<(ShiftFraction, usize)>, mode: Mode) -> Result<Array4<T>> {
        let z = match shift {
            Some((fraction, t)) if !fraction.is_zero() => {
                temporal_shift(&FeatureMap::from_frames(x.clone(), t)?, fraction)?.into_frames()
            }
            _ => x.clone(),
        };
        let y = self.first.forward(&z, mode)?;
        let y = self.conv.forward(&y, mode)?;
        let mut y = self.bn.forward(&y, mode)?;
        y += x;
        if mode.record {
            self.shifts.push(shift);
        }
        Ok(self.out.forward(&y, mode))
    }

    fn backward(&mut self, dy: &Array4<T>) -> Result<Array4<T>> {
        let shift = self.shifts.pop().expect("residual backward without forward");
        let d_sum = self.out.backward(dy);
        let d = self.bn.backward(&d_sum);
        let d = self.conv.backward(&d);
        let mut dz = self.first.backward(&d);
        if let Some((fraction, t)) = shift {
            if !fraction.is_zero() {
                dz = temporal_shift_backward(&FeatureMap::from_frames(dz, t)?, fraction)?.into_frames();
            }
        }
        Ok(dz + d_sum)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.first.params();
        v.extend(self.conv.params());
        v.extend(self.bn.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.first.params_mut();
        v.extend(self.conv.params_mut());
        v.extend(self.bn.params_mut());
        v
    }
}

#[derive(Clone)]
struct Stage<T> {
    down: ConvBnRelu<T>,
    blocks: Vec<ResidualBlock<T>>,
}

/// Encoder output: both streams' deepest features stacked over time and
/// concatenated, `N x 2*T*C x H/2^S x W/2^S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalMap<T>(pub Array4<T>);

/// Shared-weight backbone run as a spatial stream and a temporal-shift stream.
///
/// Skip `s` holds both streams' features at the input resolution of stage
/// `s` (skip 0 is the stem output at full resolution).
#[derive(Clone)]
pub struct Encoder<T> {
    stem: ConvBnRelu<T>,
    stages: Vec<Stage<T>>,
    widths: Vec<usize>,
    shift: ShiftFraction,
    input_frames: usize,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, input_frames: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if input_frames == 0 {
            return Err(Error::Config("encoder needs at least one input frame".into()));
        }
        let widths = cfg.widths();
        let stem = ConvBnRelu::new("enc.stem", 3, widths[0], 1, rng);
        let mut stages = Vec::with_capacity(widths.len());
        let mut cin = widths[0];
        for (s, &w) in widths.iter().enumerate() {
            let down = ConvBnRelu::new(&format!("enc.stage{s}.down"), cin, w, 2, rng);
            let blocks = (0..cfg.residual_blocks)
                .map(|b| ResidualBlock::new(&format!("enc.stage{s}.res{b}"), w, rng))
                .collect();
            stages.push(Stage { down, blocks });
            cin = w;
        }
        Ok(Encoder {
            stem,
            stages,
            widths,
            shift: cfg.shift_fraction,
            input_frames,
        })
    }

    pub fn input_frames(&self) -> usize {
        self.input_frames
    }

    /// Channels of skip `s` (both streams, all time steps).
    pub fn skip_channels(&self, s: usize) -> usize {
        let c = if s == 0 { self.widths[0] } else { self.widths[s - 1] };
        2 * self.input_frames * c
    }

    pub fn map_channels(&self) -> usize {
        2 * self.input_frames * self.widths[self.widths.len() - 1]
    }

    /// Features before each stage plus the deepest output, per frame.
    fn stream(&mut self, frames: &Array4<T>, shift: Option<(ShiftFraction, usize)>, mode: Mode) -> Result<Vec<Array4<T>>> {
        let mut outs = Vec::with_capacity(self.stages.len() + 1);
        let mut x = self.stem.forward(frames, mode)?;
        for stage in &mut self.stages {
            outs.push(x.clone());
            x = stage.down.forward(&x, mode)?;
            for block in &mut stage.blocks {
                x = block.forward(&x, shift, mode)?;
            }
        }
        outs.push(x);
        Ok(outs)
    }

    fn stream_backward(&mut self, mut grads: Vec<Array4<T>>) -> Result<()> {
        let mut d = grads.pop().expect("deepest gradient");
        for stage in self.stages.iter_mut().rev() {
            for block in stage.blocks.iter_mut().rev() {
                d = block.backward(&d)?;
            }
            d = stage.down.backward(&d);
            d += &grads.pop().expect("one gradient per stage");
        }
        self.stem.backward(&d);
        Ok(())
    }

    /// `inputs` is `N x T x 3 x H x W`.
    pub fn forward(&mut self, inputs: &Array5<T>, mode: Mode) -> Result<(SpatioTemporalMap<T>, Vec<Array4<T>>)> {
        let (n, t, c, h, w) = inputs.dim();
        if t != self.input_frames {
            return Err(Error::arg(format!("encoder expects {} frames, got {t}", self.input_frames)));
        }
        if c != 3 {
            return Err(Error::arg(format!("encoder expects 3 channels, got {c}")));
        }
        let factor = 1usize << self.stages.len();
        if h != w || h % factor != 0 || h == 0 {
            return Err(Error::arg(format!(
                "frames of {h}x{w} do not fit {} encoder stages",
                self.stages.len()
            )));
        }
        let frames = inputs
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n * t, c, h, w))
            .map_err(|e| Error::arg(e.to_string()))?;
        let spatial = self.stream(&frames, None, mode)?;
        let temporal = self.stream(&frames, Some((self.shift, t)), mode)?;
        let mut merged: Vec<Array4<T>> = spatial
            .into_iter()
            .zip(temporal)
            .map(|(a, b)| {
                let a = FeatureMap::from_frames(a, t).map(|f| f.stack_time())?;
                let b = FeatureMap::from_frames(b, t).map(|f| f.stack_time())?;
                Ok(concat_channels(&a, &b))
            })
            .collect::<Result<_>>()?;
        let map = merged.pop().expect("deepest features");
        Ok((SpatioTemporalMap(map), merged))
    }

    /// Accumulates parameter gradients from the map and skip gradients.
    pub fn backward(&mut self, d_map: &Array4<T>, d_skips: Vec<Array4<T>>) -> Result<()> {
        let t = self.input_frames;
        let mut spatial = Vec::with_capacity(d_skips.len() + 1);
        let mut temporal = Vec::with_capacity(d_skips.len() + 1);
        for d in d_skips.iter().chain(std::iter::once(d_map)) {
            let (n, ch, h, w) = d.dim();
            let (a, b) = split_channels(d, ch / 2);
            let unstack = |x: Array4<T>| -> Result<Array4<T>> {
                x.into_shape_with_order((n * t, ch / 2 / t, h, w))
                    .map_err(|e| Error::arg(e.to_string()))
            };
            spatial.push(unstack(a)?);
            temporal.push(unstack(b)?);
        }
        self.stream_backward(temporal)?;
        self.stream_backward(spatial)
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.stem.params();
        for s in &self.stages {
            v.extend(s.down.params());
            for b in &s.blocks {
                v.extend(b.params());
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.stem.params_mut();
        for s in &mut self.stages {
            v.extend(s.down.params_mut());
            for b in &mut s.blocks {
                v.extend(b.params_mut());
            }
        }
        v
    }
}
