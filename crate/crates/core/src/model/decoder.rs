use ndarray::Array4;
use rand::Rng;

use super::{concat_channels, split_channels, Encoder, GeneratorConfig, SpatioTemporalMap};
use crate::nn::{
    Activation, ActivationKind, BatchNorm2d, ChannelAttention, Conv2d, ConvTranspose2d, Mode, Module, Param,
};
use crate::{Error, Result, Scalar};

#[derive(Clone)]
struct UpBlock<T> {
    deconv: ConvTranspose2d<T>,
    bn: BatchNorm2d<T>,
    act: Activation<T>,
    attention: ChannelAttention<T>,
    out_channels: usize,
}

/// 1x1 reduction, then per stage `deconv -> BN -> ReLU -> attention` followed
/// by concatenation with the paired encoder skip; a 3x3 convolution and tanh
/// produce the frame.
#[derive(Clone)]
pub struct Decoder<T> {
    reduce: Conv2d<T>,
    blocks: Vec<UpBlock<T>>,
    skip_channels: Vec<usize>,
    head: Conv2d<T>,
    out: Activation<T>,
}

impl<T: Scalar> Decoder<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &GeneratorConfig, encoder: &Encoder<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let widths = cfg.widths();
        let stages = cfg.decoder_stages;
        let last = widths[stages - 1];
        let reduce = Conv2d::new("dec.reduce", encoder.map_channels(), last, 1, 1, 0, true, rng);
        let skip_channels: Vec<usize> = (0..stages).map(|s| encoder.skip_channels(s)).collect();
        let mut blocks = Vec::with_capacity(stages);
        let mut cin = last;
        for (j, &cout) in cfg.decoder_widths().iter().enumerate() {
            let name = format!("dec.up{j}");
            blocks.push(UpBlock {
                deconv: ConvTranspose2d::new(&format!("{name}.deconv"), cin, cout, 4, 2, 1, false, rng),
                bn: BatchNorm2d::new(&format!("{name}.bn"), cout),
                act: Activation::new(ActivationKind::Relu),
                attention: ChannelAttention::new(&format!("{name}.attention"), cout, cfg.attention_reduction, rng)?,
                out_channels: cout,
            });
            cin = cout + skip_channels[stages - 1 - j];
        }
        Ok(Decoder {
            reduce,
            blocks,
            skip_channels,
            head: Conv2d::new("dec.head", cin, 3, 3, 1, 1, true, rng),
            out: Activation::new(ActivationKind::Tanh),
        })
    }

    pub fn stages(&self) -> usize {
        self.blocks.len()
    }

    /// Output is `N x 3 x H x W` in `[-1, 1]`.
    pub fn forward(&mut self, map: &SpatioTemporalMap<T>, skips: &[Array4<T>], mode: Mode) -> Result<Array4<T>> {
        let stages = self.blocks.len();
        if skips.len() != stages {
            return Err(Error::arg(format!(
                "decoder has {stages} stages but received {} skips",
                skips.len()
            )));
        }
        let mut x = self.reduce.forward(&map.0, mode)?;
        for (j, block) in self.blocks.iter_mut().enumerate() {
            let skip = &skips[stages - 1 - j];
            let y = block.deconv.forward(&x, mode)?;
            let y = block.bn.forward(&y, mode)?;
            let y = block.act.forward(&y, mode);
            let y = block.attention.forward(&y, mode)?;
            let (sd, yd) = (skip.dim(), y.dim());
            if sd.0 != yd.0 || sd.2 != yd.2 || sd.3 != yd.3 || sd.1 != self.skip_channels[stages - 1 - j] {
                return Err(Error::arg(format!(
                    "skip {} has shape {sd:?}, decoder stage {j} produced {yd:?}",
                    stages - 1 - j
                )));
            }
            x = concat_channels(&y, skip);
        }
        let y = self.head.forward(&x, mode)?;
        Ok(self.out.forward(&y, mode))
    }

    /// Returns gradients for the map and for each skip (indexed like the skips).
    pub fn backward(&mut self, dy: &Array4<T>) -> (Array4<T>, Vec<Array4<T>>) {
        let stages = self.blocks.len();
        let d = self.out.backward(dy);
        let mut d = self.head.backward(&d);
        let mut d_skips = vec![Array4::zeros((0, 0, 0, 0)); stages];
        for (j, block) in self.blocks.iter_mut().enumerate().rev() {
            let (dy, ds) = split_channels(&d, block.out_channels);
            d_skips[stages - 1 - j] = ds;
            let g = block.attention.backward(&dy);
            let g = block.act.backward(&g);
            let g = block.bn.backward(&g);
            d = block.deconv.backward(&g);
        }
        (self.reduce.backward(&d), d_skips)
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.reduce.params();
        for b in &self.blocks {
            v.extend(b.deconv.params());
            v.extend(b.bn.params());
            v.extend(b.attention.params());
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.reduce.params_mut();
        for b in &mut self.blocks {
            v.extend(b.deconv.params_mut());
            v.extend(b.bn.params_mut());
            v.extend(b.attention.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }
}
