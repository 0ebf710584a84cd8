use ndarray::{Array4, Array5, Axis};
use rand::Rng;

use super::{Decoder, Encoder, GeneratorConfig, SpatioTemporalMap};
use crate::nn::{Mode, Module, Param};
use crate::pipeline::Frame;
use crate::{Error, Result, Scalar};

/// Predicts the frame that follows a window of conditioning frames.
#[derive(Clone)]
pub struct Generator<T> {
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
    config: GeneratorConfig,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(config: &GeneratorConfig, input_frames: usize, rng: &mut R) -> Result<Self> {
        let encoder = Encoder::new(config, input_frames, rng)?;
        let decoder = Decoder::new(config, &encoder, rng)?;
        Ok(Generator {
            encoder,
            decoder,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn input_frames(&self) -> usize {
        self.encoder.input_frames()
    }

    pub fn encode(&mut self, inputs: &Array5<T>, mode: Mode) -> Result<(SpatioTemporalMap<T>, Vec<Array4<T>>)> {
        self.encoder.forward(inputs, mode)
    }

    pub fn decode(&mut self, map: &SpatioTemporalMap<T>, skips: &[Array4<T>], mode: Mode) -> Result<Array4<T>> {
        self.decoder.forward(map, skips, mode)
    }

    /// `N x T x 3 x H x W` windows to `N x 3 x H x W` predictions.
    pub fn forward(&mut self, inputs: &Array5<T>, mode: Mode) -> Result<Array4<T>> {
        let (map, skips) = self.encode(inputs, mode)?;
        self.decode(&map, &skips, mode)
    }

    /// Accumulates weight gradients for the most recent recorded forward pass.
    pub fn backward(&mut self, dy: &Array4<T>) -> Result<()> {
        let (d_map, d_skips) = self.decoder.backward(dy);
        self.encoder.backward(&d_map, d_skips)
    }

    /// Inference-mode prediction for a batch.
    pub fn predict(&mut self, inputs: &Array5<T>) -> Result<Array4<T>> {
        self.forward(inputs, Mode::EVAL)
    }

    /// Predicts the next frame from one window of conditioning frames.
    pub fn generate(&mut self, inputs: &[&Frame<T>]) -> Result<Frame<T>> {
        let first = inputs.first().ok_or_else(|| Error::arg("no conditioning frames"))?;
        let (h, w, c) = first.shape();
        let mut batch = Array5::zeros((1, inputs.len(), c, h, w));
        for (i, f) in inputs.iter().enumerate() {
            if f.shape() != (h, w, c) {
                return Err(Error::arg(format!(
                    "conditioning frame {i} is {:?}, expected {:?}",
                    f.shape(),
                    (h, w, c)
                )));
            }
            batch.index_axis_mut(Axis(0), 0).index_axis_mut(Axis(0), i).assign(&f.to_chw());
        }
        let out = self.predict(&batch)?;
        Frame::from_chw(out.index_axis(Axis(0), 0))
    }
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}
