use serde::{Deserialize, Serialize};

use crate::nn::{conv_output_size, ShiftFraction};
use crate::pipeline::{DEFAULT_FRAME_SIZE, DEFAULT_WINDOW};
use crate::{Error, Result};

/// Width of the first backbone stage before scaling; each stage doubles it.
const BASE_WIDTH: f64 = 32.0;
const DISC_BASE_WIDTH: f64 = 64.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub backbone_width_scale: f64,
    pub encoder_stages: usize,
    pub decoder_stages: usize,
    /// Residual blocks after each strided stage convolution.
    pub residual_blocks: usize,
    pub shift_fraction: ShiftFraction,
    pub attention_reduction: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            backbone_width_scale: 1.0,
            encoder_stages: 4,
            decoder_stages: 4,
            residual_blocks: 1,
            shift_fraction: ShiftFraction::default(),
            attention_reduction: 16,
        }
    }
}

impl GeneratorConfig {
    /// Output channels of each encoder stage; the stem uses the first width.
    pub fn widths(&self) -> Vec<usize> {
        (0..self.encoder_stages)
            .map(|s| ((BASE_WIDTH * 2f64.powi(s as i32) * self.backbone_width_scale).round() as usize).max(1))
            .collect()
    }

    /// Channels produced by decoder block `j`.
    pub fn decoder_widths(&self) -> Vec<usize> {
        let w = self.widths();
        let s = self.decoder_stages;
        (0..s).map(|j| w[s.saturating_sub(2 + j)]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.backbone_width_scale > 0.0 && self.backbone_width_scale.is_finite()) {
            return Err(Error::Config(format!(
                "backbone_width_scale must be positive, got {}",
                self.backbone_width_scale
            )));
        }
        if self.encoder_stages == 0 {
            return Err(Error::Config("encoder_stages must be at least 1".into()));
        }
        if self.decoder_stages != self.encoder_stages {
            return Err(Error::Config(format!(
                "decoder_stages ({}) must equal encoder_stages ({}) so skips pair one-to-one",
                self.decoder_stages, self.encoder_stages
            )));
        }
        for w in self.widths() {
            self.shift_fraction
                .shifted_channels(w)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        let r = self.attention_reduction;
        for c in self.decoder_widths() {
            if r == 0 || c < r || c % r != 0 {
                return Err(Error::Config(format!(
                    "decoder width {c} is incompatible with attention_reduction {r}"
                )));
            }
        }
        Ok(())
    }

    /// Frame sizes must halve cleanly through every stage.
    pub fn check_frame_size(&self, size: usize) -> Result<()> {
        let factor = 1usize << self.encoder_stages;
        if size == 0 || size % factor != 0 {
            return Err(Error::arg(format!(
                "frame size {size} is not divisible by 2^{} for {} encoder stages",
                self.encoder_stages, self.encoder_stages
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Stride-2 convolutions before the 3x3 scoring layer.
    pub layers: usize,
    pub width_scale: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            layers: 4,
            width_scale: 1.0,
        }
    }
}

impl DiscriminatorConfig {
    pub fn widths(&self) -> Vec<usize> {
        (0..self.layers)
            .map(|i| {
                let mult = 2f64.powi(i.min(3) as i32);
                ((DISC_BASE_WIDTH * mult * self.width_scale).round() as usize).max(1)
            })
            .collect()
    }

    /// Input extent seen by one grid cell.
    pub fn receptive_field(&self) -> usize {
        (0..self.layers).fold(3, |r, _| (r - 1) * 2 + 4)
    }

    /// Side of the score grid for a square input, if the input is large enough.
    pub fn grid_size(&self, size: usize) -> Option<usize> {
        if size < self.receptive_field() {
            return None;
        }
        let mut s = size;
        for _ in 0..self.layers {
            s = conv_output_size(s, 4, 2, 1)?;
        }
        conv_output_size(s, 3, 1, 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("discriminator needs at least one layer".into()));
        }
        if !(self.width_scale > 0.0 && self.width_scale.is_finite()) {
            return Err(Error::Config(format!(
                "discriminator width_scale must be positive, got {}",
                self.width_scale
            )));
        }
        Ok(())
    }
}

/// Everything needed to build both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub frame_size: usize,
    /// Conditioning frames plus the target.
    pub window_total: usize,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frame_size: DEFAULT_FRAME_SIZE,
            window_total: DEFAULT_WINDOW,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl ModelConfig {
    /// The 64x64 configuration used for synthetic runs.
    pub fn desk() -> Self {
        ModelConfig {
            frame_size: 64,
            window_total: DEFAULT_WINDOW,
            generator: GeneratorConfig {
                backbone_width_scale: 0.25,
                attention_reduction: 4,
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                layers: 3,
                width_scale: 0.25,
            },
        }
    }

    pub fn input_frames(&self) -> usize {
        self.window_total - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_total < 2 {
            return Err(Error::Config("window_total must be at least 2".into()));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.generator
            .check_frame_size(self.frame_size)
            .map_err(|e| Error::Config(e.to_string()))?;
        match self.discriminator.grid_size(self.frame_size) {
            Some(g) if g >= 4 => Ok(()),
            Some(g) => Err(Error::Config(format!(
                "discriminator grid {g}x{g} at frame size {} is below 4x4",
                self.frame_size
            ))),
            None => Err(Error::Config(format!(
                "frame size {} is smaller than the discriminator receptive field {}",
                self.frame_size,
                self.discriminator.receptive_field()
            ))),
        }
    }
}
