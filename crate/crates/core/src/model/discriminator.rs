use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use super::DiscriminatorConfig;
use crate::nn::{Activation, ActivationKind, BatchNorm2d, Conv2d, Mode, Module, Param};
use crate::pipeline::Frame;
use crate::{Error, Result, Scalar};

/// Per-region realness scores of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScoreGrid<T> {
    scores: Array2<T>,
}

impl<T: Scalar> PatchScoreGrid<T> {
    pub fn new(scores: Array2<T>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::arg("empty score grid"));
        }
        if scores.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::invalid("score grid values must lie in [0, 1]"));
        }
        Ok(PatchScoreGrid { scores })
    }

    pub fn from_elem(rows: usize, cols: usize, v: T) -> Result<Self> {
        Self::new(Array2::from_elem((rows, cols), v))
    }

    pub fn scores(&self) -> &Array2<T> {
        &self.scores
    }

    pub fn dim(&self) -> (usize, usize) {
        self.scores.dim()
    }

    pub fn mean(&self) -> T {
        self.scores.mean().expect("non-empty grid")
    }
}

#[derive(Clone)]
struct DownLayer<T> {
    conv: Conv2d<T>,
    bn: Option<BatchNorm2d<T>>,
    act: Activation<T>,
}

/// Patch critic: stride-2 4x4 convolutions with leaky ReLU (batch norm after
/// the first), a 3x3 scoring convolution and a sigmoid.
#[derive(Clone)]
pub struct Discriminator<T> {
    layers: Vec<DownLayer<T>>,
    head: Conv2d<T>,
    out: Activation<T>,
    config: DiscriminatorConfig,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: &DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut cin = 3;
        let mut layers = Vec::with_capacity(config.layers);
        for (i, w) in config.widths().into_iter().enumerate() {
            let name = format!("disc.down{i}");
            layers.push(DownLayer {
                conv: Conv2d::new(&format!("{name}.conv"), cin, w, 4, 2, 1, i == 0, rng),
                bn: (i > 0).then(|| BatchNorm2d::new(&format!("{name}.bn"), w)),
                act: Activation::new(ActivationKind::LeakyRelu(0.2)),
            });
            cin = w;
        }
        Ok(Discriminator {
            layers,
            head: Conv2d::new("disc.head", cin, 1, 3, 1, 1, true, rng),
            out: Activation::new(ActivationKind::Sigmoid),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// `N x 3 x H x W` frames to `N x 1 x G x G` scores.
    pub fn forward(&mut self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        let (_, _, h, w) = x.dim();
        let rf = self.config.receptive_field();
        if h < rf || w < rf {
            return Err(Error::arg(format!(
                "input {h}x{w} is smaller than the critic's receptive field {rf}"
            )));
        }
        let mut y = x.clone();
        for layer in &mut self.layers {
            y = layer.conv.forward(&y, mode)?;
            if let Some(bn) = &mut layer.bn {
                y = bn.forward(&y, mode)?;
            }
            y = layer.act.forward(&y, mode);
        }
        let y = self.head.forward(&y, mode)?;
        Ok(self.out.forward(&y, mode))
    }

    /// Accumulates weight gradients and returns the gradient for the input.
    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let d = self.out.backward(dy);
        let mut d = self.head.backward(&d);
        for layer in self.layers.iter_mut().rev() {
            d = layer.act.backward(&d);
            if let Some(bn) = &mut layer.bn {
                d = bn.backward(&d);
            }
            d = layer.conv.backward(&d);
        }
        d
    }

    /// Inference-mode scores of one frame.
    pub fn discriminate(&mut self, frame: &Frame<T>) -> Result<PatchScoreGrid<T>> {
        let x = frame.to_chw().insert_axis(Axis(0));
        let y = self.forward(&x, Mode::EVAL)?;
        PatchScoreGrid::new(y.index_axis(Axis(0), 0).index_axis(Axis(0), 0).to_owned())
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend(l.conv.params());
            if let Some(bn) = &l.bn {
                v.extend(bn.params());
            }
        }
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.extend(l.conv.params_mut());
            if let Some(bn) = &mut l.bn {
                v.extend(bn.params_mut());
            }
        }
        v.extend(self.head.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn critic(layers: usize) -> Discriminator<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Discriminator::new(
            &DiscriminatorConfig {
                layers,
                width_scale: 0.125,
            },
            &mut rng,
        )
        .unwrap()
    }

    fn frame(size: usize, f: impl Fn(usize, usize) -> f64) -> Frame<f64> {
        Frame::new(Array3::from_shape_fn((size, size, 3), |(y, x, _)| f(y, x))).unwrap()
    }

    #[test]
    fn default_grid_at_160() {
        let mut d = critic(4);
        let g = d.discriminate(&frame(160, |y, x| ((y * x) % 7) as f64 / 7.0)).unwrap();
        assert_eq!(g.dim(), (10, 10));
        assert!(g.scores().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn rejects_inputs_below_receptive_field() {
        let mut d = critic(4);
        assert!(d.discriminate(&frame(64, |_, _| 0.0)).is_err());
        let mut d = critic(3);
        assert_eq!(d.discriminate(&frame(64, |_, _| 0.0)).unwrap().dim(), (8, 8));
    }

    #[test]
    fn response_moves_with_the_input() {
        // Shifting an impulse by one total stride shifts the response by one cell.
        let mut d = critic(3);
        let stride = 8;
        let background = d.discriminate(&frame(128, |_, _| -1.0)).unwrap();
        let at = |cy: usize, cx: usize| {
            frame(128, move |y, x| if y / 4 == cy && x / 4 == cx { 1.0 } else { -1.0 })
        };
        let a = d.discriminate(&at(14, 14)).unwrap();
        let b = d.discriminate(&at(14, 14 + stride / 4)).unwrap();
        let changed = |g: &PatchScoreGrid<f64>| {
            let mut cells: Vec<(usize, usize)> = Vec::new();
            for ((r, c), v) in g.scores().indexed_iter() {
                if (v - background.scores()[[r, c]]).abs() > 1e-12 {
                    cells.push((r, c));
                }
            }
            cells
        };
        let ca = changed(&a);
        let cb = changed(&b);
        assert!(!ca.is_empty());
        let shifted: Vec<(usize, usize)> = ca.iter().map(|&(r, c)| (r, c + 1)).collect();
        assert_eq!(cb, shifted);
        // interior cells respond identically after the shift
        for &(r, c) in &ca {
            let da = a.scores()[[r, c]] - background.scores()[[r, c]];
            let db = b.scores()[[r, c + 1]] - background.scores()[[r, c + 1]];
            assert!((da - db).abs() < 1e-9, "cell ({r},{c}) {da} vs {db}");
        }
    }

    #[test]
    fn grid_validation() {
        assert!(PatchScoreGrid::new(Array2::from_elem((2, 2), 1.5)).is_err());
        assert!(PatchScoreGrid::<f64>::new(Array2::zeros((0, 0))).is_err());
        assert_eq!(PatchScoreGrid::from_elem(2, 2, 0.25).unwrap().mean(), 0.25);
    }
}
