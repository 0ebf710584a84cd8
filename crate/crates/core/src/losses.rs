//! Adversarial, intensity and image-gradient losses with their gradients.
//!
//! Every reduction is a mean (per grid, per pixel), so magnitudes do not
//! depend on resolution. Batch forms work on `N x C x H x W` arrays; the
//! single-item forms take a [`Frame`] or [`PatchScoreGrid`].

use ndarray::{s, Array, Array4, ArrayView4, Axis, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::model::PatchScoreGrid;
use crate::pipeline::Frame;
use crate::{Error, Result, Scalar};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_int: f64,
    pub lambda_gra: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_int: 1.0,
            lambda_gra: 1.0,
            lambda_adv: 0.05,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_int: f64, lambda_gra: f64, lambda_adv: f64) -> Result<Self> {
        let w = LossWeights {
            lambda_int,
            lambda_gra,
            lambda_adv,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_int, self.lambda_gra, self.lambda_adv];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> Self {
        LossWeights {
            lambda_int: self.lambda_int * c,
            lambda_gra: self.lambda_gra * c,
            lambda_adv: self.lambda_adv * c,
        }
    }
}

fn same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a != b {
        return Err(Error::arg(format!("{what}: shape {a:?} does not match {b:?}")));
    }
    if a.iter().product::<usize>() == 0 {
        return Err(Error::arg(format!("{what}: empty input")));
    }
    Ok(())
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::c(BCE_EPS);
    p.max(eps).min(T::one() - eps)
}

/// Mean binary cross-entropy.
pub fn bce<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<T> {
    same_shape(pred.shape(), target.shape(), "bce")?;
    let n = T::c(pred.len() as f64);
    let sum = Zip::from(pred).and(target).fold(T::zero(), |acc, &p, &t| {
        let p = clamp_prob(p);
        acc - (t * p.ln() + (T::one() - t) * (T::one() - p).ln())
    });
    Ok(sum / n)
}

/// Gradient of [`bce`] with respect to `pred`; zero where the clamp is active.
pub fn bce_grad<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: &Array<T, D>) -> Result<Array<T, D>> {
    same_shape(pred.shape(), target.shape(), "bce")?;
    let n = T::c(pred.len() as f64);
    let eps = T::c(BCE_EPS);
    Ok(Zip::from(pred).and(target).map_collect(|&p, &t| {
        if p < eps || p > T::one() - eps {
            T::zero()
        } else {
            (p - t) / (p * (T::one() - p)) / n
        }
    }))
}

fn bce_const<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: T) -> T {
    let mut sum = T::zero();
    for &p in pred.iter() {
        let p = clamp_prob(p);
        sum -= target * p.ln() + (T::one() - target) * (T::one() - p).ln();
    }
    sum / T::c(pred.len() as f64)
}

fn bce_const_grad<T: Scalar, D: Dimension>(pred: &Array<T, D>, target: T) -> Array<T, D> {
    let n = T::c(pred.len() as f64);
    let eps = T::c(BCE_EPS);
    pred.mapv(|p| {
        if p < eps || p > T::one() - eps {
            T::zero()
        } else {
            (p - target) / (p * (T::one() - p)) / n
        }
    })
}

/// Critic loss: BCE of real scores against 1 plus BCE of fake scores against 0.
pub fn adv_loss_d<T: Scalar>(grid_real: &PatchScoreGrid<T>, grid_fake: &PatchScoreGrid<T>) -> Result<T> {
    same_shape(grid_real.scores().shape(), grid_fake.scores().shape(), "adv_loss_d")?;
    Ok(bce_const(grid_real.scores(), T::one()) + bce_const(grid_fake.scores(), T::zero()))
}

/// Generator adversarial loss: BCE of fake scores against 1.
pub fn adv_loss_g<T: Scalar>(grid_fake: &PatchScoreGrid<T>) -> T {
    bce_const(grid_fake.scores(), T::one())
}

/// Same as [`adv_loss_d`].
pub fn discriminator_objective<T: Scalar>(
    grid_real: &PatchScoreGrid<T>,
    grid_fake: &PatchScoreGrid<T>,
) -> Result<T> {
    adv_loss_d(grid_real, grid_fake)
}

fn frame_batch<T: Scalar>(f: &Frame<T>) -> Array4<T> {
    f.to_chw().insert_axis(Axis(0))
}

/// Mean squared difference per pixel and channel.
pub fn intensity_loss<T: Scalar>(pred: &Frame<T>, truth: &Frame<T>) -> Result<T> {
    intensity_loss_batch(frame_batch(pred).view(), frame_batch(truth).view())
}

/// Mean over interior positions and channels of
/// `||dh pred| - |dh truth|| + ||dv pred| - |dv truth||`, with `dh`, `dv` the
/// differences to the left and upper neighbours.
pub fn gradient_loss<T: Scalar>(pred: &Frame<T>, truth: &Frame<T>) -> Result<T> {
    gradient_loss_batch(frame_batch(pred).view(), frame_batch(truth).view())
}

/// `w.lambda_int * intensity + w.lambda_gra * gradient + w.lambda_adv * adv_g`.
pub fn generator_objective<T: Scalar>(
    pred: &Frame<T>,
    truth: &Frame<T>,
    grid_fake: &PatchScoreGrid<T>,
    w: &LossWeights,
) -> Result<T> {
    Ok(T::c(w.lambda_int) * intensity_loss(pred, truth)?
        + T::c(w.lambda_gra) * gradient_loss(pred, truth)?
        + T::c(w.lambda_adv) * adv_loss_g(grid_fake))
}

pub fn intensity_loss_batch<T: Scalar>(pred: ArrayView4<'_, T>, truth: ArrayView4<'_, T>) -> Result<T> {
    same_shape(pred.shape(), truth.shape(), "intensity_loss")?;
    let sum = Zip::from(&pred).and(&truth).fold(T::zero(), |acc, &p, &t| acc + (p - t) * (p - t));
    Ok(sum / T::c(pred.len() as f64))
}

pub fn intensity_loss_grad<T: Scalar>(pred: ArrayView4<'_, T>, truth: ArrayView4<'_, T>) -> Result<Array4<T>> {
    same_shape(pred.shape(), truth.shape(), "intensity_loss")?;
    let scale = T::c(2.0 / pred.len() as f64);
    Ok(Zip::from(&pred).and(&truth).map_collect(|&p, &t| (p - t) * scale))
}

fn check_gradient_input<T: Scalar>(pred: &ArrayView4<'_, T>, truth: &ArrayView4<'_, T>) -> Result<()> {
    same_shape(pred.shape(), truth.shape(), "gradient_loss")?;
    let (_, _, h, w) = pred.dim();
    if h < 2 || w < 2 {
        return Err(Error::arg(format!("gradient_loss needs at least 2x2 frames, got {h}x{w}")));
    }
    Ok(())
}

pub fn gradient_loss_batch<T: Scalar>(pred: ArrayView4<'_, T>, truth: ArrayView4<'_, T>) -> Result<T> {
    check_gradient_input(&pred, &truth)?;
    let (n, c, h, w) = pred.dim();
    let mut sum = T::zero();
    for b in 0..n {
        for ch in 0..c {
            for i in 1..h {
                for j in 1..w {
                    let dh_p = (pred[[b, ch, i, j]] - pred[[b, ch, i, j - 1]]).abs();
                    let dh_t = (truth[[b, ch, i, j]] - truth[[b, ch, i, j - 1]]).abs();
                    let dv_p = (pred[[b, ch, i, j]] - pred[[b, ch, i - 1, j]]).abs();
                    let dv_t = (truth[[b, ch, i, j]] - truth[[b, ch, i - 1, j]]).abs();
                    sum += (dh_p - dh_t).abs() + (dv_p - dv_t).abs();
                }
            }
        }
    }
    Ok(sum / T::c((n * c * (h - 1) * (w - 1)) as f64))
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Subgradient of [`gradient_loss_batch`] (zero at kinks).
pub fn gradient_loss_grad<T: Scalar>(pred: ArrayView4<'_, T>, truth: ArrayView4<'_, T>) -> Result<Array4<T>> {
    check_gradient_input(&pred, &truth)?;
    let (n, c, h, w) = pred.dim();
    let scale = T::c(1.0 / (n * c * (h - 1) * (w - 1)) as f64);
    let mut grad = Array4::zeros((n, c, h, w));
    for b in 0..n {
        for ch in 0..c {
            for i in 1..h {
                for j in 1..w {
                    let p = pred[[b, ch, i, j]];
                    for (pi, pj) in [(i, j - 1), (i - 1, j)] {
                        let dp = p - pred[[b, ch, pi, pj]];
                        let dt = (truth[[b, ch, i, j]] - truth[[b, ch, pi, pj]]).abs();
                        let g = sign(dp.abs() - dt) * sign(dp) * scale;
                        grad[[b, ch, i, j]] += g;
                        grad[[b, ch, pi, pj]] -= g;
                    }
                }
            }
        }
    }
    Ok(grad)
}

/// Critic loss over a batch of `N x 1 x G x G` score grids, with gradients.
pub fn discriminator_loss_batch<T: Scalar>(real: &Array4<T>, fake: &Array4<T>) -> Result<(T, Array4<T>, Array4<T>)> {
    same_shape(real.shape(), fake.shape(), "discriminator_loss")?;
    let loss = bce_const(real, T::one()) + bce_const(fake, T::zero());
    Ok((loss, bce_const_grad(real, T::one()), bce_const_grad(fake, T::zero())))
}

/// Generator objective over a batch and its pieces.
#[derive(Debug, Clone)]
pub struct GeneratorLoss<T> {
    pub total: T,
    pub intensity: T,
    pub gradient: T,
    pub adversarial: T,
    /// d total / d prediction from the reconstruction terms.
    pub d_pred: Array4<T>,
    /// d total / d fake scores from the adversarial term.
    pub d_scores: Array4<T>,
}

pub fn generator_loss_batch<T: Scalar>(
    pred: &Array4<T>,
    truth: &Array4<T>,
    fake_scores: &Array4<T>,
    w: &LossWeights,
) -> Result<GeneratorLoss<T>> {
    let intensity = intensity_loss_batch(pred.view(), truth.view())?;
    let gradient = gradient_loss_batch(pred.view(), truth.view())?;
    let adversarial = bce_const(fake_scores, T::one());
    let (li, lg, la) = (T::c(w.lambda_int), T::c(w.lambda_gra), T::c(w.lambda_adv));
    let mut d_pred = intensity_loss_grad(pred.view(), truth.view())? * li;
    d_pred.scaled_add(lg, &gradient_loss_grad(pred.view(), truth.view())?);
    Ok(GeneratorLoss {
        total: li * intensity + lg * gradient + la * adversarial,
        intensity,
        gradient,
        adversarial,
        d_pred,
        d_scores: bce_const_grad(fake_scores, T::one()) * la,
    })
}

/// Per-item mean squared error of a batch.
pub fn per_item_mse<T: Scalar>(pred: &Array4<T>, truth: &Array4<T>) -> Vec<T> {
    (0..pred.dim().0)
        .map(|i| {
            let p = pred.slice(s![i, .., .., ..]);
            let t = truth.slice(s![i, .., .., ..]);
            Zip::from(&p).and(&t).fold(T::zero(), |a, &x, &y| a + (x - y) * (x - y)) / T::c(p.len() as f64)
        })
        .collect()
}
