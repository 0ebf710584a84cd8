//! Central-difference checks of every backward pass at 64-bit precision.

use ndarray::{Array, Array4, Array5, ArrayD, Dimension};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stemgan::model::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use stemgan::nn::{
    Activation, ActivationKind, BatchNorm2d, ChannelAttention, Conv2d, ConvTranspose2d, Mode, Module, ShiftFraction,
};

const H: f64 = 1e-6;
const TOL: f64 = 1e-3;

/// Batch statistics without caching, so probes leave no state behind.
const PROBE: Mode = Mode {
    batch_stats: true,
    update_running: false,
    record: false,
};

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn uniform<D: Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(r: &mut ChaCha8Rng, shape: Sh) -> Array<f64, D> {
    Array::from_shape_simple_fn(shape, || r.random_range(-1.0..1.0))
}

fn rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

fn numeric<D: Dimension>(x: &Array<f64, D>, mut f: impl FnMut(&Array<f64, D>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.as_slice_memory_order().unwrap()[i];
            probe.as_slice_memory_order_mut().unwrap()[i] = orig + H;
            let up = f(&probe);
            probe.as_slice_memory_order_mut().unwrap()[i] = orig - H;
            let down = f(&probe);
            probe.as_slice_memory_order_mut().unwrap()[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

/// Checks input and parameter gradients of `L = sum(forward(x) * R)`.
fn check_layer<M: Module<f64> + Clone>(
    name: &str,
    layer: M,
    x: Array4<f64>,
    forward: impl Fn(&mut M, &Array4<f64>, Mode) -> Array4<f64>,
    backward: impl Fn(&mut M, &Array4<f64>) -> Array4<f64>,
) {
    let mut r = rng();
    let mut recorded = layer.clone();
    let y = forward(&mut recorded, &x, Mode::FROZEN_TRAIN);
    let weights: Array4<f64> = uniform(&mut r, y.raw_dim());
    let dx = backward(&mut recorded, &weights);
    let loss = |m: &mut M, x: &Array4<f64>| (forward(m, x, PROBE) * &weights).sum();

    let e = rel(dx.as_slice().unwrap(), &numeric(&x, |x| loss(&mut layer.clone(), x)));
    assert!(e <= TOL, "{name} input gradient: rel err {e:.2e}");

    let names: Vec<String> = layer.params().iter().filter(|p| p.is_weight()).map(|p| p.name.clone()).collect();
    for pname in names {
        let value: ArrayD<f64> = layer.params().into_iter().find(|p| p.name == pname).unwrap().value.clone();
        let grad: Vec<f64> = recorded
            .params()
            .into_iter()
            .find(|p| p.name == pname)
            .unwrap()
            .grad
            .iter()
            .copied()
            .collect();
        let num = numeric(&value, |v| {
            let mut m = layer.clone();
            m.params_mut().into_iter().find(|p| p.name == pname).unwrap().value.assign(v);
            loss(&mut m, &x)
        });
        let e = rel(&grad, &num);
        assert!(e <= TOL, "{name} {pname}: rel err {e:.2e}");
    }
}

#[test]
fn conv2d() {
    let mut r = rng();
    for (k, stride, pad) in [(3, 1, 1), (4, 2, 1), (1, 1, 0)] {
        let conv = Conv2d::<f64>::new("c", 3, 4, k, stride, pad, true, &mut r);
        check_layer(
            "conv",
            conv,
            uniform(&mut r, (2, 3, 6, 6)),
            |m, x, mode| m.forward(x, mode).unwrap(),
            |m, dy| m.backward(dy),
        );
    }
}

#[test]
fn conv_transpose2d() {
    let mut r = rng();
    let deconv = ConvTranspose2d::<f64>::new("d", 4, 3, 4, 2, 1, true, &mut r);
    check_layer(
        "deconv",
        deconv,
        uniform(&mut r, (2, 4, 4, 4)),
        |m, x, mode| m.forward(x, mode).unwrap(),
        |m, dy| m.backward(dy),
    );
}

#[test]
fn batch_norm_with_batch_statistics() {
    let mut r = rng();
    let mut bn = BatchNorm2d::<f64>::new("bn", 3);
    for p in bn.params_mut().into_iter().filter(|p| p.is_weight()) {
        p.value.mapv_inplace(|_| r.random_range(0.5..1.5));
    }
    check_layer(
        "batchnorm",
        bn,
        uniform(&mut r, (3, 3, 4, 4)),
        |m, x, mode| m.forward(x, mode).unwrap(),
        |m, dy| m.backward(dy),
    );
}

#[derive(Clone)]
struct Act(Activation<f64>);

impl Module<f64> for Act {
    fn params(&self) -> Vec<&stemgan::nn::Param<f64>> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut stemgan::nn::Param<f64>> {
        Vec::new()
    }
}

#[test]
fn activations() {
    let mut r = rng();
    for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid, ActivationKind::LeakyRelu(0.2), ActivationKind::Relu] {
        // Keep inputs away from the kink at zero.
        let x = uniform(&mut r, (2, 2, 3, 3)).mapv(|v: f64| if v.abs() < 0.05 { v + 0.1 } else { v });
        check_layer(
            &format!("{kind:?}"),
            Act(Activation::new(kind)),
            x,
            |m, x, mode| m.0.forward(x, mode),
            |m, dy| m.0.backward(dy),
        );
    }
}

#[test]
fn channel_attention() {
    let mut r = rng();
    let ca = ChannelAttention::<f64>::new("ca", 8, 2, &mut r).unwrap();
    check_layer(
        "attention",
        ca,
        uniform(&mut r, (2, 8, 4, 4)),
        |m, x, mode| m.forward(x, mode).unwrap(),
        |m, dy| m.backward(dy),
    );
}

fn flat(m: &dyn Module<f64>, grads: bool) -> Vec<f64> {
    m.params()
        .into_iter()
        .filter(|p| p.is_weight())
        .flat_map(|p| if grads { p.grad.iter().copied().collect::<Vec<_>>() } else { p.value.iter().copied().collect() })
        .collect()
}

fn nudge(m: &mut dyn Module<f64>, dir: &[f64], step: f64) {
    let mut k = 0;
    for p in m.params_mut().into_iter().filter(|p| p.is_weight()) {
        for v in p.value.iter_mut() {
            *v += step * dir[k];
            k += 1;
        }
    }
}

/// Directional derivative along a random unit direction in weight space.
fn directional(
    analytic: &[f64],
    mut loss_at: impl FnMut(&[f64], f64) -> f64,
    r: &mut ChaCha8Rng,
) -> (f64, f64) {
    let mut dir: Vec<f64> = (0..analytic.len()).map(|_| r.random_range(-1.0..1.0)).collect();
    let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|d| *d /= norm);
    let a: f64 = analytic.iter().zip(&dir).map(|(g, d)| g * d).sum();
    let h = 1e-5;
    let n = (loss_at(&dir, h) - loss_at(&dir, -h)) / (2.0 * h);
    (a, n)
}

#[test]
fn whole_generator_weight_gradient() {
    let mut r = rng();
    let cfg = GeneratorConfig {
        backbone_width_scale: 0.25,
        encoder_stages: 2,
        decoder_stages: 2,
        attention_reduction: 4,
        shift_fraction: ShiftFraction::new(1, 4).unwrap(),
        ..GeneratorConfig::default()
    };
    let g = Generator::<f64>::new(&cfg, 3, &mut r).unwrap();
    let x: Array5<f64> = uniform(&mut r, (2, 3, 3, 8, 8));
    let mut rec = g.clone();
    let y = rec.forward(&x, Mode::FROZEN_TRAIN).unwrap();
    let weights: Array4<f64> = uniform(&mut r, y.raw_dim());
    rec.backward(&weights).unwrap();
    let grads = flat(&rec, true);
    for _ in 0..3 {
        let (a, n) = directional(
            &grads,
            |dir, step| {
                let mut m = g.clone();
                nudge(&mut m, dir, step);
                (m.forward(&x, PROBE).unwrap() * &weights).sum()
            },
            &mut r,
        );
        assert!((a - n).abs() <= TOL * n.abs().max(1e-6), "generator directional derivative {a} vs {n}");
    }
    assert_eq!(grads.len(), flat(&g, false).len());
}

#[test]
fn whole_discriminator_input_and_weight_gradient() {
    let mut r = rng();
    let cfg = DiscriminatorConfig {
        layers: 2,
        width_scale: 0.125,
    };
    let d = Discriminator::<f64>::new(&cfg, &mut r).unwrap();
    let x: Array4<f64> = uniform(&mut r, (2, 3, 20, 20));
    let mut rec = d.clone();
    let y = rec.forward(&x, Mode::FROZEN_TRAIN).unwrap();
    let weights: Array4<f64> = uniform(&mut r, y.raw_dim());
    let dx = rec.backward(&weights);
    let loss = |m: &mut Discriminator<f64>, x: &Array4<f64>| (m.forward(x, PROBE).unwrap() * &weights).sum();
    let e = rel(dx.as_slice().unwrap(), &numeric(&x, |x| loss(&mut d.clone(), x)));
    assert!(e <= TOL, "discriminator input gradient rel err {e:.2e}");
    let grads = flat(&rec, true);
    let (a, n) = directional(
        &grads,
        |dir, step| {
            let mut m = d.clone();
            nudge(&mut m, dir, step);
            loss(&mut m, &x)
        },
        &mut r,
    );
    assert!((a - n).abs() <= TOL * n.abs().max(1e-6), "discriminator directional derivative {a} vs {n}");
}
