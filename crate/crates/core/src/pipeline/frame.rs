use std::path::Path;

use image::DynamicImage;
use ndarray::{Array3, ArrayView3, Axis};

use crate::{Error, Result, Scalar};

/// Side length every frame is resized to before entering the model.
pub const DEFAULT_FRAME_SIZE: usize = 160;

/// A decoded image, `H x W x C` bytes with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame(Array3<u8>);

impl RawFrame {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::arg("empty image"));
        }
        if c != 1 && c != 3 {
            return Err(Error::arg(format!("expected 1 or 3 channels, got {c}")));
        }
        Ok(RawFrame(data))
    }

    pub fn from_rgb(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        let data = Array3::from_shape_vec((height, width, 3), rgb).map_err(|e| Error::arg(e.to_string()))?;
        RawFrame::new(data)
    }

    pub fn from_image(img: &DynamicImage) -> Result<Self> {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                let data = Array3::from_shape_vec((h as usize, w as usize, 1), g.as_raw().clone())
                    .map_err(|e| Error::arg(e.to_string()))?;
                RawFrame::new(data)
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                RawFrame::from_rgb(w as usize, h as usize, rgb.into_raw())
            }
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        RawFrame::from_image(&img)
    }

    pub fn to_rgb_image(&self) -> image::RgbImage {
        let (h, w, c) = self.0.dim();
        image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |ch: usize| self.0[[y as usize, x as usize, if c == 1 { 0 } else { ch }]];
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.dim().0
    }

    pub fn width(&self) -> usize {
        self.0.dim().1
    }

    pub fn channels(&self) -> usize {
        self.0.dim().2
    }
}

/// One preprocessed image: `H x W x 3` values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T>(Array3<T>);

impl<T: Scalar> Frame<T> {
    pub fn new(data: Array3<T>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::arg("empty frame"));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < -T::one() || **v > T::one())
        {
            return Err(Error::invalid(format!("frame value {v} outside [-1, 1]")));
        }
        Ok(Frame(data))
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Frame::new(Array3::from_elem((height, width, 3), value))
    }

    /// Builds a frame from a `C x H x W` network tensor, clamping into range.
    pub fn from_chw(chw: ArrayView3<'_, T>) -> Result<Self> {
        let hwc = chw
            .permuted_axes([1, 2, 0])
            .mapv(|v| v.max(-T::one()).min(T::one()));
        Frame::new(hwc.as_standard_layout().into_owned())
    }

    /// `C x H x W` copy for the network.
    pub fn to_chw(&self) -> Array3<T> {
        self.0
            .view()
            .permuted_axes([2, 0, 1])
            .as_standard_layout()
            .into_owned()
    }

    pub fn data(&self) -> &Array3<T> {
        &self.0
    }

    pub fn into_inner(self) -> Array3<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.dim().0
    }

    pub fn width(&self) -> usize {
        self.0.dim().1
    }

    pub fn channels(&self) -> usize {
        self.0.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.0.dim()
    }

    /// Maps values from `[-1, 1]` to `[0, 1]`.
    pub fn unit_range(&self) -> Array3<T> {
        let half = T::c(0.5);
        self.0.mapv(|v| (v + T::one()) * half)
    }

    /// Inverse of the preprocessing map, rounded to bytes.
    pub fn denormalize(&self) -> RawFrame {
        let bytes = self
            .0
            .mapv(|v| ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
        RawFrame(bytes)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.denormalize()
            .to_rgb_image()
            .save(path)
            .map_err(Error::from)
    }
}

/// Bilinear resize with half-pixel centres, `H' x W' x C` to `size x size x C`.
fn resize_bilinear(src: &Array3<u8>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = src.dim();
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let sample = |pos: f64, len: usize| {
        let p = pos.clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = Array3::zeros((out_h, out_w, c));
    for y in 0..out_h {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, h);
        for x in 0..out_w {
            let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, w);
            for ch in 0..c {
                let p = |yy: usize, xx: usize| src[[yy, xx, ch]] as f64;
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out[[y, x, ch]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

/// Resizes to `size x size`, replicates gray to RGB, and maps `v -> v/127.5 - 1`.
pub fn preprocess<T: Scalar>(raw: &RawFrame, size: usize) -> Result<Frame<T>> {
    if size == 0 {
        return Err(Error::arg("target size must be positive"));
    }
    let resized = resize_bilinear(raw.data(), size, size);
    let rgb = if resized.dim().2 == 1 {
        ndarray::concatenate(Axis(2), &[resized.view(), resized.view(), resized.view()])
            .expect("same shapes")
    } else {
        resized
    };
    let data = rgb.mapv(|v| T::c((v / 127.5 - 1.0).clamp(-1.0, 1.0)));
    Frame::new(data)
}

/// Optional dataset-level standardization; clamped so frames stay in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit<T: Scalar>(frames: &[Frame<T>]) -> Result<Self> {
        let n: usize = frames.iter().map(|f| f.data().len()).sum();
        if n == 0 {
            return Err(Error::arg("cannot standardize an empty frame set"));
        }
        let mean = frames
            .iter()
            .flat_map(|f| f.data().iter())
            .map(|v| v.as_f64())
            .sum::<f64>()
            / n as f64;
        let var = frames
            .iter()
            .flat_map(|f| f.data().iter())
            .map(|v| (v.as_f64() - mean).powi(2))
            .sum::<f64>()
            / n as f64;
        Ok(Standardizer {
            mean,
            std: var.sqrt().max(1e-6),
        })
    }

    pub fn apply<T: Scalar>(&self, frame: &Frame<T>) -> Frame<T> {
        let (m, s) = (T::c(self.mean), T::c(self.std));
        Frame(frame.0.mapv(|v| ((v - m) / s).max(-T::one()).min(T::one())))
    }
}
