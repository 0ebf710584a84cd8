use std::sync::Arc;

use ndarray::{Array4, Array5, Axis};

use super::Frame;
use crate::{Error, Result, Scalar};

/// Default window length: four conditioning frames plus the target.
pub const DEFAULT_WINDOW: usize = 5;

/// Consecutive conditioning frames of one clip and the frame that follows them.
#[derive(Debug, Clone)]
pub struct FrameWindow<T> {
    pub clip_id: String,
    /// Index of the first conditioning frame within the clip.
    pub start_index: usize,
    pub inputs: Vec<Arc<Frame<T>>>,
    pub target: Arc<Frame<T>>,
}

impl<T: Scalar> FrameWindow<T> {
    /// Index of the target frame within its clip.
    pub fn target_index(&self) -> usize {
        self.start_index + self.inputs.len()
    }

    pub fn len(&self) -> usize {
        self.inputs.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Number of windows `make_windows` yields for `len` frames.
pub fn window_count(len: usize, window_total: usize, stride: usize) -> usize {
    if len < window_total || stride == 0 {
        0
    } else {
        (len - window_total) / stride + 1
    }
}

/// Slides a window of `window_total` frames with step `stride` over one clip.
///
/// The last frame of each window is the prediction target. Fewer frames than
/// `window_total` yields no windows.
pub fn make_windows<T: Scalar>(
    clip_id: &str,
    frames: &[Arc<Frame<T>>],
    window_total: usize,
    stride: usize,
) -> Result<Vec<FrameWindow<T>>> {
    if window_total < 2 {
        return Err(Error::arg("a window needs at least one input and one target frame"));
    }
    if stride == 0 {
        return Err(Error::arg("stride must be positive"));
    }
    let count = window_count(frames.len(), window_total, stride);
    Ok((0..count)
        .map(|i| {
            let start = i * stride;
            FrameWindow {
                clip_id: clip_id.to_string(),
                start_index: start,
                inputs: frames[start..start + window_total - 1].to_vec(),
                target: frames[start + window_total - 1].clone(),
            }
        })
        .collect())
}

/// A batch of windows in network layout.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// `N x T x C x H x W` conditioning frames.
    pub inputs: Array5<T>,
    /// `N x C x H x W` targets.
    pub targets: Array4<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_windows(windows: &[&FrameWindow<T>]) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::arg("empty batch"))?;
        let t = first.inputs.len();
        let (h, w, c) = first.target.shape();
        let mut inputs = Array5::zeros((windows.len(), t, c, h, w));
        let mut targets = Array4::zeros((windows.len(), c, h, w));
        for (i, win) in windows.iter().enumerate() {
            if win.inputs.len() != t {
                return Err(Error::arg("windows in a batch differ in length"));
            }
            for (j, f) in win.inputs.iter().enumerate() {
                if f.shape() != (h, w, c) {
                    return Err(Error::arg(format!(
                        "frame {:?} does not match batch frame size {:?}",
                        f.shape(),
                        (h, w, c)
                    )));
                }
                inputs
                    .index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), j)
                    .assign(&f.to_chw());
            }
            if win.target.shape() != (h, w, c) {
                return Err(Error::arg("target frame size differs from inputs"));
            }
            targets.index_axis_mut(Axis(0), i).assign(&win.target.to_chw());
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(n: usize) -> Vec<Arc<Frame<f32>>> {
        (0..n)
            .map(|i| Arc::new(Frame::filled(2, 2, (i as f32 / n as f32) * 2.0 - 1.0).unwrap()))
            .collect()
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows("a", &clip(200), 5, 1).unwrap().len(), 196);
        assert_eq!(make_windows("a", &clip(5), 5, 1).unwrap().len(), 1);
        assert!(make_windows("a", &clip(4), 5, 1).unwrap().is_empty());
        assert_eq!(make_windows("a", &clip(20), 5, 3).unwrap().len(), 6);
    }

    #[test]
    fn windows_are_consecutive_with_target_last() {
        let frames = clip(9);
        for w in make_windows("a", &frames, 5, 2).unwrap() {
            for (j, f) in w.inputs.iter().enumerate() {
                assert!(Arc::ptr_eq(f, &frames[w.start_index + j]));
            }
            assert!(Arc::ptr_eq(&w.target, &frames[w.target_index()]));
        }
    }

    #[test]
    fn batch_layout() {
        let ws = make_windows("a", &clip(6), 5, 1).unwrap();
        let refs: Vec<_> = ws.iter().collect();
        let b = Batch::from_windows(&refs).unwrap();
        assert_eq!(b.inputs.dim(), (2, 4, 3, 2, 2));
        assert_eq!(b.targets.dim(), (2, 3, 2, 2));
        assert_eq!(b.targets[[1, 0, 0, 0]], ws[1].target.data()[[0, 0, 0]]);
    }
}
