use ndarray::{s, Array3, Axis};

use super::Frame;
use crate::{Error, Result, Scalar};

/// Side length of the square patches frames are divided into.
pub const DEFAULT_PATCH: usize = 20;

/// Non-overlapping square patches of one frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
    pub patches: Vec<Array3<T>>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn get(&self, row: usize, col: usize) -> Option<&Array3<T>> {
        (row < self.rows && col < self.cols).then(|| &self.patches[row * self.cols + col])
    }

    /// Stitches the patches back into the original frame.
    pub fn assemble(&self) -> Result<Frame<T>> {
        let rows: Vec<Array3<T>> = self
            .patches
            .chunks(self.cols)
            .map(|row| {
                let views: Vec<_> = row.iter().map(|p| p.view()).collect();
                ndarray::concatenate(Axis(1), &views).expect("equal patch heights")
            })
            .collect();
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Frame::new(ndarray::concatenate(Axis(0), &views).map_err(|e| Error::arg(e.to_string()))?)
    }
}

/// Cuts a frame into `patch x patch` tiles; both sides must divide evenly.
pub fn make_patches<T: Scalar>(frame: &Frame<T>, patch: usize) -> Result<PatchGrid<T>> {
    let (h, w, _) = frame.shape();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::arg(format!(
            "frame {h}x{w} is not divisible into {patch}x{patch} patches"
        )));
    }
    let (rows, cols) = (h / patch, w / patch);
    let mut patches = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            patches.push(
                frame
                    .data()
                    .slice(s![r * patch..(r + 1) * patch, c * patch..(c + 1) * patch, ..])
                    .to_owned(),
            );
        }
    }
    Ok(PatchGrid {
        rows,
        cols,
        patch,
        patches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Frame<f64> {
        Frame::new(Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            ((y * w + x) * 3 + c) as f64 / (h * w * 3) as f64
        }))
        .unwrap()
    }

    #[test]
    fn grid_of_64_reassembles_exactly() {
        let f = ramp(160, 160);
        let g = make_patches(&f, DEFAULT_PATCH).unwrap();
        assert_eq!((g.rows, g.cols, g.patches.len()), (8, 8, 64));
        assert_eq!(g.assemble().unwrap(), f);
        assert_eq!(g.get(1, 0).unwrap()[[0, 0, 0]], f.data()[[20, 0, 0]]);
    }

    #[test]
    fn single_patch_is_the_frame() {
        let f = ramp(20, 20);
        let g = make_patches(&f, 20).unwrap();
        assert_eq!(g.patches.len(), 1);
        assert_eq!(&g.patches[0], f.data());
    }

    #[test]
    fn indivisible_size_is_rejected() {
        assert!(make_patches(&ramp(150, 160), 20).is_err());
    }
}
