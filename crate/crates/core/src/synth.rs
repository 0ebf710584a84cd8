//! Moving-shape dataset with injected anomalies for desk-scale runs.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{ClipEntry, ClipSource, DatasetManifest, LabelTrack, Split};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Square,
    Circle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frame_size: usize,
    pub object_size: usize,
    pub shape: Shape,
    /// Pixels per frame along x and y.
    pub velocity: (i64, i64),
    pub train_frames: usize,
    pub test_frames: usize,
    /// Frames where the object moves at three times its speed.
    pub fast_interval: (usize, usize),
    /// Frames where a second, erratically moving object is present.
    pub intruder_interval: (usize, usize),
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: 64,
            object_size: 8,
            shape: Shape::Square,
            velocity: (2, 1),
            train_frames: 500,
            test_frames: 200,
            fast_interval: (60, 90),
            intruder_interval: (140, 170),
            fps: 10.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.object_size == 0 || self.object_size * 2 > self.frame_size {
            return Err(Error::Config(format!(
                "object of {} px does not fit a {} px frame",
                self.object_size, self.frame_size
            )));
        }
        if self.velocity == (0, 0) {
            return Err(Error::Config("velocity must be nonzero".into()));
        }
        for (name, (a, b)) in [("fast_interval", self.fast_interval), ("intruder_interval", self.intruder_interval)] {
            if a >= b || b > self.test_frames {
                return Err(Error::Config(format!(
                    "{name} {a}..{b} is not inside the {} test frames",
                    self.test_frames
                )));
            }
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }
}

struct Mover {
    pos: (i64, i64),
    vel: (i64, i64),
    limit: i64,
}

impl Mover {
    fn advance(&mut self, steps: i64) {
        for _ in 0..steps {
            for axis in 0..2 {
                let (p, v) = match axis {
                    0 => (&mut self.pos.0, &mut self.vel.0),
                    _ => (&mut self.pos.1, &mut self.vel.1),
                };
                *p += *v;
                if *p < 0 {
                    *p = -*p;
                    *v = -*v;
                } else if *p > self.limit {
                    *p = 2 * self.limit - *p;
                    *v = -*v;
                }
            }
        }
    }
}

fn draw(img: &mut image::GrayImage, shape: Shape, size: usize, at: (i64, i64)) {
    let r = size as f64 / 2.0;
    for dy in 0..size {
        for dx in 0..size {
            let inside = match shape {
                Shape::Square => true,
                Shape::Circle => {
                    let (cx, cy) = (dx as f64 + 0.5 - r, dy as f64 + 0.5 - r);
                    cx * cx + cy * cy <= r * r
                }
            };
            let (x, y) = (at.0 + dx as i64, at.1 + dy as i64);
            if inside && x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, image::Luma([255]));
            }
        }
    }
}

fn save_clip(dir: &Path, frames: &[image::GrayImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save(dir.join(format!("{i:04}.png")))?;
    }
    Ok(())
}

fn render(cfg: &SynthConfig, n: usize, rng: &mut ChaCha8Rng, anomalies: bool) -> (Vec<image::GrayImage>, Vec<u8>) {
    let size = cfg.frame_size as u32;
    let limit = (cfg.frame_size - cfg.object_size) as i64;
    let mut mover = Mover {
        pos: (rng.random_range(0..=limit), rng.random_range(0..=limit)),
        vel: cfg.velocity,
        limit,
    };
    let within = |r: (usize, usize), i: usize| Range { start: r.0, end: r.1 }.contains(&i);
    let mut frames = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut img = image::GrayImage::new(size, size);
        draw(&mut img, cfg.shape, cfg.object_size, mover.pos);
        let fast = anomalies && within(cfg.fast_interval, i);
        let intruder = anomalies && within(cfg.intruder_interval, i);
        if intruder {
            let at = (rng.random_range(0..=limit), rng.random_range(0..=limit));
            draw(&mut img, cfg.shape, cfg.object_size, at);
        }
        labels.push(u8::from(fast || intruder));
        frames.push(img);
        mover.advance(if fast { 3 } else { 1 });
    }
    (frames, labels)
}

/// Writes `train/<clip>/`, `test/<clip>/`, `labels/<clip>.txt` and
/// `manifest.csv` under `root`.
pub fn generate_synthetic(root: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train, _) = render(cfg, cfg.train_frames, &mut rng, false);
    let (test, labels) = render(cfg, cfg.test_frames, &mut rng, true);
    let train_dir = root.join("train").join("train01");
    let test_dir = root.join("test").join("test01");
    save_clip(&train_dir, &train)?;
    save_clip(&test_dir, &test)?;
    let label_dir = root.join("labels");
    fs::create_dir_all(&label_dir).map_err(|e| Error::io(&label_dir, e))?;
    let label_path = label_dir.join("test01.txt");
    LabelTrack::new("test01", labels)?.save(&label_path)?;
    let manifest = DatasetManifest {
        dataset_name: "synthetic".into(),
        clips: vec![
            ClipEntry {
                clip_id: "train01".into(),
                split: Split::Train,
                source: ClipSource::Frames(train_dir),
                fps: cfg.fps,
                label_path: None,
            },
            ClipEntry {
                clip_id: "test01".into(),
                split: Split::Test,
                source: ClipSource::Frames(test_dir),
                fps: cfg.fps,
                label_path: Some(label_path),
            },
        ],
    };
    manifest.save_csv(&root.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts_and_labels() {
        let d = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            train_frames: 20,
            test_frames: 30,
            fast_interval: (5, 10),
            intruder_interval: (20, 25),
            ..SynthConfig::default()
        };
        let m = generate_synthetic(d.path(), &cfg).unwrap();
        let train = &m.clips[0];
        let test = &m.clips[1];
        assert_eq!(train.frame_count().unwrap(), 20);
        assert_eq!(test.frame_count().unwrap(), 30);
        let labels = test.load_labels(30).unwrap().unwrap();
        assert_eq!(labels.abnormal_count(), 10);
        assert!(labels.is_abnormal(5) && !labels.is_abnormal(10) && labels.is_abnormal(24));
        let reloaded = DatasetManifest::load_csv(&d.path().join("manifest.csv"), "synthetic").unwrap();
        assert_eq!(reloaded.clips.len(), 2);
    }

    #[test]
    fn normal_frames_show_one_object_moving_at_constant_speed() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (frames, labels) = render(&cfg, 40, &mut rng, false);
        assert!(labels.iter().all(|&l| l == 0));
        let lit = |f: &image::GrayImage| f.pixels().filter(|p| p.0[0] == 255).count();
        assert!(frames.iter().all(|f| lit(f) == 64));
        let top_left = |f: &image::GrayImage| {
            let (w, _) = f.dimensions();
            let i = f.pixels().position(|p| p.0[0] == 255).unwrap() as u32;
            ((i % w) as i64, (i / w) as i64)
        };
        let (a, b) = (top_left(&frames[0]), top_left(&frames[1]));
        assert_eq!(((b.0 - a.0).abs(), (b.1 - a.1).abs()), (2, 1));
    }

    #[test]
    fn circle_variant_and_validation() {
        let cfg = SynthConfig {
            shape: Shape::Circle,
            ..SynthConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (frames, _) = render(&cfg, 3, &mut rng, false);
        let lit = frames[0].pixels().filter(|p| p.0[0] == 255).count();
        assert!(lit > 40 && lit < 64);
        let bad = SynthConfig {
            fast_interval: (190, 210),
            ..SynthConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
