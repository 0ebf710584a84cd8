//! PSNR, normalized scores, the combined normality score and threshold sweeps.

use std::fs;
use std::path::Path;

use ndarray::{ArrayView3, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data_io::{DatasetManifest, LabelTrack, Split};
use crate::model::{Discriminator, Generator};
use crate::nn::Mode;
use crate::pipeline::{make_windows, preprocess, Batch, Frame, FrameWindow};
use crate::{Error, Result, Scalar};

/// Weight of the critic term in the combined score.
pub const DEFAULT_LAMBDA_D: f64 = 0.3;
pub const DEFAULT_THRESHOLDS: usize = 1000;
pub const PEAK_MIN: f64 = 1e-3;
pub const MSE_MIN: f64 = 1e-12;

/// `10 log10(peak^2 / mse)` with `peak = max(pred)`; both are floored.
///
/// Values are used as given; the scoring path maps frames to `[0, 1]` first.
pub fn psnr<T: Scalar>(truth: &Frame<T>, pred: &Frame<T>) -> Result<f64> {
    psnr_values(truth.data().view(), pred.data().view())
}

pub fn psnr_values<T: Scalar>(truth: ArrayView3<'_, T>, pred: ArrayView3<'_, T>) -> Result<f64> {
    if truth.shape() != pred.shape() {
        return Err(Error::arg(format!(
            "psnr: shape {:?} does not match {:?}",
            truth.shape(),
            pred.shape()
        )));
    }
    if pred.is_empty() {
        return Err(Error::arg("psnr: empty frames"));
    }
    let peak = pred.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64())).max(PEAK_MIN);
    let sum = Zip::from(&truth).and(&pred).fold(0.0, |acc, t, p| {
        let d = t.as_f64() - p.as_f64();
        acc + d * d
    });
    let mse = (sum / pred.len() as f64).max(MSE_MIN);
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Per-clip min-max normalization. A constant series maps to all ones.
pub fn normalize_scores(series: &[f64]) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::arg("normalization needs at least two values"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("normalization input contains non-finite values"));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi == lo {
        log::warn!("constant score series of {} values; treating all frames as normal", series.len());
        return Ok(vec![1.0; series.len()]);
    }
    Ok(series.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// `S = p + lambda_d * d_norm`; larger means more normal.
pub fn anomaly_score(p: f64, d_norm: f64, lambda_d: f64) -> f64 {
    p + lambda_d * d_norm
}

/// `(1 + lambda_d) - S`; larger means more anomalous.
pub fn anomaly_evidence(s: f64, lambda_d: f64) -> f64 {
    (1.0 + lambda_d) - s
}

fn class_counts(labels: &LabelTrack) -> Result<(usize, usize)> {
    let pos = labels.abnormal_count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::invalid(format!("{}: no positive frames", labels.clip_id)));
    }
    if neg == 0 {
        return Err(Error::invalid(format!("{}: no negative frames", labels.clip_id)));
    }
    Ok((pos, neg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Evenly spaced thresholds over `[0, max(evidence)]`; a frame is flagged
/// abnormal when its evidence reaches the threshold.
pub fn threshold_sweep(evidence: &[f64], labels: &LabelTrack, num_thresholds: usize) -> Result<Vec<SweepPoint>> {
    if evidence.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} evidence values for {} labels",
            evidence.len(),
            labels.len()
        )));
    }
    if num_thresholds < 2 {
        return Err(Error::arg("threshold sweep needs at least two thresholds"));
    }
    let (pos, neg) = class_counts(labels)?;
    let max = evidence.iter().cloned().fold(0.0, f64::max);
    Ok((0..num_thresholds)
        .map(|k| {
            let threshold = max * k as f64 / (num_thresholds - 1) as f64;
            let (mut tp, mut fp) = (0usize, 0usize);
            for (i, &e) in evidence.iter().enumerate() {
                if e >= threshold {
                    if labels.is_abnormal(i) {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            SweepPoint {
                threshold,
                tpr: tp as f64 / pos as f64,
                fpr: fp as f64 / neg as f64,
            }
        })
        .collect())
}

/// Mean score of normal frames minus mean score of abnormal frames.
pub fn score_gap(s: &[f64], labels: &LabelTrack) -> Result<f64> {
    if s.len() != labels.len() {
        return Err(Error::arg(format!("{} scores for {} labels", s.len(), labels.len())));
    }
    let (pos, neg) = class_counts(labels)?;
    let (mut normal, mut abnormal) = (0.0, 0.0);
    for (i, v) in s.iter().enumerate() {
        if labels.is_abnormal(i) {
            abnormal += v;
        } else {
            normal += v;
        }
    }
    Ok(normal / neg as f64 - abnormal / pos as f64)
}

/// Per-frame scores of one clip, starting at the first predictable frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub clip_id: String,
    pub frame_index: Vec<usize>,
    pub psnr: Vec<f64>,
    pub p: Vec<f64>,
    pub d_norm: Vec<f64>,
    pub s: Vec<f64>,
    pub evidence: Vec<f64>,
    pub labels: Option<LabelTrack>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    frame_index: usize,
    psnr: f64,
    p: f64,
    d_norm: f64,
    s: f64,
    evidence: f64,
    label: Option<u8>,
}

impl ScoreSeries {
    /// Builds the series from raw PSNR and mean critic scores.
    pub fn from_raw(
        clip_id: &str,
        first_index: usize,
        psnr: Vec<f64>,
        critic: &[f64],
        lambda_d: f64,
        labels: Option<LabelTrack>,
    ) -> Result<Self> {
        if psnr.len() != critic.len() {
            return Err(Error::arg("psnr and critic series differ in length"));
        }
        if let Some(l) = &labels {
            if l.len() != psnr.len() {
                return Err(Error::arg(format!("{} labels for {} scored frames", l.len(), psnr.len())));
            }
        }
        let p = normalize_scores(&psnr)?;
        let d_norm = normalize_scores(critic)?;
        let s: Vec<f64> = p.iter().zip(&d_norm).map(|(&p, &d)| anomaly_score(p, d, lambda_d)).collect();
        let evidence = s.iter().map(|&v| anomaly_evidence(v, lambda_d)).collect();
        Ok(ScoreSeries {
            clip_id: clip_id.to_string(),
            frame_index: (first_index..first_index + psnr.len()).collect(),
            psnr,
            p,
            d_norm,
            s,
            evidence,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Writes `frame_index,psnr,p,d_norm,s,evidence,label`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.serialize(ScoreRow {
                frame_index: self.frame_index[i],
                psnr: self.psnr[i],
                p: self.p[i],
                d_norm: self.d_norm[i],
                s: self.s[i],
                evidence: self.evidence[i],
                label: self.labels.as_ref().map(|l| l.labels[i]),
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: &Path, clip_id: &str) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = ScoreSeries {
            clip_id: clip_id.to_string(),
            frame_index: Vec::new(),
            psnr: Vec::new(),
            p: Vec::new(),
            d_norm: Vec::new(),
            s: Vec::new(),
            evidence: Vec::new(),
            labels: None,
        };
        let mut labels = Vec::new();
        for row in r.deserialize::<ScoreRow>() {
            let row = row?;
            out.frame_index.push(row.frame_index);
            out.psnr.push(row.psnr);
            out.p.push(row.p);
            out.d_norm.push(row.d_norm);
            out.s.push(row.s);
            out.evidence.push(row.evidence);
            labels.push(row.label);
        }
        if labels.iter().all(Option::is_some) && !labels.is_empty() {
            out.labels = Some(LabelTrack::new(clip_id, labels.into_iter().flatten().collect())?);
        } else if labels.iter().any(Option::is_some) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: "label column is only partially filled".into(),
            });
        }
        Ok(out)
    }
}

/// Prediction PSNR (on `[0, 1]` frames) and mean critic score for each window.
pub fn raw_scores<T: Scalar>(
    generator: &mut Generator<T>,
    discriminator: &mut Discriminator<T>,
    windows: &[FrameWindow<T>],
    batch_size: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut psnrs = Vec::with_capacity(windows.len());
    let mut critic = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&FrameWindow<T>> = chunk.iter().collect();
        let inputs = Batch::from_windows(&refs)?.inputs;
        let pred = generator.predict(&inputs)?;
        let scores = discriminator.forward(&pred, Mode::EVAL)?;
        for (i, win) in chunk.iter().enumerate() {
            let p = Frame::from_chw(pred.index_axis(Axis(0), i))?;
            psnrs.push(psnr_values(win.target.unit_range().view(), p.unit_range().view())?);
            critic.push(scores.index_axis(Axis(0), i).mean().map_or(0.0, |m| m.as_f64()));
        }
    }
    Ok((psnrs, critic))
}

/// Scores every test clip of a manifest.
pub fn score_manifest<T: Scalar>(
    generator: &mut Generator<T>,
    discriminator: &mut Discriminator<T>,
    manifest: &DatasetManifest,
    frame_size: usize,
    window_total: usize,
    lambda_d: f64,
) -> Result<Vec<ScoreSeries>> {
    let mut out = Vec::new();
    for clip in manifest.split(Split::Test) {
        let frames = clip
            .load_raw_frames()?
            .iter()
            .map(|r| preprocess::<T>(r, frame_size).map(std::sync::Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let windows = make_windows(&clip.clip_id, &frames, window_total, 1)?;
        if windows.len() < 2 {
            log::warn!("clip {} is too short to score; skipped", clip.clip_id);
            continue;
        }
        let labels = clip
            .load_labels(frames.len())?
            .map(|l| l.slice(window_total - 1, windows.len()))
            .transpose()?;
        let (psnrs, critic) = raw_scores(generator, discriminator, &windows, 8)?;
        out.push(ScoreSeries::from_raw(
            &clip.clip_id,
            window_total - 1,
            psnrs,
            &critic,
            lambda_d,
            labels,
        )?);
    }
    if out.is_empty() {
        return Err(Error::invalid("no test clips could be scored"));
    }
    Ok(out)
}

/// Writes `scores_<clip>.csv` for every series.
pub fn save_scores(dir: &Path, series: &[ScoreSeries]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in series {
        s.save_csv(&dir.join(format!("scores_{}.csv", s.clip_id)))?;
    }
    Ok(())
}

/// Reads every `scores_<clip>.csv` in `dir`, ordered by clip id.
pub fn load_scores(dir: &Path) -> Result<Vec<ScoreSeries>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scores_") && n.ends_with(".csv"))
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            ScoreSeries::load_csv(p, name.trim_start_matches("scores_"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn flat(v: f64) -> Frame<f64> {
        Frame::new(Array3::from_elem((4, 4, 3), v)).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let f = Frame::new(Array3::from_shape_fn((4, 4, 3), |(y, x, _)| (y * 4 + x) as f64 / 15.0)).unwrap();
        let same = psnr(&f, &f).unwrap();
        assert!(same.is_finite() && same > 100.0);
        assert_abs_diff_eq!(psnr(&flat(0.0), &flat(1.0)).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(psnr(&flat(0.0), &flat(0.1)).unwrap(), 0.0, epsilon = 1e-9);
        let small = Frame::new(Array3::zeros((2, 2, 3))).unwrap();
        assert!(psnr(&flat(0.0), &small).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_scores(&[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_scores(&[5.0, 5.0, 5.0]).unwrap(), vec![1.0; 3]);
        assert!(normalize_scores(&[1.0]).is_err());
    }

    #[test]
    fn score_examples() {
        assert_abs_diff_eq!(anomaly_score(0.8, 0.5, 0.3), 0.95, epsilon = 1e-12);
        assert_eq!(anomaly_score(0.37, 0.9, 0.0), 0.37);
        assert_abs_diff_eq!(anomaly_score(1.0, 1.0, 0.3), 1.3, epsilon = 1e-12);
        assert_abs_diff_eq!(anomaly_evidence(1.3, 0.3), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sweep_examples() {
        let labels = LabelTrack::new("c", vec![1, 0, 1, 0]).unwrap();
        let ev = [0.9, 0.2, 0.8, 0.1];
        let sweep = threshold_sweep(&ev, &labels, 1000).unwrap();
        assert_eq!((sweep[0].tpr, sweep[0].fpr), (1.0, 1.0));
        let at = |tau: f64| {
            let flagged: Vec<bool> = ev.iter().map(|&e| e >= tau).collect();
            (flagged[0] as u8 + flagged[2] as u8, flagged[1] as u8 + flagged[3] as u8)
        };
        assert_eq!(at(0.5), (2, 0));
        let sweep = threshold_sweep(&ev, &labels, 3).unwrap();
        // thresholds 0, 0.45, 0.9
        assert_eq!((sweep[1].tpr, sweep[1].fpr), (1.0, 0.0));
        assert_eq!((sweep[2].tpr, sweep[2].fpr), (0.5, 0.0));
        let normal = LabelTrack::new("c", vec![0; 4]).unwrap();
        let err = threshold_sweep(&ev, &normal, 10).unwrap_err();
        assert!(err.to_string().contains("no positive frames"));
        assert!(threshold_sweep(&ev[..3], &labels, 10).is_err());
    }

    #[test]
    fn gap_examples() {
        let labels = LabelTrack::new("c", vec![0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(score_gap(&[1.0, 0.9, 0.2, 0.3], &labels).unwrap(), 0.7, epsilon = 1e-12);
        assert_eq!(score_gap(&[0.5, 0.7, 0.7, 0.5], &labels).unwrap(), 0.0);
        let normal = LabelTrack::new("c", vec![0; 4]).unwrap();
        assert!(score_gap(&[1.0; 4], &normal).is_err());
    }

    #[test]
    fn series_csv_roundtrip() {
        let labels = LabelTrack::new("c", vec![0, 1, 0]).unwrap();
        let s = ScoreSeries::from_raw("c", 4, vec![30.0, 10.0, 20.0], &[0.2, 0.1, 0.3], 0.3, Some(labels)).unwrap();
        assert_eq!(s.frame_index, vec![4, 5, 6]);
        assert_abs_diff_eq!(s.s[2], 0.5 + 0.3, epsilon = 1e-12);
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("scores_c.csv");
        s.save_csv(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("frame_index,psnr,p,d_norm,s,evidence,label\n"));
        assert_eq!(load_scores(d.path()).unwrap(), vec![s]);
    }
}
