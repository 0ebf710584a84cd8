//! ROC analysis, AUROC, EER and the evaluation report.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::data_io::LabelTrack;
use crate::scoring::{score_gap, ScoreSeries};
use crate::{Error, Result};

/// ROC points ordered by increasing FPR, from `(0, 0)` to `(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

impl RocCurve {
    pub fn new(fpr: Vec<f64>, tpr: Vec<f64>) -> Result<Self> {
        if fpr.len() != tpr.len() || fpr.len() < 2 {
            return Err(Error::invalid("a ROC curve needs matching coordinates and at least two points"));
        }
        let first = (fpr[0], tpr[0]);
        let last = (fpr[fpr.len() - 1], tpr[tpr.len() - 1]);
        if first != (0.0, 0.0) || last != (1.0, 1.0) {
            return Err(Error::invalid(format!("ROC curve runs from {first:?} to {last:?}")));
        }
        let monotone = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
        if !monotone(&fpr) || !monotone(&tpr) {
            return Err(Error::invalid("ROC coordinates must be non-decreasing"));
        }
        Ok(RocCurve { fpr, tpr })
    }

    pub fn len(&self) -> usize {
        self.fpr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fpr.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.fpr.iter().copied().zip(self.tpr.iter().copied())
    }
}

/// Exact ROC over every distinct evidence value; ties advance together.
pub fn roc_curve(evidence: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if evidence.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} evidence values for {} labels",
            evidence.len(),
            labels.len()
        )));
    }
    if evidence.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("evidence contains non-finite values"));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::invalid("no positive frames"));
    }
    if neg == 0 {
        return Err(Error::invalid("no negative frames"));
    }
    let mut order: Vec<usize> = (0..evidence.len()).collect();
    order.sort_by(|&a, &b| evidence[b].total_cmp(&evidence[a]));
    let (mut fpr, mut tpr) = (vec![0.0], vec![0.0]);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = evidence[order[i]];
        while i < order.len() && evidence[order[i]] == v {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    RocCurve::new(fpr, tpr)
}

/// Trapezoidal area under the curve.
pub fn auroc(curve: &RocCurve) -> f64 {
    curve
        .fpr
        .windows(2)
        .zip(curve.tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum()
}

/// Point where `FPR = 1 - TPR`, linearly interpolated between ROC vertices.
pub fn eer_point(curve: &RocCurve) -> (f64, f64) {
    let gap = |i: usize| curve.fpr[i] + curve.tpr[i] - 1.0;
    for i in 1..curve.len() {
        let (a, b) = (gap(i - 1), gap(i));
        if a <= 0.0 && b >= 0.0 {
            let t = if b == a { 0.0 } else { -a / (b - a) };
            let fpr = curve.fpr[i - 1] + t * (curve.fpr[i] - curve.fpr[i - 1]);
            let tpr = curve.tpr[i - 1] + t * (curve.tpr[i] - curve.tpr[i - 1]);
            return (fpr, tpr);
        }
    }
    unreachable!("a curve from (0,0) to (1,1) crosses fpr + tpr = 1")
}

/// Equal error rate: the FPR at the equal-error point.
pub fn eer(curve: &RocCurve) -> f64 {
    eer_point(curve).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Clip,
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub scope: Scope,
    pub clip_id: String,
    pub auroc: Option<f64>,
    pub eer: Option<f64>,
    pub score_gap: Option<f64>,
    pub n_frames: usize,
    pub n_abnormal: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dataset_name: String,
    pub config_hash: String,
    pub rows: Vec<MetricsRow>,
    pub files: Vec<PathBuf>,
}

impl MetricsReport {
    pub fn row(&self, scope: Scope) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.scope == scope)
    }
}

fn labelled(series: &ScoreSeries) -> Result<&LabelTrack> {
    series
        .labels
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("clip {} has no labels", series.clip_id)))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Writes `metrics.csv` and `report.toml`, plus ROC plots and per-clip
/// timelines when `plots` is set.
///
/// Clips whose frames are all one class get empty per-clip metrics and are
/// left out of the macro average; they still contribute to the micro scope.
pub fn build_report(
    series: &[ScoreSeries],
    out_dir: &Path,
    dataset_name: &str,
    config_hash: &str,
    plots: bool,
) -> Result<MetricsReport> {
    if series.is_empty() {
        return Err(Error::invalid("no score series to evaluate"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let (mut all_ev, mut all_labels) = (Vec::new(), Vec::new());
    for s in series {
        let labels = labelled(s)?;
        all_ev.extend_from_slice(&s.evidence);
        all_labels.extend_from_slice(&labels.labels);
        let curve = roc_curve(&s.evidence, &labels.labels).ok();
        let gap = score_gap(&s.s, labels).ok();
        if let (true, Some(c)) = (plots, &curve) {
            let p = out_dir.join(format!("roc_{}.png", s.clip_id));
            plot_roc(c).save(&p)?;
            files.push(p);
        }
        if plots {
            let p = out_dir.join(format!("timeline_{}.png", s.clip_id));
            plot_timeline(&s.s, &labels.labels).save(&p)?;
            files.push(p);
        }
        rows.push(MetricsRow {
            scope: Scope::Clip,
            clip_id: s.clip_id.clone(),
            auroc: curve.as_ref().map(auroc),
            eer: curve.as_ref().map(eer),
            score_gap: gap,
            n_frames: s.len(),
            n_abnormal: labels.abnormal_count(),
        });
    }
    let curve = roc_curve(&all_ev, &all_labels)?;
    let all_s: Vec<f64> = series.iter().flat_map(|s| s.s.iter().copied()).collect();
    let micro_gap = score_gap(&all_s, &LabelTrack::new("micro", all_labels.clone())?)?;
    if plots {
        let p = out_dir.join("roc_micro.png");
        plot_roc(&curve).save(&p)?;
        files.push(p);
    }
    let n_frames = all_labels.len();
    let n_abnormal = all_labels.iter().filter(|&&l| l != 0).count();
    let clip_rows = rows.clone();
    rows.push(MetricsRow {
        scope: Scope::Micro,
        clip_id: "all".into(),
        auroc: Some(auroc(&curve)),
        eer: Some(eer(&curve)),
        score_gap: Some(micro_gap),
        n_frames,
        n_abnormal,
    });
    rows.push(MetricsRow {
        scope: Scope::Macro,
        clip_id: "all".into(),
        auroc: mean(clip_rows.iter().filter_map(|r| r.auroc)),
        eer: mean(clip_rows.iter().filter_map(|r| r.eer)),
        score_gap: mean(clip_rows.iter().filter_map(|r| r.score_gap)),
        n_frames,
        n_abnormal,
    });

    let csv_path = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    files.push(csv_path);

    let meta_path = out_dir.join("report.toml");
    let meta = format!(
        "dataset_name = {}\nconfig_hash = {}\n",
        toml::Value::String(dataset_name.into()),
        toml::Value::String(config_hash.into())
    );
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))?;
    files.push(meta_path);

    Ok(MetricsReport {
        dataset_name: dataset_name.into(),
        config_hash: config_hash.into(),
        rows,
        files,
    })
}

const PLOT_W: u32 = 480;
const PLOT_H: u32 = 320;
const MARGIN: u32 = 24;
const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GREY: Rgb<u8> = Rgb([160, 160, 160]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const BLUE: Rgb<u8> = Rgb([31, 90, 200]);
const PURPLE: Rgb<u8> = Rgb([214, 190, 240]);

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        let mut c = Canvas {
            img: RgbImage::from_pixel(w, h, WHITE),
        };
        c.axes();
        c
    }

    fn inner(&self) -> (f64, f64) {
        ((self.img.width() - 2 * MARGIN) as f64, (self.img.height() - 2 * MARGIN) as f64)
    }

    fn to_px(&self, x: f64, y: f64) -> (f64, f64) {
        let (w, h) = self.inner();
        (MARGIN as f64 + x.clamp(0.0, 1.0) * w, (self.img.height() - MARGIN) as f64 - y.clamp(0.0, 1.0) * h)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (pa, pb) = (self.to_px(a.0, a.1), self.to_px(b.0, b.1));
        let steps = (pb.0 - pa.0).abs().max((pb.1 - pa.1).abs()).ceil().max(1.0) as usize;
        for k in 0..=steps {
            let t = k as f64 / steps as f64;
            let x = pa.0 + t * (pb.0 - pa.0);
            let y = pa.1 + t * (pb.1 - pa.1);
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    fn band(&mut self, x0: f64, x1: f64, c: Rgb<u8>) {
        let (a, top) = self.to_px(x0, 1.0);
        let (b, bottom) = self.to_px(x1, 0.0);
        for x in a.floor() as i64..=b.ceil() as i64 {
            for y in top as i64..=bottom as i64 {
                self.put(x, y, c);
            }
        }
    }

    fn axes(&mut self) {
        self.line((0.0, 0.0), (1.0, 0.0), BLACK);
        self.line((0.0, 0.0), (0.0, 1.0), BLACK);
        for k in 0..=10 {
            let (x, y) = self.to_px(k as f64 / 10.0, 0.0);
            for d in 1..4 {
                self.put(x.round() as i64, y as i64 + d, BLACK);
            }
            let (x, y) = self.to_px(0.0, k as f64 / 10.0);
            for d in 1..4 {
                self.put(x as i64 - d, y.round() as i64, BLACK);
            }
        }
    }
}

/// ROC curve with the chance diagonal.
pub fn plot_roc(curve: &RocCurve) -> RgbImage {
    let mut c = Canvas::new(PLOT_H, PLOT_H);
    c.line((0.0, 0.0), (1.0, 1.0), GREY);
    let pts: Vec<_> = curve.points().collect();
    for w in pts.windows(2) {
        c.line(w[0], w[1], BLUE);
    }
    c.img
}

/// Score timeline with abnormal ground-truth intervals shaded purple.
pub fn plot_timeline(scores: &[f64], labels: &[u8]) -> RgbImage {
    let mut c = Canvas::new(PLOT_W, PLOT_H);
    let n = scores.len().max(2);
    let x = |i: usize| i as f64 / (n - 1) as f64;
    let half = 0.5 / (n - 1) as f64;
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            c.band(x(i) - half, x(i) + half, PURPLE);
        }
    }
    c.axes();
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y = |v: f64| (v - lo) / span;
    for i in 1..scores.len() {
        c.line((x(i - 1), y(scores[i - 1])), (x(i), y(scores[i])), BLUE);
    }
    c.img
}
