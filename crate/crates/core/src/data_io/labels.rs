use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Per-frame ground truth for one clip: 1 = abnormal, 0 = normal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTrack {
    pub clip_id: String,
    pub labels: Vec<u8>,
}

impl LabelTrack {
    pub fn new(clip_id: impl Into<String>, labels: Vec<u8>) -> Result<Self> {
        if let Some(v) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("label {v} is not 0 or 1")));
        }
        Ok(LabelTrack {
            clip_id: clip_id.into(),
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_abnormal(&self, idx: usize) -> bool {
        self.labels[idx] == 1
    }

    pub fn abnormal_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Labels restricted to frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<LabelTrack> {
        let end = start + len;
        if end > self.labels.len() {
            return Err(Error::arg(format!(
                "label range {start}..{end} exceeds {} labels",
                self.labels.len()
            )));
        }
        Ok(LabelTrack {
            clip_id: self.clip_id.clone(),
            labels: self.labels[start..end].to_vec(),
        })
    }

    /// Whitespace-separated 0/1 tokens, one line per frame.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::with_capacity(self.labels.len() * 2);
        for l in &self.labels {
            text.push(if *l == 1 { '1' } else { '0' });
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Parses a label file of whitespace/newline separated `0`/`1` tokens.
pub fn load_labels(path: &Path, clip_id: &str, expected_len: usize) -> Result<LabelTrack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels = parse_labels(&text).map_err(|msg| Error::Parse {
        path: path.to_path_buf(),
        msg,
    })?;
    if labels.len() != expected_len {
        return Err(Error::invalid(format!(
            "{}: {} labels for {expected_len} frames",
            path.display(),
            labels.len()
        )));
    }
    LabelTrack::new(clip_id, labels)
}

fn parse_labels(text: &str) -> std::result::Result<Vec<u8>, String> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| match tok {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(format!("token {i} is {other:?}, expected 0 or 1")),
        })
        .collect()
}
