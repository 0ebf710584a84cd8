use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::labels::{load_labels, LabelTrack};
use super::video::{extract_frames, VIDEO_EXTENSIONS};
use crate::pipeline::RawFrame;
use crate::{Error, Result};

/// Extensions recognised as still frames inside a clip folder.
pub const FRAME_EXTENSIONS: &[&str] = &["tif", "tiff", "png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// Where a clip's pixels live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClipSource {
    /// A folder of still images, ordered by file name.
    Frames(PathBuf),
    /// A video container decoded at the manifest fps.
    Video(PathBuf),
}

impl ClipSource {
    pub fn path(&self) -> &Path {
        match self {
            ClipSource::Frames(p) | ClipSource::Video(p) => p,
        }
    }

    fn from_path(path: PathBuf) -> Self {
        if path.is_dir() {
            ClipSource::Frames(path)
        } else {
            ClipSource::Video(path)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipEntry {
    pub clip_id: String,
    pub split: Split,
    pub source: ClipSource,
    pub fps: f64,
    pub label_path: Option<PathBuf>,
}

fn has_extension(path: &Path, allowed: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| allowed.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// Image files of a frame folder in name order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_extension(p, FRAME_EXTENSIONS))
        .collect();
    files.sort();
    Ok(files)
}

impl ClipEntry {
    /// Number of frames the clip yields.
    pub fn frame_count(&self) -> Result<usize> {
        match &self.source {
            ClipSource::Frames(dir) => Ok(list_frame_files(dir)?.len()),
            ClipSource::Video(path) => Ok(extract_frames(path, self.fps)?.len()),
        }
    }

    /// Decodes every frame of the clip in order.
    pub fn load_raw_frames(&self) -> Result<Vec<RawFrame>> {
        match &self.source {
            ClipSource::Frames(dir) => list_frame_files(dir)?
                .iter()
                .map(|p| RawFrame::open(p))
                .collect(),
            ClipSource::Video(path) => extract_frames(path, self.fps),
        }
    }

    pub fn load_labels(&self, expected_len: usize) -> Result<Option<LabelTrack>> {
        self.label_path
            .as_deref()
            .map(|p| load_labels(p, &self.clip_id, expected_len))
            .transpose()
    }
}

/// How a dataset is laid out on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub name: String,
    pub fps: f64,
    pub train_dir: String,
    pub test_dir: String,
    /// Folder of `<clip_id>.txt` label files, relative to the root.
    pub label_dir: String,
    /// Entries whose names end with one of these are ignored (e.g. UCSD `_gt` masks).
    pub skip_suffixes: Vec<String>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            name: "custom".into(),
            fps: 25.0,
            train_dir: "train".into(),
            test_dir: "test".into(),
            label_dir: "labels".into(),
            skip_suffixes: vec!["_gt".into()],
        }
    }
}

impl DatasetSpec {
    /// Layouts of the public benchmarks with their native frame rates.
    pub fn preset(name: &str) -> Result<Self> {
        let base = DatasetSpec::default();
        let spec = match name.to_ascii_lowercase().as_str() {
            "umn" => DatasetSpec {
                name: "UMN".into(),
                fps: 25.0,
                ..base
            },
            "ucsd" | "ucsdped1" | "ucsdped2" | "ucsdpeds" => DatasetSpec {
                name: "UCSDpeds".into(),
                fps: 10.0,
                train_dir: "Train".into(),
                test_dir: "Test".into(),
                ..base
            },
            "avenue" => DatasetSpec {
                name: "Avenue".into(),
                fps: 15.0,
                train_dir: "training_videos".into(),
                test_dir: "testing_videos".into(),
                ..base
            },
            "subway" => DatasetSpec {
                name: "Subway".into(),
                fps: 20.0,
                ..base
            },
            "synthetic" => DatasetSpec {
                name: "synthetic".into(),
                fps: 10.0,
                ..base
            },
            "custom" => base,
            other => return Err(Error::Config(format!("unknown dataset preset {other:?}"))),
        };
        Ok(spec)
    }
}

/// Every clip of one dataset with its split, rate and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub clips: Vec<ClipEntry>,
}

/// Finds `name` under `root`, falling back to a case-insensitive match.
fn find_subdir(root: &Path, name: &str) -> Option<PathBuf> {
    let exact = root.join(name);
    if exact.is_dir() {
        return Some(exact);
    }
    fs::read_dir(root)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.eq_ignore_ascii_case(name))
        })
}

fn discover(split_dir: &Path, spec: &DatasetSpec) -> Result<Vec<(String, ClipSource)>> {
    let mut found = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(split_dir)
        .map_err(|e| Error::io(split_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for path in entries {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_string) else {
            continue;
        };
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default();
        if name.starts_with('.') || spec.skip_suffixes.iter().any(|s| name.ends_with(s.as_str())) {
            continue;
        }
        if path.is_dir() {
            if !list_frame_files(&path)?.is_empty() {
                found.push((name.to_string(), ClipSource::Frames(path)));
            }
        } else if has_extension(&path, VIDEO_EXTENSIONS) {
            found.push((stem, ClipSource::Video(path)));
        }
    }
    Ok(found)
}

/// Scans `root` for train/test clips as described by `spec`.
pub fn build_manifest(root: &Path, spec: &DatasetSpec) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} does not exist", root.display())));
    }
    if !(spec.fps > 0.0) {
        return Err(Error::Config(format!("fps must be positive, got {}", spec.fps)));
    }
    let label_dir = root.join(&spec.label_dir);
    let mut clips = Vec::new();
    for (split, dir_name) in [(Split::Train, &spec.train_dir), (Split::Test, &spec.test_dir)] {
        let Some(dir) = find_subdir(root, dir_name) else {
            continue;
        };
        for (clip_id, source) in discover(&dir, spec)? {
            let label_path = match split {
                Split::Train => None,
                Split::Test => {
                    let p = label_dir.join(format!("{clip_id}.txt"));
                    if !p.is_file() {
                        return Err(Error::invalid(format!(
                            "test clip {clip_id} has no label file at {}",
                            p.display()
                        )));
                    }
                    Some(p)
                }
            };
            clips.push(ClipEntry {
                clip_id,
                split,
                source,
                fps: spec.fps,
                label_path,
            });
        }
    }
    if clips.is_empty() {
        return Err(Error::invalid(format!("no clips found under {}", root.display())));
    }
    let manifest = DatasetManifest {
        dataset_name: spec.name.clone(),
        clips,
    };
    manifest.validate()?;
    Ok(manifest)
}

const CSV_HEADER: [&str; 5] = ["clip_id", "split", "path", "fps", "label_path"];

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    clip_id: String,
    split: Split,
    path: String,
    fps: f64,
    label_path: String,
}

fn relative_to(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.clips {
            if !seen.insert(c.clip_id.as_str()) {
                return Err(Error::invalid(format!("duplicate clip id {}", c.clip_id)));
            }
            if !(c.fps > 0.0 && c.fps.is_finite()) {
                return Err(Error::invalid(format!("clip {} has fps {}", c.clip_id, c.fps)));
            }
            match (c.split, &c.label_path) {
                (Split::Test, None) => {
                    return Err(Error::invalid(format!("test clip {} has no labels", c.clip_id)))
                }
                (Split::Train, Some(_)) => {
                    return Err(Error::invalid(format!(
                        "train clip {} carries labels; training data must be normal-only",
                        c.clip_id
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Writes `clip_id,split,path,fps,label_path`; paths are stored relative
    /// to the manifest's folder when they live under it.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = fs::canonicalize(&base).unwrap_or(base);
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.clips {
            let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
            w.serialize(ManifestRow {
                clip_id: c.clip_id.clone(),
                split: c.split,
                path: relative_to(&abs(c.source.path()), &base),
                fps: c.fps,
                label_path: c
                    .label_path
                    .as_deref()
                    .map(|p| relative_to(&abs(p), &base))
                    .unwrap_or_default(),
            })?;
        }
        if self.clips.is_empty() {
            w.write_record(CSV_HEADER)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load_csv(path: &Path, dataset_name: &str) -> Result<Self> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                msg: format!("expected header {}, got {}", CSV_HEADER.join(","), header.join(",")),
            });
        }
        let mut clips = Vec::new();
        for row in r.deserialize::<ManifestRow>() {
            let row = row?;
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() {
                    p
                } else {
                    base.join(p)
                }
            };
            clips.push(ClipEntry {
                clip_id: row.clip_id,
                split: row.split,
                source: ClipSource::from_path(resolve(&row.path)),
                fps: row.fps,
                label_path: (!row.label_path.is_empty()).then(|| resolve(&row.label_path)),
            });
        }
        let m = DatasetManifest {
            dataset_name: dataset_name.to_string(),
            clips,
        };
        m.validate()?;
        Ok(m)
    }
}
