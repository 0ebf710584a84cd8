use std::fs::File;
use std::hint::black_box;
use std::io::Write;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver};
use lru::LruCache;
use serde::{Deserialize, Serialize};

use super::{preprocess, window_count, Batch, Frame, FrameWindow, DEFAULT_FRAME_SIZE, DEFAULT_WINDOW};
use crate::data_io::{list_frame_files, ClipEntry, ClipSource};
use crate::pipeline::RawFrame;
use crate::{Error, Result, Scalar};

/// Loader optimizations. None of them changes what is emitted, only when.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoaderConfig {
    pub caching: bool,
    pub prefetching: bool,
    pub parallelizing: bool,
    pub worker_count: usize,
    /// Decoded frames kept by the cache; also sizes the read-ahead queue.
    pub buffer_capacity: usize,
}

impl Default for LoaderConfig {
    fn default() -> Self {
        LoaderConfig {
            caching: true,
            prefetching: true,
            parallelizing: true,
            worker_count: std::thread::available_parallelism().map_or(2, NonZeroUsize::get),
            buffer_capacity: 64,
        }
    }
}

impl LoaderConfig {
    pub fn baseline() -> Self {
        LoaderConfig {
            caching: false,
            prefetching: false,
            parallelizing: false,
            ..Default::default()
        }
    }

    pub fn with_flags(caching: bool, prefetching: bool, parallelizing: bool) -> Self {
        LoaderConfig {
            caching,
            prefetching,
            parallelizing,
            ..Default::default()
        }
    }

    pub fn validate(&self, window_total: usize) -> Result<()> {
        if self.worker_count == 0 {
            return Err(Error::Config("loader worker_count must be at least 1".into()));
        }
        if self.buffer_capacity < window_total {
            return Err(Error::Config(format!(
                "loader buffer_capacity {} is smaller than the window ({window_total})",
                self.buffer_capacity
            )));
        }
        Ok(())
    }

    fn queue_depth(&self, window_total: usize) -> usize {
        if self.prefetching {
            (self.buffer_capacity / window_total).max(1)
        } else {
            0
        }
    }
}

/// Frame geometry and windowing shared by the loader and the benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub frame_size: usize,
    pub window_total: usize,
    pub stride: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            frame_size: DEFAULT_FRAME_SIZE,
            window_total: DEFAULT_WINDOW,
            stride: 1,
        }
    }
}

enum ClipFrames {
    Files(Vec<PathBuf>),
    Decoded(Vec<RawFrame>),
}

impl ClipFrames {
    fn len(&self) -> usize {
        match self {
            ClipFrames::Files(f) => f.len(),
            ClipFrames::Decoded(f) => f.len(),
        }
    }
}

struct Clip {
    id: String,
    frames: ClipFrames,
}

struct Source<T> {
    clips: Vec<Clip>,
    /// `(clip, first frame)` of every window in emission order.
    windows: Vec<(usize, usize)>,
    spec: WindowSpec,
    cache: Option<Mutex<LruCache<(usize, usize), Arc<Frame<T>>>>>,
}

impl<T: Scalar> Source<T> {
    fn decode(&self, clip: usize, idx: usize) -> Result<Frame<T>> {
        match &self.clips[clip].frames {
            ClipFrames::Files(files) => preprocess(&RawFrame::open(&files[idx])?, self.spec.frame_size),
            ClipFrames::Decoded(raw) => preprocess(&raw[idx], self.spec.frame_size),
        }
    }

    fn frame(&self, clip: usize, idx: usize) -> Result<Arc<Frame<T>>> {
        let Some(cache) = &self.cache else {
            return Ok(Arc::new(self.decode(clip, idx)?));
        };
        if let Some(f) = cache.lock().expect("cache lock").get(&(clip, idx)) {
            return Ok(f.clone());
        }
        let f = Arc::new(self.decode(clip, idx)?);
        cache.lock().expect("cache lock").put((clip, idx), f.clone());
        Ok(f)
    }

    fn window(&self, i: usize) -> Result<FrameWindow<T>> {
        let (clip, start) = self.windows[i];
        let n = self.spec.window_total;
        let frames = (start..start + n)
            .map(|j| self.frame(clip, j))
            .collect::<Result<Vec<_>>>()?;
        let (inputs, target) = frames.split_at(n - 1);
        Ok(FrameWindow {
            clip_id: self.clips[clip].id.clone(),
            start_index: start,
            inputs: inputs.to_vec(),
            target: target[0].clone(),
        })
    }
}

/// Streams the windows of a set of clips, decoding frames on demand.
pub struct WindowLoader<T> {
    source: Arc<Source<T>>,
    config: LoaderConfig,
}

impl<T: Scalar> WindowLoader<T> {
    pub fn new(clips: &[ClipEntry], spec: WindowSpec, config: LoaderConfig) -> Result<Self> {
        config.validate(spec.window_total)?;
        if spec.window_total < 2 || spec.stride == 0 || spec.frame_size == 0 {
            return Err(Error::arg(format!("invalid window spec {spec:?}")));
        }
        let mut loaded = Vec::with_capacity(clips.len());
        let mut windows = Vec::new();
        for (ci, entry) in clips.iter().enumerate() {
            let frames = match &entry.source {
                ClipSource::Frames(dir) => ClipFrames::Files(list_frame_files(dir)?),
                ClipSource::Video(_) => ClipFrames::Decoded(entry.load_raw_frames()?),
            };
            let count = window_count(frames.len(), spec.window_total, spec.stride);
            windows.extend((0..count).map(|w| (ci, w * spec.stride)));
            loaded.push(Clip {
                id: entry.clip_id.clone(),
                frames,
            });
        }
        let cache = config.caching.then(|| {
            Mutex::new(LruCache::new(
                NonZeroUsize::new(config.buffer_capacity).expect("validated capacity"),
            ))
        });
        Ok(WindowLoader {
            source: Arc::new(Source {
                clips: loaded,
                windows,
                spec,
                cache,
            }),
            config,
        })
    }

    pub fn len(&self) -> usize {
        self.source.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.windows.is_empty()
    }

    pub fn config(&self) -> &LoaderConfig {
        &self.config
    }

    /// Frames of clip `clip` in the loader's clip order.
    pub fn clip_len(&self, clip: usize) -> usize {
        self.source.clips[clip].frames.len()
    }

    /// Every window in clip order.
    pub fn iter(&self) -> WindowIter<T> {
        self.iter_order((0..self.len()).collect())
    }

    /// Windows in the given order of window indices.
    pub fn iter_order(&self, order: Vec<usize>) -> WindowIter<T> {
        let order = Arc::new(order);
        let depth = self.config.queue_depth(self.source.spec.window_total);
        let workers = if self.config.parallelizing {
            self.config.worker_count
        } else if self.config.prefetching {
            1
        } else {
            0
        };
        if workers == 0 {
            return WindowIter {
                source: self.source.clone(),
                order,
                next: 0,
                lanes: Vec::new(),
                stop: Arc::new(AtomicBool::new(false)),
                handles: Vec::new(),
            };
        }
        let stop = Arc::new(AtomicBool::new(false));
        let mut lanes = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = bounded(depth);
            let source = self.source.clone();
            let order = order.clone();
            let stop = stop.clone();
            handles.push(std::thread::spawn(move || {
                for pos in (w..order.len()).step_by(workers) {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    if tx.send(source.window(order[pos])).is_err() {
                        break;
                    }
                }
            }));
            lanes.push(rx);
        }
        WindowIter {
            source: self.source.clone(),
            order,
            next: 0,
            lanes,
            stop,
            handles,
        }
    }

    /// Materializes every window; frames shared between windows are decoded once.
    pub fn collect_windows(&self) -> Result<Vec<FrameWindow<T>>> {
        let mut frames: Vec<Vec<Option<Arc<Frame<T>>>>> = self
            .source
            .clips
            .iter()
            .map(|c| vec![None; c.frames.len()])
            .collect();
        let n = self.source.spec.window_total;
        let mut out = Vec::with_capacity(self.len());
        for &(clip, start) in &self.source.windows {
            let mut win = Vec::with_capacity(n);
            for j in start..start + n {
                let slot = &mut frames[clip][j];
                if slot.is_none() {
                    *slot = Some(Arc::new(self.source.decode(clip, j)?));
                }
                win.push(slot.clone().expect("filled"));
            }
            let target = win.pop().expect("window has a target");
            out.push(FrameWindow {
                clip_id: self.source.clips[clip].id.clone(),
                start_index: start,
                inputs: win,
                target,
            });
        }
        Ok(out)
    }
}

/// Single-consumer iterator; background workers (if any) stop when it is dropped.
pub struct WindowIter<T> {
    source: Arc<Source<T>>,
    order: Arc<Vec<usize>>,
    next: usize,
    /// Worker `w` delivers positions `w, w + k, w + 2k, ...` in order.
    lanes: Vec<Receiver<Result<FrameWindow<T>>>>,
    stop: Arc<AtomicBool>,
    handles: Vec<JoinHandle<()>>,
}

impl<T: Scalar> Iterator for WindowIter<T> {
    type Item = Result<FrameWindow<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.order.len() {
            return None;
        }
        let pos = self.next;
        self.next += 1;
        if self.lanes.is_empty() {
            return Some(self.source.window(self.order[pos]));
        }
        let lane = &self.lanes[pos % self.lanes.len()];
        Some(lane.recv().unwrap_or_else(|_| Err(Error::arg("loader worker exited early"))))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let rest = self.order.len() - self.next;
        (rest, Some(rest))
    }
}

impl<T> Drop for WindowIter<T> {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        self.lanes.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

/// Windows per second delivered to a consumer that assembles network batches.
///
/// The loader is re-run from the start whenever it is exhausted before
/// `duration_secs` has elapsed.
pub fn throughput_benchmark<T: Scalar>(
    clips: &[ClipEntry],
    config: &LoaderConfig,
    spec: WindowSpec,
    duration_secs: f64,
) -> Result<f64> {
    if !(duration_secs > 0.0) || !duration_secs.is_finite() {
        return Err(Error::arg(format!("duration must be positive, got {duration_secs}")));
    }
    if clips.is_empty() {
        return Err(Error::arg("benchmark needs at least one clip"));
    }
    let loader = WindowLoader::<T>::new(clips, spec, *config)?;
    if loader.is_empty() {
        return Err(Error::arg("clips are too short to form a single window"));
    }
    let budget = Duration::from_secs_f64(duration_secs);
    let start = Instant::now();
    let mut count = 0usize;
    'outer: loop {
        for w in loader.iter() {
            let w = w?;
            black_box(Batch::from_windows(&[&w])?);
            count += 1;
            if start.elapsed() >= budget {
                break 'outer;
            }
        }
    }
    Ok(count as f64 / start.elapsed().as_secs_f64())
}

/// Writes `caching,prefetching,parallelizing,fps` rows.
pub fn write_benchmark_csv(path: &Path, rows: &[(LoaderConfig, f64)]) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("caching,prefetching,parallelizing,fps\n");
    for (c, fps) in rows {
        text.push_str(&format!("{},{},{},{fps:.3}\n", c.caching, c.prefetching, c.parallelizing));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::Split;

    fn clip_dir(root: &Path, name: &str, n: usize) -> ClipEntry {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..n {
            let img = image::RgbImage::from_fn(12, 10, |x, y| {
                image::Rgb([(x * 20 + i as u32) as u8, (y * 20) as u8, (i * 7) as u8])
            });
            img.save(dir.join(format!("{i:04}.png"))).unwrap();
        }
        ClipEntry {
            clip_id: name.into(),
            split: Split::Train,
            source: ClipSource::Frames(dir),
            fps: 10.0,
            label_path: None,
        }
    }

    fn spec() -> WindowSpec {
        WindowSpec {
            frame_size: 8,
            window_total: 5,
            stride: 1,
        }
    }

    fn fingerprint(loader: &WindowLoader<f64>) -> Vec<(String, usize, Vec<f64>)> {
        loader
            .iter()
            .map(|w| {
                let w = w.unwrap();
                let mut v: Vec<f64> = w.inputs.iter().flat_map(|f| f.data().iter().copied()).collect();
                v.extend(w.target.data().iter());
                (w.clip_id, w.start_index, v)
            })
            .collect()
    }

    #[test]
    fn every_config_emits_the_same_windows() {
        let d = tempfile::tempdir().unwrap();
        let clips = vec![clip_dir(d.path(), "a", 9), clip_dir(d.path(), "b", 7)];
        let reference = fingerprint(&WindowLoader::new(&clips, spec(), LoaderConfig::baseline()).unwrap());
        assert_eq!(reference.len(), 5 + 3);
        for bits in 0..8u8 {
            for workers in [1, 3] {
                let cfg = LoaderConfig {
                    caching: bits & 1 != 0,
                    prefetching: bits & 2 != 0,
                    parallelizing: bits & 4 != 0,
                    worker_count: workers,
                    buffer_capacity: 5,
                };
                let loader = WindowLoader::new(&clips, spec(), cfg).unwrap();
                assert_eq!(fingerprint(&loader), reference, "{cfg:?}");
            }
        }
    }

    #[test]
    fn collected_windows_match_the_stream() {
        let d = tempfile::tempdir().unwrap();
        let clips = vec![clip_dir(d.path(), "a", 7)];
        let loader = WindowLoader::<f64>::new(&clips, spec(), LoaderConfig::default()).unwrap();
        let streamed = fingerprint(&loader);
        let collected = loader.collect_windows().unwrap();
        assert_eq!(collected.len(), streamed.len());
        for (w, s) in collected.iter().zip(&streamed) {
            assert_eq!(w.start_index, s.1);
            assert_eq!(w.target.data().iter().copied().collect::<Vec<_>>(), s.2[4 * 192..]);
        }
        // shared frames are shared allocations
        assert!(Arc::ptr_eq(&collected[0].inputs[1], &collected[1].inputs[0]));
    }

    #[test]
    fn dropping_a_partial_iterator_stops_workers() {
        let d = tempfile::tempdir().unwrap();
        let clips = vec![clip_dir(d.path(), "a", 20)];
        let loader = WindowLoader::<f32>::new(&clips, spec(), LoaderConfig::default()).unwrap();
        let mut it = loader.iter();
        assert!(it.next().unwrap().is_ok());
        drop(it);
        assert_eq!(loader.iter().count(), 16);
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let d = tempfile::tempdir().unwrap();
        let clips = vec![clip_dir(d.path(), "a", 6)];
        let small = LoaderConfig {
            buffer_capacity: 4,
            ..LoaderConfig::default()
        };
        assert!(WindowLoader::<f32>::new(&clips, spec(), small).is_err());
        let none = LoaderConfig {
            worker_count: 0,
            ..LoaderConfig::default()
        };
        assert!(WindowLoader::<f32>::new(&clips, spec(), none).is_err());
        assert!(throughput_benchmark::<f32>(&clips, &LoaderConfig::default(), spec(), 0.0).is_err());
        assert!(throughput_benchmark::<f32>(&[], &LoaderConfig::default(), spec(), 0.1).is_err());
        let fps = throughput_benchmark::<f32>(&clips, &LoaderConfig::default(), spec(), 0.05).unwrap();
        assert!(fps > 0.0);
    }

    #[test]
    fn benchmark_csv_layout() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("bench.csv");
        write_benchmark_csv(&p, &[(LoaderConfig::baseline(), 8.5)]).unwrap();
        assert_eq!(
            std::fs::read_to_string(p).unwrap(),
            "caching,prefetching,parallelizing,fps\nfalse,false,false,8.500\n"
        );
    }
}
