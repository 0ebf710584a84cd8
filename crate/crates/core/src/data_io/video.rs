//! Video decoding into RGB frame sequences.
//!
//! YUV4MPEG2 (`.y4m`) and animated GIF are decoded natively. Any other
//! container is piped through `ffmpeg` as y4m when an `ffmpeg` binary is on
//! `PATH`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;
use std::process::{Command, Stdio};

use image::AnimationDecoder;

use crate::pipeline::RawFrame;
use crate::{Error, Result};

/// Extensions recognised as video containers during dataset discovery.
pub const VIDEO_EXTENSIONS: &[&str] = &["y4m", "gif", "avi", "mp4", "mov", "mkv", "mpg", "mpeg", "webm"];

fn decode_err(path: &Path, msg: impl ToString) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Decoded frames plus the presentation time of each, in seconds.
struct Timeline {
    frames: Vec<RawFrame>,
    starts: Vec<f64>,
    duration: f64,
}

/// Picks, for every output tick `k / fps` inside the clip, the last source
/// frame that started at or before it.
fn resample(timeline: Timeline, fps: f64) -> Vec<RawFrame> {
    const EPS: f64 = 1e-9;
    let count = (timeline.duration * fps + EPS).floor() as usize;
    let mut out = Vec::with_capacity(count);
    let mut src = 0;
    for k in 0..count {
        let t = k as f64 / fps + EPS;
        while src + 1 < timeline.starts.len() && timeline.starts[src + 1] <= t {
            src += 1;
        }
        if let Some(f) = timeline.frames.get(src) {
            out.push(f.clone());
        }
    }
    out
}

/// Decodes `video_path` and returns RGB frames sampled at `fps`, in order.
///
/// A zero-length video yields an empty sequence.
pub fn extract_frames(video_path: &Path, fps: f64) -> Result<Vec<RawFrame>> {
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::arg(format!("fps must be positive, got {fps}")));
    }
    let ext = video_path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let timeline = match ext.as_str() {
        "y4m" => {
            let file = File::open(video_path).map_err(|e| Error::io(video_path, e))?;
            decode_y4m(BufReader::new(file), video_path)?
        }
        "gif" => decode_gif(video_path)?,
        _ => decode_with_ffmpeg(video_path)?,
    };
    Ok(resample(timeline, fps))
}

/// Number of frames [`extract_frames`] would return, without keeping them.
pub fn frame_count(video_path: &Path, fps: f64) -> Result<usize> {
    extract_frames(video_path, fps).map(|f| f.len())
}

#[derive(Clone, Copy)]
enum Range {
    Full,
    Limited,
}

fn yuv_to_rgb(y: u8, u: u8, v: u8, range: Range) -> [u8; 3] {
    let (y, u, v) = (y as f64, u as f64 - 128.0, v as f64 - 128.0);
    let (r, g, b) = match range {
        Range::Full => (
            y + 1.402 * v,
            y - 0.344_136 * u - 0.714_136 * v,
            y + 1.772 * u,
        ),
        Range::Limited => {
            let y = 1.164_383 * (y - 16.0);
            (
                y + 1.596_027 * v,
                y - 0.391_762 * u - 0.812_968 * v,
                y + 2.017_232 * u,
            )
        }
    };
    let q = |c: f64| c.round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

fn rgb_to_yuv(rgb: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
    let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
    let q = |c: f64| c.round().clamp(0.0, 255.0) as u8;
    [q(y), q(u), q(v)]
}

fn decode_y4m<R: Read>(reader: R, path: &Path) -> Result<Timeline> {
    let mut dec = y4m::decode(reader).map_err(|e| decode_err(path, format!("{e:?}")))?;
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    if rate.num == 0 || rate.den == 0 {
        return Err(decode_err(path, "zero frame rate"));
    }
    let src_fps = rate.num as f64 / rate.den as f64;
    if dec.get_bit_depth() != 8 {
        return Err(decode_err(path, "only 8-bit y4m is supported"));
    }
    let params = String::from_utf8_lossy(dec.get_raw_params()).to_string();
    let colorspace = dec.get_colorspace();
    let range = if params.contains("XCOLORRANGE=FULL") || matches!(colorspace, y4m::Colorspace::C420jpeg) {
        Range::Full
    } else {
        Range::Limited
    };
    let mono = matches!(colorspace, y4m::Colorspace::Cmono);
    let mut frames = Vec::new();
    loop {
        let frame = match dec.read_frame() {
            Ok(f) => f,
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(decode_err(path, format!("{e:?}"))),
        };
        let yp = frame.get_y_plane();
        let mut rgb = Vec::with_capacity(w * h * 3);
        if mono {
            for &l in yp {
                rgb.extend_from_slice(&yuv_to_rgb(l, 128, 128, range));
            }
        } else {
            let (up, vp) = (frame.get_u_plane(), frame.get_v_plane());
            // Chroma geometry follows from the plane sizes.
            let cw = if up.len() >= w * h { w } else { w.div_ceil(2) };
            let ch = up.len() / cw.max(1);
            let (sx, sy) = (w.div_ceil(cw.max(1)), h.div_ceil(ch.max(1)));
            for y in 0..h {
                for x in 0..w {
                    let ci = (y / sy) * cw + x / sx;
                    rgb.extend_from_slice(&yuv_to_rgb(yp[y * w + x], up[ci], vp[ci], range));
                }
            }
        }
        frames.push(RawFrame::from_rgb(w, h, rgb)?);
    }
    let n = frames.len();
    Ok(Timeline {
        starts: (0..n).map(|i| i as f64 / src_fps).collect(),
        duration: n as f64 / src_fps,
        frames,
    })
}

fn decode_gif(path: &Path) -> Result<Timeline> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = image::codecs::gif::GifDecoder::new(BufReader::new(file)).map_err(|e| decode_err(path, e))?;
    let mut frames = Vec::new();
    let mut starts = Vec::new();
    let mut t = 0.0;
    for frame in dec.into_frames() {
        let frame = frame.map_err(|e| decode_err(path, e))?;
        let (num, den) = frame.delay().numer_denom_ms();
        let delay = if den == 0 { 0.0 } else { num as f64 / den as f64 / 1000.0 };
        let img = image::DynamicImage::ImageRgba8(frame.into_buffer());
        starts.push(t);
        frames.push(RawFrame::from_image(&img)?);
        t += delay;
    }
    Ok(Timeline {
        frames,
        starts,
        duration: t,
    })
}

fn decode_with_ffmpeg(path: &Path) -> Result<Timeline> {
    let child = Command::new("ffmpeg")
        .args(["-v", "error", "-nostdin", "-i"])
        .arg(path)
        .args(["-f", "yuv4mpegpipe", "-pix_fmt", "yuv444p", "-color_range", "pc", "-"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| decode_err(path, format!("unsupported container and ffmpeg unavailable: {e}")))?;
    let output = child
        .wait_with_output()
        .map_err(|e| decode_err(path, e))?;
    if !output.status.success() {
        return Err(decode_err(path, String::from_utf8_lossy(&output.stderr).trim()));
    }
    decode_y4m(output.stdout.as_slice(), path)
}

/// Writes frames as an uncompressed 4:4:4 y4m file at `fps_num / fps_den`.
pub fn write_y4m(path: &Path, frames: &[RawFrame], fps_num: usize, fps_den: usize) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::arg("no frames to encode"))?;
    let (w, h) = (first.width(), first.height());
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let ext = y4m::VendorExtensionString::new(b"COLORRANGE=FULL".to_vec()).expect("valid extension");
    let mut enc = y4m::encode(w, h, y4m::Ratio::new(fps_num, fps_den))
        .with_colorspace(y4m::Colorspace::C444)
        .append_vendor_extension(ext)
        .write_header(BufWriter::new(file))
        .map_err(|e| decode_err(path, format!("{e:?}")))?;
    let mut planes = [vec![0u8; w * h], vec![0u8; w * h], vec![0u8; w * h]];
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::arg("all frames of a video must share one size"));
        }
        let d = f.data();
        for y in 0..h {
            for x in 0..w {
                let px = if f.channels() == 1 {
                    [d[[y, x, 0]]; 3]
                } else {
                    [d[[y, x, 0]], d[[y, x, 1]], d[[y, x, 2]]]
                };
                let yuv = rgb_to_yuv(px);
                for (p, v) in planes.iter_mut().zip(yuv) {
                    p[y * w + x] = v;
                }
            }
        }
        let frame = y4m::Frame::new([&planes[0], &planes[1], &planes[2]], None);
        enc.write_frame(&frame)
            .map_err(|e| decode_err(path, format!("{e:?}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frames(n: usize, w: usize, h: usize) -> Vec<RawFrame> {
        (0..n)
            .map(|i| {
                let rgb = (0..w * h)
                    .flat_map(|p| [(p * 7 + i * 13) as u8, (i * 40) as u8, (p % w * 20) as u8])
                    .collect();
                RawFrame::from_rgb(w, h, rgb).unwrap()
            })
            .collect()
    }

    #[test]
    fn one_second_at_ten_fps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.y4m");
        write_y4m(&p, &gradient_frames(10, 8, 6), 10, 1).unwrap();
        assert_eq!(extract_frames(&p, 10.0).unwrap().len(), 10);
        // Halving the rate keeps every other frame.
        let half = extract_frames(&p, 5.0).unwrap();
        let full = extract_frames(&p, 10.0).unwrap();
        assert_eq!(half.len(), 5);
        assert_eq!(half[1], full[2]);
    }

    #[test]
    fn rgb_survives_the_yuv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.y4m");
        let frames = gradient_frames(2, 5, 4);
        write_y4m(&p, &frames, 25, 1).unwrap();
        let back = extract_frames(&p, 25.0).unwrap();
        for (a, b) in frames.iter().zip(&back) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert!((*x as i32 - *y as i32).abs() <= 2, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn decoding_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("clip.y4m");
        write_y4m(&p, &gradient_frames(6, 9, 7), 30000, 1001).unwrap();
        assert_eq!(extract_frames(&p, 10.0).unwrap(), extract_frames(&p, 10.0).unwrap());
    }

    #[test]
    fn zero_length_video_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.y4m");
        std::fs::write(&p, b"YUV4MPEG2 W4 H4 F25:1 C444\n").unwrap();
        assert!(extract_frames(&p, 25.0).unwrap().is_empty());
    }

    #[test]
    fn invalid_fps_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.y4m");
        std::fs::write(&p, b"not a video").unwrap();
        assert!(matches!(extract_frames(&p, 0.0), Err(Error::Argument(_))));
        assert!(matches!(extract_frames(&p, 10.0), Err(Error::Decode { .. })));
    }

    #[test]
    fn minutes_of_video_at_source_rate() {
        // 4 minutes at 25 fps, 2x2 pixels to keep the file small.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("long.y4m");
        write_y4m(&p, &gradient_frames(4 * 60 * 25, 2, 2), 25, 1).unwrap();
        assert_eq!(frame_count(&p, 25.0).unwrap(), 6000);
    }
}
