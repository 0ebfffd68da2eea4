use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, VideoClip};
use crate::error::{Result, VsrError};
use crate::flow::{FlowField, VisibilityMask};

/// Middlebury `.flo` magic number.
pub const FLO_MAGIC: f32 = 202021.25;

/// `manifest.json` of a clip directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub fps: f64,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub bit_depth: u8,
    #[serde(default)]
    pub id: String,
    /// File names in temporal order.
    #[serde(default)]
    pub frames: Vec<String>,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| VsrError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| VsrError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| VsrError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| VsrError::io(path, e))
}

/// Encodes a frame as a PNG with the given bit depth (8 or 16).
pub fn write_png(path: &Path, frame: &Frame, bit_depth: u8) -> Result<()> {
    let (h, w, c) = frame.shape();
    let file = File::create(path).map_err(|e| VsrError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(if c == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    let bytes: Vec<u8> = match bit_depth {
        8 => {
            enc.set_depth(png::BitDepth::Eight);
            let mut out = Vec::with_capacity(h * w * c);
            for i in 0..h * w {
                for ch in 0..c {
                    out.push((frame.data()[ch * h * w + i] * 255.0).round() as u8);
                }
            }
            out
        }
        16 => {
            enc.set_depth(png::BitDepth::Sixteen);
            let mut out = Vec::with_capacity(2 * h * w * c);
            for i in 0..h * w {
                for ch in 0..c {
                    let q = (frame.data()[ch * h * w + i] * 65535.0).round() as u16;
                    out.extend_from_slice(&q.to_be_bytes());
                }
            }
            out
        }
        other => return Err(VsrError::Config(format!("unsupported PNG bit depth {other}"))),
    };
    let mut writer = enc.write_header().map_err(|e| VsrError::io(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| VsrError::io(path, e))?;
    writer.finish().map_err(|e| VsrError::io(path, e))
}

/// Decodes an 8- or 16-bit grayscale or RGB PNG into a frame.
pub fn read_png(path: &Path) -> Result<Frame> {
    let file = File::open(path).map_err(|e| VsrError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| VsrError::io(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| VsrError::io(path, "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| VsrError::io(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let c = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(VsrError::io(path, format!("unsupported colour type {other:?}"))),
    };
    let mut data = vec![0.0; h * w * c];
    let bytes = &buf[..info.buffer_size()];
    match info.bit_depth {
        png::BitDepth::Eight => {
            for i in 0..h * w {
                for ch in 0..c {
                    data[ch * h * w + i] = bytes[i * c + ch] as f64 / 255.0;
                }
            }
        }
        png::BitDepth::Sixteen => {
            for i in 0..h * w {
                for ch in 0..c {
                    let k = 2 * (i * c + ch);
                    data[ch * h * w + i] = u16::from_be_bytes([bytes[k], bytes[k + 1]]) as f64 / 65535.0;
                }
            }
        }
        other => return Err(VsrError::io(path, format!("unsupported bit depth {other:?}"))),
    }
    Frame::new(h, w, c, data)
}

/// Writes `frame_%05d.png` (16-bit) for every frame plus `manifest.json`.
pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
    let (height, width, channels) = clip.shape();
    let mut names = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames().iter().enumerate() {
        let name = frame_file_name(i);
        write_png(&dir.join(&name), f, 16)?;
        names.push(name);
    }
    let manifest = ClipManifest {
        fps: clip.fps(),
        num_frames: clip.len(),
        height,
        width,
        channels,
        bit_depth: 16,
        id: clip.id().to_string(),
        frames: names,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Loads a clip written by [`save_clip`]; every frame is checked against the manifest.
pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let mpath = dir.join("manifest.json");
    if !mpath.is_file() {
        return Err(VsrError::io(&mpath, "clip manifest not found"));
    }
    let m: ClipManifest = read_json(&mpath)?;
    if m.num_frames == 0 {
        return Err(VsrError::io(&mpath, "manifest lists no frames"));
    }
    let names: Vec<String> = if m.frames.is_empty() {
        (0..m.num_frames).map(frame_file_name).collect()
    } else if m.frames.len() == m.num_frames {
        m.frames.clone()
    } else {
        return Err(VsrError::io(
            &mpath,
            format!("num_frames = {} but {} frame names listed", m.num_frames, m.frames.len()),
        ));
    };
    let mut frames = Vec::with_capacity(m.num_frames);
    for (i, name) in names.iter().enumerate() {
        let p = dir.join(name);
        let f = read_png(&p).map_err(|e| VsrError::io(&p, format!("frame {i}: {e}")))?;
        if f.shape() != (m.height, m.width, m.channels) {
            return Err(VsrError::io(
                &p,
                format!(
                    "frame {i}: shape {:?} disagrees with manifest {:?}",
                    f.shape(),
                    (m.height, m.width, m.channels)
                ),
            ));
        }
        frames.push(f);
    }
    let id = if m.id.is_empty() {
        dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        m.id
    };
    VideoClip::new(frames, m.fps, id)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 8 * flow.u().len());
    bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    bytes.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        bytes.extend_from_slice(&(*u as f32).to_le_bytes());
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = File::create(path).map_err(|e| VsrError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| VsrError::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| VsrError::io(path, e))?;
    let word = |i: usize| -> Option<[u8; 4]> { bytes.get(4 * i..4 * i + 4).map(|s| s.try_into().unwrap()) };
    let header = (word(0), word(1), word(2));
    let (Some(m), Some(w), Some(h)) = header else {
        return Err(VsrError::io(path, "truncated .flo header"));
    };
    if f32::from_le_bytes(m) != FLO_MAGIC {
        return Err(VsrError::io(path, "bad .flo magic"));
    }
    let (w, h) = (i32::from_le_bytes(w), i32::from_le_bytes(h));
    if w <= 0 || h <= 0 {
        return Err(VsrError::io(path, format!("bad .flo size {w}x{h}")));
    }
    let n = (w as usize) * (h as usize);
    if bytes.len() != 12 + 8 * n {
        return Err(VsrError::io(path, format!("expected {} bytes, found {}", 12 + 8 * n, bytes.len())));
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for i in 0..n {
        u.push(f32::from_le_bytes(word(3 + 2 * i).unwrap()) as f64);
        v.push(f32::from_le_bytes(word(4 + 2 * i).unwrap()) as f64);
    }
    FlowField::new(h as usize, w as usize, u, v).map_err(|e| VsrError::io(path, e))
}

/// Writes a mask as an 8-bit grayscale PNG (0 or 255).
pub fn write_mask(path: &Path, mask: &VisibilityMask) -> Result<()> {
    let data = mask.as_slice().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    write_png(path, &Frame::new(mask.height(), mask.width(), 1, data)?, 8)
}

pub fn read_mask(path: &Path) -> Result<VisibilityMask> {
    let f = read_png(path)?;
    if f.channels() != 1 {
        return Err(VsrError::io(path, "visibility mask must be single-channel"));
    }
    VisibilityMask::new(f.height(), f.width(), f.data().iter().map(|&v| v >= 0.5).collect())
}

/// Numbered sequence of `.flo` files `flow_%05d.flo`.
pub fn save_flows(dir: &Path, flows: &[FlowField]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
    for (i, f) in flows.iter().enumerate() {
        write_flo(&dir.join(format!("flow_{i:05}.flo")), f)?;
    }
    Ok(())
}

pub fn load_flows(dir: &Path) -> Result<Vec<FlowField>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(format!("flow_{:05}.flo", out.len()));
        if !p.is_file() {
            break;
        }
        out.push(read_flo(&p)?);
    }
    if out.is_empty() && !dir.is_dir() {
        return Err(VsrError::io(dir, "flow directory not found"));
    }
    Ok(out)
}

pub fn save_masks(dir: &Path, masks: &[VisibilityMask]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| VsrError::io(dir, e))?;
    for (i, m) in masks.iter().enumerate() {
        write_mask(&dir.join(format!("vis_{i:05}.png")), m)?;
    }
    Ok(())
}

pub fn load_masks(dir: &Path) -> Result<Vec<VisibilityMask>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(format!("vis_{:05}.png", out.len()));
        if !p.is_file() {
            break;
        }
        out.push(read_mask(&p)?);
    }
    if out.is_empty() && !dir.is_dir() {
        return Err(VsrError::io(dir, "mask directory not found"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(n: usize, c: usize) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames = (0..n)
            .map(|_| Frame::new(6, 7, c, (0..6 * 7 * c).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect();
        VideoClip::new(frames, 25.0, "io").unwrap()
    }

    #[test]
    fn round_trip_is_within_sixteen_bit_quantization() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 3] {
            let clip = random_clip(3, c);
            let d = dir.path().join(format!("c{c}"));
            save_clip(&clip, &d).unwrap();
            let back = load_clip(&d).unwrap();
            assert_eq!(back.len(), clip.len());
            assert_eq!(back.shape(), clip.shape());
            assert_eq!(back.fps(), clip.fps());
            assert_eq!(back.id(), clip.id());
            for (a, b) in back.frames().iter().zip(clip.frames()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() <= 1.0 / 65535.0);
                }
            }
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(dir.path()), Err(VsrError::Io { .. })));
    }

    #[test]
    fn missing_frame_error_names_its_index() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(4, 3), dir.path()).unwrap();
        fs::remove_file(dir.path().join("frame_00002.png")).unwrap();
        let err = load_clip(dir.path()).unwrap_err().to_string();
        assert!(err.contains("frame 2"), "{err}");
    }

    #[test]
    fn thirty_frames_are_numbered_consecutively() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&random_clip(30, 1), dir.path()).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        let mut expected: Vec<String> = (0..30).map(frame_file_name).collect();
        expected.push("manifest.json".into());
        assert_eq!(names, expected);
        assert_eq!(names[0], "frame_00000.png");
        assert_eq!(names[29], "frame_00029.png");
    }

    #[test]
    fn flo_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let flow = FlowField::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.25, -4.5], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = dir.path().join("f.flo");
        write_flo(&p, &flow).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(&bytes[0..4], &202021.25f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3i32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2i32.to_le_bytes());
        assert_eq!(&bytes[12..16], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(read_flo(&p).unwrap(), flow);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_flo(&p).is_err());
    }

    #[test]
    fn masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = VisibilityMask::new(2, 2, vec![true, false, false, true]).unwrap();
        save_masks(dir.path(), &[m.clone(), m.clone()]).unwrap();
        assert_eq!(load_masks(dir.path()).unwrap(), vec![m.clone(), m]);
    }
}
