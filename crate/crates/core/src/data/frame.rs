use vsr_tensor::Tensor;

use crate::error::{Result, VsrError};

/// One image with values in `[0, 1]`.
///
/// Pixels are stored channel-planar (`C × H × W`), which is the layout the
/// network consumes; [`Frame::get`] addresses them as `(y, x, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(VsrError::Dimension(format!(
                "frame {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VsrError::Contract(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Like [`Frame::new`] but clamps values into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, channels, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(VsrError::Dimension("frame dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(VsrError::Dimension(format!("channels must be 1 or 3, got {channels}")));
        }
        Ok(())
    }

    /// Builds a frame from a `1×C×H×W` tensor, clamping into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 {
            return Err(VsrError::Dimension(format!("expected batch 1, got {n}")));
        }
        Self::from_clamped(h, w, c, t.data().to_vec())
    }

    /// `1×C×H×W` tensor view of the frame.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.data.clone())
            .expect("frame invariants guarantee size")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Channel-mean intensity image, row-major.
    pub fn luma(&self) -> Vec<f64> {
        let n = self.height * self.width;
        let mut out = vec![0.0; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        let k = 1.0 / self.channels as f64;
        out.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Mirrors the frame left-to-right.
    pub fn flip_horizontal(&self) -> Frame {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.data[(c * self.height + y) * self.width + x] =
                        self.data[(c * self.height + y) * self.width + self.width - 1 - x];
                }
            }
        }
        out
    }
}

/// Ordered frames of identical shape.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f64,
    id: String,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f64, id: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| VsrError::Contract("a clip needs at least one frame".into()))?;
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != first.shape()) {
            return Err(VsrError::Dimension(format!(
                "frame {i} has shape {:?}, frame 0 has {:?}",
                f.shape(),
                first.shape()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(VsrError::Config(format!("fps must be positive, got {fps}")));
        }
        Ok(Self {
            frames,
            fps,
            id: id.into(),
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false: clips hold at least one frame.
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// `(height, width, channels)` shared by every frame.
    pub fn shape(&self) -> (usize, usize, usize) {
        self.frames[0].shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_bad_channels() {
        assert!(Frame::new(1, 1, 3, vec![0.5, 1.2, 0.0]).is_err());
        assert!(Frame::new(1, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(Frame::new(0, 1, 1, vec![]).is_err());
        assert!(Frame::from_clamped(1, 1, 3, vec![-0.5, 1.2, f64::NAN]).is_ok());
    }

    #[test]
    fn clip_requires_uniform_nonempty_frames() {
        assert!(VideoClip::new(vec![], 30.0, "x").is_err());
        let a = Frame::filled(2, 2, 3, 0.1).unwrap();
        let b = Frame::filled(2, 3, 3, 0.1).unwrap();
        assert!(VideoClip::new(vec![a.clone(), b], 30.0, "x").is_err());
        assert!(VideoClip::new(vec![a.clone()], 0.0, "x").is_err());
        assert_eq!(VideoClip::new(vec![a.clone(), a], 24.0, "x").unwrap().len(), 2);
    }

    #[test]
    fn tensor_round_trip_and_indexing() {
        let data: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let f = Frame::new(2, 2, 3, data).unwrap();
        assert_eq!(Frame::from_tensor(&f.to_tensor()).unwrap(), f);
        assert_eq!(f.get(1, 0, 2), 10.0 / 12.0);
        assert_eq!(f.flip_horizontal().get(1, 1, 2), 10.0 / 12.0);
    }
}
