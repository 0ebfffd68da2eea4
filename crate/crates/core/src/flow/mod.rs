//! Optical flow: fields, bicubic backward warping, forward–backward
//! occlusion checks, motion-adaptive weights and a pyramidal estimator.
//!
//! Convention used everywhere: a flow field lives on the *target* grid and
//! each vector points to where that pixel is found in the *source* frame,
//! `target(p) ≈ source(p + flow(p))`.

mod estimate;
mod occlusion;

pub use estimate::{estimate_flow, LucasKanade};
pub use occlusion::{motion_weight, occlusion_mask, DEFAULT_ALPHA, DEFAULT_BETA};

use std::rc::Rc;

use vsr_tensor::SpatialMap;

use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::resample;

/// Per-pixel displacement `(u, v)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != height * width || v.len() != height * width {
            return Err(VsrError::Dimension(format!(
                "flow {height}x{width} needs {} components each",
                height * width
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(VsrError::Contract("flow vectors must be finite".into()));
        }
        Ok(Self { height, width, u, v })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::uniform(height, width, 0.0, 0.0)
    }

    pub fn uniform(height: usize, width: usize, du: f64, dv: f64) -> Self {
        Self {
            height,
            width,
            u: vec![du; height * width],
            v: vec![dv; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn at(&self, y: usize, x: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    pub fn magnitude(&self, y: usize, x: usize) -> f64 {
        let (u, v) = self.at(y, x);
        u.hypot(v)
    }

    pub fn negated(&self) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            u: self.u.iter().map(|x| x * k).collect(),
            v: self.v.iter().map(|x| x * k).collect(),
        }
    }

    /// Mirrors the field left-to-right; horizontal components change sign.
    pub fn flip_horizontal(&self) -> FlowField {
        let (h, w) = (self.height, self.width);
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let src = y * w + (w - 1 - x);
                out.u[y * w + x] = -self.u[src];
                out.v[y * w + x] = self.v[src];
            }
        }
        out
    }

    /// Bicubic backward-warp operator for this field.
    pub fn warp_operator(&self) -> SpatialMap {
        resample::warp_map(self.height, self.width, |y, x| self.at(y, x))
    }

    /// Chains `self` (target → intermediate) with `next` (intermediate →
    /// source), giving target → source: `f(p) + next(p + f(p))`.
    pub fn compose(&self, next: &FlowField) -> Result<FlowField> {
        self.check_shape(next.height, next.width)?;
        let (nu, nv) = warp_components(next, self);
        let u = self.u.iter().zip(&nu).map(|(a, b)| a + b).collect();
        let v = self.v.iter().zip(&nv).map(|(a, b)| a + b).collect();
        FlowField::new(self.height, self.width, u, v)
    }

    /// Block-averaged field at `1/s` resolution with vectors divided by `s`.
    pub fn downsample(&self, s: usize) -> Result<FlowField> {
        if s == 0 || self.height % s != 0 || self.width % s != 0 {
            return Err(VsrError::Dimension(format!(
                "flow {}x{} not divisible by {s}",
                self.height, self.width
            )));
        }
        let map = resample::area_down_map(self.height, self.width, s);
        let k = 1.0 / s as f64;
        let u = map.apply(&self.u, 1).into_iter().map(|x| x * k).collect();
        let v = map.apply(&self.v, 1).into_iter().map(|x| x * k).collect();
        FlowField::new(self.height / s, self.width / s, u, v)
    }

    pub(crate) fn check_shape(&self, h: usize, w: usize) -> Result<()> {
        if (self.height, self.width) != (h, w) {
            return Err(VsrError::Dimension(format!(
                "flow is {}x{}, expected {h}x{w}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Warps both components of `field` by `by` without clamping.
pub(crate) fn warp_components(field: &FlowField, by: &FlowField) -> (Vec<f64>, Vec<f64>) {
    let map = by.warp_operator();
    (map.apply(&field.u, 1), map.apply(&field.v, 1))
}

/// Binary visibility map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisibilityMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl VisibilityMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(VsrError::Dimension(format!(
                "mask {height}x{width} needs {} entries, got {}",
                height * width,
                mask.len()
            )));
        }
        Ok(Self { height, width, mask })
    }

    pub fn all_visible(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mask: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.mask
    }

    pub fn visible_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&b| b).count() as f64 / self.mask.len() as f64
    }

    /// Fraction of pixels on which two masks agree.
    pub fn agreement(&self, other: &VisibilityMask) -> f64 {
        let same = self.mask.iter().zip(&other.mask).filter(|(a, b)| a == b).count();
        same as f64 / self.mask.len() as f64
    }

    /// Logical AND.
    pub fn and(&self, other: &VisibilityMask) -> VisibilityMask {
        VisibilityMask {
            height: self.height,
            width: self.width,
            mask: self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// A pixel is kept only if every pixel of its `s×s` block is visible.
    pub fn downsample(&self, s: usize) -> VisibilityMask {
        let (h, w) = (self.height / s, self.width / s);
        let mut mask = vec![true; h * w];
        for y in 0..h * s {
            for x in 0..w * s {
                if !self.get(y, x) {
                    mask[(y / s) * w + x / s] = false;
                }
            }
        }
        VisibilityMask { height: h, width: w, mask }
    }

    pub fn flip_horizontal(&self) -> VisibilityMask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.mask[y * self.width + x] = self.mask[y * self.width + self.width - 1 - x];
            }
        }
        out
    }
}

/// Backward-warps `frame` so that `out(p) = frame(p + flow(p))`, bicubic
/// (Catmull–Rom) with replicate padding, clamped to `[0, 1]`.
pub fn backward_warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    flow.check_shape(frame.height(), frame.width())?;
    let map = flow.warp_operator();
    let data = map.apply(frame.data(), frame.channels());
    Frame::from_clamped(frame.height(), frame.width(), frame.channels(), data)
}

/// Shared-pointer warp operator for graph use.
pub fn warp_operator(flow: &FlowField) -> Rc<SpatialMap> {
    Rc::new(flow.warp_operator())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resample::cubic_weight;

    fn ramp(h: usize, w: usize) -> Frame {
        let data = (0..h * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
        Frame::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn zero_flow_is_exact_identity() {
        let data: Vec<f64> = (0..3 * 5 * 6).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let f = Frame::new(5, 6, 3, data).unwrap();
        assert_eq!(backward_warp(&f, &FlowField::zeros(5, 6)).unwrap(), f);
    }

    #[test]
    fn integer_shift_of_ramp_is_exact_in_the_interior() {
        let f = ramp(4, 10);
        let out = backward_warp(&f, &FlowField::uniform(4, 10, -3.0, 0.0)).unwrap();
        for y in 0..4 {
            for x in 3..10 {
                assert_eq!(out.get(y, x, 0), f.get(y, x - 3, 0));
            }
            for x in 0..3 {
                assert_eq!(out.get(y, x, 0), f.get(y, 0, 0), "replicate padding");
            }
        }
    }

    #[test]
    fn half_pixel_shift_reproduces_kernel_weights() {
        let mut data = vec![0.0; 9];
        data[4] = 1.0;
        let f = Frame::new(1, 9, 1, data).unwrap();
        let out = backward_warp(&f, &FlowField::uniform(1, 9, 0.5, 0.0)).unwrap();
        // out(x) = f(x + 0.5) = w(x + 0.5 - 4); negative lobes clamp to 0.
        for x in 0..9 {
            let expected = cubic_weight(x as f64 + 0.5 - 4.0).max(0.0);
            assert!((out.get(0, x, 0) - expected).abs() < 1e-15, "x={x}");
        }
        assert_eq!(out.get(0, 3, 0), 0.5625);
        assert_eq!(out.get(0, 4, 0), 0.5625);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let f = ramp(4, 4);
        assert!(matches!(
            backward_warp(&f, &FlowField::zeros(4, 5)),
            Err(VsrError::Dimension(_))
        ));
    }

    #[test]
    fn composition_of_uniform_flows_adds() {
        let a = FlowField::uniform(6, 6, 1.0, -1.0);
        let b = FlowField::uniform(6, 6, 2.0, 0.5);
        let c = a.compose(&b).unwrap();
        assert!(c.u().iter().all(|&u| (u - 3.0).abs() < 1e-12));
        assert!(c.v().iter().all(|&v| (v + 0.5).abs() < 1e-12));
    }
}
