use vsr_tensor::{pixel_shuffle, pixel_unshuffle, Tensor};

use super::ModelConfig;
use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::flow::{backward_warp, FlowField};

/// Rearranges `H×W×C` into `(H/u)×(W/u)×(C·u²)` as a `[1, C·u², H/u, W/u]`
/// tensor. Channel `c·u² + dy·u + dx` holds pixel `(u·y + dy, u·x + dx)`.
pub fn pixel_unshuffle_frame(frame: &Frame, u: usize) -> Result<Tensor> {
    if u == 0 || frame.height() % u != 0 || frame.width() % u != 0 {
        return Err(VsrError::Dimension(format!(
            "{}x{} frame is not divisible by unshuffle factor {u}",
            frame.height(),
            frame.width()
        )));
    }
    Ok(pixel_unshuffle(&frame.to_tensor(), u))
}

/// Exact inverse of [`pixel_unshuffle_frame`].
pub fn pixel_shuffle_frame(t: &Tensor, u: usize) -> Result<Frame> {
    let (n, c, _, _) = t.dims4()?;
    if u == 0 || n != 1 || c % (u * u) != 0 || !matches!(c / (u * u), 1 | 3) {
        return Err(VsrError::Dimension(format!(
            "cannot pixel-shuffle a {:?} tensor by {u} into a frame",
            t.shape()
        )));
    }
    Frame::from_tensor(&pixel_shuffle(t, u))
}

/// Flow-aligned, channel-concatenated and unshuffled generator input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub tensor: Tensor,
    pub window_len: usize,
}

impl InputStack {
    pub fn channels(&self) -> usize {
        self.tensor.shape()[1]
    }
}

/// Warps every neighbour onto the centre frame, concatenates the window in
/// temporal order and pixel-unshuffles it.
///
/// `flows` holds one field per neighbour in temporal order (the centre is
/// skipped). Each field lives on the centre frame and points into its
/// neighbour.
pub fn build_input(window: &[Frame], flows: &[FlowField], cfg: &ModelConfig) -> Result<InputStack> {
    let n = cfg.window_len();
    if window.len() != n {
        return Err(VsrError::Contract(format!(
            "window holds {} frames, expected 2k+1 = {n}",
            window.len()
        )));
    }
    if flows.len() != n - 1 {
        return Err(VsrError::Contract(format!(
            "{} flows given, expected 2k = {}",
            flows.len(),
            n - 1
        )));
    }
    let k = cfg.context_radius;
    let mut parts = Vec::with_capacity(n);
    let mut flow_iter = flows.iter();
    for (i, f) in window.iter().enumerate() {
        if f.channels() != cfg.in_channels {
            return Err(VsrError::Config(format!(
                "frame has {} channels, model expects {}",
                f.channels(),
                cfg.in_channels
            )));
        }
        let aligned = if i == k {
            f.clone()
        } else {
            backward_warp(f, flow_iter.next().expect("flow count checked"))?
        };
        parts.push(pixel_unshuffle_frame(&aligned, cfg.unshuffle_factor)?);
    }
    let (_, cu, h, w) = parts[0].dims4()?;
    let mut data = Vec::with_capacity(n * cu * h * w);
    for p in &parts {
        data.extend_from_slice(p.data());
    }
    Ok(InputStack {
        tensor: Tensor::from_vec(&[1, n * cu, h, w], data)?,
        window_len: n,
    })
}
