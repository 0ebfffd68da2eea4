use crate::data::{Frame, VideoClip};
use crate::error::{Result, VsrError};
use crate::flow::{backward_warp, estimate_flow, FlowField};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(VsrError::Dimension(format!("frames {:?} and {:?} differ in shape", a.shape(), b.shape())));
    }
    Ok(())
}

fn mean_abs_diff(a: &Frame, b: &Frame) -> f64 {
    let n = a.data().len() as f64;
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Flows estimated on the clip itself: entry `t` lives on frame `t+1` and
/// points into frame `t`.
pub fn estimate_clip_flows(clip: &VideoClip, levels: usize) -> Result<Vec<FlowField>> {
    clip.frames()
        .windows(2)
        .map(|p| estimate_flow(&p[0], &p[1], levels))
        .collect()
}

/// Per-pair warping errors: frame `t` warped onto frame `t+1` with
/// `flows[t]` (on frame `t+1`, pointing into `t`), compared by mean absolute
/// difference.
pub fn e_warp_per_pair(clip: &VideoClip, flows: &[FlowField]) -> Result<Vec<f64>> {
    if clip.len() < 2 {
        return Err(VsrError::Contract("warping error needs at least two frames".into()));
    }
    if flows.len() + 1 != clip.len() {
        return Err(VsrError::Contract(format!(
            "{} flows for {} frames; expected {}",
            flows.len(),
            clip.len(),
            clip.len() - 1
        )));
    }
    clip.frames()
        .windows(2)
        .zip(flows)
        .map(|(p, f)| {
            f.check_shape(p[1].height(), p[1].width())
                .map_err(|e| VsrError::Contract(e.to_string()))?;
            Ok(mean_abs_diff(&backward_warp(&p[0], f)?, &p[1]))
        })
        .collect()
}

pub fn e_warp(clip: &VideoClip, flows: &[FlowField]) -> Result<f64> {
    Ok(mean(&e_warp_per_pair(clip, flows)?))
}

/// The training-direction variant: frame `t+1` warped back onto frame `t`
/// with `flows[t]` living on frame `t` and pointing into `t+1`.
pub fn e_warp_reverse(clip: &VideoClip, flows: &[FlowField]) -> Result<f64> {
    if clip.len() < 2 || flows.len() + 1 != clip.len() {
        return Err(VsrError::Contract(format!("{} flows for {} frames", flows.len(), clip.len())));
    }
    let per = clip
        .frames()
        .windows(2)
        .zip(flows)
        .map(|(p, f)| {
            f.check_shape(p[0].height(), p[0].width())
                .map_err(|e| VsrError::Contract(e.to_string()))?;
            Ok(mean_abs_diff(&backward_warp(&p[1], f)?, &p[0]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&per))
}

pub fn e_tc_per_pair(clip: &VideoClip) -> Result<Vec<f64>> {
    if clip.len() < 2 {
        return Err(VsrError::Contract("temporal consistency needs at least two frames".into()));
    }
    Ok(clip.frames().windows(2).map(|p| mean_abs_diff(&p[0], &p[1])).collect())
}

/// Mean absolute difference between consecutive frames, without alignment.
pub fn e_tc(clip: &VideoClip) -> Result<f64> {
    Ok(mean(&e_tc_per_pair(clip)?))
}

/// `10·log10(1/MSE)` for frames in `[0, 1]`; `+inf` when identical.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03 and unit dynamic range, averaged over valid window positions and
/// then over channels. Frames smaller than the window use the largest odd
/// window that fits.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w, c) = a.shape();
    let mut size = SSIM_WINDOW.min(h).min(w);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for ch in 0..c {
        let (x, y) = (a.plane(ch), b.plane(ch));
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
        let (mx, oh, ow) = filter_valid(x, h, w, &k);
        let (my, _, _) = filter_valid(y, h, w, &k);
        let (exx, _, _) = filter_valid(&xx, h, w, &k);
        let (eyy, _, _) = filter_valid(&yy, h, w, &k);
        let (exy, _, _) = filter_valid(&xy, h, w, &k);
        let mut acc = 0.0;
        for i in 0..oh * ow {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

/// Rounds every sample to the nearest 8-bit level.
pub fn quantize_8bit(frame: &Frame) -> Frame {
    let (h, w, c) = frame.shape();
    let data = frame.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Frame::new(h, w, c, data).expect("same shape")
}

/// Scanline `y` of every frame, stacked top to bottom: an image of
/// `frames × W × C`.
pub fn temporal_profile(clip: &VideoClip, y: usize) -> Result<Frame> {
    let (h, w, c) = clip.shape();
    if y >= h {
        return Err(VsrError::Contract(format!("row {y} out of range; valid rows are 0..={}", h - 1)));
    }
    let n = clip.len();
    let mut out = Frame::filled(n, w, c, 0.0)?;
    for (r, f) in clip.frames().iter().enumerate() {
        for ch in 0..c {
            for x in 0..w {
                out.set(r, x, ch, f.get(y, x, ch));
            }
        }
    }
    Ok(out)
}
