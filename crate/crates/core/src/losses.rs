//! Non-adversarial training objectives.
//!
//! Every loss exists in two forms: a graph builder operating on `[N, C, H, W]`
//! nodes (used during training) and a plain function on frames.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use vsr_tensor::{Graph, SpatialMap, Tensor, Var};

use crate::data::Frame;
use crate::error::{Result, VsrError};
use crate::flow::{motion_weight, occlusion_mask, FlowField, VisibilityMask, DEFAULT_ALPHA, DEFAULT_BETA};
use crate::resample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Charbonnier ε.
    pub eps: f64,
    /// Motion decay σ_m (px).
    pub sigma_m: f64,
    /// Per-step decay γ of the multi-frame temporal loss.
    pub gamma: f64,
    /// Consistency window D.
    pub window_d: usize,
    /// Edge temperature τ of the region-aware TV weight.
    pub tau: f64,
    pub occlusion_alpha: f64,
    pub occlusion_beta: f64,
    pub lambda_rec: f64,
    pub lambda_temp: f64,
    pub lambda_tv: f64,
    pub lambda_adv_latent: f64,
    pub lambda_adv_pixel: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            sigma_m: 8.0,
            gamma: 0.8,
            window_d: 2,
            tau: 0.05,
            occlusion_alpha: DEFAULT_ALPHA,
            occlusion_beta: DEFAULT_BETA,
            lambda_rec: 1.0,
            lambda_temp: 0.5,
            lambda_tv: 0.05,
            lambda_adv_latent: 0.1,
            lambda_adv_pixel: 0.05,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(VsrError::Config(m.into()));
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.sigma_m > 0.0) {
            return bad("sigma_m must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.window_d == 0 {
            return bad("window_d must be at least 1");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        let lambdas = [
            self.lambda_rec,
            self.lambda_temp,
            self.lambda_tv,
            self.lambda_adv_latent,
            self.lambda_adv_pixel,
        ];
        if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad("loss weights must be finite and non-negative");
        }
        Ok(())
    }
}

/// Generator-side loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub temp: f64,
    pub tv: f64,
    pub adv_latent: f64,
    pub adv_pixel: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(cfg: &LossConfig, rec: f64, temp: f64, tv: f64, adv_latent: f64, adv_pixel: f64) -> Self {
        let total = cfg.lambda_rec * rec
            + cfg.lambda_temp * temp
            + cfg.lambda_tv * tv
            + cfg.lambda_adv_latent * adv_latent
            + cfg.lambda_adv_pixel * adv_pixel;
        Self {
            rec,
            temp,
            tv,
            adv_latent,
            adv_pixel,
            total,
        }
    }

    /// Term names and values, for logging.
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("rec", self.rec),
            ("temp", self.temp),
            ("tv", self.tv),
            ("adv_latent", self.adv_latent),
            ("adv_pixel", self.adv_pixel),
            ("total", self.total),
        ]
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        self.terms().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

fn check_same(a: &Frame, b: &Frame) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(VsrError::Dimension(format!(
            "frames differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `mean(√(x² + ε²))`.
pub fn charbonnier_g(g: &mut Graph, x: Var, eps: f64) -> Var {
    let sq = g.square(x);
    let sq = g.add_scalar(sq, eps * eps);
    let r = g.sqrt(sq);
    g.mean(r)
}

pub fn charbonnier(x: &[f64], eps: f64) -> f64 {
    x.iter().map(|v| (v * v + eps * eps).sqrt()).sum::<f64>() / x.len() as f64
}

/// Broadcasts a per-pixel `[N, 1, H, W]`-style map to `[N, C, H, W]`.
pub fn expand_channels(per_pixel: &[f64], n: usize, c: usize, h: usize, w: usize) -> Tensor {
    Tensor::from_fn(&[n, c, h, w], |i| {
        let b = i / (c * h * w);
        per_pixel[b * h * w + i % (h * w)]
    })
}

/// `mean_p w(p)·Φ(sr_t(p) − warp(sr_t1, flow)(p))`. `warp` holds one map
/// (shared) or one per batch item; `weights` is the expanded weight tensor.
pub fn temporal_loss_g(g: &mut Graph, sr_t: Var, sr_t1: Var, warp: Vec<Rc<SpatialMap>>, weights: Var, eps: f64) -> Var {
    let warped = g.spatial(sr_t1, warp);
    let warped = g.clamp(warped, 0.0, 1.0);
    let d = g.sub(sr_t, warped);
    let sq = g.square(d);
    let sq = g.add_scalar(sq, eps * eps);
    let phi = g.sqrt(sq);
    let wphi = g.mul(phi, weights);
    g.mean(wphi)
}

/// Frame form of [`temporal_loss_g`]. `flow` lives on `sr_t` and points into
/// `sr_t1`; `weights` is one value per pixel.
pub fn temporal_loss(sr_t: &Frame, sr_t1: &Frame, flow: &FlowField, weights: &[f64], eps: f64) -> Result<f64> {
    check_same(sr_t, sr_t1)?;
    let (h, w, c) = sr_t.shape();
    flow.check_shape(h, w)?;
    if weights.len() != h * w {
        return Err(VsrError::Dimension(format!("{} weights for a {h}x{w} frame", weights.len())));
    }
    let mut g = Graph::inference();
    let a = g.constant(sr_t.to_tensor());
    let b = g.constant(sr_t1.to_tensor());
    let wt = g.constant(expand_channels(weights, 1, c, h, w));
    let l = temporal_loss_g(&mut g, a, b, vec![Rc::new(flow.warp_operator())], wt, eps);
    Ok(g.value(l).item())
}

/// Chains consecutive flows `f_0 (0→1), f_1 (1→2), …` into `0 → n`.
pub fn compose_chain(flows: &[FlowField]) -> Result<FlowField> {
    let (first, rest) = flows
        .split_first()
        .ok_or_else(|| VsrError::Contract("cannot compose an empty flow chain".into()))?;
    let mut acc = first.clone();
    for f in rest {
        acc = acc.compose(f)?;
    }
    Ok(acc)
}

/// Per-pixel weight `exp(−‖flow‖/σ_m)·visible`, where visibility comes from
/// the forward–backward check when the reverse flow is known.
pub fn temporal_weights(flow: &FlowField, reverse: Option<&FlowField>, cfg: &LossConfig) -> Result<Vec<f64>> {
    let vis = match reverse {
        Some(r) => occlusion_mask(r, flow, cfg.occlusion_alpha, cfg.occlusion_beta)?,
        None => VisibilityMask::all_visible(flow.height(), flow.width()),
    };
    motion_weight(flow, cfg.sigma_m, &vis)
}

/// `Σ_{d=1..D} γ^{d−1}·L_d`.
pub fn decayed_sum(terms: &[f64], gamma: f64) -> f64 {
    terms.iter().enumerate().map(|(d, l)| gamma.powi(d as i32) * l).sum()
}

/// The `d`-step comparison of the multi-frame loss: `flow` lives on frame
/// `t − lag` and points into `t`.
#[derive(Debug, Clone)]
pub struct TemporalTerm {
    pub lag: usize,
    pub flow: FlowField,
    pub weights: Vec<f64>,
}

/// Composes flows and weights for lags `1..=window_d` ending at frame
/// `fwd.len()`.
///
/// `fwd[i]` lives on frame `i` and points into `i+1`; `bwd[i]` is its reverse
/// (on `i+1`, into `i`) and enables the occlusion check.
pub fn temporal_terms(
    fwd: &[FlowField],
    bwd: Option<&[FlowField]>,
    window_d: usize,
    cfg: &LossConfig,
) -> Result<Vec<TemporalTerm>> {
    if window_d == 0 || fwd.len() < window_d {
        return Err(VsrError::Contract(format!(
            "{} frames cannot support a window of D = {window_d}",
            fwd.len() + 1
        )));
    }
    if bwd.is_some_and(|b| b.len() != fwd.len()) {
        return Err(VsrError::Contract("one backward flow per forward flow required".into()));
    }
    let t = fwd.len();
    (1..=window_d)
        .map(|d| {
            let flow = compose_chain(&fwd[t - d..t])?;
            let reverse = match bwd {
                Some(b) => {
                    let rev: Vec<FlowField> = b[t - d..t].iter().rev().cloned().collect();
                    Some(compose_chain(&rev)?)
                }
                None => None,
            };
            let weights = temporal_weights(&flow, reverse.as_ref(), cfg)?;
            Ok(TemporalTerm { lag: d, flow, weights })
        })
        .collect()
}

/// `Σ_d γ^{d−1}·temporal_loss(sr[t−d], sr[t])` over `terms`, `t` being the
/// last entry of `sr`. Each term carries its warp and expanded weights.
pub fn multi_frame_temporal_loss_g(
    g: &mut Graph,
    sr: &[Var],
    terms: &[(usize, Vec<Rc<SpatialMap>>, Var)],
    gamma: f64,
    eps: f64,
) -> Result<Var> {
    let t = sr
        .len()
        .checked_sub(1)
        .ok_or_else(|| VsrError::Contract("empty frame sequence".into()))?;
    let mut total: Option<Var> = None;
    for (lag, warp, weights) in terms {
        if *lag == 0 || *lag > t {
            return Err(VsrError::Contract(format!("lag {lag} outside a {}-frame sequence", sr.len())));
        }
        let l = temporal_loss_g(g, sr[t - lag], sr[t], warp.clone(), *weights, eps);
        let l = g.scale(l, gamma.powi(*lag as i32 - 1));
        total = Some(match total {
            Some(acc) => g.add(acc, l),
            None => l,
        });
    }
    total.ok_or_else(|| VsrError::Contract("no temporal terms".into()))
}

/// Multi-frame temporal loss ending at the last frame `t` of `sr_frames`;
/// the `d`-step term compares `sr_{t−d}` with `sr_t` warped by the composed
/// chain. Flow conventions follow [`temporal_terms`].
pub fn multi_frame_temporal_loss(
    sr_frames: &[Frame],
    fwd: &[FlowField],
    bwd: Option<&[FlowField]>,
    gamma: f64,
    window_d: usize,
    cfg: &LossConfig,
) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(VsrError::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if window_d == 0 || sr_frames.len() < window_d + 1 {
        return Err(VsrError::Contract(format!(
            "{} frames cannot support a window of D = {window_d}",
            sr_frames.len()
        )));
    }
    if fwd.len() + 1 != sr_frames.len() {
        return Err(VsrError::Contract("one forward flow per consecutive pair required".into()));
    }
    let (h, w, c) = sr_frames[0].shape();
    for f in sr_frames {
        check_same(&sr_frames[0], f)?;
    }
    let planned = temporal_terms(fwd, bwd, window_d, cfg)?;
    let mut g = Graph::inference();
    let sr: Vec<Var> = sr_frames.iter().map(|f| g.constant(f.to_tensor())).collect();
    let mut terms = Vec::with_capacity(planned.len());
    for term in &planned {
        term.flow.check_shape(h, w)?;
        let wt = g.constant(expand_channels(&term.weights, 1, c, h, w));
        terms.push((term.lag, vec![Rc::new(term.flow.warp_operator())], wt));
    }
    let l = multi_frame_temporal_loss_g(&mut g, &sr, &terms, gamma, cfg.eps)?;
    Ok(g.value(l).item())
}

/// Per-pixel weight `exp(−|∇gt|/τ)`, `|∇gt|` being the channel mean of the
/// forward-difference gradient magnitude.
pub fn tv_weights(gt: &Frame, tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(VsrError::Config(format!("tau must be positive, got {tau}")));
    }
    let (h, w, c) = gt.shape();
    let dx = resample::diff_x_map(h, w).apply(gt.data(), c);
    let dy = resample::diff_y_map(h, w).apply(gt.data(), c);
    Ok((0..h * w)
        .map(|p| {
            let mag = (0..c).map(|ch| dx[ch * h * w + p].hypot(dy[ch * h * w + p])).sum::<f64>() / c as f64;
            (-mag / tau).exp()
        })
        .collect())
}

/// Weighted anisotropic TV of `sr`, normalised by pixel count.
pub fn region_aware_tv_g(g: &mut Graph, sr: Var, weights: Var) -> Var {
    let (_, _, h, w) = g.value(sr).dims4().expect("rank-4 input");
    let dx = g.spatial(sr, vec![Rc::new(resample::diff_x_map(h, w))]);
    let dy = g.spatial(sr, vec![Rc::new(resample::diff_y_map(h, w))]);
    let ax = g.abs(dx);
    let ay = g.abs(dy);
    let s = g.add(ax, ay);
    let ws = g.mul(s, weights);
    g.mean(ws)
}

pub fn region_aware_tv(sr: &Frame, gt: &Frame, tau: f64) -> Result<f64> {
    check_same(sr, gt)?;
    let (h, w, c) = sr.shape();
    let wts = tv_weights(gt, tau)?;
    let mut g = Graph::inference();
    let x = g.constant(sr.to_tensor());
    let wt = g.constant(expand_channels(&wts, 1, c, h, w));
    let l = region_aware_tv_g(&mut g, x, wt);
    Ok(g.value(l).item())
}

pub fn reconstruction_loss_g(g: &mut Graph, sr: Var, gt: Var, eps: f64) -> Var {
    let d = g.sub(sr, gt);
    charbonnier_g(g, d, eps)
}

pub fn reconstruction_loss(sr: &Frame, gt: &Frame, eps: f64) -> Result<f64> {
    check_same(sr, gt)?;
    let d: Vec<f64> = sr.data().iter().zip(gt.data()).map(|(a, b)| a - b).collect();
    Ok(charbonnier(&d, eps))
}
