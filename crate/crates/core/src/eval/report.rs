use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::metrics::{e_tc_per_pair, e_warp_per_pair, estimate_clip_flows, psnr, quantize_8bit, ssim};
use crate::data::VideoClip;
use crate::error::{Result, VsrError};
use crate::flow::FlowField;

/// A PSNR value that serialises `+inf` as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr(pub f64);

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid PSNR value {t:?}"))),
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Quantise both clips to 8 bits before measuring.
    pub quantize_8bit: bool,
    /// Pyramid depth for flows estimated on the SR clip.
    pub flow_levels: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            quantize_8bit: false,
            flow_levels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerFrame {
    pub psnr: Vec<Psnr>,
    pub ssim: Vec<f64>,
    /// One entry per consecutive pair.
    pub e_warp: Vec<f64>,
    pub e_warp_gt_flow: Option<Vec<f64>>,
    pub e_tc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clip_id: String,
    pub frames: usize,
    pub psnr: Psnr,
    pub ssim: f64,
    /// Warping error with flows estimated on the SR clip.
    pub e_warp: f64,
    /// Warping error with the supplied ground-truth flows, if any.
    pub e_warp_gt_flow: Option<f64>,
    pub e_tc: f64,
    /// `e_tc` of the ground-truth clip, for reference.
    pub gt_e_tc: f64,
    pub quantized_8bit: bool,
    pub per_frame: PerFrame,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn quantized(clip: &VideoClip) -> Result<VideoClip> {
    VideoClip::new(clip.frames().iter().map(quantize_8bit).collect(), clip.fps(), clip.id())
}

/// All metrics of `sr` against `gt`. `gt_flows[t]` lives on frame `t+1` and
/// points into frame `t`.
pub fn evaluate_clip(
    sr: &VideoClip,
    gt: &VideoClip,
    gt_flows: Option<&[FlowField]>,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if sr.len() != gt.len() {
        return Err(VsrError::Contract(format!("{} SR frames vs {} ground-truth frames", sr.len(), gt.len())));
    }
    if sr.shape() != gt.shape() {
        return Err(VsrError::Contract(format!("SR frames {:?} vs ground truth {:?}", sr.shape(), gt.shape())));
    }
    let (sr, gt) = if cfg.quantize_8bit {
        (quantized(sr)?, quantized(gt)?)
    } else {
        (sr.clone(), gt.clone())
    };
    let pairs = sr.frames().iter().zip(gt.frames());
    let psnrs = pairs.clone().map(|(a, b)| psnr(a, b)).collect::<Result<Vec<_>>>()?;
    let ssims = pairs.map(|(a, b)| ssim(a, b)).collect::<Result<Vec<_>>>()?;
    let (e_warp, e_tc, gt_tc) = if sr.len() > 1 {
        let flows = estimate_clip_flows(&sr, cfg.flow_levels)?;
        (e_warp_per_pair(&sr, &flows)?, e_tc_per_pair(&sr)?, mean(&e_tc_per_pair(&gt)?))
    } else {
        (Vec::new(), Vec::new(), 0.0)
    };
    let e_warp_gt = match gt_flows {
        Some(f) if sr.len() > 1 => Some(e_warp_per_pair(&sr, f)?),
        _ => None,
    };
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { mean(v) };
    Ok(MetricReport {
        clip_id: sr.id().to_string(),
        frames: sr.len(),
        psnr: Psnr(mean(&psnrs)),
        ssim: mean(&ssims),
        e_warp: avg(&e_warp),
        e_warp_gt_flow: e_warp_gt.as_deref().map(avg),
        e_tc: avg(&e_tc),
        gt_e_tc: gt_tc,
        quantized_8bit: cfg.quantize_8bit,
        per_frame: PerFrame {
            psnr: psnrs.into_iter().map(Psnr).collect(),
            ssim: ssims,
            e_warp,
            e_warp_gt_flow: e_warp_gt,
            e_tc,
        },
    })
}

pub const SUMMARY_HEADER: &str = "clip_id,frames,psnr,ssim,e_warp,e_warp_gt_flow,e_tc,gt_e_tc";

/// One CSV row per report under a fixed header.
pub fn summary_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in reports {
        let gt = r.e_warp_gt_flow.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.clip_id, r.frames, r.psnr, r.ssim, r.e_warp, gt, r.e_tc, r.gt_e_tc
        );
    }
    out
}

pub fn write_summary_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    std::fs::write(path, summary_csv(reports)).map_err(|e| VsrError::io(path, e))
}
