//! Fidelity and temporal-consistency metrics, per-clip reports and
//! temporal profiles.

mod metrics;
mod report;

pub use metrics::{
    e_tc, e_tc_per_pair, e_warp, e_warp_per_pair, e_warp_reverse, estimate_clip_flows, psnr, quantize_8bit, ssim,
    temporal_profile,
};
pub use report::{evaluate_clip, summary_csv, write_summary_csv, EvalConfig, MetricReport, PerFrame, Psnr, SUMMARY_HEADER};
