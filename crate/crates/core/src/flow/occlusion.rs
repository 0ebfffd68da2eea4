use super::{warp_components, FlowField, VisibilityMask};
use crate::error::{Result, VsrError};

/// Default relative tolerance of the forward–backward check.
pub const DEFAULT_ALPHA: f64 = 0.01;
/// Default absolute tolerance (px²) of the forward–backward check.
pub const DEFAULT_BETA: f64 = 0.5;

/// Forward–backward consistency check.
///
/// `flow_bwd` lives on the grid the mask is computed for and points into the
/// other frame; `flow_fwd` lives on the other frame and points back. A pixel
/// is visible iff the round trip nearly cancels:
///
/// `|b + f̃|² ≤ alpha·(|b|² + |f̃|²) + beta`, with `f̃ = flow_fwd` sampled at `p + b(p)`.
pub fn occlusion_mask(
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    alpha: f64,
    beta: f64,
) -> Result<VisibilityMask> {
    flow_fwd.check_shape(flow_bwd.height(), flow_bwd.width())?;
    let (fu, fv) = warp_components(flow_fwd, flow_bwd);
    let mask = (0..flow_bwd.u().len())
        .map(|i| {
            let (bu, bv) = (flow_bwd.u()[i], flow_bwd.v()[i]);
            let (su, sv) = (bu + fu[i], bv + fv[i]);
            let lhs = su * su + sv * sv;
            let rhs = alpha * (bu * bu + bv * bv + fu[i] * fu[i] + fv[i] * fv[i]) + beta;
            lhs <= rhs
        })
        .collect();
    VisibilityMask::new(flow_bwd.height(), flow_bwd.width(), mask)
}

/// Motion-adaptive weight `exp(-‖flow‖ / sigma_m) · visible`, row-major.
pub fn motion_weight(flow: &FlowField, sigma_m: f64, visibility: &VisibilityMask) -> Result<Vec<f64>> {
    if !(sigma_m > 0.0 && sigma_m.is_finite()) {
        return Err(VsrError::Config(format!("sigma_m must be positive, got {sigma_m}")));
    }
    flow.check_shape(visibility.height(), visibility.width())?;
    Ok(flow
        .u()
        .iter()
        .zip(flow.v())
        .zip(visibility.as_slice())
        .map(|((u, v), &vis)| if vis { (-u.hypot(*v) / sigma_m).exp() } else { 0.0 })
        .collect())
}
