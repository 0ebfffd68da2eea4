use std::rc::Rc;

use vsr_tensor::{Graph, SpatialMap, Var};

use crate::error::{Result, VsrError};
use crate::resample;

/// Anything that maps an aligned LR window to one SR frame.
///
/// `window[i]` is a `[N, C, h, w]` node; `warps[i]` optionally aligns slot
/// `i` to the centre with one shared map or one map per batch item.
pub trait WindowModel {
    fn context_radius(&self) -> usize;
    fn upscale(&self) -> usize;
    fn forward_window(&self, g: &mut Graph, window: &[Var], warps: &[Option<Vec<Rc<SpatialMap>>>]) -> Result<Var>;
}

pub(crate) fn check_window(k: usize, window: &[Var], warps: &[Option<Vec<Rc<SpatialMap>>>]) -> Result<()> {
    if window.len() != 2 * k + 1 || warps.len() != window.len() {
        return Err(VsrError::Contract(format!(
            "window of {} frames / {} warps, expected {}",
            window.len(),
            warps.len(),
            2 * k + 1
        )));
    }
    Ok(())
}

/// Bicubic upsampling of the centre frame; ignores its neighbours.
#[derive(Debug, Clone)]
pub struct BicubicStub {
    pub context_radius: usize,
    pub scale: usize,
}

impl WindowModel for BicubicStub {
    fn context_radius(&self) -> usize {
        self.context_radius
    }

    fn upscale(&self) -> usize {
        self.scale
    }

    fn forward_window(&self, g: &mut Graph, window: &[Var], warps: &[Option<Vec<Rc<SpatialMap>>>]) -> Result<Var> {
        check_window(self.context_radius, window, warps)?;
        let centre = window[self.context_radius];
        let (_, _, h, w) = g.value(centre).dims4()?;
        let up = Rc::new(resample::resize_map(h, w, h * self.scale, w * self.scale));
        let out = g.spatial(centre, vec![up]);
        Ok(g.clamp(out, 0.0, 1.0))
    }
}

/// Nearest-neighbour (box) upsampling of the centre frame. Area averaging
/// inverts it exactly.
#[derive(Debug, Clone)]
pub struct BoxStub {
    pub context_radius: usize,
    pub scale: usize,
}

impl WindowModel for BoxStub {
    fn context_radius(&self) -> usize {
        self.context_radius
    }

    fn upscale(&self) -> usize {
        self.scale
    }

    fn forward_window(&self, g: &mut Graph, window: &[Var], warps: &[Option<Vec<Rc<SpatialMap>>>]) -> Result<Var> {
        check_window(self.context_radius, window, warps)?;
        let centre = window[self.context_radius];
        let (_, _, h, w) = g.value(centre).dims4()?;
        Ok(g.spatial(centre, vec![Rc::new(resample::nearest_up_map(h, w, self.scale))]))
    }
}
