use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use vsr_tensor::{Graph, SpatialMap, Tensor, Var};

use crate::backbone::WindowModel;
use crate::data::{Frame, VideoClip};
use crate::error::{Result, VsrError};
use crate::flow::{estimate_flow, FlowField};
use crate::losses::compose_chain;
use crate::resample;

/// Provenance of a buffer slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotOrigin {
    Lr,
    SrDownsampled,
}

/// LR-resolution frames of one window, batched as `[N, C, h, w]` per slot.
/// Slots are overwritten with area-downsampled predictions as the rollout
/// advances.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    slots: Vec<Tensor>,
    origins: Vec<SlotOrigin>,
}

impl FrameBuffer {
    pub fn from_frames(frames: &[Frame]) -> Result<Self> {
        Self::from_batches(frames.iter().map(|f| f.to_tensor()).collect())
    }

    /// One tensor per slot; every slot must share the same shape.
    pub fn from_batches(slots: Vec<Tensor>) -> Result<Self> {
        let first = slots
            .first()
            .ok_or_else(|| VsrError::Contract("frame buffer needs at least one slot".into()))?;
        first.dims4()?;
        if slots.iter().any(|s| s.shape() != first.shape()) {
            return Err(VsrError::Dimension("buffer slots differ in shape".into()));
        }
        let origins = vec![SlotOrigin::Lr; slots.len()];
        Ok(Self { slots, origins })
    }

    /// Stacks per-item windows (all of equal length) along the batch axis.
    pub fn from_windows(windows: &[&[Frame]]) -> Result<Self> {
        let len = windows.first().map_or(0, |w| w.len());
        if windows.iter().any(|w| w.len() != len) {
            return Err(VsrError::Contract("batched windows differ in length".into()));
        }
        let slots = (0..len)
            .map(|t| Tensor::stack_batch(&windows.iter().map(|w| w[t].to_tensor()).collect::<Vec<_>>()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_batches(slots)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn slot(&self, i: usize) -> &Tensor {
        &self.slots[i]
    }

    pub fn origin(&self, i: usize) -> SlotOrigin {
        self.origins[i]
    }

    pub fn origins(&self) -> &[SlotOrigin] {
        &self.origins
    }

    /// Batch item `item` of slot `i` as a frame.
    pub fn frame(&self, i: usize, item: usize) -> Result<Frame> {
        let (_, c, h, w) = self.slots[i].dims4()?;
        let per = c * h * w;
        Frame::new(h, w, c, self.slots[i].data()[item * per..(item + 1) * per].to_vec())
    }

    /// Replaces slot `t` with the area-downsampled prediction `sr`.
    pub fn write_prediction(&mut self, t: usize, sr: &Tensor) -> Result<()> {
        let (n, c, h, w) = self.slots[t].dims4()?;
        let (sn, sc, sh, sw) = sr.dims4()?;
        if sn != n || sc != c || sh % h != 0 || sh / h != sw / w || sw % w != 0 {
            return Err(VsrError::Dimension(format!(
                "prediction {:?} cannot replace a {:?} slot",
                sr.shape(),
                self.slots[t].shape()
            )));
        }
        let s = sh / h;
        let map = resample::area_down_map(sh, sw, s);
        let data = map.apply(sr.data(), n * c);
        self.slots[t] = Tensor::from_vec(&[n, c, h, w], data)?;
        self.origins[t] = SlotOrigin::SrDownsampled;
        Ok(())
    }
}

/// Slot indices of the window centred at `t`, edge-replicated at both ends.
pub fn window_indices(t: usize, k: usize, len: usize) -> Vec<usize> {
    (0..=2 * k)
        .map(|i| (t + i).saturating_sub(k).min(len.saturating_sub(1)))
        .collect()
}

/// Supplies the warp that aligns slot `neighbour` onto slot `centre`, one map
/// per batch item, or `None` for the identity.
pub trait Alignment {
    fn warp(&self, centre: usize, neighbour: usize) -> Result<Option<Vec<Rc<SpatialMap>>>>;
}

/// No motion compensation.
pub struct NoAlignment;

impl Alignment for NoAlignment {
    fn warp(&self, _centre: usize, _neighbour: usize) -> Result<Option<Vec<Rc<SpatialMap>>>> {
        Ok(None)
    }
}

/// Adjacent-frame flows of one clip on the LR grid; longer-range flows are
/// composed on demand and cached.
#[derive(Debug, Clone, Default)]
pub struct ClipFlows {
    /// `fwd[i]` lives on frame `i` and points into `i+1`.
    pub fwd: Vec<FlowField>,
    /// `bwd[i]` lives on frame `i+1` and points into `i`.
    pub bwd: Vec<FlowField>,
    cache: RefCell<HashMap<(usize, usize), Rc<SpatialMap>>>,
}

impl ClipFlows {
    pub fn new(fwd: Vec<FlowField>, bwd: Vec<FlowField>) -> Result<Self> {
        if fwd.len() != bwd.len() {
            return Err(VsrError::Contract("forward and backward flow counts differ".into()));
        }
        Ok(Self {
            fwd,
            bwd,
            cache: RefCell::default(),
        })
    }

    /// Estimates adjacent flows in both directions.
    pub fn estimate(frames: &[Frame]) -> Result<Self> {
        let mut fwd = Vec::with_capacity(frames.len().saturating_sub(1));
        let mut bwd = Vec::with_capacity(frames.len().saturating_sub(1));
        for pair in frames.windows(2) {
            fwd.push(estimate_flow(&pair[1], &pair[0], 3)?);
            bwd.push(estimate_flow(&pair[0], &pair[1], 3)?);
        }
        Self::new(fwd, bwd)
    }

    pub fn frames(&self) -> usize {
        self.fwd.len() + 1
    }

    /// Flows for frames `start..start+len`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        let end = start + len.saturating_sub(1);
        Self {
            fwd: self.fwd[start..end].to_vec(),
            bwd: self.bwd[start..end].to_vec(),
            cache: RefCell::default(),
        }
    }

    /// Field on `centre` pointing into `neighbour`.
    pub fn flow(&self, centre: usize, neighbour: usize) -> Result<FlowField> {
        if centre.max(neighbour) >= self.frames() {
            return Err(VsrError::Contract(format!(
                "flow {centre}→{neighbour} outside a {}-frame clip",
                self.frames()
            )));
        }
        if neighbour > centre {
            compose_chain(&self.fwd[centre..neighbour])
        } else if neighbour < centre {
            let rev: Vec<FlowField> = self.bwd[neighbour..centre].iter().rev().cloned().collect();
            compose_chain(&rev)
        } else {
            Ok(FlowField::zeros(self.fwd[0].height(), self.fwd[0].width()))
        }
    }

    pub fn map(&self, centre: usize, neighbour: usize) -> Result<Rc<SpatialMap>> {
        if let Some(m) = self.cache.borrow().get(&(centre, neighbour)) {
            return Ok(m.clone());
        }
        let m = Rc::new(self.flow(centre, neighbour)?.warp_operator());
        self.cache.borrow_mut().insert((centre, neighbour), m.clone());
        Ok(m)
    }
}

/// One [`ClipFlows`] per batch item.
pub struct FlowAlignment<'a> {
    pub items: Vec<&'a ClipFlows>,
}

impl Alignment for FlowAlignment<'_> {
    fn warp(&self, centre: usize, neighbour: usize) -> Result<Option<Vec<Rc<SpatialMap>>>> {
        if centre == neighbour {
            return Ok(None);
        }
        self.items.iter().map(|f| f.map(centre, neighbour)).collect::<Result<Vec<_>>>().map(Some)
    }
}

/// Runs the model on the window around slot `t` of the current buffer.
pub fn rollout_step(
    g: &mut Graph,
    model: &dyn WindowModel,
    buffer: &FrameBuffer,
    t: usize,
    align: &dyn Alignment,
) -> Result<Var> {
    let idx = window_indices(t, model.context_radius(), buffer.len());
    let vars: Vec<Var> = idx.iter().map(|&i| g.constant(buffer.slot(i).clone())).collect();
    let warps = idx.iter().map(|&i| align.warp(t, i)).collect::<Result<Vec<_>>>()?;
    model.forward_window(g, &vars, &warps)
}

/// Predicts slots `start..end` in order. Each prediction is computed on a
/// fresh graph, so nothing upstream of the buffer carries gradient, and
/// written back into its slot when `recurrent` is set.
pub fn rollout_range(
    model: &dyn WindowModel,
    buffer: &mut FrameBuffer,
    start: usize,
    end: usize,
    align: &dyn Alignment,
    recurrent: bool,
) -> Result<Vec<Tensor>> {
    let mut outs = Vec::with_capacity(end.saturating_sub(start));
    for t in start..end {
        let mut g = Graph::inference();
        let y = rollout_step(&mut g, model, buffer, t, align)?;
        let y = g.value(y).clone();
        if recurrent {
            buffer.write_prediction(t, &y)?;
        }
        outs.push(y);
    }
    Ok(outs)
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub sr_anchor: Tensor,
    /// Predictions for `t = k … a−1`, in order.
    pub sr_context: Vec<Tensor>,
    pub buffer: FrameBuffer,
}

pub fn check_anchor(len: usize, k: usize, anchor: usize) -> Result<()> {
    if len < 2 * k + 1 {
        return Err(VsrError::Contract(format!("{len} frames cannot fill a window of 2k+1 = {}", 2 * k + 1)));
    }
    if anchor < k || anchor + k >= len {
        return Err(VsrError::Contract(format!(
            "anchor {anchor} outside [{k}, {}] for {len} frames",
            len - k - 1
        )));
    }
    Ok(())
}

/// Recurrent sweep `t = k … a` over one window: every prediction replaces its
/// slot before the next window is assembled, so the anchor's context holds
/// prior predictions.
pub fn recurrent_rollout(model: &dyn WindowModel, lr: &[Frame], anchor: usize, align: &dyn Alignment) -> Result<Rollout> {
    let k = model.context_radius();
    check_anchor(lr.len(), k, anchor)?;
    let mut buffer = FrameBuffer::from_frames(lr)?;
    let sr_context = rollout_range(model, &mut buffer, k, anchor, align, true)?;
    let mut last = rollout_range(model, &mut buffer, anchor, anchor + 1, align, true)?;
    Ok(Rollout {
        sr_anchor: last.pop().expect("one anchor prediction"),
        sr_context,
        buffer,
    })
}

/// Same sweep with the buffer never updated (teacher forcing).
pub fn teacher_forced_rollout(
    model: &dyn WindowModel,
    lr: &[Frame],
    anchor: usize,
    align: &dyn Alignment,
) -> Result<Rollout> {
    let k = model.context_radius();
    check_anchor(lr.len(), k, anchor)?;
    let mut buffer = FrameBuffer::from_frames(lr)?;
    let mut outs = rollout_range(model, &mut buffer, k, anchor + 1, align, false)?;
    let sr_anchor = outs.pop().expect("one anchor prediction");
    Ok(Rollout {
        sr_anchor,
        sr_context: outs,
        buffer,
    })
}

/// Extra rows/columns needed to make `h×w` a multiple of `m`.
pub fn required_padding(h: usize, w: usize, m: usize) -> (usize, usize) {
    ((m - h % m) % m, (m - w % m) % m)
}

/// Sliding-window inference over a whole clip with edge-replicated windows.
pub fn infer_clip(model: &dyn WindowModel, lr: &VideoClip, align: &dyn Alignment, recurrent: bool) -> Result<VideoClip> {
    let mut buffer = FrameBuffer::from_frames(lr.frames())?;
    let outs = rollout_range(model, &mut buffer, 0, lr.len(), align, recurrent)?;
    let frames = outs.iter().map(Frame::from_tensor).collect::<Result<Vec<_>>>()?;
    VideoClip::new(frames, lr.fps(), lr.id())
}
