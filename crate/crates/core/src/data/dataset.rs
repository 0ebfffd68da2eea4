use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{load_flows, load_masks, save_flows, save_masks, write_json};
use super::{degrade_clip_with_params, generate_synthetic_clip, load_clip, save_clip};
use super::{DegradationConfig, DegradationParams, SceneSpec, VideoClip};
use crate::error::{Result, VsrError};
use crate::flow::{FlowField, VisibilityMask};

/// An HR clip, its degraded LR counterpart and ground-truth motion on the HR
/// grid. `flows_fwd[i]` lives on frame `i` and points into `i+1`;
/// `flows_bwd[i]` lives on frame `i+1` and points into `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingClip {
    pub hr: VideoClip,
    pub lr: VideoClip,
    pub flows_fwd: Vec<FlowField>,
    pub flows_bwd: Vec<FlowField>,
    pub vis_fwd: Vec<VisibilityMask>,
    pub vis_bwd: Vec<VisibilityMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClipRecord {
    scene: SceneSpec,
    degradation: DegradationParams,
}

impl TrainingClip {
    /// Renders `spec` and degrades it.
    pub fn synthesize(spec: &SceneSpec, degradation: &DegradationConfig) -> Result<(Self, DegradationParams)> {
        let syn = generate_synthetic_clip(spec)?;
        let (lr, params) = degrade_clip_with_params(&syn.clip, degradation)?;
        Ok((
            Self {
                hr: syn.clip,
                lr,
                flows_fwd: syn.forward_flows,
                flows_bwd: syn.gt_flows,
                vis_fwd: syn.forward_visibility,
                vis_bwd: syn.gt_visibility,
            },
            params,
        ))
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    pub fn id(&self) -> &str {
        self.hr.id()
    }

    fn check(&self) -> Result<()> {
        let n = self.hr.len();
        if self.lr.len() != n {
            return Err(VsrError::Contract(format!("{} HR frames but {} LR frames", n, self.lr.len())));
        }
        let pairs = n.saturating_sub(1);
        for (name, len) in [
            ("flow_fwd", self.flows_fwd.len()),
            ("flow_bwd", self.flows_bwd.len()),
            ("vis_fwd", self.vis_fwd.len()),
            ("vis_bwd", self.vis_bwd.len()),
        ] {
            if len != pairs {
                return Err(VsrError::Contract(format!("{name} holds {len} entries, expected {pairs}")));
            }
        }
        Ok(())
    }
}

/// Writes `hr/`, `lr/`, `flow_fwd/`, `flow_bwd/`, `vis_fwd/`, `vis_bwd/` and
/// `scene.json` under `dir`.
pub fn save_training_clip(dir: &Path, clip: &TrainingClip, spec: &SceneSpec, params: &DegradationParams) -> Result<()> {
    clip.check()?;
    save_clip(&clip.hr, &dir.join("hr"))?;
    save_clip(&clip.lr, &dir.join("lr"))?;
    save_flows(&dir.join("flow_fwd"), &clip.flows_fwd)?;
    save_flows(&dir.join("flow_bwd"), &clip.flows_bwd)?;
    save_masks(&dir.join("vis_fwd"), &clip.vis_fwd)?;
    save_masks(&dir.join("vis_bwd"), &clip.vis_bwd)?;
    write_json(
        &dir.join("scene.json"),
        &ClipRecord {
            scene: spec.clone(),
            degradation: *params,
        },
    )
}

pub fn load_training_clip(dir: &Path) -> Result<TrainingClip> {
    let clip = TrainingClip {
        hr: load_clip(&dir.join("hr"))?,
        lr: load_clip(&dir.join("lr"))?,
        flows_fwd: load_flows(&dir.join("flow_fwd"))?,
        flows_bwd: load_flows(&dir.join("flow_bwd"))?,
        vis_fwd: load_masks(&dir.join("vis_fwd"))?,
        vis_bwd: load_masks(&dir.join("vis_bwd"))?,
    };
    clip.check()?;
    Ok(clip)
}

/// Sorted `clip_*` subdirectories of a dataset root.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(VsrError::Config(format!("dataset directory {} does not exist", root.display())));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| VsrError::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("clip_")))
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn clip_dir_name(i: usize) -> String {
    format!("clip_{i:03}")
}

pub fn load_dataset(root: &Path) -> Result<Vec<TrainingClip>> {
    list_clip_dirs(root)?.iter().map(|d| load_training_clip(d)).collect()
}
