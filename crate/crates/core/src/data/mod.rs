//! Frames and clips, synthetic scene rendering, degradation and persistence.

mod dataset;
mod degrade;
mod frame;
pub mod io;
mod scene;

pub use dataset::{
    clip_dir_name, list_clip_dirs, load_dataset, load_training_clip, save_training_clip, TrainingClip,
};
pub use degrade::{degrade_clip, degrade_clip_with_params, DegradationConfig, DegradationParams};
pub use frame::{Frame, VideoClip};
pub use io::{load_clip, save_clip};
pub use scene::{generate_synthetic_clip, Occluder, Pattern, SceneSpec, SceneTemplate, Sprite, SyntheticClip};
