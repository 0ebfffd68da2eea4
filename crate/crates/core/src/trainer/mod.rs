//! Recurrent rollout, alternating generator/discriminator optimisation and
//! the checkpointed training loop.

mod config;
mod rollout;
mod state;

pub use config::{lr_at, Ablation, AnchorPolicy, TrainConfig};
pub use rollout::{
    check_anchor, infer_clip, recurrent_rollout, required_padding, rollout_range, rollout_step, teacher_forced_rollout,
    window_indices, Alignment, ClipFlows, FlowAlignment, FrameBuffer, NoAlignment, Rollout, SlotOrigin,
};
pub use state::{
    checkpoint_name, discriminator_phase, generator_phase, prepare_clip, train, train_step, GeneratorPhase, MetricsRecord,
    PreparedClip, StepReport, TrainState, TrainSummary, UpdateCounters,
    WindowSample,
};
