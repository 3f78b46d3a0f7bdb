//! Training loop, adversarial losses, and the portable checkpoint format.

mod checkpoint;
mod losses;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ArrayEntry, CheckpointManifest, CHECKPOINT_VERSION,
};
pub use losses::{gan_d_loss, gan_g_loss, LossBundle};
pub use trainer::{
    generate_frames, stack_real_frames, train, StepMetrics, TrainReport, Trainer,
};
