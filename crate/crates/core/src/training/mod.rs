//! Losses, the per-sample objective, AdamW, the training loop, checkpoints and
//! finetuning with an appended task-aware block.

pub mod check;
pub mod checkpoint;
pub mod losses;
pub mod objective;
pub mod optim;
pub mod trainer;

pub use check::{model_grad_check, GradSuiteOptions};
pub use checkpoint::{finetune, load_checkpoint, save_checkpoint, CheckpointManifest};
pub use losses::{
    bce, loss_angle, loss_dis, loss_int, loss_reg, loss_total, sum_squares, LossParts,
};
pub use objective::{sample_objective, vlb_explicit_sum, Objective};
pub use optim::AdamW;
pub use trainer::{train, train_step, EpochRecord, TrainReport};
