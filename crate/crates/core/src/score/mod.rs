//! Score functions: exact toy oracles, the trainable network, and the
//! constrained denoising score matching objective.

pub mod checkpoint;
pub mod network;
pub mod toy;
pub mod train;

pub use checkpoint::Checkpoint;
pub use network::{NetworkArch, ScoreNetwork};
pub use toy::{ExactScore, MixtureComponent, TwoClassMixture, ToyDistribution};
pub use train::{
    cdsm_loss, draw_loss_samples, ema_update, loss_and_grad, make_simplex_dataset, train,
    train_step, Adam, LossPoint, LossSample, TrainConfig, TrainRun,
};
