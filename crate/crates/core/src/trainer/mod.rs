//! SGD training: optimizer, schedule, objective, gradient checks, the
//! synthetic dataset, checkpoints and the training loop.

mod checkpoint;
mod gradcheck;
mod objective;
mod optimizer;
mod schedule;
mod synthetic;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{
    check_gradient, grad_check_network, gradcheck_batch, gradcheck_network, relative_error, tiny_network_graph,
    GradCheckReport, DEFAULT_STEP, RELATIVE_FLOOR,
};
pub use objective::{assign, batch_loss, batch_objective, image_objective, Objective, TrainSample};
pub use optimizer::{sgd_step, OptimizerState, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
pub use schedule::{schedule_lr, Schedule, REFERENCE_MILESTONES, REFERENCE_TOTAL};
pub use synthetic::{difficulty_share, make_synthetic_dataset, SceneObject, SyntheticScene, MIN_SCENE_SIZE};
pub use train::{train, train_until, TraceRecord, TrainConfig};

use crate::error::{Error, Result};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MDCN_THREADS";

/// A rayon pool sized by `MDCN_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
