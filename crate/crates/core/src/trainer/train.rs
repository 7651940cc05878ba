use std::fmt;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    batch_objective, save_checkpoint, schedule_lr, sgd_step, Objective, OptimizerState, Schedule, TrainSample,
};
use crate::error::{Error, Result};
use crate::multibox::{AnchorSet, LossReport};
use crate::network::Network;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub batch_size: usize,
    pub objective: Objective,
    /// Mirror each sampled image with probability 1/2.
    pub flip: bool,
    /// Seeds batch order and augmentation.
    pub seed: u64,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(schedule: Schedule, seed: u64) -> Self {
        TrainConfig {
            schedule,
            batch_size: 8,
            objective: Objective::default(),
            flip: true,
            seed,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

/// One line of the loss trace: `iter lr L L_conf L_loc N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossReport,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:.6e} {:.9e} {:.9e} {:.9e} {}",
            self.iteration, self.lr, self.loss.total, self.loss.conf, self.loss.loc, self.loss.num_matched
        )
    }
}

/// Iterates an endless stream of shuffled epochs.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    flip: bool,
}

impl BatchSampler {
    fn new(n: usize, seed: u64, flip: bool) -> Self {
        BatchSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
            flip,
        }
    }

    fn next(&mut self, data: &[TrainSample], size: usize) -> Vec<TrainSample> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                let s = &data[self.order[self.pos]];
                self.pos += 1;
                if self.flip && self.rng.gen_bool(0.5) {
                    s.flipped()
                } else {
                    s.clone()
                }
            })
            .collect()
    }
}

/// Runs updates until `schedule.total`, calling `observe` with each trace
/// record. Stops with [`Error::Diverged`] on a non-finite loss.
pub fn train(
    net: &mut Network,
    anchors: &AnchorSet,
    data: &[TrainSample],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    observe: impl FnMut(&TraceRecord),
) -> Result<Vec<TraceRecord>> {
    train_until(net, anchors, data, cfg, state, cfg.schedule.total, observe)
}

/// Like [`train`] but pauses once `state.iteration` reaches `stop`; calling
/// it again with a later `stop` continues the same run.
pub fn train_until(
    net: &mut Network,
    anchors: &AnchorSet,
    data: &[TrainSample],
    cfg: &TrainConfig,
    state: &mut OptimizerState,
    stop: usize,
    mut observe: impl FnMut(&TraceRecord),
) -> Result<Vec<TraceRecord>> {
    if data.is_empty() {
        return Err(Error::invalid("train", "empty dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("train", "batch size must be positive"));
    }
    cfg.schedule.validate()?;
    let mut sampler = BatchSampler::new(data.len(), cfg.seed, cfg.flip);
    // replay the sampler so resumed runs see the same batches
    for _ in 0..state.iteration {
        sampler.next(data, cfg.batch_size);
    }
    let stop = stop.min(cfg.schedule.total);
    let mut trace = Vec::with_capacity(stop.saturating_sub(state.iteration));
    while state.iteration < stop {
        let it = state.iteration;
        let batch = sampler.next(data, cfg.batch_size);
        let (loss, grads) = batch_objective(net, anchors, &batch, &cfg.objective)?;
        if !loss.total.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                loss: loss.total,
            });
        }
        let lr = schedule_lr(&cfg.schedule, it);
        sgd_step(net.params_mut(), &grads, state, lr)?;
        let rec = TraceRecord {
            iteration: it,
            lr,
            loss,
        };
        observe(&rec);
        trace.push(rec);
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if every > 0 && state.iteration.is_multiple_of(every) {
                save_checkpoint(dir, net, state)?;
            }
        }
    }
    Ok(trace)
}
