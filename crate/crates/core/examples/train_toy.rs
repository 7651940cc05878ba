//! A short from-scratch run of the scaled-down MDCN-I2 on synthetic scenes,
//! followed by evaluation on a held-out split.
//!
//! `cargo run --release --example train_toy -- 300` sets the iteration count.

use mdcn::kitti::{evaluate_model, EvalSample, NetworkDetector};
use mdcn::multibox::{anchors_for_graph, AnchorConfig, DetectConfig};
use mdcn::netbuilder::{assemble, ModelConfig, Variant};
use mdcn::network::Network;
use mdcn::trainer::{make_synthetic_dataset, train, OptimizerState, Schedule, TrainConfig, TrainSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> mdcn::Result<()> {
    let iterations: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let size = 150;
    let train_set: Vec<TrainSample> = make_synthetic_dataset(1, 200, size)?
        .iter()
        .map(|s| s.to_sample())
        .collect();
    let val: Vec<EvalSample> = make_synthetic_dataset(2, 50, size)?
        .into_iter()
        .enumerate()
        .map(|(i, s)| EvalSample {
            id: i.to_string(),
            labels: s.ground_truth(),
            image: s.image,
        })
        .collect();

    let mut net = Network::new(assemble(&ModelConfig::toy(Variant::MdcnI2, size))?)?;
    net.init_he(&mut ChaCha8Rng::seed_from_u64(3));
    let anchors = anchors_for_graph(net.graph(), &AnchorConfig::default())?;
    let schedule = Schedule::scaled(4e-4, iterations)?.with_warmup((iterations / 6).max(1))?;
    let cfg = TrainConfig::new(schedule, 4);
    let mut state = OptimizerState::with_defaults(net.params());

    train(&mut net, &anchors, &train_set, &cfg, &mut state, |r| {
        if r.iteration % 25 == 0 {
            println!("{r}");
        }
    })?;

    let det = NetworkDetector::new(net, &AnchorConfig::default(), DetectConfig::default())?;
    print!("{}", evaluate_model(&det, &val, 0.5)?.to_text());
    Ok(())
}
