//! Train a small velocity network on synthetic pairs and save it.
//!
//! `cargo run --release --example train_toy -- 400 model.bin`

use std::time::Instant;

use geoedit::flow::{save_checkpoint, step_means, train, NetConfig, TrainConfig, TrainPair, VelocityNet};
use geoedit::synth::{generate_pairs, GenerationConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);
    let out = args.next().unwrap_or_else(|| "model.bin".into());

    let pairs = generate_pairs(&GenerationConfig { count: 200, ..Default::default() }, 7)?;
    let data: Vec<TrainPair> = pairs.iter().map(TrainPair::from).collect();

    let mut net = VelocityNet::<f32>::init(&NetConfig::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    println!("{} parameters", net.num_params());
    let cfg = TrainConfig { steps, log_every: 0, ..Default::default() };

    let t0 = Instant::now();
    let means = step_means(&train(&mut net, &data, &cfg)?);
    for (i, m) in means.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>5}  loss {m:.4}");
    }
    println!("trained in {:.1?}", t0.elapsed());
    save_checkpoint(&net, std::path::Path::new(&out))?;
    println!("saved {out}");
    Ok(())
}
