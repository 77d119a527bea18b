mod common;

use common::{probe_batch, worst_gradient_error};
use geoedit::flow::{NetConfig, VelocityNet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn analytic_gradient_matches_central_differences() {
    let worst = worst_gradient_error(11);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
}

#[test]
fn fresh_network_ignores_the_condition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = NetConfig::probe();
    let net = VelocityNet::<f64>::init(&cfg, &mut rng).unwrap();
    let batch = probe_batch(&cfg, &mut rng);
    let zt = batch[0].sample.zt.to_rows::<f64>();
    let a = net.prepare(&batch[0].cond).unwrap();
    let b = net.prepare(&batch[1].cond).unwrap();
    assert_eq!(net.forward(&zt, 0.4, &a).0, net.forward(&zt, 0.4, &b).0);
}
