#![allow(dead_code)]

use geoedit::camera::RelPoseDescriptor;
use geoedit::conditioning::{assemble_from_view, toy_encode, ConditioningTuple, PairView, PoseCondition, Task};
use geoedit::flow::{batch_gradients, make_flow_sample, NetConfig, TrainingExample, VelocityNet};
use geoedit::imageio::RgbImage;
use geoedit::mask::BinaryMaskVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_image(n: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_vec(n, n, (0..n * n * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

pub fn probe_batch(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Vec<TrainingExample> {
    let n = cfg.image_size;
    let mut out = Vec::new();
    for (k, task) in [Task::Main, Task::Removal, Task::Inpaint].into_iter().enumerate() {
        let x_src = random_image(n, rng);
        let i_ref = random_image(cfg.ref_size, rng);
        let x_bg = random_image(n, rng);
        let m_src = BinaryMaskVolume::from_fn(n, n, |r, c| (r + c + k) % 3 == 0).unwrap();
        let f = RelPoseDescriptor::from_array([0.2, -0.1, 0.3, 0.1, -0.2, 0.4, 0.1, -0.05]).unwrap();
        let view = PairView {
            x_src: &x_src,
            i_ref: &i_ref,
            x_bg: Some(&x_bg),
            m_src: &m_src,
            f: &f,
            d_src: 3.0,
            d_tgt: 2.5,
        };
        let mut cond: ConditioningTuple = assemble_from_view(view, task, cfg.strides()).unwrap();
        if k == 2 {
            cond.pose = PoseCondition::Null;
        }
        let z0 = toy_encode(&random_image(n, rng), cfg.stride).unwrap();
        let t = 0.2 + 0.3 * k as f64;
        let sample = make_flow_sample(&z0, rng, t).unwrap();
        out.push(TrainingExample { cond, sample });
    }
    out
}

pub fn randomized_probe(rng: &mut ChaCha8Rng) -> VelocityNet<f64> {
    let cfg = NetConfig::probe();
    let mut net = VelocityNet::<f64>::init(&cfg, rng).unwrap();
    // Every tensor gets a random perturbation so no path is dead at the
    // zero-initialised injections and biases.
    for (_, _, v) in net.tensors_mut() {
        for x in v.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut *rng);
            *x += 0.3 * z;
        }
    }
    net
}

/// Worst relative error between analytic and central-difference gradients
/// over every parameter of a randomized probe network.
pub fn worst_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = randomized_probe(&mut rng);
    let batch = probe_batch(&net.cfg, &mut rng);
    let (_, _, mut grad) = batch_gradients(&net, &batch).unwrap();
    let analytic: Vec<f64> = grad.tensors_mut().into_iter().flat_map(|(_, _, v)| v.clone()).collect();

    // Fourth-order central stencil: small truncation error at a step large
    // enough that roundoff stays well below the tiniest gradients.
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let n_tensors = net.clone().tensors_mut().len();
    for ti in 0..n_tensors {
        let len = net.clone().tensors_mut()[ti].2.len();
        for j in 0..len {
            let loss_at = |delta: f64| {
                let mut moved = net.clone();
                moved.tensors_mut()[ti].2[j] += delta;
                batch_gradients(&moved, &batch).unwrap().0
            };
            let fd = (8.0 * (loss_at(h) - loss_at(-h)) - (loss_at(2.0 * h) - loss_at(-2.0 * h))) / (12.0 * h);
            let a = analytic[idx];
            let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-6);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    assert_eq!(idx, analytic.len());
    worst
}
