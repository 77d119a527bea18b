//! Score edited images against ground truth: PSNR, object IoU and pose
//! error after re-estimating the camera from the output silhouette.
//!
//! Without a trained model at hand this scores two stand-ins: the true
//! target (an upper bound) and the unedited source (the do-nothing edit).

use geoedit::metrics::{evaluate_output, EvalConfig, Summary};
use geoedit::synth::{generate_pairs, GenerationConfig};

fn main() -> geoedit::Result<()> {
    let pairs = generate_pairs(&GenerationConfig { count: 6, ..Default::default() }, 99)?;
    let cfg = EvalConfig::default();
    let mut rows = [Vec::new(), Vec::new()];
    for p in &pairs {
        for (k, img) in [&p.x_tgt, &p.x_src].into_iter().enumerate() {
            let m = evaluate_output(p, img, &cfg)?;
            println!(
                "{} {:<6} psnr {:5.1}  iou {:.2}  mape {}",
                m.id,
                ["target", "source"][k],
                m.psnr_db,
                m.iou,
                m.pose.map(|e| format!("{:.1}", e.mape)).unwrap_or_else(|| "-".into())
            );
            if let Some(e) = m.pose {
                rows[k].push(e.mape);
            }
        }
    }
    println!("mape target {:?}", Summary::of(&rows[0]));
    println!("mape source {:?}", Summary::of(&rows[1]));
    Ok(())
}
