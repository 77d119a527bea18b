//! The three training tasks built from one synthetic pair, and the
//! geometry-aligned source the network sees alongside them.

use geoedit::conditioning::{align_source, assemble_conditioning, PoseCondition, Task};
use geoedit::synth::{generate_pair, GenerationConfig};

fn main() -> geoedit::Result<()> {
    let pair = generate_pair(&GenerationConfig::default(), 1, 0)?;
    let strides = Default::default();
    println!("pair {} ({:?}), source {:?}", pair.id, pair.scene.spec.kind, pair.s_src.to_array());

    for task in Task::ALL {
        let cond = assemble_conditioning(&pair, task, strides)?;
        let pose = match cond.pose {
            PoseCondition::Descriptor(f) => format!("{:.3?}", f.to_array()),
            PoseCondition::Null => "null".into(),
        };
        let aligned = align_source(&cond, strides)?;
        println!("{task:?}");
        println!("  latent {:?}  ref {:?}", cond.src_latent.shape(), cond.ref_latent.shape());
        println!(
            "  source code ones {}  target code ones {}  aligned mask ones {}",
            cond.src_mask_code.count_ones(),
            cond.tgt_mask_code.count_ones(),
            aligned.mask_code.count_ones()
        );
        println!("  pose {pose}");
    }
    Ok(())
}
