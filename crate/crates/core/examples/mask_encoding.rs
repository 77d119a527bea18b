//! Pack a binary mask into latent-grid channels and back, then predict
//! where the object lands after a zoom and shift.

use geoedit::camera::RelPoseDescriptor;
use geoedit::mask::{estimate_target_mask, pixel_shuffle_inverse, pixel_unshuffle, BinaryMaskVolume};

fn show(m: &BinaryMaskVolume) {
    for r in 0..m.height() {
        let row: String = (0..m.width()).map(|c| if m.get(0, r, c) == 1 { '#' } else { '.' }).collect();
        println!("  {row}");
    }
}

fn main() -> geoedit::Result<()> {
    let m = BinaryMaskVolume::from_fn(16, 16, |r, c| (4..9).contains(&r) && (3..10).contains(&c))?;
    println!("source mask ({} ones)", m.count_ones());
    show(&m);

    let code = pixel_unshuffle(&m, 4, 1)?;
    println!("code shape {:?}, {} ones", code.shape(), code.count_ones());
    assert_eq!(pixel_shuffle_inverse(&code)?, m);

    // Move right by a quarter frame and come closer (d 3.0 -> 2.0).
    let f = RelPoseDescriptor::from_array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0])?;
    let tgt = estimate_target_mask(&m, &f, 3.0, 2.0)?;
    println!("estimated target region");
    show(&tgt);
    Ok(())
}
