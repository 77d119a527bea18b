//! Relative camera motion between two look-at views, and the 8-value
//! descriptor that conditions the generator on it.

use geoedit::camera::{build_descriptor, build_outofframe_descriptor, camera_position, EulerCamera};

fn main() -> geoedit::Result<()> {
    let src = EulerCamera::new(0.3, 0.25, 3.0, 0.0, 0.0)?;
    let tgt = EulerCamera::new(0.9, 0.10, 2.6, 0.1, -0.05)?;

    println!("source centre {:?}", camera_position(&src).as_slice());
    println!("target centre {:?}", camera_position(&tgt).as_slice());

    let f = build_descriptor(&src, &tgt)?;
    println!("descriptor      {:?}", f.to_array());
    println!("rotation angle  {:.4} rad", f.aa.angle());
    println!("identity        {:?}", build_descriptor(&src, &src)?.to_array());

    let gone = build_outofframe_descriptor(&src);
    println!("removal sentinel {:?} (in frame: {})", gone.to_array(), gone.is_in_frame());
    Ok(())
}
