//! Hard and soft silhouettes of a primitive, written as PGM files.
//!
//! `cargo run --release --example silhouette_render -- out_dir`

use std::path::PathBuf;

use geoedit::camera::EulerCamera;
use geoedit::mesh::{PrimitiveKind, PrimitiveSpec};
use geoedit::raster::{render_hard, render_soft};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "silhouettes".into()));
    std::fs::create_dir_all(&dir)?;

    let mesh = PrimitiveSpec::new(PrimitiveKind::Capsule, &[0.35, 0.8], 2).build()?;
    let cam = EulerCamera::new(0.6, 0.4, 3.0, 0.0, 0.0)?;

    let hard = render_hard(&mesh, &cam, 128, 128)?;
    hard.save_pgm(&dir.join("hard.pgm"))?;
    println!("hard area {:.0} px", hard.area());
    for sigma in [0.05, 0.02, 0.005] {
        let soft = render_soft(&mesh, &cam, 128, 128, sigma)?;
        soft.save_pgm(&dir.join(format!("soft_{sigma}.pgm")))?;
        println!("sigma {sigma:<6} soft area {:.1} px", soft.area());
    }
    println!("wrote {}", dir.display());
    Ok(())
}
