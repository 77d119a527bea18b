//! Write a small synthetic dataset of source/target render pairs.
//!
//! `cargo run --release --example synth_pairs -- out_dir 12`

use std::path::PathBuf;

use geoedit::synth::{build_dataset, read_manifest, GenerationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "toy_pairs".into()));
    let count = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);

    let cfg = GenerationConfig { count, ..Default::default() };
    let manifest = build_dataset(&root, &cfg, 42)?;
    for rec in read_manifest(&manifest)? {
        println!("{}", serde_json::to_string(&rec)?);
    }
    println!("manifest at {}", manifest.display());
    Ok(())
}
