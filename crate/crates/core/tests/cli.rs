use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use geoedit::camera::EulerCamera;
use geoedit::cli::substream_seed;
use geoedit::flow::{load_checkpoint, NetConfig, VelocityNet};
use geoedit::mask::BinaryMaskVolume;
use geoedit::mesh::{PrimitiveKind, PrimitiveSpec};
use geoedit::raster::render_hard;
use geoedit::synth::{read_manifest, MANIFEST_NAME};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn geoedit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_geoedit"))
        .args(args)
        .env_remove("GEOEDIT_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(path: &Path, value: serde_json::Value) -> PathBuf {
    fs::write(path, value.to_string()).unwrap();
    path.to_path_buf()
}

fn small_data(dir: &Path, count: usize) -> PathBuf {
    let cfg = write(&dir.join("gen.json"), json!({"count": count, "height": 16, "width": 16}));
    let data = dir.join("data");
    let o = geoedit(&["gen-data", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    data
}

fn small_net_config(dir: &Path, steps: usize) -> PathBuf {
    write(
        &dir.join("train.json"),
        json!({
            "net": {"image_size": 16, "ref_size": 32, "stride": 4, "width": 8, "hidden": 8,
                    "blocks": 1, "token_dim": 4, "pose_freqs": 2, "time_freqs": 2},
            "train": {"steps": steps, "batch_size": 2, "log_every": 0}
        }),
    )
}

#[test]
fn gen_data_writes_manifest_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(&dir.path().join("gen.json"), json!({"height": 32, "width": 32}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = geoedit(&["gen-data", "--config", s(&cfg), "--count", "10", "--seed", "1", "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).trim().ends_with(MANIFEST_NAME));
    }
    assert_eq!(read_manifest(&a.join(MANIFEST_NAME)).unwrap().len(), 10);
    assert!(a.join("effective-config-gen-data.json").is_file());
    for entry in walk(&a) {
        let rel = entry.strip_prefix(&a).unwrap();
        assert_eq!(fs::read(&entry).unwrap(), fs::read(b.join(rel)).unwrap(), "{}", rel.display());
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn invalid_config_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        &dir.path().join("bad.json"),
        json!({"source": {"yaw": [-3.0, 3.0], "pitch": [0.5, 0.1], "d": [2.5, 4.0], "rx": [-0.2, 0.2], "ry": [-0.2, 0.2]}}),
    );
    let o = geoedit(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pitch"), "{}", stderr(&o));

    let cfg = write(&dir.path().join("unknown.json"), json!({"colour": 1}));
    let o = geoedit(&["gen-data", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn stage_two_requires_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 2);
    let o = geoedit(&["train", "--data", s(&data), "--stage", "2", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn zero_step_training_saves_the_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 2);
    let cfg = small_net_config(dir.path(), 0);
    let out = dir.path().join("run");
    let o = geoedit(&["train", "--config", s(&cfg), "--data", s(&data), "--seed", "9", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let saved = load_checkpoint(&out.join("checkpoint.bin")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(9, "init"));
    let init = VelocityNet::<f32>::init(&saved.cfg, &mut rng).unwrap();
    assert_eq!(saved, init);
    assert_eq!(saved.cfg, NetConfig { image_size: 16, width: 8, hidden: 8, blocks: 1, token_dim: 4, pose_freqs: 2, time_freqs: 2, ..NetConfig::default() });
}

#[test]
fn train_sample_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 3);
    let cfg = small_net_config(dir.path(), 5);
    let run = dir.path().join("run");
    let o = geoedit(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.join("loss.csv").is_file());
    let ckpt = run.join("checkpoint.bin");

    // Stage 2 from the stage-1 checkpoint.
    let run2 = dir.path().join("run2");
    let o = geoedit(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--stage", "2", "--init-checkpoint", s(&ckpt), "--out", s(&run2),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    for (task, pose_null) in [("manipulate", false), ("removal", false), ("inpaint", false)] {
        let out = dir.path().join(task);
        let o = geoedit(&[
            "sample", "--checkpoint", s(&ckpt), "--data", s(&data), "--task", task, "--steps", "2", "--out", s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("samples/000000.json")).unwrap()).unwrap();
        assert_eq!(side["pose"].is_null(), pose_null);
        match task {
            "removal" => {
                assert_eq!(side["tgt_mask_ones"], 0);
                assert_eq!(side["pose"][6], 2.0);
            }
            "inpaint" => assert_eq!(side["src_mask_ones"], 0),
            _ => assert!(side["tgt_mask_ones"].as_u64().unwrap() > 0),
        }
    }

    let samples = dir.path().join("manipulate/samples");
    let report = dir.path().join("report");
    let o = geoedit(&["eval", "--data", s(&data), "--outputs", s(&samples), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(report.join("report.json").is_file());
    let csv = fs::read_to_string(report.join("per_sample.csv")).unwrap();
    assert!(csv.starts_with("id,psnr_db,iou,mape,ape_yaw,ape_pitch,ape_d,ape_rx,ape_ry"));
    assert_eq!(csv.lines().count(), 4);

    fs::remove_file(samples.join("000001.ppm")).unwrap();
    let o = geoedit(&["eval", "--data", s(&data), "--outputs", s(&samples), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).contains("000001"), "{}", stderr(&o));
}

#[test]
fn incompatible_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 1);
    let bogus = dir.path().join("bogus.bin");
    fs::write(&bogus, b"not a checkpoint").unwrap();
    let o = geoedit(&["sample", "--checkpoint", s(&bogus), "--data", s(&data), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn eval_of_empty_manifest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path(), 0);
    let o = geoedit(&["eval", "--data", s(&data), "--outputs", s(dir.path()), "--out", s(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn estimate_pose_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let spec = PrimitiveSpec::new(PrimitiveKind::Box, &[0.9, 0.6, 0.5], 1);
    let mesh = spec.build().unwrap();
    let obj = dir.path().join("box.obj");
    mesh.save_obj(&obj).unwrap();
    let cam = EulerCamera::new(0.7, 0.3, 3.0, 0.1, -0.05).unwrap();
    let mask = render_hard(&mesh, &cam, 64, 64).unwrap().threshold(0.5);
    mask.save(dir.path(), "mask").unwrap();

    let o = geoedit(&["estimate-pose", "--mesh", s(&obj), "--mask", s(&dir.path().join("mask.pgm")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let est: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert!(est["iou"].as_f64().unwrap() >= 0.9);

    BinaryMaskVolume::zeros(1, 64, 64).unwrap().save(dir.path(), "blank").unwrap();
    let o = geoedit(&["estimate-pose", "--mesh", s(&obj), "--mask", s(&dir.path().join("blank.pgm")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(5));

    BinaryMaskVolume::ones(1, 64, 64).unwrap().save(dir.path(), "full").unwrap();
    let cfg = write(&dir.path().join("fast.json"), json!({"starts": 2, "max_iters": 40}));
    let o = geoedit(&[
        "estimate-pose", "--config", s(&cfg), "--mesh", s(&obj), "--mask", s(&dir.path().join("full.pgm")), "--out", s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let est: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(est["converged"], false);
}
