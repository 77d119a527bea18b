//! `geoedit` command line: gen-data, train, sample, estimate-pose, eval.
//!
//! Exit codes: 0 success, 1 pose fit below threshold, 2 invalid config,
//! 3 stage II without an initial checkpoint, 4 incompatible checkpoint,
//! 5 empty mask, 6 missing outputs, 7 I/O or file-format error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::{assemble_conditioning, toy_decode, PoseCondition, Task};
use crate::error::Error;
use crate::flow::{
    euler_sample, load_checkpoint, save_checkpoint, train, write_loss_trace, Guided, NetConfig, Stage, TrainConfig,
    TrainPair, VelocityNet,
};
use crate::imageio::write_json;
use crate::mask::BinaryMaskVolume;
use crate::mesh::TriangleMesh;
use crate::metrics::{eval_records, write_report, EvalConfig};
use crate::pose::{estimate_camera, EstimatorConfig};
use crate::raster::SilhouetteImage;
use crate::synth::{build_dataset, load_pair, read_manifest, GenerationConfig, MANIFEST_NAME};

#[derive(Debug, Parser)]
#[command(name = "geoedit", version, about = "Geometry-aware object editing on toy scenes")]
pub struct Cli {
    /// JSON config for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output root.
    #[arg(long, global = true, env = "GEOEDIT_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Manipulate,
    Removal,
    Inpaint,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Manipulate => Task::Main,
            TaskArg::Removal => Task::Removal,
            TaskArg::Inpaint => Task::Inpaint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1", alias = "I")]
    One,
    #[value(name = "2", alias = "II")]
    Two,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic pair dataset.
    GenData {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the velocity network on a dataset.
    Train {
        /// Dataset root (directory holding the manifest).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage: Option<StageArg>,
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint to start from; required for stage 2.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Generate target frames for dataset entries.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        guidance: Option<f64>,
        /// Restrict to these pair ids.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<usize>,
    },
    /// Fit a camera to a binary mask of a known mesh.
    EstimatePose {
        /// Wavefront OBJ.
        #[arg(long)]
        mesh: PathBuf,
        /// Binary PGM mask.
        #[arg(long)]
        mask: PathBuf,
    },
    /// Score generated frames against a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Directory of `{id}.ppm` outputs.
        #[arg(long)]
        outputs: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub task: Task,
    pub steps: usize,
    pub guidance: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            task: Task::Main,
            steps: 20,
            guidance: 1.5,
        }
    }
}

/// A failed run: process exit code plus diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } | Error::BadRanges(_) | Error::BadParams(_) | Error::ShapeMismatch(_) => 2,
            Error::IncompatibleCheckpoint(_) => 4,
            Error::EmptyTarget => 5,
            Error::MissingOutput(_) => 6,
            Error::Io { .. } | Error::Format { .. } | Error::Json(_) | Error::InvalidMask(_) | Error::InvalidMesh(_) => 7,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Seed of the named sub-stream of `seed`.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::io(path, e)))?;
    serde_json::from_str(&text).map_err(|e| {
        Failure::from(Error::config(
            "config",
            format!("{}: {e}", path.display()),
        ))
    })
}

fn echo_config<T: Serialize>(out: &Path, command: &str, seed: u64, cfg: &T) -> CliResult<()> {
    #[derive(Serialize)]
    struct Echo<'a, T> {
        command: &'a str,
        seed: u64,
        config: &'a T,
    }
    let path = out.join(format!("effective-config-{command}.json"));
    write_json(&path, &Echo { command, seed, config: cfg })?;
    Ok(())
}

/// Parse arguments, run, and return the process exit code.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn run(cli: &Cli) -> CliResult<i32> {
    if let Some(n) = cli.threads {
        // Fails only if the pool is already built, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let cfg_path = cli.config.as_deref();
    match &cli.command {
        Command::GenData { count } => {
            let mut cfg: GenerationConfig = load_config(cfg_path)?;
            if let Some(n) = count {
                cfg.count = *n;
            }
            cfg.validate()?;
            fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
            echo_config(&cli.out, "gen-data", cli.seed, &cfg)?;
            let manifest = build_dataset(&cli.out, &cfg, cli.seed)?;
            log::info!("wrote {} pairs", cfg.count);
            println!("{}", manifest.display());
            Ok(0)
        }
        Command::Train {
            data,
            stage,
            steps,
            init_checkpoint,
        } => {
            let mut cfg: TrainRunConfig = load_config(cfg_path)?;
            if let Some(s) = stage {
                cfg.train.stage = match s {
                    StageArg::One => Stage::One,
                    StageArg::Two => Stage::Two,
                };
            }
            if let Some(n) = steps {
                cfg.train.steps = *n;
            }
            cfg.train.seed = substream_seed(cli.seed, "train");
            cfg.net.validate()?;
            cfg.train.validate()?;
            if cfg.train.stage == Stage::Two && init_checkpoint.is_none() {
                return Err(Failure {
                    code: 3,
                    message: "stage 2 freezes the backbone and needs --init-checkpoint".into(),
                });
            }
            let mut net = match init_checkpoint {
                Some(p) => {
                    let net = load_checkpoint(p)?;
                    if net.cfg != cfg.net {
                        log::warn!("network config taken from {}", p.display());
                        cfg.net = net.cfg.clone();
                    }
                    net
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cli.seed, "init"));
                    VelocityNet::init(&cfg.net, &mut rng)?
                }
            };
            let records = read_manifest(&data.join(MANIFEST_NAME))?;
            let pairs = records
                .iter()
                .map(|r| load_pair(data, r).map(|p| TrainPair::from(&p)))
                .collect::<crate::Result<Vec<_>>>()?;
            fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
            echo_config(&cli.out, "train", cli.seed, &cfg)?;
            let trace = train(&mut net, &pairs, &cfg.train)?;
            let ckpt = cli.out.join("checkpoint.bin");
            save_checkpoint(&net, &ckpt)?;
            write_loss_trace(&cli.out.join("loss.csv"), &trace)?;
            println!("{}", ckpt.display());
            Ok(0)
        }
        Command::Sample {
            checkpoint,
            data,
            task,
            steps,
            guidance,
            ids,
        } => {
            let mut cfg: SampleConfig = load_config(cfg_path)?;
            if let Some(t) = task {
                cfg.task = (*t).into();
            }
            if let Some(n) = steps {
                cfg.steps = *n;
            }
            if let Some(g) = guidance {
                cfg.guidance = *g;
            }
            if cfg.steps == 0 {
                return Err(Error::config("steps", "must be >= 1").into());
            }
            if !cfg.guidance.is_finite() {
                return Err(Error::config("guidance", "must be finite").into());
            }
            let net = load_checkpoint(checkpoint)?;
            let records = read_manifest(&data.join(MANIFEST_NAME))?;
            let dir = cli.out.join("samples");
            fs::create_dir_all(&dir).map_err(|e| Failure::from(Error::io(&dir, e)))?;
            echo_config(&cli.out, "sample", cli.seed, &cfg)?;
            let base = substream_seed(cli.seed, "sample");
            let field = Guided {
                field: &net,
                scale: cfg.guidance,
            };
            for rec in records.iter().filter(|r| ids.is_empty() || ids.contains(&r.id)) {
                let pair = load_pair(data, rec)?;
                let cond = assemble_conditioning(&pair, cfg.task, net.cfg.strides())?;
                let mut rng = ChaCha8Rng::seed_from_u64(base);
                rng.set_stream(rec.id as u64);
                let z = euler_sample(&field, &cond, cfg.steps, &mut rng)?;
                let mut img = toy_decode(&z, net.cfg.stride)?;
                img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                let path = dir.join(format!("{:06}.ppm", rec.id));
                img.save_ppm(&path)?;
                let pose = match cond.pose {
                    PoseCondition::Descriptor(f) => Some(f.to_array()),
                    PoseCondition::Null => None,
                };
                let sidecar = serde_json::json!({
                    "id": rec.id,
                    "task": cfg.task,
                    "steps": cfg.steps,
                    "guidance": cfg.guidance,
                    "pose": pose,
                    "src_mask_ones": cond.src_mask_code.count_ones(),
                    "tgt_mask_ones": cond.tgt_mask_code.count_ones(),
                });
                write_json(&dir.join(format!("{:06}.json", rec.id)), &sidecar)?;
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::EstimatePose { mesh, mask } => {
            let cfg: EstimatorConfig = load_config(cfg_path)?;
            cfg.validate()?;
            let mesh = TriangleMesh::load_obj(mesh)?;
            let mask = BinaryMaskVolume::load_pgm(mask)?;
            let target = SilhouetteImage::from_mask(&mask, 0);
            let est = estimate_camera(&mesh, &target, &cfg)?;
            fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
            echo_config(&cli.out, "estimate-pose", cli.seed, &cfg)?;
            println!("{}", serde_json::to_string(&est).map_err(|e| Failure::from(Error::from(e)))?);
            if est.converged {
                Ok(0)
            } else {
                eprintln!("best fit IoU {:.3} is below the {:.2} threshold", est.iou, cfg.accept_iou);
                Ok(1)
            }
        }
        Command::Eval { data, outputs } => {
            let cfg: EvalConfig = load_config(cfg_path)?;
            cfg.validate()?;
            let records = read_manifest(&data.join(MANIFEST_NAME))?;
            if records.is_empty() {
                log::warn!("manifest is empty; writing an empty report");
            }
            let report = eval_records(data, &records, outputs, &cfg)?;
            fs::create_dir_all(&cli.out).map_err(|e| Failure::from(Error::io(&cli.out, e)))?;
            echo_config(&cli.out, "eval", cli.seed, &cfg)?;
            let (json, csv) = write_report(&report, &cli.out)?;
            println!("{}", json.display());
            println!("{}", csv.display());
            Ok(0)
        }
    }
}
