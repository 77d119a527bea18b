//! Procedural paired views of toy objects: random primitive, tint and
//! background, a source camera and a perturbed target camera, both rendered
//! with flat Lambert-style shading.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{build_descriptor, camera_position, EulerCamera, RelPoseDescriptor, MAX_PITCH};
use crate::error::{Error, Result};
use crate::imageio::RgbImage;
use crate::mask::{tight_bbox, BinaryMaskVolume};
use crate::mesh::{PrimitiveKind, PrimitiveSpec, TriangleMesh};
use crate::raster::{rasterize_nearest, render_hard};

/// Side of the square reference crop.
pub const REF_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "color")]
pub enum Background {
    White,
    Flat([f64; 3]),
}

impl Background {
    pub fn color(&self) -> [f64; 3] {
        match self {
            Background::White => [1.0; 3],
            Background::Flat(c) => *c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyScene {
    pub spec: PrimitiveSpec,
    pub mesh: TriangleMesh,
    pub tint: [f64; 3],
    pub background: Background,
}

impl ToyScene {
    pub fn new(spec: PrimitiveSpec, tint: [f64; 3], background: Background) -> Result<Self> {
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !in_unit(&tint) || !in_unit(&background.color()) {
            return Err(Error::BadParams("tint and background must lie in [0,1]^3".into()));
        }
        Ok(Self {
            mesh: spec.build()?,
            spec,
            tint,
            background,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SamplePair {
    pub id: usize,
    pub scene: ToyScene,
    pub x_src: RgbImage,
    pub x_tgt: RgbImage,
    /// Pure background plate, when available.
    pub x_bg: Option<RgbImage>,
    pub m_src: BinaryMaskVolume,
    pub m_tgt_true: BinaryMaskVolume,
    pub s_src: EulerCamera,
    pub s_tgt: EulerCamera,
    pub f: RelPoseDescriptor,
    pub i_ref: RgbImage,
}

/// Closed intervals for source-camera draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRanges {
    pub yaw: [f64; 2],
    pub pitch: [f64; 2],
    pub d: [f64; 2],
    pub rx: [f64; 2],
    pub ry: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            yaw: [-std::f64::consts::PI, std::f64::consts::PI],
            pitch: [5f64.to_radians(), 35f64.to_radians()],
            d: [2.5, 4.0],
            rx: [-0.25, 0.25],
            ry: [-0.25, 0.25],
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("yaw", self.yaw, -std::f64::consts::PI, std::f64::consts::PI),
            ("pitch", self.pitch, -MAX_PITCH, MAX_PITCH),
            ("d", self.d, f64::MIN_POSITIVE, f64::INFINITY),
            ("rx", self.rx, -1.0, 1.0),
            ("ry", self.ry, -1.0, 1.0),
        ];
        for (name, [lo, hi], min, max) in named {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min && hi <= max) {
                return Err(Error::BadRanges(format!(
                    "{name}: [{lo}, {hi}] must be ordered and within [{min}, {max}]"
                )));
            }
        }
        Ok(())
    }
}

/// Half-widths of the target perturbation. `d_factor` is multiplicative:
/// the target distance is `d · k` with `log k` uniform on `±log d_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbWidths {
    pub yaw: f64,
    pub pitch: f64,
    pub d_factor: f64,
    pub rx: f64,
    pub ry: f64,
}

impl Default for PerturbWidths {
    fn default() -> Self {
        Self {
            yaw: 45f64.to_radians(),
            pitch: 15f64.to_radians(),
            d_factor: 1.25,
            rx: 0.4,
            ry: 0.4,
        }
    }
}

impl PerturbWidths {
    pub fn zero() -> Self {
        Self {
            yaw: 0.0,
            pitch: 0.0,
            d_factor: 1.0,
            rx: 0.0,
            ry: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.yaw, self.pitch, self.rx, self.ry]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
            && self.d_factor.is_finite()
            && self.d_factor >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::BadRanges("perturbation widths must be >= 0 and d_factor >= 1".into()))
        }
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn sample_source_camera(rng: &mut impl Rng, ranges: &CameraRanges) -> Result<EulerCamera> {
    ranges.validate()?;
    let yaw = uniform(rng, ranges.yaw);
    let pitch = uniform(rng, ranges.pitch);
    let d = uniform(rng, ranges.d);
    let rx = uniform(rng, ranges.rx);
    let ry = uniform(rng, ranges.ry);
    EulerCamera::new(yaw, pitch, d, rx, ry).map_err(|e| Error::BadRanges(e.to_string()))
}

/// Perturb `src`, then wrap yaw, clamp pitch and shifts, and keep
/// `d >= 1.5 · mesh_radius`.
pub fn sample_target_camera(
    src: &EulerCamera,
    rng: &mut impl Rng,
    perturb: &PerturbWidths,
    mesh_radius: f64,
) -> Result<EulerCamera> {
    perturb.validate()?;
    let sym = |rng: &mut ChaCha8Rng, w: f64| uniform(rng, [-w, w]);
    // Draw through a local stream so the number of draws never depends on widths.
    let mut local = ChaCha8Rng::from_rng(rng);
    let dy = sym(&mut local, perturb.yaw);
    let dp = sym(&mut local, perturb.pitch);
    let lk = sym(&mut local, perturb.d_factor.ln());
    let dx = sym(&mut local, perturb.rx);
    let dr = sym(&mut local, perturb.ry);
    Ok(EulerCamera::clamped(
        src.yaw() + dy,
        src.pitch() + dp,
        src.d() * lk.exp(),
        src.rx() + dx,
        src.ry() + dr,
        1.5 * mesh_radius,
    ))
}

const LIGHT: [f64; 3] = [0.577_350_269_189_625_8; 3];

/// Flat-shaded RGB render and its hard silhouette.
pub fn render_rgb(scene: &ToyScene, cam: &EulerCamera, height: usize, width: usize) -> Result<(RgbImage, BinaryMaskVolume)> {
    let hits = rasterize_nearest(&scene.mesh, cam, height, width)?;
    let eye = camera_position(cam);
    let light = Vector3::from(LIGHT);
    let verts = scene.mesh.vertices();
    let shade: Vec<[f64; 3]> = scene
        .mesh
        .faces()
        .iter()
        .map(|f| {
            let (a, b, c) = (verts[f[0]], verts[f[1]], verts[f[2]]);
            let mut n = (b - a).cross(&(c - a)).normalize();
            if n.dot(&(eye - (a + b + c) / 3.0)) < 0.0 {
                n = -n;
            }
            let k = 0.4 + 0.6 * n.dot(&light).max(0.0);
            scene.tint.map(|t| t * k)
        })
        .collect();
    let mut img = RgbImage::filled(height, width, scene.background.color());
    let mut mask = BinaryMaskVolume::zeros(1, height, width)?;
    for (i, hit) in hits.iter().enumerate() {
        if let Some((face, _)) = hit {
            img.set_pixel(i / width, i % width, shade[*face]);
            mask.set(0, i / width, i % width, true);
        }
    }
    Ok((quantize(&img), mask))
}

/// Round-trip through 8-bit storage so in-memory and on-disk pairs agree.
fn quantize(img: &RgbImage) -> RgbImage {
    RgbImage::from_u8(img.height(), img.width(), &img.to_u8()).expect("same shape")
}

/// Tight-box crop of the object in `x`, resized to `REF_SIZE²`. An empty
/// mask yields the whole frame resized.
pub fn reference_crop(x: &RgbImage, m: &BinaryMaskVolume) -> RgbImage {
    let crop = match tight_bbox(m, 0) {
        Some(b) => x.crop_resize(b.row_min, b.row_max, b.col_min, b.col_max, REF_SIZE, REF_SIZE),
        None => x.crop_resize(0, x.height(), 0, x.width(), REF_SIZE, REF_SIZE),
    };
    quantize(&crop)
}

pub fn render_pair(
    id: usize,
    scene: &ToyScene,
    s_src: &EulerCamera,
    s_tgt: &EulerCamera,
    height: usize,
    width: usize,
) -> Result<SamplePair> {
    let (x_src, m_src) = render_rgb(scene, s_src, height, width)?;
    let (x_tgt, m_tgt_true) = render_rgb(scene, s_tgt, height, width)?;
    debug_assert_eq!(
        m_src.count_ones(),
        render_hard(&scene.mesh, s_src, height, width)?.threshold(0.5).count_ones()
    );
    let i_ref = reference_crop(&x_src, &m_src);
    Ok(SamplePair {
        id,
        scene: scene.clone(),
        x_bg: Some(quantize(&RgbImage::filled(height, width, scene.background.color()))),
        x_src,
        x_tgt,
        m_src,
        m_tgt_true,
        s_src: *s_src,
        s_tgt: *s_tgt,
        f: build_descriptor(s_src, s_tgt)?,
        i_ref,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    White,
    /// Random flat colours, for the second training stage.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub kinds: Vec<PrimitiveKind>,
    pub subdivisions: u32,
    pub background: BackgroundMode,
    pub source: CameraRanges,
    pub perturb: PerturbWidths,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            count: 100,
            height: 64,
            width: 64,
            kinds: vec![PrimitiveKind::Box, PrimitiveKind::Cylinder, PrimitiveKind::Capsule],
            subdivisions: 1,
            background: BackgroundMode::White,
            source: CameraRanges::default(),
            perturb: PerturbWidths::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("height", "image size must be positive"));
        }
        if self.kinds.is_empty() {
            return Err(Error::config("kinds", "at least one primitive kind is required"));
        }
        if self.subdivisions > 4 {
            return Err(Error::config("subdivisions", "at most 4"));
        }
        self.source.validate().map_err(|e| Error::config("source", e.to_string()))?;
        self.perturb.validate().map_err(|e| Error::config("perturb", e.to_string()))?;
        if self.source.d[0] <= 1.0 {
            return Err(Error::config("source.d", "distances must exceed the unit mesh radius"));
        }
        Ok(())
    }
}

/// Independent generator for pair `index`.
pub fn pair_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn random_scene(rng: &mut impl Rng, cfg: &GenerationConfig) -> Result<ToyScene> {
    let kind = cfg.kinds[rng.random_range(0..cfg.kinds.len())];
    let dims: Vec<f64> = match kind {
        PrimitiveKind::Box => vec![rng.random_range(0.5..1.0), rng.random_range(0.4..1.0), rng.random_range(0.3..0.8)],
        PrimitiveKind::Cylinder => vec![rng.random_range(0.3..0.6), rng.random_range(0.6..1.4)],
        PrimitiveKind::Capsule => vec![rng.random_range(0.25..0.5), rng.random_range(0.4..1.0)],
        PrimitiveKind::Icosphere => vec![1.0],
    };
    let mut tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    // Keep one channel dark so the object always stands out from white.
    let k = rng.random_range(0..3);
    tint[k] = tint[k].min(0.6);
    let background = match cfg.background {
        BackgroundMode::White => Background::White,
        BackgroundMode::Flat => Background::Flat(std::array::from_fn(|_| rng.random_range(0.2..1.0))),
    };
    ToyScene::new(PrimitiveSpec::new(kind, &dims, cfg.subdivisions), tint, background)
}

/// Pair `index` of the dataset defined by `(cfg, seed)`.
pub fn generate_pair(cfg: &GenerationConfig, seed: u64, index: usize) -> Result<SamplePair> {
    let mut rng = pair_rng(seed, index);
    let scene = random_scene(&mut rng, cfg)?;
    let s_src = sample_source_camera(&mut rng, &cfg.source)?;
    let s_tgt = sample_target_camera(&s_src, &mut rng, &cfg.perturb, scene.mesh.radius())?;
    render_pair(index, &scene, &s_src, &s_tgt, cfg.height, cfg.width)
}

/// In-memory dataset, generated in parallel with per-index streams.
pub fn generate_pairs(cfg: &GenerationConfig, seed: u64) -> Result<Vec<SamplePair>> {
    cfg.validate()?;
    (0..cfg.count).into_par_iter().map(|i| generate_pair(cfg, seed, i)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFiles {
    pub x_src: String,
    pub x_tgt: String,
    pub x_bg: String,
    pub i_ref: String,
    pub m_src: String,
    pub m_tgt: String,
    pub mesh: String,
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: usize,
    pub seed: u64,
    pub primitive: PrimitiveSpec,
    pub tint: [f64; 3],
    pub background: Background,
    pub s_src: EulerCamera,
    pub s_tgt: EulerCamera,
    pub f: RelPoseDescriptor,
    pub files: PairFiles,
}

pub const MANIFEST_NAME: &str = "manifest.jsonl";

fn pair_files(id: usize) -> PairFiles {
    let dir = format!("pairs/{id:06}");
    PairFiles {
        x_src: format!("{dir}/x_src.ppm"),
        x_tgt: format!("{dir}/x_tgt.ppm"),
        x_bg: format!("{dir}/x_bg.ppm"),
        i_ref: format!("{dir}/i_ref.ppm"),
        m_src: format!("{dir}/m_src.pgm"),
        m_tgt: format!("{dir}/m_tgt.pgm"),
        mesh: format!("{dir}/mesh.obj"),
    }
}

fn write_mask(path: &Path, m: &BinaryMaskVolume) -> Result<()> {
    let px: Vec<u8> = m.frame(0).iter().map(|&v| v * 255).collect();
    crate::imageio::write_pgm8(path, m.width(), m.height(), &px)
}

pub fn write_pair(root: &Path, seed: u64, pair: &SamplePair) -> Result<ManifestRecord> {
    let files = pair_files(pair.id);
    let x_bg = pair.x_bg.as_ref().ok_or(Error::MissingBackground("writing a pair"))?;
    pair.x_src.save_ppm(&root.join(&files.x_src))?;
    pair.x_tgt.save_ppm(&root.join(&files.x_tgt))?;
    x_bg.save_ppm(&root.join(&files.x_bg))?;
    pair.i_ref.save_ppm(&root.join(&files.i_ref))?;
    write_mask(&root.join(&files.m_src), &pair.m_src)?;
    write_mask(&root.join(&files.m_tgt), &pair.m_tgt_true)?;
    pair.scene.mesh.save_obj(&root.join(&files.mesh))?;
    Ok(ManifestRecord {
        id: pair.id,
        seed,
        primitive: pair.scene.spec.clone(),
        tint: pair.scene.tint,
        background: pair.scene.background,
        s_src: pair.s_src,
        s_tgt: pair.s_tgt,
        f: pair.f,
        files,
    })
}

/// Generate `cfg.count` pairs under `root` and write `manifest.jsonl`.
pub fn build_dataset(root: &Path, cfg: &GenerationConfig, seed: u64) -> Result<PathBuf> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let records: Vec<ManifestRecord> = (0..cfg.count)
        .into_par_iter()
        .map(|i| write_pair(root, seed, &generate_pair(cfg, seed, i)?))
        .collect::<Result<_>>()?;
    let path = root.join(MANIFEST_NAME);
    let mut out = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Files referenced by the manifest that do not exist.
pub fn audit_dataset(root: &Path, records: &[ManifestRecord]) -> Vec<PathBuf> {
    records
        .iter()
        .flat_map(|r| {
            let f = &r.files;
            [&f.x_src, &f.x_tgt, &f.x_bg, &f.i_ref, &f.m_src, &f.m_tgt, &f.mesh].map(|p| root.join(p))
        })
        .filter(|p| !p.exists())
        .collect()
}

fn load_mask(path: &Path) -> Result<BinaryMaskVolume> {
    let g = crate::imageio::read_pgm(path)?;
    let data = g.data.iter().map(|&v| (v > g.maxval / 2) as u8).collect();
    BinaryMaskVolume::from_vec(1, g.height, g.width, data)
}

/// Reload a pair written by [`build_dataset`]; the mesh is rebuilt from
/// its primitive description.
pub fn load_pair(root: &Path, rec: &ManifestRecord) -> Result<SamplePair> {
    let f = &rec.files;
    Ok(SamplePair {
        id: rec.id,
        scene: ToyScene::new(rec.primitive.clone(), rec.tint, rec.background)?,
        x_src: RgbImage::load_ppm(&root.join(&f.x_src))?,
        x_tgt: RgbImage::load_ppm(&root.join(&f.x_tgt))?,
        x_bg: Some(RgbImage::load_ppm(&root.join(&f.x_bg))?),
        m_src: load_mask(&root.join(&f.m_src))?,
        m_tgt_true: load_mask(&root.join(&f.m_tgt))?,
        s_src: rec.s_src,
        s_tgt: rec.s_tgt,
        f: rec.f,
        i_ref: RgbImage::load_ppm(&root.join(&f.i_ref))?,
    })
}

/// Load every pair listed in `root/manifest.jsonl`.
pub fn load_dataset(root: &Path) -> Result<Vec<SamplePair>> {
    let records = read_manifest(&root.join(MANIFEST_NAME))?;
    records.par_iter().map(|r| load_pair(root, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> ToyScene {
        ToyScene::new(PrimitiveSpec::new(PrimitiveKind::Box, &[1.0, 0.7, 0.5], 1), [0.8, 0.3, 0.2], Background::White).unwrap()
    }

    #[test]
    fn identical_cameras_give_identical_views() {
        let cam = EulerCamera::new(0.4, 0.3, 3.0, 0.1, 0.0).unwrap();
        let p = render_pair(0, &scene(), &cam, &cam, 48, 48).unwrap();
        assert_eq!(p.x_src, p.x_tgt);
        assert_eq!(p.f.to_array(), [0.0; 8]);
        let hard = render_hard(&p.scene.mesh, &cam, 48, 48).unwrap().threshold(0.5);
        assert_eq!(p.m_src, hard);
        for r in 0..48 {
            for c in 0..48 {
                if p.m_src.get(0, r, c) == 0 {
                    assert_eq!(p.x_src.pixel(r, c), [1.0; 3]);
                }
            }
        }
    }

    #[test]
    fn degenerate_ranges_and_bad_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = CameraRanges {
            yaw: [0.5, 0.5],
            pitch: [0.2, 0.2],
            d: [3.0, 3.0],
            rx: [0.0, 0.0],
            ry: [0.1, 0.1],
        };
        let c = sample_source_camera(&mut rng, &r).unwrap();
        assert_eq!(c.to_array(), [0.5, 0.2, 3.0, 0.0, 0.1]);
        let bad = CameraRanges { d: [3.0, 2.0], ..r };
        assert!(matches!(sample_source_camera(&mut rng, &bad), Err(Error::BadRanges(_))));
    }

    #[test]
    fn zero_perturbation_is_identity_and_yaw_wraps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = EulerCamera::new(3.1, 0.2, 3.0, 0.1, -0.1).unwrap();
        assert_eq!(sample_target_camera(&src, &mut rng, &PerturbWidths::zero(), 1.0).unwrap(), src);
        let w = PerturbWidths {
            yaw: std::f64::consts::PI,
            ..PerturbWidths::zero()
        };
        for _ in 0..200 {
            let t = sample_target_camera(&src, &mut rng, &w, 1.0).unwrap();
            assert!(t.yaw() > -std::f64::consts::PI && t.yaw() <= std::f64::consts::PI);
        }
    }

    #[test]
    fn pairs_are_index_addressable() {
        let cfg = GenerationConfig {
            count: 4,
            height: 32,
            width: 32,
            ..Default::default()
        };
        let all = generate_pairs(&cfg, 9).unwrap();
        let third = generate_pair(&cfg, 9, 2).unwrap();
        assert_eq!(all[2].x_tgt, third.x_tgt);
        assert_eq!(all[2].s_src, third.s_src);
        assert_ne!(all[1].s_src, all[2].s_src);
    }
}
