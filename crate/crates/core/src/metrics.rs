//! Evaluation of generated frames: PSNR, object IoU of the extracted
//! silhouette, and pose MAPE of a camera re-estimated from that silhouette.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{wrap_angle, EulerCamera};
use crate::error::{Error, Result};
use crate::imageio::{write_json, RgbImage};
use crate::mask::{mask_iou, BinaryMaskVolume};
use crate::mesh::YawSymmetry;
use crate::pose::{estimate_camera, EstimatorConfig};
use crate::raster::SilhouetteImage;
use crate::synth::{load_pair, read_manifest, ManifestRecord, SamplePair, MANIFEST_NAME};

pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    psnr_from_mse(mse, peak)
}

/// PSNR over the pixels where `mask` (frame 0) is set. An empty region
/// counts as a perfect match.
pub fn masked_psnr(a: &RgbImage, b: &RgbImage, mask: &BinaryMaskVolume, peak: f64) -> Result<f64> {
    check_same(a, b)?;
    if (mask.height(), mask.width()) != (a.height(), a.width()) {
        return Err(Error::ShapeMismatch("mask does not match image".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &m) in mask.frame(0).iter().enumerate() {
        if m == 1 {
            for c in 0..3 {
                let d = a.data()[3 * i + c] - b.data()[3 * i + c];
                sum += d * d;
            }
            n += 3;
        }
    }
    if n == 0 {
        return Ok(PSNR_CAP_DB);
    }
    psnr_from_mse(sum / n as f64, peak)
}

fn psnr_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::BadParams(format!("peak must be positive, got {peak}")));
    }
    if mse < peak * peak * 10f64.powf(-9.9) {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn check_same(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch(format!(
            "images {}x{} and {}x{} differ",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Per-parameter floors on the MAPE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeFloors {
    /// Radians, for yaw and pitch.
    pub angle: f64,
    /// NDC units, for the shifts.
    pub ndc: f64,
    /// Fraction of the true distance.
    pub distance_rel: f64,
}

impl Default for MapeFloors {
    fn default() -> Self {
        Self {
            angle: 1f64.to_radians(),
            ndc: 1e-3,
            distance_rel: 1e-3,
        }
    }
}

/// Absolute percentage errors for (yaw, pitch, d, r_x, r_y) and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub ape: [f64; 5],
    pub mape: f64,
}

pub fn pose_mape(truth: &EulerCamera, pred: &EulerCamera) -> PoseError {
    pose_mape_with(truth, pred, &MapeFloors::default())
}

pub fn pose_mape_with(truth: &EulerCamera, pred: &EulerCamera, floors: &MapeFloors) -> PoseError {
    let pct = |err: f64, t: f64, floor: f64| 100.0 * err / t.abs().max(floor);
    let ape = [
        pct(wrap_angle(pred.yaw() - truth.yaw()).abs(), truth.yaw(), floors.angle),
        pct(wrap_angle(pred.pitch() - truth.pitch()).abs(), truth.pitch(), floors.angle),
        pct((pred.d() - truth.d()).abs(), truth.d(), floors.distance_rel * truth.d().abs()),
        pct((pred.rx() - truth.rx()).abs(), truth.rx(), floors.ndc),
        pct((pred.ry() - truth.ry()).abs(), truth.ry(), floors.ndc),
    ];
    PoseError {
        ape,
        mape: ape.iter().sum::<f64>() / 5.0,
    }
}

/// [`pose_mape`] after replacing the predicted yaw by its symmetry-equivalent
/// closest to the truth.
pub fn pose_mape_symmetric(truth: &EulerCamera, pred: &EulerCamera, sym: YawSymmetry, floors: &MapeFloors) -> PoseError {
    let yaw = sym.align_yaw(pred.yaw(), truth.yaw());
    let aligned = EulerCamera::clamped(yaw, pred.pitch(), pred.d(), pred.rx(), pred.ry(), 0.0);
    pose_mape_with(truth, &aligned, floors)
}

pub fn object_iou(pred: &BinaryMaskVolume, truth: &BinaryMaskVolume) -> Result<f64> {
    mask_iou(pred, truth)
}

/// Pixels whose largest channel deviation from `background` exceeds
/// `threshold`.
pub fn silhouette_from_rgb(img: &RgbImage, background: [f64; 3], threshold: f64) -> BinaryMaskVolume {
    BinaryMaskVolume::from_fn(img.height(), img.width(), |r, c| {
        let p = img.pixel(r, c);
        (0..3).map(|k| (p[k] - background[k]).abs()).fold(0.0, f64::max) > threshold
    })
    .expect("image dimensions are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub peak: f64,
    pub silhouette_threshold: f64,
    pub floors: MapeFloors,
    pub estimator: EstimatorConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            peak: 1.0,
            silhouette_threshold: 0.1,
            floors: MapeFloors::default(),
            estimator: EstimatorConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak > 0.0) {
            return Err(Error::config("peak", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.silhouette_threshold) {
            return Err(Error::config("silhouette_threshold", "must be in [0, 1)"));
        }
        self.estimator.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub iou: f64,
    /// `None` when the output shows no object to fit a camera to.
    pub pose: Option<PoseError>,
    pub estimated: Option<EulerCamera>,
}

/// Metrics of one generated target frame against its pair.
pub fn evaluate_output(pair: &SamplePair, output: &RgbImage, cfg: &EvalConfig) -> Result<SampleMetrics> {
    let psnr_db = psnr(output, &pair.x_tgt, cfg.peak)?;
    let sil = silhouette_from_rgb(output, pair.scene.background.color(), cfg.silhouette_threshold);
    let iou = object_iou(&sil, &pair.m_tgt_true)?;
    let (pose, estimated) = match estimate_from_silhouette(pair, &sil, &cfg.estimator)? {
        Some(cam) => (
            Some(pose_mape_symmetric(&pair.s_tgt, &cam, pair.scene.spec.yaw_symmetry(), &cfg.floors)),
            Some(cam),
        ),
        None => (None, None),
    };
    Ok(SampleMetrics {
        id: format!("{:06}", pair.id),
        psnr_db,
        iou,
        pose,
        estimated,
    })
}

/// Camera fitted to `sil` with the pair's own mesh, or `None` for an
/// empty silhouette.
pub fn estimate_from_silhouette(pair: &SamplePair, sil: &BinaryMaskVolume, cfg: &EstimatorConfig) -> Result<Option<EulerCamera>> {
    if sil.is_empty() {
        return Ok(None);
    }
    let target = SilhouetteImage::from_mask(sil, 0);
    match estimate_camera(&pair.scene.mesh, &target, cfg) {
        Ok(est) => Ok(Some(est.cam)),
        Err(Error::EmptyTarget) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    /// `None` for an empty slice.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    pub floors: MapeFloors,
    pub psnr_db: Option<Summary>,
    pub iou: Option<Summary>,
    pub mape: Option<Summary>,
    pub pose_failures: usize,
    pub samples: Vec<SampleMetrics>,
}

/// Aggregate per-sample metrics; the result does not depend on input order.
pub fn aggregate(mut samples: Vec<SampleMetrics>, floors: MapeFloors) -> EvalReport {
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let col = |f: &dyn Fn(&SampleMetrics) -> Option<f64>| samples.iter().filter_map(f).collect::<Vec<_>>();
    let mapes = col(&|s| s.pose.map(|p| p.mape));
    EvalReport {
        count: samples.len(),
        floors,
        psnr_db: Summary::of(&col(&|s| Some(s.psnr_db))),
        iou: Summary::of(&col(&|s| Some(s.iou))),
        pose_failures: samples.len() - mapes.len(),
        mape: Summary::of(&mapes),
        samples,
    }
}

/// Path of the generated frame for pair `id`.
pub fn output_path(outputs: &Path, id: usize) -> PathBuf {
    outputs.join(format!("{id:06}.ppm"))
}

/// Evaluate every manifest entry of the dataset at `root` against
/// `outputs/{id}.ppm`.
pub fn eval_report(root: &Path, outputs: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let records = read_manifest(&root.join(MANIFEST_NAME))?;
    eval_records(root, &records, outputs, cfg)
}

pub fn eval_records(root: &Path, records: &[ManifestRecord], outputs: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let missing: Vec<String> = records
        .iter()
        .filter(|r| !output_path(outputs, r.id).is_file())
        .map(|r| format!("{:06}", r.id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutput(missing));
    }
    let samples = records
        .par_iter()
        .map(|rec| {
            let pair = load_pair(root, rec)?;
            let out = RgbImage::load_ppm(&output_path(outputs, rec.id))?;
            evaluate_output(&pair, &out, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(samples, cfg.floors))
}

#[derive(Serialize)]
struct CsvRow<'a> {
    id: &'a str,
    psnr_db: f64,
    iou: f64,
    mape: f64,
    ape_yaw: f64,
    ape_pitch: f64,
    ape_d: f64,
    ape_rx: f64,
    ape_ry: f64,
}

/// `report.json` and `per_sample.csv` under `dir`; missing pose errors are
/// written as NaN.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let json = dir.join("report.json");
    write_json(&json, report)?;
    let csv_path = dir.join("per_sample.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| Error::format(&csv_path, e.to_string()))?;
    if report.samples.is_empty() {
        w.write_record(["id", "psnr_db", "iou", "mape", "ape_yaw", "ape_pitch", "ape_d", "ape_rx", "ape_ry"])
            .map_err(|e| Error::format(&csv_path, e.to_string()))?;
    }
    for s in &report.samples {
        let (mape, ape) = match s.pose {
            Some(p) => (p.mape, p.ape),
            None => (f64::NAN, [f64::NAN; 5]),
        };
        w.serialize(CsvRow {
            id: &s.id,
            psnr_db: s.psnr_db,
            iou: s.iou,
            mape,
            ape_yaw: ape[0],
            ape_pitch: ape[1],
            ape_d: ape[2],
            ape_rx: ape[3],
            ape_ry: ape[4],
        })
        .map_err(|e| Error::format(&csv_path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok((json, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_offset_case() {
        let a = RgbImage::filled(4, 4, [0.5; 3]);
        let b = RgbImage::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &RgbImage::filled(2, 4, [0.5; 3]), 1.0).is_err());
    }

    #[test]
    fn mape_distance_case() {
        let t = EulerCamera::new(0.3, 0.2, 2.0, 0.1, -0.1).unwrap();
        let p = EulerCamera::new(0.3, 0.2, 2.2, 0.1, -0.1).unwrap();
        let e = pose_mape(&t, &p);
        assert!((e.ape[2] - 10.0).abs() < 1e-9);
        assert!((e.mape - 2.0).abs() < 1e-9);
    }

    #[test]
    fn summary_median() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert!(Summary::of(&[]).is_none());
    }
}
