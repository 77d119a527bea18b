//! Condition assembly for the three editing tasks: latent grids from the
//! toy space-to-depth encoder, mask codes, and the relative-pose condition
//! with its Fourier + MLP token encoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{build_outofframe_descriptor, RelPoseDescriptor};
use crate::error::{Error, Result};
use crate::imageio::RgbImage;
use crate::mask::{
    estimate_target_mask, pixel_shuffle_inverse, pixel_unshuffle, square_about, tight_bbox, BBox, BinaryMaskVolume, MaskCode,
};
use crate::nn::{cast, silu, silu_grad, Linear, Scalar};
use crate::synth::SamplePair;

pub const DESCRIPTOR_LEN: usize = 8;

/// `(x, sin(2⁰x), cos(2⁰x), …, sin(2ⁿ⁻¹x), cos(2ⁿ⁻¹x))`.
pub fn fourier_encode(x: f64, n_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n_freqs + 1);
    out.push(x);
    for k in 0..n_freqs {
        let a = x * (1u64 << k) as f64;
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Channel-major `C × H × W` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "latent data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: None });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[(c * self.height + row) * self.width + col]
    }

    /// Position-major copy: `(H·W) × C`.
    pub fn to_rows<F: Scalar>(&self) -> Vec<F> {
        let p = self.height * self.width;
        let mut out = vec![F::zero(); p * self.channels];
        for c in 0..self.channels {
            for (i, v) in self.data[c * p..(c + 1) * p].iter().enumerate() {
                out[i * self.channels + c] = cast(*v);
            }
        }
        out
    }

    pub fn from_rows<F: Scalar>(channels: usize, height: usize, width: usize, rows: &[F]) -> Result<Self> {
        let p = height * width;
        if rows.len() != p * channels {
            return Err(Error::ShapeMismatch("row data does not match grid shape".into()));
        }
        let mut data = vec![0.0; p * channels];
        for (i, row) in rows.chunks_exact(channels).enumerate() {
            for (c, v) in row.iter().enumerate() {
                data[c * p + i] = v.to_f64().unwrap();
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channel_means(&self) -> Vec<f64> {
        let p = (self.height * self.width) as f64;
        self.data
            .chunks_exact(self.height * self.width)
            .map(|c| c.iter().sum::<f64>() / p)
            .collect()
    }
}

/// Lossless stand-in for an image autoencoder: space-to-depth by `stride`
/// (channel `c·s² + dy·s + dx`) then `2x − 1`.
pub fn toy_encode(img: &RgbImage, stride: usize) -> Result<LatentGrid> {
    let (h, w) = (img.height(), img.width());
    if stride == 0 || h % stride != 0 || w % stride != 0 {
        return Err(Error::ShapeMismatch(format!("{h}x{w} image is not divisible by stride {stride}")));
    }
    let (gh, gw, s2) = (h / stride, w / stride, stride * stride);
    let mut data = vec![0.0; 3 * s2 * gh * gw];
    for r in 0..h {
        for col in 0..w {
            let px = img.pixel(r, col);
            let sub = (r % stride) * stride + col % stride;
            for (c, v) in px.iter().enumerate() {
                let ch = c * s2 + sub;
                data[(ch * gh + r / stride) * gw + col / stride] = (v - 0.5) / 0.5;
            }
        }
    }
    Ok(LatentGrid {
        channels: 3 * s2,
        height: gh,
        width: gw,
        data,
    })
}

/// Exact inverse of [`toy_encode`]; values are not clamped.
pub fn toy_decode(z: &LatentGrid, stride: usize) -> Result<RgbImage> {
    let s2 = stride * stride;
    if stride == 0 || z.channels != 3 * s2 {
        return Err(Error::ShapeMismatch(format!(
            "{} channels cannot be decoded with stride {stride}",
            z.channels
        )));
    }
    let (h, w) = (z.height * stride, z.width * stride);
    let mut data = vec![0.0; h * w * 3];
    for r in 0..h {
        for col in 0..w {
            let sub = (r % stride) * stride + col % stride;
            for c in 0..3 {
                data[(r * w + col) * 3 + c] = z.get(c * s2 + sub, r / stride, col / stride) * 0.5 + 0.5;
            }
        }
    }
    RgbImage::from_vec(h, w, data)
}

/// `8 × D` pose tokens, one row per descriptor component.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTokens {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl PoseTokens {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Shared three-layer SiLU MLP over the Fourier features of each
/// descriptor component, plus a learned per-component embedding. `null`
/// holds the learned tokens used when the camera condition is dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEncoder<F> {
    pub n_freqs: usize,
    pub dim: usize,
    pub l1: Linear<F>,
    pub l2: Linear<F>,
    pub l3: Linear<F>,
    pub emb: Vec<F>,
    pub null: Vec<F>,
}

/// Intermediates kept for the backward pass.
pub struct PoseEncoderCache<F> {
    feats: Vec<F>,
    a1: Vec<F>,
    s1: Vec<F>,
    a2: Vec<F>,
    s2: Vec<F>,
}

impl<F: Scalar> PoseEncoder<F> {
    pub fn zeros(n_freqs: usize, dim: usize) -> Self {
        let nin = 2 * n_freqs + 1;
        Self {
            n_freqs,
            dim,
            l1: Linear::zeros(nin, dim),
            l2: Linear::zeros(dim, dim),
            l3: Linear::zeros(dim, dim),
            emb: vec![F::zero(); DESCRIPTOR_LEN * dim],
            null: vec![F::zero(); DESCRIPTOR_LEN * dim],
        }
    }

    pub fn init(n_freqs: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let nin = 2 * n_freqs + 1;
        let mut normal = |n: usize, std: f64| -> Vec<F> {
            (0..n)
                .map(|_| {
                    let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                    cast(z * std)
                })
                .collect()
        };
        let emb = normal(DESCRIPTOR_LEN * dim, 0.5);
        let null = normal(DESCRIPTOR_LEN * dim, 0.5);
        Self {
            n_freqs,
            dim,
            l1: Linear::init(nin, dim, 2.0, rng),
            l2: Linear::init(dim, dim, 2.0, rng),
            l3: Linear::init(dim, dim, 1.0, rng),
            emb,
            null,
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let nin = 2 * self.n_freqs + 1;
        let ok = self.l1.n_in == nin
            && self.l1.n_out == self.dim
            && self.l2.n_in == self.dim
            && self.l2.n_out == self.dim
            && self.l3.n_in == self.dim
            && self.l3.n_out == self.dim
            && self.l1.w.len() == nin * self.dim
            && self.l2.w.len() == self.dim * self.dim
            && self.l3.w.len() == self.dim * self.dim
            && self.emb.len() == DESCRIPTOR_LEN * self.dim
            && self.null.len() == DESCRIPTOR_LEN * self.dim;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("pose encoder weights are inconsistent".into()))
        }
    }

    pub fn forward(&self, f: &[f64; DESCRIPTOR_LEN]) -> (Vec<F>, PoseEncoderCache<F>) {
        let feats: Vec<F> = f.iter().flat_map(|&x| fourier_encode(x, self.n_freqs)).map(cast).collect();
        let a1 = self.l1.forward(&feats, DESCRIPTOR_LEN);
        let s1: Vec<F> = a1.iter().map(|&v| silu(v)).collect();
        let a2 = self.l2.forward(&s1, DESCRIPTOR_LEN);
        let s2: Vec<F> = a2.iter().map(|&v| silu(v)).collect();
        let mut tokens = self.l3.forward(&s2, DESCRIPTOR_LEN);
        for (t, e) in tokens.iter_mut().zip(&self.emb) {
            *t += *e;
        }
        (tokens, PoseEncoderCache { feats, a1, s1, a2, s2 })
    }

    pub fn backward(&self, cache: &PoseEncoderCache<F>, dtok: &[F], grad: &mut PoseEncoder<F>) {
        for (g, d) in grad.emb.iter_mut().zip(dtok) {
            *g += *d;
        }
        let n = DESCRIPTOR_LEN;
        let ds2 = self.l3.backward(&cache.s2, dtok, n, &mut grad.l3, true).unwrap();
        let da2: Vec<F> = ds2.iter().zip(&cache.a2).map(|(d, a)| *d * silu_grad(*a)).collect();
        let ds1 = self.l2.backward(&cache.s1, &da2, n, &mut grad.l2, true).unwrap();
        let da1: Vec<F> = ds1.iter().zip(&cache.a1).map(|(d, a)| *d * silu_grad(*a)).collect();
        self.l1.backward(&cache.feats, &da1, n, &mut grad.l1, false);
    }

    pub fn convert<G: Scalar>(&self) -> PoseEncoder<G> {
        PoseEncoder {
            n_freqs: self.n_freqs,
            dim: self.dim,
            l1: self.l1.convert(),
            l2: self.l2.convert(),
            l3: self.l3.convert(),
            emb: self.emb.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
            null: self.null.iter().map(|v| cast(v.to_f64().unwrap())).collect(),
        }
    }
}

/// Token rows for a descriptor: `MLP(fourier(f_i)) + emb_i`.
pub fn encode_descriptor(f: &RelPoseDescriptor, enc: &PoseEncoder<f64>) -> Result<PoseTokens> {
    enc.check_shapes()?;
    let (data, _) = enc.forward(&f.to_array());
    Ok(PoseTokens { dim: enc.dim, data })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Re-render the object under the target camera.
    Main,
    /// Remove the object, leaving the background.
    Removal,
    /// Paint the reference object into the background at the target box.
    Inpaint,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Main, Task::Removal, Task::Inpaint];

    pub fn index(self) -> usize {
        match self {
            Task::Main => 0,
            Task::Removal => 1,
            Task::Inpaint => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseCondition {
    Descriptor(RelPoseDescriptor),
    /// Camera guidance dropped: the network substitutes its learned null tokens.
    Null,
}

/// Strides of the image and mask encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderStrides {
    pub latent: usize,
    pub mask: usize,
}

impl Default for EncoderStrides {
    fn default() -> Self {
        Self { latent: 4, mask: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningTuple {
    pub task: Task,
    pub src_latent: LatentGrid,
    pub ref_latent: LatentGrid,
    pub src_mask_code: MaskCode,
    pub tgt_mask_code: MaskCode,
    pub pose: PoseCondition,
}

impl ConditioningTuple {
    /// Tokens for the pose slot under encoder `enc`.
    pub fn pose_tokens(&self, enc: &PoseEncoder<f64>) -> Result<PoseTokens> {
        match &self.pose {
            PoseCondition::Descriptor(f) => encode_descriptor(f, enc),
            PoseCondition::Null => Ok(PoseTokens {
                dim: enc.dim,
                data: enc.null.clone(),
            }),
        }
    }
}

/// Borrowed inputs needed to condition one example.
#[derive(Debug, Clone, Copy)]
pub struct PairView<'a> {
    pub x_src: &'a RgbImage,
    pub i_ref: &'a RgbImage,
    pub x_bg: Option<&'a RgbImage>,
    pub m_src: &'a BinaryMaskVolume,
    pub f: &'a RelPoseDescriptor,
    pub d_src: f64,
    pub d_tgt: f64,
}

impl<'a> From<&'a SamplePair> for PairView<'a> {
    fn from(p: &'a SamplePair) -> Self {
        Self {
            x_src: &p.x_src,
            i_ref: &p.i_ref,
            x_bg: p.x_bg.as_ref(),
            m_src: &p.m_src,
            f: &p.f,
            d_src: p.s_src.d(),
            d_tgt: p.s_tgt.d(),
        }
    }
}

/// Task-specific condition:
///
/// | task    | source     | reference | source mask | target mask    | pose     |
/// |---------|------------|-----------|-------------|----------------|----------|
/// | main    | `x_src`    | `i_ref`   | `m_src`     | estimated box  | `f`      |
/// | removal | `x_src`    | white     | `m_src`     | zero           | off-frame|
/// | inpaint | background | `i_ref`   | zero        | estimated box  | `f`      |
pub fn assemble_from_view(pair: PairView, task: Task, strides: EncoderStrides) -> Result<ConditioningTuple> {
    let s = strides.mask;
    let src_code = pixel_unshuffle(pair.m_src, s, 1)?;
    let (cf, ch, cw) = (src_code.shape().0, src_code.height(), src_code.width());
    let zero_code = || MaskCode::zeros(cf, ch, cw, s, 1);
    let tgt_code = || -> Result<MaskCode> {
        let m_hat = estimate_target_mask(pair.m_src, pair.f, pair.d_src, pair.d_tgt)?;
        pixel_unshuffle(&m_hat, s, 1)
    };
    let ref_latent = toy_encode(pair.i_ref, strides.latent)?;
    Ok(match task {
        Task::Main => ConditioningTuple {
            task,
            src_latent: toy_encode(pair.x_src, strides.latent)?,
            ref_latent,
            src_mask_code: src_code,
            tgt_mask_code: tgt_code()?,
            pose: PoseCondition::Descriptor(*pair.f),
        },
        Task::Removal => {
            let white = RgbImage::filled(pair.i_ref.height(), pair.i_ref.width(), [1.0; 3]);
            ConditioningTuple {
                task,
                src_latent: toy_encode(pair.x_src, strides.latent)?,
                ref_latent: toy_encode(&white, strides.latent)?,
                src_mask_code: src_code,
                tgt_mask_code: zero_code(),
                pose: PoseCondition::Descriptor(build_outofframe_descriptor_any()),
            }
        }
        Task::Inpaint => {
            let bg = pair.x_bg.ok_or(Error::MissingBackground("inpaint"))?;
            ConditioningTuple {
                task,
                src_latent: toy_encode(bg, strides.latent)?,
                ref_latent,
                src_mask_code: zero_code(),
                tgt_mask_code: tgt_code()?,
                pose: PoseCondition::Descriptor(*pair.f),
            }
        }
    })
}

fn build_outofframe_descriptor_any() -> RelPoseDescriptor {
    build_outofframe_descriptor(&crate::camera::EulerCamera::new(0.0, 0.0, 1.0, 0.0, 0.0).expect("valid"))
}

pub fn assemble_conditioning(pair: &SamplePair, task: Task, strides: EncoderStrides) -> Result<ConditioningTuple> {
    if task == Task::Removal && pair.x_bg.is_none() {
        return Err(Error::MissingBackground("removal"));
    }
    assemble_from_view(PairView::from(pair), task, strides)
}

/// Source object moved into the target-mask box, at encoder resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSource {
    pub latent: LatentGrid,
    pub mask_code: MaskCode,
}

/// Bilinear lookup at continuous pixel coordinates, clamped to the edges.
fn bilinear(img: &RgbImage, y: f64, x: f64) -> [f64; 3] {
    let (h, w) = (img.height(), img.width());
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let (a, b, c, d) = (img.pixel(y0, x0), img.pixel(y0, x1), img.pixel(y1, x0), img.pixel(y1, x1));
    std::array::from_fn(|k| (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy)
}

/// Unclipped square `(row_min, col_min, side)` behind a box that may have
/// been clipped by the frame.
fn unclip_square(b: &BBox, h: usize, w: usize) -> (f64, f64, f64) {
    let side = b.height().max(b.width()) as f64;
    let lo = |min: usize, max: usize, n: usize| {
        if min == 0 && ((max - min) as f64) < side && max < n {
            max as f64 - side
        } else {
            min as f64
        }
    };
    (lo(b.row_min, b.row_max, h), lo(b.col_min, b.col_max, w), side)
}

/// Resample the source object (located by the source-mask code) into the
/// square box of the target-mask code. Without a source mask the reference
/// crop fills the box instead; without a target box the result is empty.
/// Pixels outside the moved object are zero in latent space.
pub fn align_source(cond: &ConditioningTuple, strides: EncoderStrides) -> Result<AlignedSource> {
    let (c, gh, gw) = cond.src_latent.shape();
    let tgt_mask = pixel_shuffle_inverse(&cond.tgt_mask_code)?;
    let src_mask = pixel_shuffle_inverse(&cond.src_mask_code)?;
    let (h, w) = (tgt_mask.height(), tgt_mask.width());
    let mut moved = BinaryMaskVolume::zeros(1, h, w)?;
    let mut latent = LatentGrid::zeros(c, gh, gw);
    let Some(tb) = tight_bbox(&tgt_mask, 0) else {
        return Ok(AlignedSource {
            latent,
            mask_code: pixel_unshuffle(&moved, strides.mask, 1)?,
        });
    };
    let (tr0, tc0, tside) = unclip_square(&tb, h, w);
    let mut img = RgbImage::filled(h, w, [0.5; 3]);
    match tight_bbox(&src_mask, 0) {
        Some(sb) => {
            let src = toy_decode(&cond.src_latent, strides.latent)?;
            let (sr0, sc0, sside) = square_about(&sb);
            let k = sside as f64 / tside;
            for r in tb.row_min..tb.row_max {
                for col in tb.col_min..tb.col_max {
                    let sy = sr0 as f64 + (r as f64 + 0.5 - tr0) * k - 0.5;
                    let sx = sc0 as f64 + (col as f64 + 0.5 - tc0) * k - 0.5;
                    let (ny, nx) = (sy.round(), sx.round());
                    let inside = ny >= 0.0 && nx >= 0.0 && (ny as usize) < h && (nx as usize) < w;
                    if inside && src_mask.get(0, ny as usize, nx as usize) == 1 {
                        moved.set(0, r, col, true);
                        img.set_pixel(r, col, bilinear(&src, sy, sx));
                    }
                }
            }
        }
        None => {
            let reference = toy_decode(&cond.ref_latent, strides.latent)?;
            let (rh, rw) = (reference.height() as f64, reference.width() as f64);
            for r in tb.row_min..tb.row_max {
                for col in tb.col_min..tb.col_max {
                    let sy = (r as f64 + 0.5 - tr0) / tside * rh - 0.5;
                    let sx = (col as f64 + 0.5 - tc0) / tside * rw - 0.5;
                    img.set_pixel(r, col, bilinear(&reference, sy, sx));
                }
            }
        }
    }
    latent = toy_encode(&img, strides.latent)?;
    Ok(AlignedSource {
        latent,
        mask_code: pixel_unshuffle(&moved, strides.mask, 1)?,
    })
}

/// With probability `p`, replace the pose condition by the null condition.
/// Always consumes exactly one draw.
pub fn drop_camera_condition(mut tuple: ConditioningTuple, rng: &mut impl Rng, p: f64) -> ConditioningTuple {
    let u: f64 = rng.random();
    if u < p {
        tuple.pose = PoseCondition::Null;
    }
    tuple
}

/// Image the network should produce for `task`.
pub fn task_target<'a>(pair: &'a SamplePair, task: Task) -> Result<&'a RgbImage> {
    match task {
        Task::Main | Task::Inpaint => Ok(&pair.x_tgt),
        Task::Removal => pair.x_bg.as_ref().ok_or(Error::MissingBackground("removal")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fourier_small_cases() {
        assert_eq!(fourier_encode(0.0, 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        let v = fourier_encode(std::f64::consts::PI, 1);
        assert_eq!(v[0], std::f64::consts::PI);
        assert!(v[1].abs() < 1e-15 && (v[2] + 1.0).abs() < 1e-15);
        assert_eq!(fourier_encode(1.3, 6).len(), 13);
    }

    #[test]
    fn toy_codec_shapes_and_constants() {
        let img = RgbImage::filled(64, 64, [0.5; 3]);
        let z = toy_encode(&img, 4).unwrap();
        assert_eq!(z.shape(), (48, 16, 16));
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(toy_encode(&RgbImage::filled(6, 8, [0.0; 3]), 4).is_err());
    }

    #[test]
    fn zero_encoder_gives_zero_tokens() {
        let enc = PoseEncoder::<f64>::zeros(6, 16);
        let f = RelPoseDescriptor::from_array([0.1, -0.2, 0.3, 1.0, 2.0, 3.0, 0.5, -0.5]).unwrap();
        assert!(encode_descriptor(&f, &enc).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tokens_are_per_component() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let enc = PoseEncoder::<f64>::init(6, 16, &mut rng);
        let a = [0.1, -0.2, 0.3, 1.0, 2.0, 3.0, 0.5, -0.5];
        let mut b = a;
        b[3] = -1.7;
        let ta = encode_descriptor(&RelPoseDescriptor::from_array(a).unwrap(), &enc).unwrap();
        let tb = encode_descriptor(&RelPoseDescriptor::from_array(b).unwrap(), &enc).unwrap();
        for i in 0..8 {
            assert_eq!(ta.row(i) == tb.row(i), i != 3, "row {i}");
        }
    }

    #[test]
    fn dropout_extremes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let t = ConditioningTuple {
            task: Task::Main,
            src_latent: LatentGrid::zeros(12, 2, 2),
            ref_latent: LatentGrid::zeros(12, 2, 2),
            src_mask_code: MaskCode::zeros(1, 4, 4, 2, 1),
            tgt_mask_code: MaskCode::zeros(1, 4, 4, 2, 1),
            pose: PoseCondition::Descriptor(RelPoseDescriptor::zero()),
        };
        for _ in 0..100 {
            assert_eq!(drop_camera_condition(t.clone(), &mut rng, 0.0), t);
            assert_eq!(drop_camera_condition(t.clone(), &mut rng, 1.0).pose, PoseCondition::Null);
        }
    }
}
