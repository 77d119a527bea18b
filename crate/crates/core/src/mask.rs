//! Binary mask volumes, the space-to-depth mask code and the estimated
//! target mask.
//!
//! Pixel convention: pixel `(row, col)` covers `[row, row+1) × [col, col+1)`
//! with its centre at `(row + 0.5, col + 0.5)`. An NDC shift of 1.0 moves
//! content by half the image width (columns) or height (rows); positive
//! `Δr_y` moves content towards row 0.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::RelPoseDescriptor;
use crate::error::{Error, Result};
use crate::imageio;

/// `{0,1}` volume of shape `T × 1 × H × W`, stored frame-major, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMaskVolume {
    frames: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMaskVolume {
    pub fn zeros(frames: usize, height: usize, width: usize) -> Result<Self> {
        Self::check_dims(frames, height, width)?;
        Ok(Self {
            frames,
            height,
            width,
            data: vec![0; frames * height * width],
        })
    }

    pub fn ones(frames: usize, height: usize, width: usize) -> Result<Self> {
        let mut m = Self::zeros(frames, height, width)?;
        m.data.fill(1);
        Ok(m)
    }

    pub fn from_vec(frames: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::check_dims(frames, height, width)?;
        if data.len() != frames * height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} elements, expected {frames}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidMask(format!("non-binary value {v}")));
        }
        Ok(Self {
            frames,
            height,
            width,
            data,
        })
    }

    /// Single-frame mask from a predicate over `(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut m = Self::zeros(1, height, width)?;
        for r in 0..height {
            for c in 0..width {
                m.data[r * width + c] = f(r, c) as u8;
            }
        }
        Ok(m)
    }

    fn check_dims(frames: usize, height: usize, width: usize) -> Result<()> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "mask dimensions must be >= 1, got {frames}x{height}x{width}"
            )));
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.height, self.width)
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, frame: usize, row: usize, col: usize) -> u8 {
        self.data[(frame * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, frame: usize, row: usize, col: usize, value: bool) {
        self.data[(frame * self.height + row) * self.width + col] = value as u8;
    }

    pub fn frame(&self, frame: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[frame * n..(frame + 1) * n]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Write one PGM per frame (`<stem>_<frame>.pgm`, or `<stem>.pgm` when
    /// `T = 1`) plus `<stem>.json` with the shape.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        for f in 0..self.frames {
            let name = if self.frames == 1 {
                format!("{stem}.pgm")
            } else {
                format!("{stem}_{f}.pgm")
            };
            let px: Vec<u8> = self.frame(f).iter().map(|&v| v * 255).collect();
            imageio::write_pgm8(&dir.join(name), self.width, self.height, &px)?;
        }
        let meta = MaskMeta {
            frames: self.frames,
            height: self.height,
            width: self.width,
            spatial_stride: None,
            temporal_stride: None,
        };
        imageio::write_json(&dir.join(format!("{stem}.json")), &meta)
    }

    /// Single-frame mask from an 8-bit PGM; any nonzero value counts as 1.
    pub fn load_pgm(path: &Path) -> Result<Self> {
        let img = imageio::read_pgm(path)?;
        let data = img.data.iter().map(|&v| (v > 0) as u8).collect();
        Self::from_vec(1, img.height, img.width, data)
    }
}

/// Shape metadata written next to mask PGMs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskMeta {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub spatial_stride: Option<usize>,
    pub temporal_stride: Option<usize>,
}

/// Output of [`pixel_unshuffle`]: shape `(T/t) × (t·s²) × (H/s) × (W/s)`.
///
/// Channel `k` of an output cell holds input frame offset `k / s²`, then
/// row offset `(k % s²) / s`, then column offset `k % s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskCode {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    spatial_stride: usize,
    temporal_stride: usize,
    data: Vec<u8>,
}

impl MaskCode {
    pub fn zeros(frames: usize, height: usize, width: usize, s: usize, t: usize) -> Self {
        let channels = t * s * s;
        Self {
            frames,
            channels,
            height,
            width,
            spatial_stride: s,
            temporal_stride: t,
            data: vec![0; frames * channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.channels, self.height, self.width)
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn strides(&self) -> (usize, usize) {
        (self.spatial_stride, self.temporal_stride)
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, frame: usize, channel: usize, row: usize, col: usize) -> u8 {
        self.data[((frame * self.channels + channel) * self.height + row) * self.width + col]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn meta(&self) -> MaskMeta {
        MaskMeta {
            frames: self.frames * self.temporal_stride,
            height: self.height * self.spatial_stride,
            width: self.width * self.spatial_stride,
            spatial_stride: Some(self.spatial_stride),
            temporal_stride: Some(self.temporal_stride),
        }
    }
}

/// Space-to-depth rearrangement `Π_s`.
pub fn pixel_unshuffle(m: &BinaryMaskVolume, s: usize, t: usize) -> Result<MaskCode> {
    let (tf, h, w) = m.shape();
    if s == 0 || t == 0 || h % s != 0 || w % s != 0 || tf % t != 0 {
        return Err(Error::ShapeMismatch(format!(
            "volume {tf}x{h}x{w} is not divisible by strides (s={s}, t={t})"
        )));
    }
    let mut code = MaskCode::zeros(tf / t, h / s, w / s, s, t);
    let (oc, oh, ow) = (code.channels, code.height, code.width);
    for f in 0..tf {
        let (of, dt) = (f / t, f % t);
        for r in 0..h {
            let (orow, dy) = (r / s, r % s);
            for c in 0..w {
                let (ocol, dx) = (c / s, c % s);
                let ch = (dt * s + dy) * s + dx;
                code.data[((of * oc + ch) * oh + orow) * ow + ocol] = m.get(f, r, c);
            }
        }
    }
    Ok(code)
}

/// Inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle_inverse(c: &MaskCode) -> Result<BinaryMaskVolume> {
    let (s, t) = (c.spatial_stride, c.temporal_stride);
    if s == 0 || t == 0 || c.channels != t * s * s || c.data.len() != c.frames * c.channels * c.height * c.width {
        return Err(Error::ShapeMismatch(format!(
            "code shape {:?} inconsistent with strides (s={s}, t={t})",
            c.shape()
        )));
    }
    let mut m = BinaryMaskVolume::zeros(c.frames * t, c.height * s, c.width * s)?;
    for of in 0..c.frames {
        for ch in 0..c.channels {
            let (dt, dy, dx) = (ch / (s * s), (ch / s) % s, ch % s);
            for orow in 0..c.height {
                for ocol in 0..c.width {
                    let v = c.get(of, ch, orow, ocol);
                    m.set(of * t + dt, orow * s + dy, ocol * s + dx, v == 1);
                }
            }
        }
    }
    Ok(m)
}

/// Half-open pixel box `[row_min, row_max) × [col_min, col_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min
    }
    pub fn width(&self) -> usize {
        self.col_max - self.col_min
    }
}

/// Tight bounding box of the ones of a frame, in pixel-edge coordinates.
pub fn tight_bbox(m: &BinaryMaskVolume, frame: usize) -> Option<BBox> {
    let (h, w) = (m.height, m.width);
    let px = m.frame(frame);
    let mut b: Option<BBox> = None;
    for r in 0..h {
        for c in 0..w {
            if px[r * w + c] == 1 {
                let bb = b.get_or_insert(BBox {
                    row_min: r,
                    row_max: r + 1,
                    col_min: c,
                    col_max: c + 1,
                });
                bb.row_min = bb.row_min.min(r);
                bb.row_max = bb.row_max.max(r + 1);
                bb.col_min = bb.col_min.min(c);
                bb.col_max = bb.col_max.max(c + 1);
            }
        }
    }
    b
}

/// Square about the tight box: the shorter side grows to the longer one,
/// with the odd extra pixel going to the high side. Returned unclipped as
/// signed `(row_min, col_min, side)`.
pub(crate) fn square_about(b: &BBox) -> (i64, i64, i64) {
    let (bh, bw) = (b.height() as i64, b.width() as i64);
    let side = bh.max(bw);
    let r0 = b.row_min as i64 - (side - bh) / 2;
    let c0 = b.col_min as i64 - (side - bw) / 2;
    (r0, c0, side)
}

/// Tight box of the frame's ones, squared about its centre and clipped to
/// the image. `None` for an all-zero frame.
pub fn mask_bbox(m: &BinaryMaskVolume, frame: usize) -> Option<BBox> {
    let b = tight_bbox(m, frame)?;
    let (r0, c0, side) = square_about(&b);
    let clip = |lo: i64, n: usize| lo.clamp(0, n as i64) as usize;
    Some(BBox {
        row_min: clip(r0, m.height),
        row_max: clip(r0 + side, m.height),
        col_min: clip(c0, m.width),
        col_max: clip(c0 + side, m.width),
    })
}

fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Pixel index range whose centres fall in `[lo, hi)`, clipped to `[0, n)`.
fn covered_range(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).ceil().min(n as f64);
    if b <= a {
        (0, 0)
    } else {
        (a as usize, b as usize)
    }
}

/// Target-region estimate from the source mask: square the source box,
/// scale by `d_src / d_tgt`, shift by `(Δr_x, Δr_y)` and clip to the frame.
pub fn estimate_target_mask(
    m_src: &BinaryMaskVolume,
    f: &RelPoseDescriptor,
    d_src: f64,
    d_tgt: f64,
) -> Result<BinaryMaskVolume> {
    if !(d_src > 0.0 && d_tgt > 0.0) {
        return Err(Error::InvalidCamera(format!(
            "distances must be positive, got {d_src} and {d_tgt}"
        )));
    }
    let (tf, h, w) = m_src.shape();
    let mut out = BinaryMaskVolume::zeros(tf, h, w)?;
    if !f.is_in_frame() {
        return Ok(out);
    }
    let ratio = d_src / d_tgt;
    for frame in 0..tf {
        let Some(b) = tight_bbox(m_src, frame) else {
            continue;
        };
        let (r0, c0, side) = square_about(&b);
        let cy = r0 as f64 + side as f64 / 2.0;
        let cx = c0 as f64 + side as f64 / 2.0;
        let new_side = round_half_away(side as f64 * ratio).max(1.0);
        let cy = cy - f.dr_y * h as f64 / 2.0;
        let cx = cx + f.dr_x * w as f64 / 2.0;
        let half = new_side / 2.0;
        let (ra, rb) = covered_range(cy - half, cy + half, h);
        let (ca, cb) = covered_range(cx - half, cx + half, w);
        for r in ra..rb {
            for c in ca..cb {
                out.set(frame, r, c, true);
            }
        }
    }
    Ok(out)
}

/// `|a ∧ b| / |a ∨ b|`, 1 when both are empty.
pub fn mask_iou(a: &BinaryMaskVolume, b: &BinaryMaskVolume) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "mask shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}
