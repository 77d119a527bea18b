//! Netpbm image I/O (PGM P5, PPM P6), a small float RGB image type and
//! JSON helpers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// `H × W × 3` image with channel values in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, color: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&color);
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "image data has {} values, expected {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear resample of the sub-rectangle `[r0, r1) × [c0, c1)` to
    /// `out_h × out_w`, sampling at pixel centres.
    pub fn crop_resize(&self, r0: usize, r1: usize, c0: usize, c1: usize, out_h: usize, out_w: usize) -> RgbImage {
        let mut out = RgbImage::filled(out_h, out_w, [0.0; 3]);
        let (ch, cw) = ((r1 - r0) as f64, (c1 - c0) as f64);
        for i in 0..out_h {
            let y = r0 as f64 + (i as f64 + 0.5) * ch / out_h as f64 - 0.5;
            let y = y.clamp(r0 as f64, (r1 - 1) as f64);
            let (y0, fy) = (y.floor() as usize, y - y.floor());
            let y1 = (y0 + 1).min(r1 - 1);
            for j in 0..out_w {
                let x = c0 as f64 + (j as f64 + 0.5) * cw / out_w as f64 - 0.5;
                let x = x.clamp(c0 as f64, (c1 - 1) as f64);
                let (x0, fx) = (x.floor() as usize, x - x.floor());
                let x1 = (x0 + 1).min(c1 - 1);
                let (p00, p01, p10, p11) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
                let mut v = [0.0; 3];
                for k in 0..3 {
                    let top = p00[k] * (1.0 - fx) + p01[k] * fx;
                    let bot = p10[k] * (1.0 - fx) + p11[k] * fx;
                    v[k] = top * (1.0 - fy) + bot * fy;
                }
                out.set_pixel(i, j, v);
            }
        }
        out
    }

    /// Quantize to 8 bits per channel.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_vec(height, width, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        write_ppm(path, self.width, self.height, &self.to_u8())
    }

    pub fn load_ppm(path: &Path) -> Result<Self> {
        let (w, h, bytes) = read_ppm(path)?;
        Self::from_u8(h, w, &bytes)
    }
}

/// Single-channel image as read from a PGM; 16-bit samples are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_pgm8(path: &Path, width: usize, height: usize, px: &[u8]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(px);
    write_bytes(path, &buf)
}

/// 16-bit PGM, big-endian samples.
pub fn write_pgm16(path: &Path, width: usize, height: usize, px: &[u16]) -> Result<()> {
    let mut buf = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in px {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    write_bytes(path, &buf)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let mut buf = format!("P6\n{width} {height}\n255\n").into_bytes();
    buf.extend_from_slice(rgb);
    write_bytes(path, &buf)
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::format(path, m.to_string());
    if bytes.len() < 2 {
        return Err(bad("truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        offset: pos,
    })
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(path, &bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::format(path, "not a binary PGM (P5)"));
    }
    let n = h.width * h.height;
    let raster = &bytes[h.offset.min(bytes.len())..];
    let data: Vec<u16> = if h.maxval < 256 {
        if raster.len() < n {
            return Err(Error::format(path, "truncated raster"));
        }
        raster[..n].iter().map(|&b| b as u16).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(Error::format(path, "truncated raster"));
        }
        raster[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Ok(GrayImage {
        height: h.height,
        width: h.width,
        maxval: h.maxval as u16,
        data,
    })
}

/// Returns `(width, height, rgb bytes)` of an 8-bit P6 file.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let h = parse_header(path, &bytes)?;
    if &h.magic != b"P6" || h.maxval > 255 {
        return Err(Error::format(path, "not an 8-bit binary PPM (P6)"));
    }
    let n = h.width * h.height * 3;
    let raster = &bytes[h.offset.min(bytes.len())..];
    if raster.len() < n {
        return Err(Error::format(path, "truncated raster"));
    }
    Ok((h.width, h.height, raster[..n].to_vec()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn netpbm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        write_pgm8(&p, 3, 2, &[0, 255, 0, 255, 0, 7]).unwrap();
        let g = read_pgm(&p).unwrap();
        assert_eq!((g.width, g.height, g.maxval), (3, 2, 255));
        assert_eq!(g.data, vec![0, 255, 0, 255, 0, 7]);

        let p16 = dir.path().join("b.pgm");
        write_pgm16(&p16, 2, 1, &[1, 65535]).unwrap();
        assert_eq!(read_pgm(&p16).unwrap().data, vec![1, 65535]);

        let img = RgbImage::from_u8(1, 2, &[10, 20, 30, 40, 50, 60]).unwrap();
        let pp = dir.path().join("c.ppm");
        img.save_ppm(&pp).unwrap();
        assert_eq!(RgbImage::load_ppm(&pp).unwrap(), img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        fs::write(&p, b"P5\n# made by hand\n2 1\n255\n\x00\xff").unwrap();
        assert_eq!(read_pgm(&p).unwrap().data, vec![0, 255]);
        fs::write(&p, b"P2\n2 1\n255\n0 1").unwrap();
        assert!(matches!(read_pgm(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn crop_resize_of_constant_is_constant() {
        let img = RgbImage::filled(10, 12, [0.25, 0.5, 0.75]);
        let c = img.crop_resize(2, 7, 3, 11, 4, 4);
        assert!(c.data().chunks(3).all(|p| p == [0.25, 0.5, 0.75]));
    }
}
