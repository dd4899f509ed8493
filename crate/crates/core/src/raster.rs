//! Single-band intensity rasters and binary PGM (P5) I/O.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Positions this close outside the outermost pixel centers are snapped onto them.
pub const EDGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// 255 for 8-bit data, up to 65535 for 16-bit data.
    pub max_value: u16,
    /// Row-major intensities.
    pub pixels: Vec<u16>,
    pub nodata: u16,
}

impl Raster {
    pub fn new(width: usize, height: usize, max_value: u16, nodata: u16) -> Self {
        Self { width, height, max_value, pixels: vec![nodata; width * height], nodata }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        max_value: u16,
        nodata: u16,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c));
            }
        }
        Self { width, height, max_value, pixels, nodata }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: u16) {
        self.pixels[row * self.width + col] = v;
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.get(row, col) != self.nodata
    }

    /// Bilinear interpolation at a continuous position; `None` when any of
    /// the four neighbours is outside the raster or nodata.
    pub fn bilinear(&self, row: f64, col: f64) -> Option<f64> {
        let snap = |v: f64, n: usize| {
            let last = n as f64 - 1.0;
            if v < 0.0 && v > -EDGE_TOLERANCE {
                0.0
            } else if v > last && v < last + EDGE_TOLERANCE {
                last
            } else {
                v
            }
        };
        let (row, col) = (snap(row, self.height), snap(col, self.width));
        if !(row >= 0.0 && col >= 0.0) {
            return None;
        }
        let r0 = row.floor() as usize;
        let c0 = col.floor() as usize;
        if r0 >= self.height || c0 >= self.width {
            return None;
        }
        let fr = row - r0 as f64;
        let fc = col - c0 as f64;
        let r1 = if fr > 0.0 { r0 + 1 } else { r0 };
        let c1 = if fc > 0.0 { c0 + 1 } else { c0 };
        if r1 >= self.height || c1 >= self.width {
            return None;
        }
        let q = [self.get(r0, c0), self.get(r0, c1), self.get(r1, c0), self.get(r1, c1)];
        if q.contains(&self.nodata) {
            return None;
        }
        let [a, b, c, d] = q.map(f64::from);
        let top = a + (b - a) * fc;
        let bottom = c + (d - c) * fc;
        Some(top + (bottom - top) * fr)
    }

    /// Rounds an interpolated value to a storable intensity that is not nodata.
    pub fn quantize(&self, v: f64) -> u16 {
        let q = v.round().clamp(0.0, f64::from(self.max_value)) as u16;
        if q != self.nodata {
            q
        } else if self.nodata < self.max_value {
            q + 1
        } else {
            q - 1
        }
    }

    /// Applies `f` to every valid pixel, leaving nodata untouched.
    pub fn map_valid(&self, f: impl Fn(u16) -> u16) -> Raster {
        let mut out = self.clone();
        for p in out.pixels.iter_mut() {
            if *p != self.nodata {
                *p = f(*p);
            }
        }
        out
    }

    pub fn read_pgm(path: impl AsRef<Path>, nodata: u16) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&bytes, nodata).map_err(|m| Error::parse(path, m))
    }

    pub fn decode_pgm(bytes: &[u8], nodata: u16) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut header = Vec::with_capacity(4);
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PGM header".into());
            }
            header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if header[0] != "P5" {
            return Err(format!("unsupported magic {:?}, expected P5", header[0]));
        }
        let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("invalid PGM {what} {s:?}"));
        let width = parse(&header[1], "width")?;
        let height = parse(&header[2], "height")?;
        let max = parse(&header[3], "maxval")?;
        if max == 0 || max > 65535 {
            return Err(format!("invalid PGM maxval {max}"));
        }
        // exactly one whitespace byte separates the header from the data
        pos += 1;
        let n = width * height;
        let data = bytes.get(pos..).unwrap_or(&[]);
        let pixels: Vec<u16> = if max < 256 {
            if data.len() < n {
                return Err(format!("expected {n} bytes of pixel data, found {}", data.len()));
            }
            data[..n].iter().map(|&b| u16::from(b)).collect()
        } else {
            if data.len() < 2 * n {
                return Err(format!("expected {} bytes of pixel data, found {}", 2 * n, data.len()));
            }
            data[..2 * n].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        Ok(Raster { width, height, max_value: max as u16, pixels, nodata })
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.max_value).into_bytes();
        if self.max_value < 256 {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        } else {
            for p in &self.pixels {
                out.extend_from_slice(&p.to_be_bytes());
            }
        }
        out
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_8_and_16_bit() {
        let r8 = Raster::from_fn(5, 3, 255, 0, |r, c| (r * 40 + c * 7) as u16);
        assert_eq!(Raster::decode_pgm(&r8.encode_pgm(), 0).unwrap(), r8);
        let r16 = Raster::from_fn(4, 4, 4095, 0, |r, c| (r * 1000 + c * 3) as u16);
        assert_eq!(Raster::decode_pgm(&r16.encode_pgm(), 0).unwrap(), r16);
    }

    #[test]
    fn pgm_header_comments() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x01\x02";
        let r = Raster::decode_pgm(bytes, 0).unwrap();
        assert_eq!(r.pixels, vec![1, 2]);
    }

    #[test]
    fn pgm_rejects_ascii_variant() {
        assert!(Raster::decode_pgm(b"P2\n1 1\n255\n0\n", 0).is_err());
    }

    #[test]
    fn bilinear_interpolates_and_respects_nodata() {
        let r = Raster::from_fn(3, 3, 255, 0, |row, col| (10 + 10 * col + 30 * row) as u16);
        assert_eq!(r.bilinear(0.5, 0.5), Some(30.0));
        assert_eq!(r.bilinear(2.0, 2.0), Some(90.0));
        assert_eq!(r.bilinear(2.2, 0.0), None);
        assert_eq!(r.bilinear(-0.1, 0.0), None);
        assert_eq!(r.bilinear(-1e-5, 2.0 + 1e-5), Some(30.0));
        let mut holes = r.clone();
        holes.set(1, 1, 0);
        assert_eq!(holes.bilinear(0.5, 0.5), None);
        assert_eq!(holes.bilinear(0.0, 0.0), Some(10.0));
    }

    #[test]
    fn quantize_never_produces_nodata() {
        let r = Raster::new(1, 1, 255, 0);
        assert_eq!(r.quantize(0.2), 1);
        assert_eq!(r.quantize(300.0), 255);
        let top = Raster::new(1, 1, 255, 255);
        assert_eq!(top.quantize(254.7), 254);
    }
}
