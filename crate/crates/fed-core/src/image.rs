//! Dense 3-channel images with values in [0, 1].

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Channel-major (3 x h x w) raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![0.0; 3 * h * w] }
    }

    pub fn filled(h: usize, w: usize, rgb: [f32; 3]) -> Self {
        let mut img = Image::new(h, w);
        for c in 0..3 {
            for v in &mut img.data[c * h * w..(c + 1) * h * w] {
                *v = rgb[c];
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean per-pixel L1 distance to another image of the same extent.
    pub fn l1_distance(&self, other: &Image) -> f64 {
        debug_assert_eq!((self.h, self.w), (other.h, other.w));
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs() as f64)
            .sum::<f64>()
            / n
    }

    /// Nearest-neighbor resize.
    pub fn resize(&self, h: usize, w: usize) -> Image {
        let mut out = Image::new(h, w);
        for y in 0..h {
            let sy = y * self.h / h;
            for x in 0..w {
                let sx = x * self.w / w;
                for c in 0..3 {
                    out.set(c, y, x, self.get(c, sy, sx));
                }
            }
        }
        out
    }

    /// Writes a binary PPM (P6) file.
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.h * self.w * 3 + 32);
        write!(buf, "P6\n{} {}\n255\n", self.w, self.h)?;
        for y in 0..self.h {
            for x in 0..self.w {
                for c in 0..3 {
                    buf.push((self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Writes the first channel as a binary PGM (P5) file.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.h * self.w + 32);
        write!(buf, "P5\n{} {}\n255\n", self.w, self.h)?;
        for y in 0..self.h {
            for x in 0..self.w {
                buf.push((self.get(0, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }
}
