//! Floating-point RGB images and 8-bit PNG I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major RGB image with channel values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        RgbImage {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> [f64; 3] {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, rgb: [f64; 3]) {
        self.data[row * self.width + col] = rgb;
    }

    pub fn map(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&p| f(p)).collect(),
        }
    }

    /// `1×3×H×W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut data = vec![0.0; 3 * hw];
        for (i, p) in self.data.iter().enumerate() {
            for c in 0..3 {
                data[c * hw + i] = p[c];
            }
        }
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("consistent dims")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.nchw()?;
        if n != 1 || c != 3 {
            return Err(Error::dim("image", format!("expected 1x3xHxW, got {:?}", t.dims())));
        }
        let hw = h * w;
        let data = (0..hw)
            .map(|i| [t.data()[i], t.data()[hw + i], t.data()[2 * hw + i]])
            .collect();
        Ok(RgbImage { width: w, height: h, data })
    }

    pub fn quantize(v: f64) -> u8 {
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|p| p.map(Self::quantize))
            .collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        image::save_buffer(
            path.as_ref(),
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .pixels()
            .map(|p| p.0.map(|v| v as f64 / 255.0))
            .collect();
        Ok(RgbImage {
            width: w as usize,
            height: h as usize,
            data,
        })
    }
}

/// Writes a boolean grid as an 8-bit grayscale PNG with 0/255 values.
pub fn save_mask_png(path: impl AsRef<Path>, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(path.as_ref(), &bytes, width as u32, height as u32, image::ExtendedColorType::L8)?;
    Ok(())
}

/// Reads a grayscale PNG mask; values ≥ 128 are set.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path.as_ref())?.to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.pixels().map(|p| p.0[0] >= 128).collect()))
}
