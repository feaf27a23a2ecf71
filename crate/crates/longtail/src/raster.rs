//! 8-bit RGB raster images: the pixel container shared by the stain,
//! preprocessing and inference modules, plus PNG/PPM file IO.

use std::path::Path;

use crate::{Error, Result};

/// An 8-bit RGB image, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    /// `width * height * 3` bytes, pixel `(x, y)` channel `c` at
    /// `(y * width + x) * 3 + c`.
    pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("image dimensions must be nonzero".into()));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::DimensionMismatch {
                what: "pixel buffer",
                expected: width * height * 3,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniform-color image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, self.height - 1 - y, self.get(x, y));
            }
        }
        out
    }

    /// Rotate 90 degrees clockwise. Output is `height x width`.
    pub fn rotate90(&self) -> Image {
        let mut out = Image::filled(self.height, self.width, [0, 0, 0]).expect("nonzero dims");
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.height - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    pub fn rotate180(&self) -> Image {
        self.rotate90().rotate90()
    }

    pub fn rotate270(&self) -> Image {
        self.rotate180().rotate90()
    }

    /// Scale every channel by `factor`, rounding and clamping to `[0, 255]`.
    pub fn scale_brightness(&self, factor: f64) -> Image {
        let pixels = self
            .pixels
            .iter()
            .map(|&v| (f64::from(v) * factor).round().clamp(0.0, 255.0) as u8)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Load a PNG or PPM image, converting to 8-bit RGB.
    pub fn load(path: &Path) -> Result<Image> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        let rgb = img.into_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Image::new(w, h, rgb.into_raw())
    }

    /// Save as PNG or binary PPM (P6), chosen by the file extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
                .expect("buffer length matches dimensions");
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => {
                // The pnm encoder picks ASCII or binary by subtype; write P6 directly.
                let mut data = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
                data.extend_from_slice(&self.pixels);
                std::fs::write(path, data)?;
                Ok(())
            }
            _ => buf
                .save(path)
                .map_err(|e| Error::Image(format!("{}: {e}", path.display()))),
        }
    }
}
