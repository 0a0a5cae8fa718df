//! Intensity images (spectrograms) and their PNG encodings.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major grid of intensities in `[0, 1]`.
///
/// Columns are time frames; row 0 is the highest mel band, so low frequencies sit at the
/// bottom as in an ordinary spectrogram plot.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage<T> {
    width: usize,
    height: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> SpectrogramImage<T> {
    pub fn new(width: usize, height: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::shape(
                format!("{} pixels ({width}x{height})", width * height),
                pixels.len(),
            ));
        }
        if let Some(p) = pixels
            .iter()
            .find(|p| !(**p >= T::zero() && **p <= T::one()))
        {
            return Err(Error::invalid(format!("pixel {p} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![T::zero(); width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Built from a closure over `(row, col)`; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                pixels.push(f(r, c).max(T::zero()).min(T::one()));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<T> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    /// Columns `[start, end)`; out-of-range columns read as zero.
    pub fn columns(&self, start: isize, end: isize) -> Self {
        let width = (end - start).max(0) as usize;
        Self::from_fn(width, self.height, |r, c| {
            let src = start + c as isize;
            if src >= 0 && (src as usize) < self.width {
                self.get(r, src as usize)
            } else {
                T::zero()
            }
        })
    }

    pub fn mean(&self) -> T {
        if self.pixels.is_empty() {
            return T::zero();
        }
        self.pixels.iter().copied().sum::<T>() / T::of(self.pixels.len() as f64)
    }

    /// 8-bit gray levels, `round(255·I)`.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|p| (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_gray8(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            gray.iter().map(|&g| T::of(g as f64 / 255.0)).collect(),
        )
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(
            self.width as u32,
            self.height as u32,
            png::ColorType::Grayscale,
            &self.to_gray8(),
        )
    }

    /// Accepts 8-bit grayscale, or RGB/RGBA reduced by channel mean.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(Cursor::new(bytes));
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::Png(e.to_string()))?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let bytes = &buf[..info.buffer_size()];
        let channels = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => return Err(Error::Png("indexed color unsupported".into())),
        };
        let gray: Vec<u8> = match channels {
            1 => bytes.to_vec(),
            2 => bytes.chunks_exact(2).map(|p| p[0]).collect(),
            _ => bytes
                .chunks_exact(channels)
                .map(|p| ((p[0] as u32 + p[1] as u32 + p[2] as u32 + 1) / 3) as u8)
                .collect(),
        };
        Self::from_gray8(w, h, &gray)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png()?)?;
        Ok(())
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png(&std::fs::read(path)?)
    }
}

/// 8-bit RGB canvas used for annotated output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn from_gray<T: Scalar>(img: &SpectrogramImage<T>) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.to_gray8().into_iter().map(|g| [g, g, g]).collect(),
        }
    }

    pub fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        if row < self.height && col < self.width {
            self.data[row * self.width + col] = rgb;
        }
    }

    pub fn get(&self, row: usize, col: usize) -> [u8; 3] {
        self.data[row * self.width + col]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let flat: Vec<u8> = self.data.iter().flatten().copied().collect();
        encode_png(self.width as u32, self.height as u32, png::ColorType::Rgb, &flat)
    }
}

fn encode_png(width: u32, height: u32, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 {
        return Err(Error::Png("cannot encode an empty image".into()));
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        assert!(SpectrogramImage::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(SpectrogramImage::<f64>::new(1, 1, vec![1.5]).is_err());
        assert!(SpectrogramImage::<f64>::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let img = SpectrogramImage::from_fn(7, 3, |r, c| (r * 7 + c) as f64 / 20.0);
        let back = SpectrogramImage::<f64>::from_png(&img.to_png().unwrap()).unwrap();
        assert_eq!((back.width(), back.height()), (7, 3));
        assert_eq!(back.to_gray8(), img.to_gray8());
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn columns_pad_with_zero() {
        let img = SpectrogramImage::<f64>::filled(4, 2, 0.5).unwrap();
        let w = img.columns(-2, 3);
        assert_eq!(w.width(), 5);
        assert_eq!(w.row(0), &[0.0, 0.0, 0.5, 0.5, 0.5]);
    }
}
