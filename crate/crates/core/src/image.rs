//! Image planes and multi-channel images.
//!
//! Intensities live on the canonical `[0, 1]` scale; the 8-bit codecs divide
//! by 255 on the way in and multiply back on the way out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major grid of finite real intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "zero-sized plane {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "plane data has {} samples, expected {}x{}={}",
                data.len(),
                width,
                height,
                width * height
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "plane sample at ({}, {})",
                pos / width,
                pos % width
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    /// Crate-internal constructor for buffers already known to be valid.
    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn check_same_dims(&self, other: &ImagePlane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// `‖self − other‖₂`.
    pub fn distance(&self, other: &ImagePlane) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Copy with every sample clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Gray,
    Rgb,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb => 3,
        }
    }
}

/// One gray plane or three RGB planes of identical size.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelImage {
    colorspace: ColorSpace,
    channels: Vec<ImagePlane>,
}

impl MultiChannelImage {
    pub fn new(colorspace: ColorSpace, channels: Vec<ImagePlane>) -> Result<Self> {
        if channels.len() != colorspace.channels() {
            return Err(Error::InvalidInput(format!(
                "{:?} image needs {} channels, got {}",
                colorspace,
                colorspace.channels(),
                channels.len()
            )));
        }
        let dims = channels[0].dims();
        for ch in &channels[1..] {
            if ch.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: ch.dims(),
                });
            }
        }
        Ok(Self {
            colorspace,
            channels,
        })
    }

    pub fn gray(plane: ImagePlane) -> Self {
        Self {
            colorspace: ColorSpace::Gray,
            channels: vec![plane],
        }
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn channels(&self) -> &[ImagePlane] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<ImagePlane> {
        self.channels
    }

    pub fn width(&self) -> usize {
        self.channels[0].width()
    }

    pub fn height(&self) -> usize {
        self.channels[0].height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].dims()
    }

    /// Gray passes through; RGB is projected with 0.299 R + 0.587 G + 0.114 B.
    pub fn luminance(&self) -> ImagePlane {
        match self.colorspace {
            ColorSpace::Gray => self.channels[0].clone(),
            ColorSpace::Rgb => {
                let [r, g, b] = [&self.channels[0], &self.channels[1], &self.channels[2]];
                let data = r
                    .data()
                    .iter()
                    .zip(g.data())
                    .zip(b.data())
                    .map(|((r, g), b)| 0.299 * r + 0.587 * g + 0.114 * b)
                    .collect();
                ImagePlane::from_raw(r.width(), r.height(), data)
            }
        }
    }

    pub fn clamped(&self) -> Self {
        Self {
            colorspace: self.colorspace,
            channels: self.channels.iter().map(ImagePlane::clamped).collect(),
        }
    }
}

/// Decoded 8-bit samples, interleaved per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub colorspace: ColorSpace,
    pub samples: Vec<u8>,
}

/// Divide every 8-bit sample by 255.
pub fn normalize_intensities(raw: &RawImage) -> Result<MultiChannelImage> {
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::InvalidInput("zero-dimension image".into()));
    }
    let nch = raw.colorspace.channels();
    let npx = raw.width * raw.height;
    if raw.samples.len() != npx * nch {
        return Err(Error::InvalidInput(format!(
            "expected {} samples, got {}",
            npx * nch,
            raw.samples.len()
        )));
    }
    let channels = (0..nch)
        .map(|c| {
            let data = (0..npx)
                .map(|p| f64::from(raw.samples[p * nch + c]) / 255.0)
                .collect();
            ImagePlane::from_raw(raw.width, raw.height, data)
        })
        .collect();
    MultiChannelImage::new(raw.colorspace, channels)
}

/// Inverse of [`normalize_intensities`]: clamp to `[0, 1]`, scale, round.
pub fn denormalize_intensities(img: &MultiChannelImage) -> RawImage {
    let nch = img.channels.len();
    let npx = img.width() * img.height();
    let mut samples = vec![0u8; npx * nch];
    for (c, plane) in img.channels.iter().enumerate() {
        for (p, v) in plane.data().iter().enumerate() {
            samples[p * nch + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    RawImage {
        width: img.width(),
        height: img.height(),
        colorspace: img.colorspace,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray_raw(width: usize, height: usize, samples: Vec<u8>) -> RawImage {
        RawImage {
            width,
            height,
            colorspace: ColorSpace::Gray,
            samples,
        }
    }

    #[test]
    fn zero_image_normalizes_to_zero_plane() {
        let img = normalize_intensities(&gray_raw(4, 4, vec![0; 16])).unwrap();
        assert!(img.channels()[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn endpoints_and_midpoint() {
        let img = normalize_intensities(&gray_raw(2, 1, vec![255, 128])).unwrap();
        assert_eq!(img.channels()[0].data()[0], 1.0);
        assert_eq!(img.channels()[0].data()[1], 128.0 / 255.0);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(normalize_intensities(&gray_raw(0, 3, vec![])).is_err());
    }

    #[test]
    fn plane_rejects_nan_and_bad_length() {
        assert!(ImagePlane::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(ImagePlane::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn rgb_channels_must_agree() {
        let a = ImagePlane::zeros(2, 2).unwrap();
        let b = ImagePlane::zeros(3, 2).unwrap();
        assert!(MultiChannelImage::new(ColorSpace::Rgb, vec![a.clone(), a.clone(), b]).is_err());
        assert!(MultiChannelImage::new(ColorSpace::Rgb, vec![a]).is_err());
    }

    #[test]
    fn luminance_weights() {
        let one = ImagePlane::filled(1, 1, 1.0).unwrap();
        let zero = ImagePlane::zeros(1, 1).unwrap();
        let img =
            MultiChannelImage::new(ColorSpace::Rgb, vec![one.clone(), zero.clone(), zero]).unwrap();
        assert_eq!(img.luminance().data()[0], 0.299);
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), seed in any::<u64>()) {
            let colorspace = if rgb { ColorSpace::Rgb } else { ColorSpace::Gray };
            let n = w * h * colorspace.channels();
            let samples: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(6364136223846793005).wrapping_add((i as u64).wrapping_mul(1442695040888963407)) >> 56) as u8).collect();
            let raw = RawImage { width: w, height: h, colorspace, samples };
            let back = denormalize_intensities(&normalize_intensities(&raw).unwrap());
            prop_assert_eq!(back, raw);
        }
    }
}
