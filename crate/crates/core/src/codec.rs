//! 8-bit PNG / PGM reading and PNG writing.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{
    denormalize_intensities, normalize_intensities, ColorSpace, MultiChannelImage, RawImage,
};
use crate::kernel::KernelGrid;

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Codec(format!("{}: {e}", path.display()))
}

/// Decode a PNG or PGM file. Gray-like color types load as one plane,
/// everything else as RGB (alpha dropped).
pub fn read_image(path: &Path) -> Result<MultiChannelImage> {
    let bytes = std::fs::read(path)?;
    let format = image::guess_format(&bytes).map_err(|e| codec_err(path, e))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(codec_err(path, format!("unsupported format {format:?}")));
    }
    let img =
        image::load_from_memory_with_format(&bytes, format).map_err(|e| codec_err(path, e))?;
    let raw = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => {
            let g = img.to_luma8();
            RawImage {
                width: g.width() as usize,
                height: g.height() as usize,
                colorspace: ColorSpace::Gray,
                samples: g.into_raw(),
            }
        }
        other => {
            let rgb = other.to_rgb8();
            RawImage {
                width: rgb.width() as usize,
                height: rgb.height() as usize,
                colorspace: ColorSpace::Rgb,
                samples: rgb.into_raw(),
            }
        }
    };
    normalize_intensities(&raw)
}

fn save_raw(path: &Path, raw: &RawImage) -> Result<()> {
    let color = match raw.colorspace {
        ColorSpace::Gray => ColorType::L8,
        ColorSpace::Rgb => ColorType::Rgb8,
    };
    image::save_buffer_with_format(
        path,
        &raw.samples,
        raw.width as u32,
        raw.height as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| codec_err(path, e))
}

/// Write as 8-bit PNG, clamping to `[0, 1]` first.
pub fn write_png(path: &Path, img: &MultiChannelImage) -> Result<()> {
    save_raw(path, &denormalize_intensities(img))
}

pub fn write_kernel_heatmap(path: &Path, kernel: &KernelGrid) -> Result<()> {
    save_raw(
        path,
        &RawImage {
            width: kernel.size(),
            height: kernel.size(),
            colorspace: ColorSpace::Gray,
            samples: kernel.heatmap(),
        },
    )
}

pub fn write_kernel_text(path: &Path, kernel: &KernelGrid) -> Result<()> {
    std::fs::write(path, kernel.to_text())?;
    Ok(())
}

pub fn read_kernel_text(path: &Path) -> Result<KernelGrid> {
    KernelGrid::from_text(&std::fs::read_to_string(path)?)
}
