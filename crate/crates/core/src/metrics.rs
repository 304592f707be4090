//! RMSE and two PSNR conventions.
//!
//! Planes are compared on the 8-bit scale: `[0, 1]` intensities are
//! multiplied by 255 first. In every function the first argument is the
//! reference image and the second the recovered one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{ImagePlane, MultiChannelImage};

pub const PEAK_8BIT: f64 = 255.0;

fn mse_255(reference: &ImagePlane, recovered: &ImagePlane) -> Result<f64> {
    reference.check_same_dims(recovered)?;
    let sum: f64 = reference
        .data()
        .iter()
        .zip(recovered.data())
        .map(|(a, b)| {
            let d = (a - b) * PEAK_8BIT;
            d * d
        })
        .sum();
    Ok(sum / reference.len() as f64)
}

pub fn rmse(reference: &ImagePlane, recovered: &ImagePlane) -> Result<f64> {
    Ok(mse_255(reference, recovered)?.sqrt())
}

/// Dynamic range of the recovered image divided by the MSE, without a
/// logarithm.
pub fn psnr_paper(reference: &ImagePlane, recovered: &ImagePlane) -> Result<f64> {
    let mse = mse_255(reference, recovered)?;
    if mse == 0.0 {
        return Err(Error::ZeroMse);
    }
    let (lo, hi) = recovered
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok((hi - lo) * PEAK_8BIT / mse)
}

/// Conventional `10 log₁₀(peak² / MSE)` in decibels.
pub fn psnr_db(reference: &ImagePlane, recovered: &ImagePlane, peak: f64) -> Result<f64> {
    let mse = mse_255(reference, recovered)?;
    psnr_db_from_mse(mse, peak)
}

pub fn psnr_db_from_mse(mse: f64, peak: f64) -> Result<f64> {
    if mse == 0.0 {
        return Err(Error::ZeroMse);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelQuality {
    pub rmse: f64,
    /// `None` when the MSE is zero.
    pub psnr_paper: Option<f64>,
    pub psnr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub rmse: f64,
    pub psnr_paper: Option<f64>,
    pub psnr_db: Option<f64>,
    pub undefined: bool,
    pub width: usize,
    pub height: usize,
    pub channels: Vec<ChannelQuality>,
}

fn undefined_ok(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::ZeroMse) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn channel_quality(reference: &ImagePlane, recovered: &ImagePlane) -> Result<ChannelQuality> {
    Ok(ChannelQuality {
        rmse: rmse(reference, recovered)?,
        psnr_paper: undefined_ok(psnr_paper(reference, recovered))?,
        psnr_db: undefined_ok(psnr_db(reference, recovered, PEAK_8BIT))?,
    })
}

/// Per-channel metrics plus their mean. A PSNR mean is reported only when
/// it is defined on every channel.
pub fn quality_report(
    reference: &MultiChannelImage,
    recovered: &MultiChannelImage,
) -> Result<QualityReport> {
    if reference.dims() != recovered.dims() {
        return Err(Error::DimensionMismatch {
            expected: reference.dims(),
            actual: recovered.dims(),
        });
    }
    if reference.channels().len() != recovered.channels().len() {
        return Err(Error::InvalidInput(format!(
            "channel count mismatch: {} vs {}",
            reference.channels().len(),
            recovered.channels().len()
        )));
    }
    let channels = reference
        .channels()
        .iter()
        .zip(recovered.channels())
        .map(|(a, b)| channel_quality(a, b))
        .collect::<Result<Vec<_>>>()?;
    let n = channels.len() as f64;
    let mean_opt = |f: fn(&ChannelQuality) -> Option<f64>| -> Option<f64> {
        channels.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
    };
    let psnr_paper = mean_opt(|c| c.psnr_paper);
    let psnr_db = mean_opt(|c| c.psnr_db);
    Ok(QualityReport {
        rmse: channels.iter().map(|c| c.rmse).sum::<f64>() / n,
        undefined: psnr_paper.is_none() || psnr_db.is_none(),
        psnr_paper,
        psnr_db,
        width: reference.width(),
        height: reference.height(),
        channels,
    })
}
