//! 2D spectral machinery under periodic boundaries.
//!
//! The forward transform is unnormalized; the inverse divides by `w · h`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::kernel::KernelGrid;

/// Complex coefficients of a plane, row-major, same dimensions as the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    width: usize,
    height: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    /// `|F|²` per coefficient.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Row and column transforms for one pair of dimensions. Plans are
/// immutable and shareable across threads.
#[derive(Clone)]
pub struct SpectralPlan {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralPlan")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish()
    }
}

impl SpectralPlan {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "cannot transform a {width}x{height} plane"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    fn check(&self, dims: (usize, usize)) -> Result<()> {
        if dims != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                expected: (self.width, self.height),
                actual: dims,
            });
        }
        Ok(())
    }

    fn transform(&self, buf: &mut [Complex64], rows: &dyn Fft<f64>, cols: &dyn Fft<f64>) {
        let (w, h) = (self.width, self.height);
        rows.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            cols.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
    }

    pub fn forward_slice(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.width * self.height);
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, self.row_fwd.as_ref(), self.col_fwd.as_ref());
        buf
    }

    /// Inverse transform keeping only the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>) -> Vec<f64> {
        debug_assert_eq!(buf.len(), self.width * self.height);
        self.transform(&mut buf, self.row_inv.as_ref(), self.col_inv.as_ref());
        let scale = 1.0 / (self.width * self.height) as f64;
        buf.into_iter().map(|c| c.re * scale).collect()
    }

    pub fn forward(&self, plane: &ImagePlane) -> Result<Spectrum> {
        self.check(plane.dims())?;
        Ok(Spectrum {
            width: self.width,
            height: self.height,
            data: self.forward_slice(plane.data()),
        })
    }

    pub fn inverse(&self, spec: &Spectrum) -> Result<ImagePlane> {
        self.check(spec.dims())?;
        let data = self.inverse_real(spec.data.clone());
        ImagePlane::new(self.width, self.height, data)
    }

    /// Spectrum of a kernel embedded with [`pad_kernel`].
    pub fn kernel_spectrum(&self, k: &KernelGrid) -> Result<Vec<Complex64>> {
        let padded = pad_kernel(k, self.width, self.height)?;
        Ok(self.forward_slice(padded.data()))
    }

    /// Circular convolution of raw data with a kernel spectrum.
    pub fn convolve_with(&self, image_spec: &[Complex64], kernel_spec: &[Complex64]) -> Vec<f64> {
        let prod = image_spec
            .iter()
            .zip(kernel_spec)
            .map(|(a, b)| a * b)
            .collect();
        self.inverse_real(prod)
    }
}

pub fn fft2(plane: &ImagePlane) -> Result<Spectrum> {
    SpectralPlan::new(plane.width(), plane.height())?.forward(plane)
}

pub fn ifft2(spec: &Spectrum) -> Result<ImagePlane> {
    SpectralPlan::new(spec.width, spec.height)?.inverse(spec)
}

/// Embed a kernel in a `width × height` plane with its center cell at
/// `(0, 0)` and the other quadrants wrapped around, so that spectral
/// multiplication is centered circular convolution.
pub fn pad_kernel(k: &KernelGrid, width: usize, height: usize) -> Result<ImagePlane> {
    let h = k.size();
    if h > width || h > height {
        return Err(Error::InvalidInput(format!(
            "kernel of size {h} does not fit a {width}x{height} image"
        )));
    }
    let c = (h - 1) / 2;
    let mut data = vec![0.0; width * height];
    for i in 0..h {
        let r = (i + height - c) % height;
        for j in 0..h {
            let col = (j + width - c) % width;
            data[r * width + col] += k.get(i, j);
        }
    }
    ImagePlane::new(width, height, data)
}

/// Centered circular convolution, computed spectrally.
pub fn convolve(img: &ImagePlane, k: &KernelGrid) -> Result<ImagePlane> {
    let plan = SpectralPlan::new(img.width(), img.height())?;
    let ks = plan.kernel_spectrum(k)?;
    let is = plan.forward_slice(img.data());
    ImagePlane::new(img.width(), img.height(), plan.convolve_with(&is, &ks))
}

/// Spectra of the circular forward differences: `(∂x I)(r, c) = I(r, c+1) − I(r, c)`
/// and `(∂y I)(r, c) = I(r+1, c) − I(r, c)`.
pub fn grad_operators(width: usize, height: usize) -> Result<(Spectrum, Spectrum)> {
    if width < 2 || height < 2 {
        return Err(Error::InvalidInput(format!(
            "derivative operators need at least 2x2, got {width}x{height}"
        )));
    }
    let plan = SpectralPlan::new(width, height)?;
    let mut dx = vec![0.0; width * height];
    dx[0] = -1.0;
    dx[width - 1] = 1.0;
    let mut dy = vec![0.0; width * height];
    dy[0] = -1.0;
    dy[(height - 1) * width] = 1.0;
    Ok((
        Spectrum {
            width,
            height,
            data: plan.forward_slice(&dx),
        },
        Spectrum {
            width,
            height,
            data: plan.forward_slice(&dy),
        },
    ))
}

/// `|F(∂x)|² + |F(∂y)|²` evaluated in closed form.
fn gradient_power(width: usize, height: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let wx: Vec<f64> = (0..width)
        .map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / width as f64).cos())
        .collect();
    let wy: Vec<f64> = (0..height)
        .map(|k| 2.0 - 2.0 * (2.0 * PI * k as f64 / height as f64).cos())
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            out.push(wx[c] + wy[r]);
        }
    }
    out
}

/// Smallest admissible magnitude of a spectral denominator.
const MIN_DENOMINATOR: f64 = 1e-15;

/// Closed-form minimizer of `‖I∗K − B‖² + λ₃(‖∂x I‖² + ‖∂y I‖² + ‖I‖²)`:
///
/// `I = F⁻¹[ conj(F K) F B / (|F K|² + λ₃(|F ∂x|² + |F ∂y|²) + λ₃) ]`.
pub fn solve_latent(blurred: &ImagePlane, k: &KernelGrid, lambda3: f64) -> Result<ImagePlane> {
    let plan = SpectralPlan::new(blurred.width(), blurred.height())?;
    let bs = plan.forward_slice(blurred.data());
    solve_latent_with(&plan, &bs, k, lambda3)
}

/// [`solve_latent`] with a prepared plan and the spectrum of `B`.
pub fn solve_latent_with(
    plan: &SpectralPlan,
    blurred_spec: &[Complex64],
    k: &KernelGrid,
    lambda3: f64,
) -> Result<ImagePlane> {
    if !(lambda3 >= 0.0) || !lambda3.is_finite() {
        return Err(Error::Config(format!(
            "lambda3 must be finite and nonnegative, got {lambda3}"
        )));
    }
    let (w, h) = plan.dims();
    let ks = plan.kernel_spectrum(k)?;
    let grad = if lambda3 > 0.0 && w >= 2 && h >= 2 {
        gradient_power(w, h)
    } else {
        vec![0.0; w * h]
    };
    let mut out = Vec::with_capacity(w * h);
    for (idx, ((b, kf), g)) in blurred_spec.iter().zip(&ks).zip(&grad).enumerate() {
        let denom = kf.norm_sqr() + lambda3 * g + lambda3;
        if denom.abs() < MIN_DENOMINATOR {
            return Err(Error::IllPosed {
                row: idx / w,
                col: idx % w,
                magnitude: denom,
            });
        }
        out.push(kf.conj() * b / denom);
    }
    let data = plan.inverse_real(out);
    ImagePlane::new(w, h, data)
        .map_err(|_| Error::NonFinite("latent image after spectral division".into()))
}

/// Energy minimized by [`solve_latent`], evaluated in the spatial domain.
pub fn latent_energy(
    latent: &ImagePlane,
    blurred: &ImagePlane,
    k: &KernelGrid,
    lambda3: f64,
) -> Result<f64> {
    latent.check_same_dims(blurred)?;
    let residual = convolve(latent, k)?;
    let data: f64 = residual
        .data()
        .iter()
        .zip(blurred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let (w, h) = latent.dims();
    let mut prior = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = latent.get(r, c);
            let gx = latent.get(r, (c + 1) % w) - v;
            let gy = latent.get((r + 1) % h, c) - v;
            prior += gx * gx + gy * gy + v * v;
        }
    }
    Ok(data + lambda3 * prior)
}

/// Blend a border of `width` pixels toward a circularly smoothed copy with a
/// raised cosine ramp. The smoothed copy averages across the wrap seam, so
/// the periodic extension has no jump at the edges while coarse content
/// near the border survives.
pub fn edge_taper(plane: &ImagePlane, width: usize) -> ImagePlane {
    if width == 0 {
        return plane.clone();
    }
    let (w, h) = plane.dims();
    let smoothed = match seam_smoother(width, w.min(h)).and_then(|k| convolve(plane, &k)) {
        Ok(s) => s,
        Err(_) => ImagePlane::from_raw(w, h, vec![plane.mean(); w * h]),
    };
    let ramp = |d: usize| -> f64 {
        if d >= width {
            1.0
        } else {
            0.5 - 0.5 * (std::f64::consts::PI * (d as f64 + 0.5) / width as f64).cos()
        }
    };
    let data = plane
        .data()
        .iter()
        .zip(smoothed.data())
        .enumerate()
        .map(|(idx, (&v, &s))| {
            let (r, c) = (idx / w, idx % w);
            let weight = ramp(r.min(h - 1 - r)) * ramp(c.min(w - 1 - c));
            weight * v + (1.0 - weight) * s
        })
        .collect();
    ImagePlane::from_raw(w, h, data)
}

/// Gaussian with standard deviation `width / 2` on the largest odd grid that
/// fits both `2·width + 1` and the image.
fn seam_smoother(width: usize, max_side: usize) -> Result<KernelGrid> {
    let mut size = (2 * width + 1).min(max_side);
    if size.is_multiple_of(2) {
        size -= 1;
    }
    let c = (size / 2) as f64;
    let var = (width as f64 / 2.0).powi(2).max(0.25);
    let raw = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * var)).exp()
        })
        .collect();
    crate::kernel::normalize_kernel(size, raw)
}
