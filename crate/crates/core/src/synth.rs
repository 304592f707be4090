//! Ground-truth test pairs: procedural clean images blurred by known
//! mixture kernels plus seeded Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::convolve;
use crate::image::{ImagePlane, MultiChannelImage};
use crate::kernel::{
    render_mixture, BaseKernelParams, KernelGrid, KernelRenderContext, MixtureParams, Variant,
};

/// Where the true kernel comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSource {
    Mixture {
        params: MixtureParams,
        kernel_size: usize,
    },
    /// Explicit weights (renormalized on use).
    Grid {
        size: usize,
        weights: Vec<f64>,
    },
    Delta {
        size: usize,
    },
}

impl KernelSource {
    pub fn kernel(&self) -> Result<KernelGrid> {
        match self {
            KernelSource::Mixture {
                params,
                kernel_size,
            } => render_mixture(params, &KernelRenderContext::new(*kernel_size)?),
            KernelSource::Grid { size, weights } => {
                crate::kernel::normalize_kernel(*size, weights.clone())
            }
            KernelSource::Delta { size } => KernelGrid::delta(*size),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            KernelSource::Mixture { kernel_size, .. } => *kernel_size,
            KernelSource::Grid { size, .. } | KernelSource::Delta { size } => *size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kernel: KernelSource,
    /// Standard deviation of additive noise on the `[0, 1]` scale.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// `B = I₀ ∗ K + n` under periodic boundaries, independently per channel.
pub fn degrade(
    clean: &MultiChannelImage,
    spec: &DegradationSpec,
) -> Result<(MultiChannelImage, KernelGrid)> {
    if !(spec.noise_sigma >= 0.0) || !spec.noise_sigma.is_finite() {
        return Err(Error::InvalidInput(format!(
            "noise_sigma must be finite and nonnegative, got {}",
            spec.noise_sigma
        )));
    }
    let kernel = spec.kernel.kernel()?;
    let (w, h) = clean.dims();
    if w < kernel.size() || h < kernel.size() {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than the {0}x{0} kernel",
            kernel.size()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
    let channels = clean
        .channels()
        .iter()
        .map(|ch| {
            let blurred = convolve(ch, &kernel)?;
            if spec.noise_sigma == 0.0 {
                return Ok(blurred);
            }
            let data = blurred
                .into_data()
                .into_iter()
                .map(|v| v + noise.sample(&mut rng))
                .collect();
            ImagePlane::new(w, h, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        MultiChannelImage::new(clean.colorspace(), channels)?,
        kernel,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTier {
    Low,
    High,
}

impl NoiseTier {
    pub fn sigma(self) -> f64 {
        match self {
            NoiseTier::Low => 0.01,
            NoiseTier::High => 0.04,
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            NoiseTier::Low => "low",
            NoiseTier::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Kernel shape without the noise tier, e.g. `"elliptic"`.
    pub shape: String,
    pub tier: NoiseTier,
    pub spec: DegradationSpec,
}

/// Side of the kernel grid used by every preset.
pub const PRESET_KERNEL_SIZE: usize = 31;

fn preset_shapes() -> Vec<(&'static str, MixtureParams)> {
    let mixture = |variant, bases| MixtureParams::new(variant, bases).expect("valid preset");
    vec![
        (
            "circular",
            mixture(Variant::Simple, vec![BaseKernelParams::isotropic(4.0)]),
        ),
        (
            "elliptic",
            mixture(Variant::Scale, vec![BaseKernelParams::scaled(9.0, 1.5)]),
        ),
        (
            "cross-lines",
            mixture(
                Variant::Scale,
                vec![
                    BaseKernelParams::scaled(12.0, 0.4),
                    BaseKernelParams::scaled(0.4, 12.0),
                ],
            ),
        ),
        (
            "two-source",
            mixture(
                Variant::Center,
                vec![
                    BaseKernelParams::centered(2.0, 2.0, 0.0, 0.0),
                    BaseKernelParams::centered(2.0, 2.0, 7.0, 4.0),
                ],
            ),
        ),
        (
            "rotated",
            mixture(
                Variant::Rotation,
                vec![BaseKernelParams::rotated(
                    10.0,
                    1.0,
                    0.0,
                    0.0,
                    std::f64::consts::FRAC_PI_4,
                )],
            ),
        ),
        (
            "scattered",
            mixture(
                Variant::Center,
                vec![
                    BaseKernelParams::centered(1.5, 1.5, -4.0, 3.0),
                    BaseKernelParams::centered(2.5, 1.0, 2.0, -1.0),
                    BaseKernelParams::centered(1.0, 3.0, -1.0, -5.0),
                ],
            ),
        ),
    ]
}

/// Named degradations: six kernel shapes at two noise tiers, named
/// `<shape>-low` and `<shape>-high`.
pub fn preset_scenarios() -> Vec<Scenario> {
    let mut out = Vec::new();
    for (idx, (shape, params)) in preset_shapes().into_iter().enumerate() {
        for tier in [NoiseTier::Low, NoiseTier::High] {
            out.push(Scenario {
                name: format!("{shape}-{}", tier.suffix()),
                shape: shape.to_string(),
                tier,
                spec: DegradationSpec {
                    kernel: KernelSource::Mixture {
                        params: params.clone(),
                        kernel_size: PRESET_KERNEL_SIZE,
                    },
                    noise_sigma: tier.sigma(),
                    seed: 1000 + idx as u64 * 2 + tier as u64,
                },
            });
        }
    }
    out
}

pub fn find_scenario(name: &str) -> Result<Scenario> {
    let all = preset_scenarios();
    all.iter().find(|s| s.name == name).cloned().ok_or_else(|| {
        let names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        Error::Config(format!(
            "unknown scenario {name:?}; available: {}",
            names.join(", ")
        ))
    })
}

/// Procedural clean images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Checkerboard,
    Disks,
    Grating,
    /// Blocks, disks, and a grating on one canvas.
    Composite,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Pattern::Checkerboard),
            "disks" => Ok(Pattern::Disks),
            "grating" => Ok(Pattern::Grating),
            "composite" => Ok(Pattern::Composite),
            _ => Err(Error::Config(format!(
                "unknown pattern {s:?} (expected checkerboard, disks, grating or composite)"
            ))),
        }
    }
}

/// Quantized to multiples of 1/255 so 8-bit codecs round-trip exactly.
fn q(v: f64) -> f64 {
    (v * 255.0).round() / 255.0
}

pub fn checkerboard(width: usize, height: usize, square: usize) -> ImagePlane {
    let square = square.max(1);
    ImagePlane::from_fn(width, height, |r, c| {
        if (r / square + c / square).is_multiple_of(2) {
            q(0.8)
        } else {
            q(0.2)
        }
    })
    .expect("finite procedural image")
}

pub fn disks(width: usize, height: usize) -> ImagePlane {
    let (wf, hf) = (width as f64, height as f64);
    let centers = [
        (0.3, 0.3, 0.18, 0.9),
        (0.7, 0.35, 0.12, 0.6),
        (0.45, 0.72, 0.2, 0.75),
        (0.8, 0.8, 0.08, 0.95),
    ];
    ImagePlane::from_fn(width, height, |r, c| {
        let (x, y) = (c as f64 / wf, r as f64 / hf);
        let mut v = 0.15;
        for &(cx, cy, rad, level) in &centers {
            if (x - cx).powi(2) + (y - cy).powi(2) <= rad * rad {
                v = level;
            }
        }
        q(v)
    })
    .expect("finite procedural image")
}

pub fn grating(width: usize, height: usize) -> ImagePlane {
    ImagePlane::from_fn(width, height, |r, c| {
        let period = 3 + (r * 6) / height.max(1);
        if (c / period).is_multiple_of(2) {
            q(0.85)
        } else {
            q(0.15)
        }
    })
    .expect("finite procedural image")
}

pub fn composite(width: usize, height: usize) -> ImagePlane {
    let board = checkerboard(width, height, (width / 8).max(2));
    let round = disks(width, height);
    let lines = grating(width, height);
    ImagePlane::from_fn(width, height, |r, c| {
        let left = c < width / 2;
        let top = r < height / 2;
        match (top, left) {
            (true, true) => board.get(r, c),
            (true, false) => lines.get(r, c),
            _ => round.get(r, c),
        }
    })
    .expect("finite procedural image")
}

pub fn pattern(kind: Pattern, width: usize, height: usize) -> ImagePlane {
    match kind {
        Pattern::Checkerboard => checkerboard(width, height, (width / 8).max(2)),
        Pattern::Disks => disks(width, height),
        Pattern::Grating => grating(width, height),
        Pattern::Composite => composite(width, height),
    }
}
