//! Alternating blind deblurring: kernel step, image step, `λ₃` decay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::fft::{edge_taper, latent_energy, solve_latent_with, SpectralPlan};
use crate::image::{ImagePlane, MultiChannelImage};
use crate::kernel::{
    render_mixture, BaseKernelParams, KernelGrid, KernelRenderContext, MixtureParams, Variant,
};
use crate::optimizer::{minimize_kernel_in, KernelProblem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based outer iteration.
    pub iteration: usize,
    /// `‖Kⁱ − Kⁱ⁻¹‖₂ / ‖Kⁱ⁻¹‖₂` on normalized kernels.
    pub kernel_rel_change: f64,
    /// `‖Iⁱ − Iⁱ⁻¹‖₂ / ‖Iⁱ⁻¹‖₂` on the luminance plane.
    pub image_rel_change: f64,
    /// `λ₃` after this iteration's decay, i.e. the value the next image step uses.
    pub lambda3: f64,
    /// Kernel energy at the end of the kernel step.
    pub kernel_energy: f64,
    /// Image energy of `Iⁱ` under the `λ₃` that produced it.
    pub image_energy: f64,
}

impl IterationRecord {
    pub const CSV_HEADER: &'static str =
        "iter,kernel_rel_change,image_rel_change,lambda3,kernel_energy,image_energy";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e}",
            self.iteration,
            self.kernel_rel_change,
            self.image_rel_change,
            self.lambda3,
            self.kernel_energy,
            self.image_energy
        )
    }
}

pub fn trace_to_csv(trace: &[IterationRecord]) -> String {
    let mut out = String::from(IterationRecord::CSV_HEADER);
    out.push('\n');
    for rec in trace {
        out.push_str(&rec.to_csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct DeblurResult {
    pub latent: MultiChannelImage,
    pub kernel: KernelGrid,
    pub params: MixtureParams,
    pub trace: Vec<IterationRecord>,
    pub termination: Termination,
    /// Every normalized kernel `K⁰, K¹, …` in order.
    pub kernels: Vec<KernelGrid>,
}

/// Random starting parameters. Variances are drawn from
/// `U[1, ((h−1)/4)²]`, centers from `U[−(h−1)/4, (h−1)/4]`, angles from `U[0, π)`.
pub fn initialize_params(cfg: &SolverConfig, rng: &mut impl Rng) -> Result<MixtureParams> {
    cfg.validate()?;
    let quarter = (cfg.kernel_size - 1) as f64 / 4.0;
    let var_hi = (quarter * quarter).max(1.0);
    let draw_var = |rng: &mut dyn rand::RngCore| -> f64 {
        if var_hi > 1.0 {
            rng.random_range(1.0..var_hi)
        } else {
            1.0
        }
    };
    let draw_mu = |rng: &mut dyn rand::RngCore| -> f64 {
        if quarter > 0.0 {
            rng.random_range(-quarter..=quarter)
        } else {
            0.0
        }
    };
    let bases = (0..cfg.n_bases)
        .map(|_| match cfg.variant {
            Variant::Simple => BaseKernelParams::isotropic(draw_var(rng)),
            Variant::Scale => {
                let sx = draw_var(rng);
                BaseKernelParams::scaled(sx, draw_var(rng))
            }
            Variant::Center => {
                let sx = draw_var(rng);
                let sy = draw_var(rng);
                let mx = draw_mu(rng);
                BaseKernelParams::centered(sx, sy, mx, draw_mu(rng))
            }
            Variant::Rotation => {
                let sx = draw_var(rng);
                let sy = draw_var(rng);
                let mx = draw_mu(rng);
                let my = draw_mu(rng);
                BaseKernelParams::rotated(
                    sx,
                    sy,
                    mx,
                    my,
                    rng.random_range(0.0..std::f64::consts::PI),
                )
            }
        })
        .collect();
    MixtureParams::new(cfg.variant, bases)
}

/// `I⁰ = B` and random mixture parameters from the seeded generator.
pub fn initialize(
    blurred: &ImagePlane,
    cfg: &SolverConfig,
    rng: &mut impl Rng,
) -> Result<(ImagePlane, MixtureParams)> {
    let params = initialize_params(cfg, rng)?;
    Ok((blurred.clone(), params))
}

fn relative_change(current: f64, previous_norm: f64) -> f64 {
    if previous_norm > 0.0 {
        current / previous_norm
    } else {
        current
    }
}

fn kernel_distance(a: &KernelGrid, b: &KernelGrid) -> f64 {
    a.weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Seed used for the single reinitialization after a degenerate kernel.
fn retry_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Blind deblurring of `blurred` with the alternating scheme.
pub fn deblur(blurred: &MultiChannelImage, cfg: &SolverConfig) -> Result<DeblurResult> {
    deblur_with_sink(blurred, cfg, &mut |_| {})
}

/// [`deblur`] reporting every [`IterationRecord`] to `sink` as it is produced.
pub fn deblur_with_sink(
    blurred: &MultiChannelImage,
    cfg: &SolverConfig,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<DeblurResult> {
    cfg.validate()?;
    let (w, h) = blurred.dims();
    if w < cfg.kernel_size || h < cfg.kernel_size {
        return Err(Error::InvalidInput(format!(
            "image {w}x{h} is smaller than the {0}x{0} kernel",
            cfg.kernel_size
        )));
    }
    let taper = if cfg.edge_taper {
        cfg.kernel_size.div_ceil(2)
    } else {
        0
    };
    let channels: Vec<ImagePlane> = blurred
        .channels()
        .iter()
        .map(|c| edge_taper(c, taper))
        .collect();
    let observed = MultiChannelImage::new(blurred.colorspace(), channels)?;
    let luminance = observed.luminance();

    let plan = SpectralPlan::new(w, h)?;
    let luminance_spec = plan.forward_slice(luminance.data());
    let ctx = KernelRenderContext::new(cfg.kernel_size)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let (mut latent, mut params) = initialize(&luminance, cfg, &mut rng)?;
    let mut kernel = render_mixture(&params, &ctx)?;
    let mut kernels = vec![kernel.clone()];
    let mut lambda3 = cfg.lambda3_init;
    let mut used_lambda3 = lambda3;
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIters;
    let mut retried = false;

    for iteration in 1..=cfg.max_outer_iters {
        let problem = KernelProblem::new(&latent, &luminance, cfg)?;
        let estimate = match minimize_kernel_in(&problem, &params, cfg.max_cg_iters, None) {
            Ok(est) => est,
            Err(Error::DegenerateKernel(_)) if !retried => {
                retried = true;
                let mut retry_rng = ChaCha8Rng::seed_from_u64(retry_seed(cfg.rng_seed));
                let fresh = initialize_params(cfg, &mut retry_rng)?;
                minimize_kernel_in(&problem, &fresh, cfg.max_cg_iters, None).map_err(|e| {
                    Error::DegenerateKernel(format!(
                        "iteration {iteration} after reinitialization: {e}"
                    ))
                })?
            }
            Err(Error::NonFinite(msg)) => {
                return Err(Error::NonFinite(format!("iteration {iteration}: {msg}")))
            }
            Err(e) => return Err(e),
        };
        params = estimate.params;
        let new_kernel = estimate.kernel;

        let new_latent = solve_latent_with(&plan, &luminance_spec, &new_kernel, lambda3).map_err(
            |e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("iteration {iteration}: {msg}")),
                other => other,
            },
        )?;
        let image_energy = latent_energy(&new_latent, &luminance, &new_kernel, lambda3)?;
        used_lambda3 = lambda3;
        lambda3 /= cfg.lambda3_decay;

        let kernel_rel = relative_change(kernel_distance(&new_kernel, &kernel), kernel.norm());
        let image_rel = relative_change(new_latent.distance(&latent)?, latent.norm());
        if !kernel_rel.is_finite() || !image_rel.is_finite() || !estimate.energy.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "iteration {iteration}: relative changes ({kernel_rel}, {image_rel})"
            )));
        }
        let record = IterationRecord {
            iteration,
            kernel_rel_change: kernel_rel,
            image_rel_change: image_rel,
            lambda3,
            kernel_energy: estimate.energy.total,
            image_energy,
        };
        sink(&record);
        trace.push(record);
        kernel = new_kernel;
        kernels.push(kernel.clone());
        latent = new_latent;

        if kernel_rel < cfg.epsilon && image_rel < cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }

    let latent = match observed.colorspace() {
        crate::image::ColorSpace::Gray => MultiChannelImage::gray(latent),
        cs => {
            let planes = observed
                .channels()
                .iter()
                .map(|ch| {
                    let spec = plan.forward_slice(ch.data());
                    solve_latent_with(&plan, &spec, &kernel, used_lambda3)
                })
                .collect::<Result<Vec<_>>>()?;
            MultiChannelImage::new(cs, planes)?
        }
    };

    Ok(DeblurResult {
        latent,
        kernel,
        params,
        trace,
        termination,
        kernels,
    })
}
