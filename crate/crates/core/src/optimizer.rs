//! Kernel estimation with the latent image held fixed.
//!
//! Minimizes `E(K) = ‖I∗K − B‖² + λ₁‖K‖² + λ₂‖σ²‖²` over the mixture
//! parameters with Polak–Ribière+ nonlinear conjugate gradient and an Armijo
//! backtracking line search. The normalization of the rendered grid is part
//! of the objective, so the gradient is chained through it.

use rustfft::num_complex::Complex64;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::error::{Error, Result};
use crate::fft::SpectralPlan;
use crate::image::ImagePlane;
use crate::kernel::{
    normalize_kernel, render_raw, render_with_jacobian, KernelGrid, KernelRenderContext,
    MixtureParams, ParamKind, Variant,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEnergyBreakdown {
    /// `‖I∗K − B‖²`
    pub data_term: f64,
    /// `λ₁‖K‖²`
    pub kernel_prior: f64,
    /// `λ₂‖σ²‖²`
    pub covariance_prior: f64,
    pub total: f64,
}

impl KernelEnergyBreakdown {
    fn new(data_term: f64, kernel_prior: f64, covariance_prior: f64) -> Self {
        Self {
            data_term,
            kernel_prior,
            covariance_prior,
            total: data_term + kernel_prior + covariance_prior,
        }
    }
}

/// Fixed inputs of one kernel-estimation subproblem.
pub struct KernelProblem {
    ctx: KernelRenderContext,
    plan: SpectralPlan,
    latent_spec: Vec<Complex64>,
    latent_spec_conj: Vec<Complex64>,
    blurred: Vec<f64>,
    /// Plane index of every kernel cell under the circular embedding.
    cell_to_plane: Vec<usize>,
    variant: Variant,
    lambda1: f64,
    lambda2: f64,
}

impl KernelProblem {
    pub fn new(latent: &ImagePlane, blurred: &ImagePlane, cfg: &SolverConfig) -> Result<Self> {
        cfg.validate()?;
        latent.check_same_dims(blurred)?;
        let (w, h) = latent.dims();
        let size = cfg.kernel_size;
        if size > w || size > h {
            return Err(Error::InvalidInput(format!(
                "kernel of size {size} does not fit a {w}x{h} image"
            )));
        }
        let plan = SpectralPlan::new(w, h)?;
        let latent_spec = plan.forward_slice(latent.data());
        let latent_spec_conj = latent_spec.iter().map(|c| c.conj()).collect();
        let c = (size - 1) / 2;
        let cell_to_plane = (0..size * size)
            .map(|idx| {
                let (i, j) = (idx / size, idx % size);
                ((i + h - c) % h) * w + (j + w - c) % w
            })
            .collect();
        Ok(Self {
            ctx: KernelRenderContext::new(size)?,
            plan,
            latent_spec,
            latent_spec_conj,
            blurred: blurred.data().to_vec(),
            cell_to_plane,
            variant: cfg.variant,
            lambda1: cfg.lambda1,
            lambda2: cfg.lambda2,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn kernel_size(&self) -> usize {
        self.ctx.size()
    }

    fn check_variant(&self, params: &MixtureParams) -> Result<()> {
        if params.variant() != self.variant {
            return Err(Error::InvalidInput(format!(
                "parameters are {} but the problem expects {}",
                params.variant(),
                self.variant
            )));
        }
        Ok(())
    }

    /// `I ∗ K − B` for a normalized kernel.
    fn residual(&self, weights: &[f64]) -> Vec<f64> {
        let (w, h) = self.plan.dims();
        let mut padded = vec![0.0; w * h];
        for (&p, &k) in self.cell_to_plane.iter().zip(weights) {
            padded[p] += k;
        }
        let ks = self.plan.forward_slice(&padded);
        let mut out = self.plan.convolve_with(&self.latent_spec, &ks);
        for (o, b) in out.iter_mut().zip(&self.blurred) {
            *o -= b;
        }
        out
    }

    fn covariance_prior(&self, params: &MixtureParams) -> f64 {
        self.lambda2 * params.variance_vector().iter().map(|s| s * s).sum::<f64>()
    }

    fn breakdown(&self, params: &MixtureParams, kernel: &KernelGrid) -> KernelEnergyBreakdown {
        let data_term = self.residual(kernel.weights()).iter().map(|r| r * r).sum();
        let kernel_prior = self.lambda1 * kernel.weights().iter().map(|k| k * k).sum::<f64>();
        KernelEnergyBreakdown::new(data_term, kernel_prior, self.covariance_prior(params))
    }

    pub fn render(&self, params: &MixtureParams) -> Result<KernelGrid> {
        normalize_kernel(self.ctx.size(), render_raw(params, &self.ctx))
    }

    pub fn energy(&self, params: &MixtureParams) -> Result<KernelEnergyBreakdown> {
        self.check_variant(params)?;
        let kernel = self.render(params)?;
        Ok(self.breakdown(params, &kernel))
    }

    /// Energy and its gradient over [`MixtureParams::to_vector`] coordinates.
    pub fn energy_and_gradient(
        &self,
        params: &MixtureParams,
    ) -> Result<(KernelEnergyBreakdown, Vec<f64>)> {
        self.check_variant(params)?;
        let (raw, jac) = render_with_jacobian(params, &self.ctx);
        let mass: f64 = raw.iter().sum();
        let kernel = normalize_kernel(self.ctx.size(), raw)?;

        let residual = self.residual(kernel.weights());
        let data_term: f64 = residual.iter().map(|r| r * r).sum();
        let rs = self.plan.forward_slice(&residual);
        let corr_spec = rs
            .iter()
            .zip(&self.latent_spec_conj)
            .map(|(a, b)| a * b)
            .collect();
        let corr = self.plan.inverse_real(corr_spec);

        // dE/dK per cell (normalized grid)
        let cell_grad: Vec<f64> = self
            .cell_to_plane
            .iter()
            .zip(kernel.weights())
            .map(|(&p, &k)| 2.0 * corr[p] + 2.0 * self.lambda1 * k)
            .collect();
        let dot_gk: f64 = cell_grad
            .iter()
            .zip(kernel.weights())
            .map(|(g, k)| g * k)
            .sum();

        let kinds = self.variant.param_kinds();
        let mut grad = Vec::with_capacity(jac.grids().len());
        for (idx, jg) in jac.grids().iter().enumerate() {
            let gj: f64 = cell_grad.iter().zip(jg).map(|(g, j)| g * j).sum();
            let sj: f64 = jg.iter().sum();
            let mut g = (gj - dot_gk * sj) / mass;
            let base = &params.bases()[idx / kinds.len()];
            g += match kinds[idx % kinds.len()] {
                ParamKind::LogVar => 4.0 * self.lambda2 * base.sigma_x_sq * base.sigma_x_sq,
                ParamKind::LogVarX => 2.0 * self.lambda2 * base.sigma_x_sq * base.sigma_x_sq,
                ParamKind::LogVarY => 2.0 * self.lambda2 * base.sigma_y_sq * base.sigma_y_sq,
                _ => 0.0,
            };
            grad.push(g);
        }

        let kernel_prior = self.lambda1 * kernel.weights().iter().map(|k| k * k).sum::<f64>();
        let energy =
            KernelEnergyBreakdown::new(data_term, kernel_prior, self.covariance_prior(params));
        Ok((energy, grad))
    }
}

/// Energy of `params` for the fixed pair `(latent, blurred)`.
pub fn kernel_energy(
    params: &MixtureParams,
    latent: &ImagePlane,
    blurred: &ImagePlane,
    cfg: &SolverConfig,
) -> Result<KernelEnergyBreakdown> {
    KernelProblem::new(latent, blurred, cfg)?.energy(params)
}

pub fn kernel_energy_gradient(
    params: &MixtureParams,
    latent: &ImagePlane,
    blurred: &ImagePlane,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    Ok(KernelProblem::new(latent, blurred, cfg)?
        .energy_and_gradient(params)?
        .1)
}

/// Stopping thresholds of the CG loop.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
pub const RELATIVE_DECREASE_TOLERANCE: f64 = 1e-8;
const ARMIJO_C: f64 = 1e-4;
const BACKTRACK_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
/// Largest parameter change of a first trial step, in log-variance units or pixels.
const MAX_TRIAL_MOVE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CgStop {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    /// No step along steepest descent satisfied the Armijo condition.
    LineSearchStalled,
}

/// Working state of the CG loop.
#[derive(Debug, Clone)]
pub struct CgState {
    pub iteration: usize,
    pub x: Vec<f64>,
    pub gradient: Vec<f64>,
    pub direction: Vec<f64>,
    pub energy: KernelEnergyBreakdown,
}

/// One accepted CG iterate, for tracing.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CgTraceRecord {
    pub iteration: usize,
    pub energy: KernelEnergyBreakdown,
    pub gradient_max_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct KernelEstimate {
    pub params: MixtureParams,
    pub kernel: KernelGrid,
    pub energy: KernelEnergyBreakdown,
    pub initial_energy: KernelEnergyBreakdown,
    pub iterations: usize,
    pub stop: CgStop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Run PR+ conjugate gradient from `start`.
pub fn minimize_kernel(
    start: &MixtureParams,
    latent: &ImagePlane,
    blurred: &ImagePlane,
    cfg: &SolverConfig,
) -> Result<KernelEstimate> {
    let problem = KernelProblem::new(latent, blurred, cfg)?;
    minimize_kernel_in(&problem, start, cfg.max_cg_iters, None)
}

/// [`minimize_kernel`] on a prepared problem with an optional trace sink.
pub fn minimize_kernel_in(
    problem: &KernelProblem,
    start: &MixtureParams,
    max_iters: usize,
    mut trace: Option<&mut dyn FnMut(&CgTraceRecord)>,
) -> Result<KernelEstimate> {
    let size = problem.kernel_size();
    let mut params = start.clone();
    params.project(size);

    let (energy, gradient) = problem.energy_and_gradient(&params)?;
    if !energy.total.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "kernel energy at parameters {:?}",
            params.to_vector()
        )));
    }
    let initial_energy = energy;
    let dim = gradient.len();
    let restart_every = 5 * dim;
    let mut state = CgState {
        iteration: 0,
        x: params.to_vector(),
        direction: gradient.iter().map(|g| -g).collect(),
        gradient,
        energy,
    };
    let mut prev_step: Option<f64> = None;

    let stop = loop {
        if max_abs(&state.gradient) <= GRADIENT_TOLERANCE {
            break CgStop::GradientTolerance;
        }
        if state.iteration >= max_iters {
            break CgStop::MaxIterations;
        }

        let mut slope = dot(&state.gradient, &state.direction);
        let mut steepest = false;
        if !(slope < 0.0) {
            state.direction = state.gradient.iter().map(|g| -g).collect();
            slope = dot(&state.gradient, &state.direction);
            steepest = true;
        }
        let mut accepted = line_search(problem, &state, slope, prev_step)?;
        if accepted.is_none() && !steepest {
            state.direction = state.gradient.iter().map(|g| -g).collect();
            slope = dot(&state.gradient, &state.direction);
            accepted = line_search(problem, &state, slope, prev_step)?;
        }
        let Some(TrialPoint {
            step,
            raw,
            projected: candidate,
        }) = accepted
        else {
            break CgStop::LineSearchStalled;
        };
        let projected_moved = raw != candidate;
        let (new_energy, new_grad) = problem.energy_and_gradient(&candidate)?;
        if !new_energy.total.is_finite() || new_grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "kernel energy at parameters {:?}",
                candidate.to_vector()
            )));
        }

        let decrease = state.energy.total - new_energy.total;
        let scale = state.energy.total.abs().max(f64::MIN_POSITIVE);
        state.iteration += 1;
        prev_step = Some(step);

        let beta = if projected_moved || state.iteration.is_multiple_of(restart_every) {
            0.0
        } else {
            let yk: f64 = new_grad
                .iter()
                .zip(&state.gradient)
                .map(|(gn, go)| gn * (gn - go))
                .sum();
            (yk / dot(&state.gradient, &state.gradient)).max(0.0)
        };
        state.direction = new_grad
            .iter()
            .zip(&state.direction)
            .map(|(g, d)| -g + beta * d)
            .collect();
        state.x = candidate.to_vector();
        state.gradient = new_grad;
        state.energy = new_energy;
        params = candidate;

        if let Some(sink) = trace.as_deref_mut() {
            sink(&CgTraceRecord {
                iteration: state.iteration,
                energy: state.energy,
                gradient_max_norm: max_abs(&state.gradient),
                step,
            });
        }

        if decrease / scale <= RELATIVE_DECREASE_TOLERANCE {
            break CgStop::RelativeDecrease;
        }
    };

    let kernel = problem.render(&params)?;
    Ok(KernelEstimate {
        params,
        kernel,
        energy: state.energy,
        initial_energy,
        iterations: state.iteration,
        stop,
    })
}

struct TrialPoint {
    step: f64,
    raw: MixtureParams,
    projected: MixtureParams,
}

/// Armijo backtracking, with the sufficient-decrease test evaluated at the
/// projected trial point.
fn line_search(
    problem: &KernelProblem,
    state: &CgState,
    slope: f64,
    prev_step: Option<f64>,
) -> Result<Option<TrialPoint>> {
    let dmax = max_abs(&state.direction);
    if dmax == 0.0 {
        return Ok(None);
    }
    let cap = MAX_TRIAL_MOVE / dmax;
    let mut step = prev_step.map_or(cap, |s| (2.0 * s).min(cap));
    let size = problem.kernel_size();
    for _ in 0..MAX_BACKTRACKS {
        let trial: Vec<f64> = state
            .x
            .iter()
            .zip(&state.direction)
            .map(|(x, d)| x + step * d)
            .collect();
        // A degenerate or non-finite render counts as +inf and is rejected.
        if let Ok(raw) = MixtureParams::from_vector(problem.variant(), &trial) {
            let mut projected = raw.clone();
            projected.project(size);
            if let Ok(e) = problem.energy(&projected) {
                if e.total.is_finite() && e.total <= state.energy.total + ARMIJO_C * step * slope {
                    return Ok(Some(TrialPoint {
                        step,
                        raw,
                        projected,
                    }));
                }
            }
        }
        step *= BACKTRACK_SHRINK;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::convolve;
    use crate::kernel::BaseKernelParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(h: usize, variant: Variant, l1: f64, l2: f64) -> SolverConfig {
        SolverConfig {
            kernel_size: h,
            variant,
            lambda1: l1,
            lambda2: l2,
            max_cg_iters: 200,
            ..Default::default()
        }
    }

    fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImagePlane {
        ImagePlane::from_fn(w, h, |_, _| rng.random_range(0.0..1.0)).unwrap()
    }

    #[test]
    fn breakdown_sums_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let i = random_plane(&mut rng, 12, 12);
        let b = random_plane(&mut rng, 12, 12);
        let p =
            MixtureParams::new(Variant::Scale, vec![BaseKernelParams::scaled(2.0, 1.0)]).unwrap();
        let e = kernel_energy(&p, &i, &b, &cfg(5, Variant::Scale, 0.3, 0.2)).unwrap();
        assert_eq!(e.total, e.data_term + e.kernel_prior + e.covariance_prior);
        assert!(e.data_term >= 0.0 && e.kernel_prior >= 0.0 && e.covariance_prior >= 0.0);
    }

    #[test]
    fn identity_configuration_has_zero_data_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let i = random_plane(&mut rng, 10, 10);
        let p =
            MixtureParams::new(Variant::Simple, vec![BaseKernelParams::isotropic(1e-6)]).unwrap();
        let e = kernel_energy(&p, &i, &i, &cfg(5, Variant::Simple, 0.0, 0.0)).unwrap();
        assert!(e.data_term < 1e-20);
    }

    #[test]
    fn kernel_prior_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let i = random_plane(&mut rng, 6, 6);
        let p =
            MixtureParams::new(Variant::Simple, vec![BaseKernelParams::isotropic(1.0)]).unwrap();
        let e = kernel_energy(&p, &i, &i, &cfg(3, Variant::Simple, 1.0, 0.0)).unwrap();
        // cells: 1 center, 4 edges at e^{-1/2}, 4 corners at e^{-1}
        let (a, b) = ((-0.5f64).exp(), (-1.0f64).exp());
        let total = 1.0 + 4.0 * a + 4.0 * b;
        let expected = (1.0 + 4.0 * a * a + 4.0 * b * b) / (total * total);
        assert!((e.kernel_prior - expected).abs() < 1e-15);
    }

    #[test]
    fn doubling_variances_quadruples_covariance_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let i = random_plane(&mut rng, 8, 8);
        let c = cfg(5, Variant::Center, 0.0, 0.5);
        let p = MixtureParams::new(
            Variant::Center,
            vec![
                BaseKernelParams::centered(1.5, 0.7, 1.0, 0.0),
                BaseKernelParams::centered(3.0, 2.0, -1.0, 1.0),
            ],
        )
        .unwrap();
        let q = MixtureParams::new(
            Variant::Center,
            p.bases()
                .iter()
                .map(|b| {
                    BaseKernelParams::centered(
                        2.0 * b.sigma_x_sq,
                        2.0 * b.sigma_y_sq,
                        b.mu_x,
                        b.mu_y,
                    )
                })
                .collect(),
        )
        .unwrap();
        let ep = kernel_energy(&p, &i, &i, &c).unwrap();
        let eq = kernel_energy(&q, &i, &i, &c).unwrap();
        assert!((eq.covariance_prior - 4.0 * ep.covariance_prior).abs() < 1e-12);
    }

    #[test]
    fn flat_objective_has_zero_gradient() {
        let z = ImagePlane::zeros(8, 8).unwrap();
        let p = MixtureParams::new(
            Variant::Rotation,
            vec![BaseKernelParams::rotated(2.0, 1.0, 0.5, -0.5, 0.3)],
        )
        .unwrap();
        let g = kernel_energy_gradient(&p, &z, &z, &cfg(5, Variant::Rotation, 0.0, 0.0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn converged_start_returns_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let i0 = random_plane(&mut rng, 16, 16);
        let c = cfg(7, Variant::Center, 0.0, 0.0);
        let truth = MixtureParams::new(
            Variant::Center,
            vec![BaseKernelParams::centered(1.2, 0.8, 1.0, -0.5)],
        )
        .unwrap();
        let problem = KernelProblem::new(&i0, &i0, &c).unwrap();
        let k = problem.render(&truth).unwrap();
        let b = convolve(&i0, &k).unwrap();
        let est = minimize_kernel(&truth, &i0, &b, &c).unwrap();
        assert!(est.iterations <= 2, "{} iterations", est.iterations);
        assert!((est.energy.total - est.initial_energy.total).abs() <= 1e-10);
    }

    #[test]
    fn energy_never_increases_along_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let i0 = random_plane(&mut rng, 24, 24);
        let c = cfg(9, Variant::Center, 1e-4, 1e-2);
        let truth = MixtureParams::new(
            Variant::Center,
            vec![BaseKernelParams::centered(2.0, 1.0, 1.5, 0.0)],
        )
        .unwrap();
        let problem = KernelProblem::new(&i0, &i0, &c).unwrap();
        let b = convolve(&i0, &problem.render(&truth).unwrap()).unwrap();
        let problem = KernelProblem::new(&i0, &b, &c).unwrap();
        let start = MixtureParams::new(
            Variant::Center,
            vec![
                BaseKernelParams::centered(6.0, 5.0, -1.0, 2.0),
                BaseKernelParams::centered(3.0, 4.0, 2.0, -2.0),
            ],
        )
        .unwrap();
        let mut energies = vec![problem.energy(&start).unwrap().total];
        let mut sink = |r: &CgTraceRecord| energies.push(r.energy.total);
        let est = minimize_kernel_in(&problem, &start, 100, Some(&mut sink)).unwrap();
        assert!(energies.windows(2).all(|w| w[1] <= w[0]));
        assert!(est.energy.total <= est.initial_energy.total);
        assert!((est.kernel.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_variant_rejected() {
        let i = ImagePlane::zeros(8, 8).unwrap();
        let p =
            MixtureParams::new(Variant::Scale, vec![BaseKernelParams::scaled(1.0, 1.0)]).unwrap();
        assert!(kernel_energy(&p, &i, &i, &cfg(5, Variant::Center, 0.0, 0.0)).is_err());
        assert!(kernel_energy(&p, &i, &i, &cfg(9, Variant::Scale, 0.0, 0.0)).is_err());
    }
}
