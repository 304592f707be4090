//! Structure-enhanced Gaussian base kernels and their mixture.
//!
//! A base kernel evaluated at the relative pixel position `p = (x, y)` is
//! `exp(-½ (Rp − μ)ᵀ Σ⁻¹ (Rp − μ))` with `Σ = diag(σx², σy²)` and `R` the
//! counter-clockwise rotation by `θ`. The four variants restrict which of
//! `(Σ, μ, θ)` are free. The mixture is the plain sum of the bases rendered on
//! an `h × h` grid and normalized to unit mass.
//!
//! Grid index `(i, j)` maps to `(x, y) = (j − c, c − i)` with `c = (h − 1) / 2`,
//! so `x` grows to the right and `y` grows upward.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Isotropic, zero-centered: one shared variance.
    Simple,
    /// Axis-aligned ellipse, zero-centered.
    Scale,
    /// Axis-aligned ellipse with a free center.
    Center,
    /// Rotated ellipse with a free center.
    Rotation,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Simple,
        Variant::Scale,
        Variant::Center,
        Variant::Rotation,
    ];

    /// Free scalars per base kernel, in [`ParamKind`] order.
    pub fn param_kinds(self) -> &'static [ParamKind] {
        use ParamKind::*;
        match self {
            Variant::Simple => &[LogVar],
            Variant::Scale => &[LogVarX, LogVarY],
            Variant::Center => &[LogVarX, LogVarY, MuX, MuY],
            Variant::Rotation => &[LogVarX, LogVarY, MuX, MuY, Theta],
        }
    }

    pub fn params_per_base(self) -> usize {
        self.param_kinds().len()
    }

    pub fn has_center(self) -> bool {
        matches!(self, Variant::Center | Variant::Rotation)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Simple => "simple",
            Variant::Scale => "scale",
            Variant::Center => "center",
            Variant::Rotation => "rotation",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Variant::Simple),
            "scale" => Ok(Variant::Scale),
            "center" => Ok(Variant::Center),
            "rotation" => Ok(Variant::Rotation),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?} (expected simple, scale, center or rotation)"
            ))),
        }
    }
}

/// One optimizable scalar of a base kernel. Variances are carried as
/// `s = ln σ²` so that the optimizer works in an unconstrained space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Shared `ln σ²` of the isotropic variant.
    LogVar,
    LogVarX,
    LogVarY,
    MuX,
    MuY,
    Theta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseKernelParams {
    pub sigma_x_sq: f64,
    pub sigma_y_sq: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub theta: f64,
}

impl BaseKernelParams {
    pub fn isotropic(sigma_sq: f64) -> Self {
        Self::scaled(sigma_sq, sigma_sq)
    }

    pub fn scaled(sigma_x_sq: f64, sigma_y_sq: f64) -> Self {
        Self::centered(sigma_x_sq, sigma_y_sq, 0.0, 0.0)
    }

    pub fn centered(sigma_x_sq: f64, sigma_y_sq: f64, mu_x: f64, mu_y: f64) -> Self {
        Self {
            sigma_x_sq,
            sigma_y_sq,
            mu_x,
            mu_y,
            theta: 0.0,
        }
    }

    pub fn rotated(sigma_x_sq: f64, sigma_y_sq: f64, mu_x: f64, mu_y: f64, theta: f64) -> Self {
        Self {
            sigma_x_sq,
            sigma_y_sq,
            mu_x,
            mu_y,
            theta,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let vals = [
            self.sigma_x_sq,
            self.sigma_y_sq,
            self.mu_x,
            self.mu_y,
            self.theta,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("base kernel parameters {self:?}")));
        }
        if self.sigma_x_sq <= 0.0 || self.sigma_y_sq <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "base kernel variances must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    fn conforms_to(&self, variant: Variant) -> bool {
        match variant {
            Variant::Simple => {
                self.sigma_x_sq == self.sigma_y_sq
                    && self.mu_x == 0.0
                    && self.mu_y == 0.0
                    && self.theta == 0.0
            }
            Variant::Scale => self.mu_x == 0.0 && self.mu_y == 0.0 && self.theta == 0.0,
            Variant::Center => self.theta == 0.0,
            Variant::Rotation => true,
        }
    }
}

/// Evaluation of one base kernel and the pieces its derivatives need.
struct BaseEval {
    value: f64,
    /// `Rp − μ`
    dx: f64,
    dy: f64,
    /// `Rp`
    rx: f64,
    ry: f64,
}

#[inline]
fn eval_base_full(b: &BaseKernelParams, cos_t: f64, sin_t: f64, x: f64, y: f64) -> BaseEval {
    let rx = cos_t * x - sin_t * y;
    let ry = sin_t * x + cos_t * y;
    let dx = rx - b.mu_x;
    let dy = ry - b.mu_y;
    let q = dx * dx / b.sigma_x_sq + dy * dy / b.sigma_y_sq;
    BaseEval {
        value: (-0.5 * q).exp(),
        dx,
        dy,
        rx,
        ry,
    }
}

/// Value of one base kernel at relative position `p`, with the
/// proportionality constant fixed to 1. Parameters that `variant` does not
/// use are ignored.
pub fn eval_base(params: &BaseKernelParams, variant: Variant, p: (f64, f64)) -> Result<f64> {
    params.check_finite()?;
    let b = effective(params, variant);
    let (s, c) = b.theta.sin_cos();
    Ok(eval_base_full(&b, c, s, p.0, p.1).value)
}

/// The parameters as seen by `variant`: unused fields zeroed.
fn effective(b: &BaseKernelParams, variant: Variant) -> BaseKernelParams {
    match variant {
        Variant::Simple => BaseKernelParams::isotropic(b.sigma_x_sq),
        Variant::Scale => BaseKernelParams::scaled(b.sigma_x_sq, b.sigma_y_sq),
        Variant::Center => BaseKernelParams::centered(b.sigma_x_sq, b.sigma_y_sq, b.mu_x, b.mu_y),
        Variant::Rotation => *b,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    variant: Variant,
    bases: Vec<BaseKernelParams>,
}

impl MixtureParams {
    pub fn new(variant: Variant, bases: Vec<BaseKernelParams>) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidInput(
                "mixture needs at least one base".into(),
            ));
        }
        for b in &bases {
            b.check_finite()?;
            if !b.conforms_to(variant) {
                return Err(Error::InvalidInput(format!(
                    "base {b:?} violates the {variant} variant constraints"
                )));
            }
        }
        Ok(Self { variant, bases })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn bases(&self) -> &[BaseKernelParams] {
        &self.bases
    }

    pub fn n_bases(&self) -> usize {
        self.bases.len()
    }

    pub fn n_params(&self) -> usize {
        self.bases.len() * self.variant.params_per_base()
    }

    /// `(σx,1², …, σx,N², σy,1², …, σy,N²)`.
    pub fn variance_vector(&self) -> Vec<f64> {
        self.bases
            .iter()
            .map(|b| b.sigma_x_sq)
            .chain(self.bases.iter().map(|b| b.sigma_y_sq))
            .collect()
    }

    /// Flatten into the optimizer's unconstrained coordinates, base-major.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for b in &self.bases {
            for kind in self.variant.param_kinds() {
                out.push(match kind {
                    ParamKind::LogVar | ParamKind::LogVarX => b.sigma_x_sq.ln(),
                    ParamKind::LogVarY => b.sigma_y_sq.ln(),
                    ParamKind::MuX => b.mu_x,
                    ParamKind::MuY => b.mu_y,
                    ParamKind::Theta => b.theta,
                });
            }
        }
        out
    }

    pub fn from_vector(variant: Variant, v: &[f64]) -> Result<Self> {
        let per = variant.params_per_base();
        if v.is_empty() || !v.len().is_multiple_of(per) {
            return Err(Error::InvalidInput(format!(
                "parameter vector of length {} does not fit {variant} ({per} per base)",
                v.len()
            )));
        }
        let bases = v
            .chunks(per)
            .map(|chunk| {
                let mut b = BaseKernelParams::isotropic(1.0);
                for (kind, &val) in variant.param_kinds().iter().zip(chunk) {
                    match kind {
                        ParamKind::LogVar => {
                            b.sigma_x_sq = val.exp();
                            b.sigma_y_sq = b.sigma_x_sq;
                        }
                        ParamKind::LogVarX => b.sigma_x_sq = val.exp(),
                        ParamKind::LogVarY => b.sigma_y_sq = val.exp(),
                        ParamKind::MuX => b.mu_x = val,
                        ParamKind::MuY => b.mu_y = val,
                        ParamKind::Theta => b.theta = val,
                    }
                }
                b
            })
            .collect();
        Self::new(variant, bases)
    }

    /// Clamp centers into the grid box `[−c, c]²` and wrap `θ` into `[0, π)`.
    ///
    /// A half-turn maps `Rp − μ` to `−(Rp + μ)`, so wrapping `θ` by `π` flips
    /// the sign of `μ` to leave the kernel unchanged.
    pub fn project(&mut self, kernel_size: usize) {
        let c = ((kernel_size - 1) / 2) as f64;
        for b in &mut self.bases {
            if self.variant == Variant::Rotation {
                let turns = (b.theta / std::f64::consts::PI).floor();
                b.theta -= turns * std::f64::consts::PI;
                if b.theta >= std::f64::consts::PI {
                    b.theta = 0.0;
                }
                if (turns as i64).rem_euclid(2) == 1 {
                    b.mu_x = -b.mu_x;
                    b.mu_y = -b.mu_y;
                }
            }
            b.mu_x = b.mu_x.clamp(-c, c);
            b.mu_y = b.mu_y.clamp(-c, c);
        }
    }
}

/// Relative `(x, y)` coordinates of every cell of an `h × h` grid.
#[derive(Debug, Clone)]
pub struct KernelRenderContext {
    size: usize,
    coords: Vec<(f64, f64)>,
}

impl KernelRenderContext {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd and positive, got {size}"
            )));
        }
        let c = ((size - 1) / 2) as f64;
        let coords = (0..size * size)
            .map(|idx| {
                let (i, j) = (idx / size, idx % size);
                (j as f64 - c, c - i as f64)
            })
            .collect();
        Ok(Self { size, coords })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }
}

/// A normalized `h × h` kernel: nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    size: usize,
    weights: Vec<f64>,
}

impl KernelGrid {
    /// The discrete identity kernel.
    pub fn delta(size: usize) -> Result<Self> {
        if size == 0 || size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd and positive, got {size}"
            )));
        }
        let mut weights = vec![0.0; size * size];
        weights[size * size / 2] = 1.0;
        Ok(Self { size, weights })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// First moment in relative `(x, y)` coordinates.
    pub fn center_of_mass(&self) -> (f64, f64) {
        let c = ((self.size - 1) / 2) as f64;
        let mut mx = 0.0;
        let mut my = 0.0;
        for (idx, w) in self.weights.iter().enumerate() {
            let (i, j) = (idx / self.size, idx % self.size);
            mx += w * (j as f64 - c);
            my += w * (c - i as f64);
        }
        (mx, my)
    }

    pub fn max_abs_diff(&self, other: &KernelGrid) -> Result<f64> {
        if self.size != other.size {
            return Err(Error::DimensionMismatch {
                expected: (self.size, self.size),
                actual: (other.size, other.size),
            });
        }
        Ok(self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `h` lines of `h` space-separated decimals, row 0 on top.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.size * self.size * 20);
        for row in self.weights.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:.12e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parse the [`KernelGrid::to_text`] format and renormalize.
    pub fn from_text(text: &str) -> Result<Self> {
        let rows: Vec<Vec<f64>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|tok| {
                        tok.parse::<f64>()
                            .map_err(|_| Error::InvalidInput(format!("bad kernel entry {tok:?}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::InvalidInput("kernel matrix must be square".into()));
        }
        normalize_kernel(size, rows.into_iter().flatten().collect())
    }

    /// 8-bit heatmap with the largest weight mapped to 255.
    pub fn heatmap(&self) -> Vec<u8> {
        let max = self.max_weight();
        self.weights
            .iter()
            .map(|w| {
                if max > 0.0 {
                    (w / max * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                }
            })
            .collect()
    }
}

/// Divide a raw nonnegative grid by its total.
pub fn normalize_kernel(size: usize, raw: Vec<f64>) -> Result<KernelGrid> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "kernel grid side must be odd and positive, got {size}"
        )));
    }
    if raw.len() != size * size {
        return Err(Error::InvalidInput(format!(
            "kernel grid has {} entries, expected {}",
            raw.len(),
            size * size
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel grid entry".into()));
    }
    if raw.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidInput(
            "kernel grid has negative entries".into(),
        ));
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateKernel(format!(
            "kernel mass {total:e} cannot be normalized"
        )));
    }
    Ok(KernelGrid {
        size,
        weights: raw.into_iter().map(|v| v / total).collect(),
    })
}

/// Unnormalized mixture: the cell-wise sum of every base.
pub fn render_raw(params: &MixtureParams, ctx: &KernelRenderContext) -> Vec<f64> {
    let mut grid = vec![0.0; ctx.coords.len()];
    for b in &params.bases {
        let (s, c) = b.theta.sin_cos();
        for (cell, &(x, y)) in grid.iter_mut().zip(&ctx.coords) {
            *cell += eval_base_full(b, c, s, x, y).value;
        }
    }
    grid
}

pub fn render_mixture(params: &MixtureParams, ctx: &KernelRenderContext) -> Result<KernelGrid> {
    let raw = render_raw(params, ctx);
    normalize_kernel(ctx.size, raw).map_err(|e| match e {
        Error::DegenerateKernel(msg) => {
            Error::DegenerateKernel(format!("{msg}; all bases vanish on the grid"))
        }
        other => other,
    })
}

/// Partial derivatives of the unnormalized mixture with respect to every
/// free scalar, laid out like [`MixtureParams::to_vector`].
#[derive(Debug, Clone)]
pub struct MixtureJacobian {
    variant: Variant,
    n_bases: usize,
    grids: Vec<Vec<f64>>,
}

impl MixtureJacobian {
    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    /// Derivative grid of base `base` with respect to `kind`; all zeros when
    /// the variant does not treat `kind` as free.
    pub fn partial(&self, base: usize, kind: ParamKind) -> Option<&[f64]> {
        assert!(base < self.n_bases, "base index out of range");
        let per = self.variant.params_per_base();
        self.variant
            .param_kinds()
            .iter()
            .position(|&k| k == kind)
            .map(|slot| self.grids[base * per + slot].as_slice())
    }
}

/// Raw mixture plus its Jacobian in a single pass over the grid.
pub fn render_with_jacobian(
    params: &MixtureParams,
    ctx: &KernelRenderContext,
) -> (Vec<f64>, MixtureJacobian) {
    let cells = ctx.coords.len();
    let kinds = params.variant.param_kinds();
    let mut raw = vec![0.0; cells];
    let mut grids = vec![vec![0.0; cells]; params.n_params()];
    for (t, b) in params.bases.iter().enumerate() {
        let (s, c) = b.theta.sin_cos();
        let block = &mut grids[t * kinds.len()..(t + 1) * kinds.len()];
        for (idx, &(x, y)) in ctx.coords.iter().enumerate() {
            let e = eval_base_full(b, c, s, x, y);
            raw[idx] += e.value;
            let ax = e.dx / b.sigma_x_sq;
            let ay = e.dy / b.sigma_y_sq;
            for (slot, kind) in kinds.iter().enumerate() {
                block[slot][idx] = e.value
                    * match kind {
                        ParamKind::LogVar => 0.5 * (e.dx * ax + e.dy * ay),
                        ParamKind::LogVarX => 0.5 * e.dx * ax,
                        ParamKind::LogVarY => 0.5 * e.dy * ay,
                        ParamKind::MuX => ax,
                        ParamKind::MuY => ay,
                        // d(Rp)/dθ = (−ry, rx)
                        ParamKind::Theta => ax * e.ry - ay * e.rx,
                    };
            }
        }
    }
    (
        raw,
        MixtureJacobian {
            variant: params.variant,
            n_bases: params.bases.len(),
            grids,
        },
    )
}

pub fn mixture_jacobian(params: &MixtureParams, ctx: &KernelRenderContext) -> MixtureJacobian {
    render_with_jacobian(params, ctx).1
}
