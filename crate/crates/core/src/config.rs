//! Solver hyperparameters and the flat `key = value` config-file format.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Number of base kernels `N`.
    pub n_bases: usize,
    /// Side length `h` of the square kernel grid; must be odd.
    pub kernel_size: usize,
    /// Weight of the kernel prior `‖K‖²`.
    pub lambda1: f64,
    /// Weight of the covariance prior `‖σ²‖²`.
    pub lambda2: f64,
    /// Initial weight of the image prior `‖∇I‖² + ‖I‖²`.
    pub lambda3_init: f64,
    /// `λ₃` is divided by this after every image update.
    pub lambda3_decay: f64,
    /// Relative-change threshold on both the kernel and the image.
    pub epsilon: f64,
    pub max_outer_iters: usize,
    pub max_cg_iters: usize,
    pub rng_seed: u64,
    pub variant: Variant,
    /// Cosine edge taper before deconvolution.
    pub edge_taper: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_bases: 9,
            kernel_size: 31,
            lambda1: 1e-4,
            lambda2: 1e-2,
            lambda3_init: 1e-2,
            lambda3_decay: 1.1,
            epsilon: 1e-3,
            max_outer_iters: 50,
            max_cg_iters: 100,
            rng_seed: 0,
            variant: Variant::Center,
            edge_taper: false,
        }
    }
}

impl SolverConfig {
    /// Half-width `(h − 1) / 2` of the kernel grid.
    pub fn radius(&self) -> usize {
        (self.kernel_size - 1) / 2
    }

    pub fn validate(&self) -> Result<&Self> {
        if self.n_bases == 0 {
            return Err(Error::Config("num_kernels must be at least 1".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel_size must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("kernel_size must be odd".into()));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3_init),
        ] {
            if !(v >= 0.0) || v.is_infinite() {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(self.lambda3_decay > 1.0) || self.lambda3_decay.is_infinite() {
            return Err(Error::Config(format!(
                "lambda3_decay must be finite and > 1, got {}",
                self.lambda3_decay
            )));
        }
        // epsilon = inf is allowed: it makes the first iteration terminal.
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(self)
    }

    /// Consuming form of [`SolverConfig::validate`].
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Apply one `key = value` setting. Keys match the CLI flag names with
    /// `-` replaced by `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
        }
        match key {
            "kernel_size" => self.kernel_size = parse(key, value)?,
            "num_kernels" => self.n_bases = parse(key, value)?,
            "lambda1" => self.lambda1 = parse(key, value)?,
            "lambda2" => self.lambda2 = parse(key, value)?,
            "lambda3" => self.lambda3_init = parse(key, value)?,
            "lambda3_decay" => self.lambda3_decay = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "max_iters" => self.max_outer_iters = parse(key, value)?,
            "max_cg_iters" => self.max_cg_iters = parse(key, value)?,
            "seed" => self.rng_seed = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "edge_taper" => self.edge_taper = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parse a flat config file on top of `self`. Blank lines and lines
    /// starting with `#` are skipped; unknown keys are errors.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", lineno + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "cannot parse {key} = {value:?} as bool"
        ))),
    }
}
