//! Command-line surface: `deblur`, `synth`, and `eval`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::codec::{
    read_image, read_kernel_text, write_kernel_heatmap, write_kernel_text, write_png,
};
use crate::config::SolverConfig;
use crate::error::{Error, ErrorCategory, Result};
use crate::image::{ColorSpace, MultiChannelImage};
use crate::kernel::{BaseKernelParams, Variant};
use crate::metrics::{quality_report, QualityReport};
use crate::pipeline::{deblur_with_sink, trace_to_csv, Termination};
use crate::synth::{degrade, find_scenario, pattern, DegradationSpec, KernelSource, Pattern};

#[derive(Debug, Parser)]
#[command(
    name = "kernelmix",
    version,
    about = "Blind deblurring with Gaussian kernel mixtures"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the blur kernel and recover the latent image.
    Deblur(DeblurArgs),
    /// Generate a blurred test pair from a known kernel.
    Synth(SynthArgs),
    /// Compare a recovered image against a reference.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    /// Blurred input image(s); repeat for batch mode.
    #[arg(long)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub num_kernels: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub lambda3_decay: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub max_cg_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    /// on/off; defaults to on.
    #[arg(long)]
    pub edge_taper: Option<String>,
    /// Ground-truth image for a quality report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Concurrent pipelines in batch mode.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Preset name, e.g. `elliptic-low`.
    #[arg(long)]
    pub scenario: Option<String>,
    /// JSON degradation spec file.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// `delta` or a kernel matrix text file.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Noise standard deviation on the [0, 1] scale; overrides the preset.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clean image; a procedural pattern is used when absent.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "composite")]
    pub pattern: Pattern,
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Side of the delta kernel for `--kernel delta`.
    #[arg(long, default_value_t = 31)]
    pub kernel_size: usize,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub recovered: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Process exit code for a failure category.
pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn category_name(category: ErrorCategory) -> &'static str {
    match category {
        ErrorCategory::Config => "config",
        ErrorCategory::Io => "io",
        ErrorCategory::Numeric => "numeric",
    }
}

/// Parse arguments, run the command, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Deblur(a) => cmd_deblur(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|report| {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).unwrap_or_default()
            );
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let cat = e.category();
            eprintln!("error[{}]: {e}", category_name(cat));
            exit_code(cat)
        }
    }
}

/// Settings of a deblur run after merging the config file and flags.
#[derive(Debug, Clone, Serialize)]
pub struct DeblurSettings {
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub truth: Option<PathBuf>,
    pub jobs: usize,
    pub solver: SolverConfig,
}

fn parse_on_off(value: &str) -> Result<bool> {
    let mut probe = SolverConfig::default();
    probe.set("edge_taper", value)?;
    Ok(probe.edge_taper)
}

impl DeblurSettings {
    pub fn resolve(args: &DeblurArgs) -> Result<Self> {
        let mut solver = SolverConfig {
            edge_taper: true,
            ..SolverConfig::default()
        };
        let mut inputs = Vec::new();
        let mut output_dir = None;
        let mut truth = None;
        let mut jobs = 1;

        if let Some(path) = &args.config {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::Config(format!(
                        "{}:{}: expected key=value",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "input" => inputs.push(PathBuf::from(value)),
                    "output_dir" => output_dir = Some(PathBuf::from(value)),
                    "truth" => truth = Some(PathBuf::from(value)),
                    "jobs" => {
                        jobs = value
                            .parse()
                            .map_err(|_| Error::Config(format!("cannot parse jobs = {value:?}")))?
                    }
                    _ => solver.set(key, value).map_err(|e| {
                        Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1))
                    })?,
                }
            }
        }

        if !args.input.is_empty() {
            inputs = args.input.clone();
        }
        if let Some(dir) = &args.output_dir {
            output_dir = Some(dir.clone());
        }
        if let Some(t) = &args.truth {
            truth = Some(t.clone());
        }
        if let Some(j) = args.jobs {
            jobs = j;
        }
        macro_rules! flag {
            ($field:ident, $target:ident) => {
                if let Some(v) = args.$field {
                    solver.$target = v;
                }
            };
        }
        flag!(kernel_size, kernel_size);
        flag!(num_kernels, n_bases);
        flag!(lambda1, lambda1);
        flag!(lambda2, lambda2);
        flag!(lambda3, lambda3_init);
        flag!(lambda3_decay, lambda3_decay);
        flag!(epsilon, epsilon);
        flag!(max_iters, max_outer_iters);
        flag!(max_cg_iters, max_cg_iters);
        flag!(seed, rng_seed);
        flag!(variant, variant);
        if let Some(v) = &args.edge_taper {
            solver.edge_taper = parse_on_off(v)?;
        }

        solver.validate()?;
        if inputs.is_empty() {
            return Err(Error::Config("no --input given".into()));
        }
        let output_dir = output_dir.ok_or_else(|| Error::Config("no --output-dir given".into()))?;
        if truth.is_some() && inputs.len() > 1 {
            return Err(Error::Config("--truth applies to a single --input".into()));
        }
        Ok(Self {
            inputs,
            output_dir,
            truth,
            jobs: jobs.max(1),
            solver,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DeblurOutputs {
    pub recovered: PathBuf,
    pub kernel_heatmap: PathBuf,
    pub kernel_matrix: PathBuf,
    pub trace: PathBuf,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTimings {
    pub load_s: f64,
    pub deblur_s: f64,
    pub write_s: f64,
}

/// Record of one deblur run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub input: PathBuf,
    pub truth: Option<PathBuf>,
    pub config: SolverConfig,
    pub seed: u64,
    pub timings: StageTimings,
    pub outputs: DeblurOutputs,
    pub termination: Termination,
    pub iterations: usize,
    pub final_params: Vec<BaseKernelParams>,
    /// Recovered image against the truth.
    pub quality: Option<QualityReport>,
    /// Blurred input against the truth, for reference.
    pub blurred_quality: Option<QualityReport>,
}

fn deblur_one(
    input: &Path,
    out_dir: &Path,
    settings: &DeblurSettings,
    quiet: bool,
) -> Result<RunManifest> {
    let t0 = Instant::now();
    let blurred = read_image(input)?;
    let truth = settings.truth.as_deref().map(read_image).transpose()?;
    let t1 = Instant::now();

    let label = input.display().to_string();
    let mut progress = |rec: &crate::pipeline::IterationRecord| {
        if !quiet {
            eprintln!(
                "[{label}] iter {:>3}  dK {:.3e}  dI {:.3e}  lambda3 {:.3e}  E(K) {:.4e}",
                rec.iteration,
                rec.kernel_rel_change,
                rec.image_rel_change,
                rec.lambda3,
                rec.kernel_energy
            );
        }
    };
    let result = deblur_with_sink(&blurred, &settings.solver, &mut progress)?;
    let t2 = Instant::now();

    std::fs::create_dir_all(out_dir)?;
    let outputs = DeblurOutputs {
        recovered: out_dir.join("recovered.png"),
        kernel_heatmap: out_dir.join("kernel.png"),
        kernel_matrix: out_dir.join("kernel.txt"),
        trace: out_dir.join("trace.csv"),
        manifest: out_dir.join("manifest.json"),
    };
    let recovered = result.latent.clamped();
    write_png(&outputs.recovered, &recovered)?;
    write_kernel_heatmap(&outputs.kernel_heatmap, &result.kernel)?;
    write_kernel_text(&outputs.kernel_matrix, &result.kernel)?;
    std::fs::write(&outputs.trace, trace_to_csv(&result.trace))?;

    let (quality, blurred_quality) = match &truth {
        Some(t) => {
            let t = match_colorspace(t, recovered.colorspace())?;
            (
                Some(quality_report(&t, &recovered)?),
                Some(quality_report(&t, &blurred)?),
            )
        }
        None => (None, None),
    };
    let mut manifest = RunManifest {
        input: input.to_path_buf(),
        truth: settings.truth.clone(),
        config: settings.solver.clone(),
        seed: settings.solver.rng_seed,
        timings: StageTimings {
            load_s: (t1 - t0).as_secs_f64(),
            deblur_s: (t2 - t1).as_secs_f64(),
            write_s: 0.0,
        },
        outputs: outputs.clone(),
        termination: result.termination,
        iterations: result.trace.len(),
        final_params: result.params.bases().to_vec(),
        quality,
        blurred_quality,
    };
    manifest.timings.write_s = t2.elapsed().as_secs_f64();
    std::fs::write(&outputs.manifest, serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reduce an RGB truth to luminance when the recovered image is gray.
fn match_colorspace(img: &MultiChannelImage, target: ColorSpace) -> Result<MultiChannelImage> {
    match (img.colorspace(), target) {
        (a, b) if a == b => Ok(img.clone()),
        (ColorSpace::Rgb, ColorSpace::Gray) => Ok(MultiChannelImage::gray(img.luminance())),
        (ColorSpace::Gray, ColorSpace::Rgb) => {
            let g = img.channels()[0].clone();
            MultiChannelImage::new(ColorSpace::Rgb, vec![g.clone(), g.clone(), g])
        }
        _ => unreachable!(),
    }
}

pub fn cmd_deblur(args: &DeblurArgs) -> Result<Vec<RunManifest>> {
    let settings = DeblurSettings::resolve(args)?;
    if settings.inputs.len() == 1 {
        return Ok(vec![deblur_one(
            &settings.inputs[0],
            &settings.output_dir,
            &settings,
            args.quiet,
        )?]);
    }

    let dirs: Vec<PathBuf> = settings
        .inputs
        .iter()
        .enumerate()
        .map(|(idx, p)| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned());
            settings.output_dir.join(format!(
                "{idx:03}-{}",
                stem.unwrap_or_else(|| "input".into())
            ))
        })
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunManifest>>>> =
        Mutex::new((0..settings.inputs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..settings.jobs.min(settings.inputs.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= settings.inputs.len() {
                    break;
                }
                let r = deblur_one(&settings.inputs[idx], &dirs[idx], &settings, args.quiet);
                results.lock().expect("result slot lock")[idx] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("result slot lock")
        .into_iter()
        .map(|r| r.expect("every input processed"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthManifest {
    pub scenario: Option<String>,
    pub seed: u64,
    pub spec: DegradationSpec,
    pub clean: PathBuf,
    pub blurred: PathBuf,
    pub kernel_matrix: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthManifest> {
    let sources = [
        args.scenario.is_some(),
        args.spec.is_some(),
        args.kernel.is_some(),
    ];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(Error::Config(
            "give exactly one of --scenario, --spec, --kernel".into(),
        ));
    }
    let mut spec = if let Some(name) = &args.scenario {
        find_scenario(name)?.spec
    } else if let Some(path) = &args.spec {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
    } else {
        let kernel = match args.kernel.as_deref() {
            Some("delta") => KernelSource::Delta {
                size: args.kernel_size,
            },
            Some(path) => {
                let k = read_kernel_text(Path::new(path))?;
                KernelSource::Grid {
                    size: k.size(),
                    weights: k.weights().to_vec(),
                }
            }
            None => unreachable!(),
        };
        DegradationSpec {
            kernel,
            noise_sigma: 0.0,
            seed: 0,
        }
    };
    if let Some(n) = args.noise {
        spec.noise_sigma = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }

    let clean = match &args.input {
        Some(p) => read_image(p)?,
        None => {
            if args.size == 0 {
                return Err(Error::Config("--size must be positive".into()));
            }
            MultiChannelImage::gray(pattern(args.pattern, args.size, args.size))
        }
    };
    let (blurred, kernel) = degrade(&clean, &spec)?;

    std::fs::create_dir_all(&args.output_dir)?;
    let manifest = SynthManifest {
        scenario: args.scenario.clone(),
        seed: spec.seed,
        spec,
        clean: args.output_dir.join("clean.png"),
        blurred: args.output_dir.join("blurred.png"),
        kernel_matrix: args.output_dir.join("kernel.txt"),
    };
    write_png(&manifest.clean, &clean)?;
    write_png(&manifest.blurred, &blurred)?;
    write_kernel_text(&manifest.kernel_matrix, &kernel)?;
    std::fs::write(
        args.output_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<QualityReport> {
    let reference = read_image(&args.reference)?;
    let recovered = read_image(&args.recovered)?;
    let report = quality_report(&reference, &recovered)?;
    if let Some(path) = &args.output {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
