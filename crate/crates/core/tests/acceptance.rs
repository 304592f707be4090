//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion; run with `--nocapture` to see them all.

mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_convolve, random_kernel, random_plane, DenseLatentProblem};
use kernelmix::fft::{convolve, solve_latent};
use kernelmix::kernel::{render_mixture, KernelRenderContext};
use kernelmix::metrics::{psnr_db, psnr_db_from_mse, psnr_paper, rmse, PEAK_8BIT};
use kernelmix::optimizer::{kernel_energy, kernel_energy_gradient, minimize_kernel};
use kernelmix::pipeline::{initialize_params, trace_to_csv};
use kernelmix::synth::{checkerboard, composite, degrade, preset_scenarios, NoiseTier};
use kernelmix::{
    deblur, BaseKernelParams, Error, ImagePlane, MixtureParams, MultiChannelImage, SolverConfig,
    Termination, Variant,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(criterion: u32, title: &str, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {criterion:>2} [{verdict}] {title}: {detail}");
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_02_spectral_convolution() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let ks = [1, 3, 5][rng.random_range(0..3)];
        let w = rng.random_range(ks..=16);
        let h = rng.random_range(ks..=16);
        let img = random_plane(&mut rng, w, h);
        let k = random_kernel(&mut rng, ks);
        let fast = convolve(&img, &k).unwrap();
        let slow = brute_convolve(&img, &k);
        for (a, b) in fast.data().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    let elapsed = start.elapsed();
    report(
        2,
        "spectral convolution matches direct sum",
        worst <= 1e-9 && elapsed < Duration::from_secs(5),
        &format!(
            "max abs error {worst:.3e} (<= 1e-9), {:.2}s (< 5s)",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_03_closed_form_optimality() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut beaten = 0usize;
    for _ in 0..20 {
        let ks = [1, 3, 5][rng.random_range(0..3)];
        let blurred = random_plane(&mut rng, 6, 6);
        let k = random_kernel(&mut rng, ks);
        let lambda3 = 10f64.powf(rng.random_range(-3.0..0.0));
        let latent = solve_latent(&blurred, &k, lambda3).unwrap();
        let dense = DenseLatentProblem::new(&blurred, &k, lambda3);
        let oracle = dense.solve();
        for (a, b) in latent.data().iter().zip(oracle.iter()) {
            worst = worst.max((a - b).abs());
        }
        let x = DVector::from_row_slice(latent.data());
        let e = dense.energy(&x);
        for _ in 0..50 {
            let scale = 10f64.powf(rng.random_range(-6.0..-1.0));
            let y = DVector::from_fn(x.len(), |i, _| x[i] + scale * (rng.random::<f64>() - 0.5));
            if dense.energy(&y) < e {
                beaten += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        3,
        "closed-form image step is the normal-equation minimizer",
        worst <= 1e-8 && beaten == 0 && elapsed < Duration::from_secs(10),
        &format!(
            "max abs vs dense solve {worst:.3e} (<= 1e-8), {beaten} of 1000 perturbations lower, {:.2}s (< 10s)",
            secs(elapsed)
        ),
    );
}

fn random_params(rng: &mut impl Rng, variant: Variant, n: usize) -> MixtureParams {
    let bases = (0..n)
        .map(|_| {
            let sx = rng.random_range(0.5..4.0);
            let sy = rng.random_range(0.5..4.0);
            let mx = rng.random_range(-2.0..2.0);
            let my = rng.random_range(-2.0..2.0);
            let th = rng.random_range(0.1..3.0);
            match variant {
                Variant::Simple => BaseKernelParams::isotropic(sx),
                Variant::Scale => BaseKernelParams::scaled(sx, sy),
                Variant::Center => BaseKernelParams::centered(sx, sy, mx, my),
                Variant::Rotation => BaseKernelParams::rotated(sx, sy, mx, my, th),
            }
        })
        .collect();
    MixtureParams::new(variant, bases).unwrap()
}

#[test]
fn criterion_04_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let step = 1e-6;
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        for _ in 0..20 {
            let cfg = SolverConfig {
                n_bases: 3,
                kernel_size: 7,
                lambda1: rng.random_range(1e-3..1.0),
                lambda2: rng.random_range(1e-3..1e-1),
                variant,
                ..SolverConfig::default()
            };
            let latent = random_plane(&mut rng, 16, 16);
            let blurred = random_plane(&mut rng, 16, 16);
            let params = random_params(&mut rng, variant, 3);
            let analytic = kernel_energy_gradient(&params, &latent, &blurred, &cfg).unwrap();
            let x = params.to_vector();
            let mut numeric = vec![0.0; x.len()];
            for i in 0..x.len() {
                let mut hi = x.clone();
                let mut lo = x.clone();
                hi[i] += step;
                lo[i] -= step;
                let e = |v: &[f64]| {
                    let p = MixtureParams::from_vector(variant, v).unwrap();
                    kernel_energy(&p, &latent, &blurred, &cfg).unwrap().total
                };
                numeric[i] = (e(&hi) - e(&lo)) / (2.0 * step);
            }
            let scale = numeric
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-12);
            for (a, n) in analytic.iter().zip(&numeric) {
                worst = worst.max((a - n).abs() / scale);
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        "analytic kernel-energy gradient matches central differences",
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        &format!(
            "max relative deviation {worst:.3e} over 80 instances (<= 1e-4), {:.2}s (< 30s)",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_05_kernel_recovery() {
    let start = Instant::now();
    let size = 15;
    let truth = MixtureParams::new(
        Variant::Center,
        vec![
            BaseKernelParams::centered(2.0, 1.0, -2.0, 1.0),
            BaseKernelParams::centered(1.5, 3.0, 3.0, -2.0),
        ],
    )
    .unwrap();
    let k_true = render_mixture(&truth, &KernelRenderContext::new(size).unwrap()).unwrap();
    let clean = checkerboard(64, 64, 8);
    let blurred = convolve(&clean, &k_true).unwrap();
    let cfg = SolverConfig {
        n_bases: 2,
        kernel_size: size,
        lambda1: 1e-6,
        lambda2: 1e-6,
        variant: Variant::Center,
        max_cg_iters: 2000,
        ..SolverConfig::default()
    };
    let best = (0..5u64)
        .map(|seed| {
            let start = initialize_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            minimize_kernel(&start, &clean, &blurred, &cfg).unwrap()
        })
        .min_by(|a, b| a.energy.total.total_cmp(&b.energy.total))
        .unwrap();
    let err = best.kernel.max_abs_diff(&k_true).unwrap();
    let elapsed = start.elapsed();
    report(
        5,
        "kernel recovery with the latent image fixed",
        err <= 5e-2 && elapsed < Duration::from_secs(60),
        &format!(
            "lowest-energy of 5 starts is {err:.3e} from the true grid (<= 5e-2), {:.2}s (< 60s)",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_06_end_to_end_improvement() {
    let start = Instant::now();
    let clean = MultiChannelImage::gray(composite(128, 128));
    let cfg = SolverConfig::default();
    let mut low_ok = 0;
    let mut low_total = 0;
    let mut high_ok = 0;
    let mut lines = Vec::new();
    for scenario in preset_scenarios() {
        let (blurred, _) = degrade(&clean, &scenario.spec).unwrap();
        let result = deblur(&blurred, &cfg).unwrap();
        let reference = &clean.channels()[0];
        let before = &blurred.channels()[0];
        let after = &result.latent.channels()[0];
        let rmse_b = rmse(reference, before).unwrap();
        let rmse_a = rmse(reference, after).unwrap();
        let psnr_b = psnr_db(reference, before, PEAK_8BIT).unwrap();
        let psnr_a = psnr_db(reference, after, PEAK_8BIT).unwrap();
        let improved = rmse_a < rmse_b && psnr_a > psnr_b;
        match scenario.tier {
            NoiseTier::Low => {
                low_total += 1;
                low_ok += improved as usize;
            }
            NoiseTier::High => high_ok += improved as usize,
        }
        lines.push(format!(
            "{} rmse {rmse_b:.3}->{rmse_a:.3} psnr {psnr_b:.3}->{psnr_a:.3} dB",
            scenario.name
        ));
    }
    let elapsed = start.elapsed();
    for line in &lines {
        println!("    {line}");
    }
    report(
        6,
        "blind deblurring improves on the blurred input",
        low_ok == low_total && high_ok >= 4 && elapsed < Duration::from_secs(600),
        &format!(
            "low tier improved {low_ok}/{low_total} (need all), high tier {high_ok}/6 (need 4), {:.1}s (< 600s)",
            secs(elapsed)
        ),
    );
}

#[test]
fn criterion_07_shrinkage() {
    let start = Instant::now();
    let size = 15;
    let truth = MixtureParams::new(
        Variant::Center,
        vec![BaseKernelParams::centered(3.0, 3.0, 0.0, 0.0)],
    )
    .unwrap();
    let k_true = render_mixture(&truth, &KernelRenderContext::new(size).unwrap()).unwrap();
    let clean = checkerboard(64, 64, 8);
    let blurred = convolve(&clean, &k_true).unwrap();
    let cfg_for = |lambda2| SolverConfig {
        n_bases: 9,
        kernel_size: size,
        lambda2,
        variant: Variant::Center,
        max_cg_iters: 2000,
        ..SolverConfig::default()
    };
    let run = |lambda2: f64, seed: u64| {
        let cfg = cfg_for(lambda2);
        let start = initialize_params(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        minimize_kernel(&start, &clean, &blurred, &cfg)
            .unwrap()
            .params
    };
    let mut paired_ok = true;
    let mut strong_ok = true;
    let mut details = Vec::new();
    for seed in 0..3u64 {
        let weak: f64 = run(1e-2, seed).variance_vector().iter().sum();
        let medium: f64 = run(10.0, seed).variance_vector().iter().sum();
        let strong = run(1e3, seed);
        let negligible = strong
            .bases()
            .iter()
            .filter(|b| b.sigma_x_sq <= 1e-2 && b.sigma_y_sq <= 1e-2)
            .count();
        paired_ok &= medium < weak;
        strong_ok &= negligible >= 8;
        details.push(format!(
            "seed {seed}: {weak:.3} vs {medium:.3}, {negligible}/9 negligible"
        ));
    }
    report(
        7,
        "covariance prior shrinks unneeded bases",
        paired_ok && strong_ok,
        &format!(
            "sum of variances at 1e-2 vs 10 and bases <= 1e-2 at 1e3: {} ({:.1}s)",
            details.join("; "),
            secs(start.elapsed())
        ),
    );
}

#[test]
fn criterion_08_schedule_fidelity() {
    let clean = MultiChannelImage::gray(composite(64, 64));
    let scenario = kernelmix::synth::find_scenario("elliptic-low").unwrap();
    let (blurred, _) = degrade(&clean, &scenario.spec).unwrap();
    let mut failures = Vec::new();
    let mut records = 0;
    for (epsilon, max_outer_iters) in [(1e-3, 50), (1e-12, 8), (0.5, 20)] {
        let cfg = SolverConfig {
            epsilon,
            max_outer_iters,
            ..SolverConfig::default()
        };
        let result = deblur(&blurred, &cfg).unwrap();
        let mut expected = cfg.lambda3_init;
        for (idx, rec) in result.trace.iter().enumerate() {
            expected /= cfg.lambda3_decay;
            if rec.iteration != idx + 1 || rec.lambda3 != expected {
                failures.push(format!(
                    "eps {epsilon}: lambda3 {} at iteration {}",
                    rec.lambda3, rec.iteration
                ));
            }
            let both_small = rec.kernel_rel_change < epsilon && rec.image_rel_change < epsilon;
            let last = idx + 1 == result.trace.len();
            if both_small != (last && result.termination == Termination::Converged) {
                failures.push(format!(
                    "eps {epsilon}: stop rule at iteration {}",
                    rec.iteration
                ));
            }
        }
        if result.termination == Termination::MaxIters && result.trace.len() != max_outer_iters {
            failures.push(format!(
                "eps {epsilon}: stopped after {} iterations",
                result.trace.len()
            ));
        }
        for k in &result.kernels {
            if (k.sum() - 1.0).abs() > 1e-12 {
                failures.push(format!("eps {epsilon}: kernel sum {}", k.sum()));
            }
        }
        records += result.trace.len();
    }
    report(
        8,
        "outer-loop schedule and stopping rule",
        failures.is_empty(),
        &if failures.is_empty() {
            format!("{records} records checked across 3 runs")
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_kernelmix");
    let synth = Command::new(bin)
        .args([
            "synth",
            "--scenario",
            "two-source-low",
            "--size",
            "64",
            "--output-dir",
        ])
        .arg(dir.path().join("synth"))
        .output()
        .unwrap();
    assert!(
        synth.status.success(),
        "{}",
        String::from_utf8_lossy(&synth.stderr)
    );
    let input = dir.path().join("synth").join("blurred.png");
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(bin)
            .args([
                "deblur",
                "--seed",
                "7",
                "--max-iters",
                "5",
                "--quiet",
                "--output-dir",
            ])
            .arg(&out)
            .arg("--input")
            .arg(&input)
            .status()
            .unwrap();
        assert!(status.success());
        let kernel = std::fs::read(out.join("kernel.txt")).unwrap();
        let trace = std::fs::read(out.join("trace.csv")).unwrap();
        outputs.push((kernel, trace));
    }

    let blurred = kernelmix::codec::read_image(&input).unwrap();
    let cfg = SolverConfig {
        rng_seed: 7,
        max_outer_iters: 5,
        ..SolverConfig::default()
    };
    let first = deblur(&blurred, &cfg).unwrap();
    let second = deblur(&blurred, &cfg).unwrap();
    let library_same = first.kernel.to_text() == second.kernel.to_text()
        && trace_to_csv(&first.trace) == trace_to_csv(&second.trace);

    let cli_same = outputs[0] == outputs[1];
    report(
        9,
        "repeat runs are byte-identical",
        cli_same && library_same,
        &format!("cli kernel.txt and trace.csv identical: {cli_same}, library text identical: {library_same}"),
    );
}

#[test]
fn criterion_10_metrics() {
    let plane = |v: &[f64]| ImagePlane::new(2, 2, v.to_vec()).unwrap();
    let zeros = plane(&[0.0; 4]);
    let ones = plane(&[1.0; 4]);
    let steps = plane(&[1.0 / 255.0, 2.0 / 255.0, 3.0 / 255.0, 4.0 / 255.0]);
    let mut checks: Vec<(&str, bool)> = Vec::new();

    checks.push(("rmse identity", rmse(&steps, &steps).unwrap() == 0.0));
    checks.push((
        "rmse constant offset",
        rmse(&zeros, &ones).unwrap() == 255.0,
    ));
    let stepped = rmse(&zeros, &steps).unwrap();
    checks.push(("rmse 2x2 example", (stepped - 7.5f64.sqrt()).abs() <= 1e-12));
    checks.push(("rmse 2x2 rounded", (stepped - 2.7386).abs() <= 5e-5));

    // Range 255 and MSE 25.5 on the 8-bit scale.
    let rec = ImagePlane::new(
        10,
        1,
        vec![0.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
    )
    .unwrap();
    let offset = 25.5f64.sqrt() / 255.0;
    let reference = rec.map(|v| v + offset).unwrap();
    checks.push((
        "psnr_paper range over mse",
        (psnr_paper(&reference, &rec).unwrap() - 10.0).abs() <= 1e-9,
    ));
    checks.push((
        "psnr_paper constant recovered",
        psnr_paper(&steps, &zeros).unwrap() == 0.0,
    ));
    checks.push((
        "psnr_paper zero mse",
        matches!(psnr_paper(&steps, &steps), Err(Error::ZeroMse)),
    ));
    checks.push((
        "zero mse message",
        psnr_paper(&steps, &steps)
            .unwrap_err()
            .to_string()
            .contains("undefined at zero MSE"),
    ));

    checks.push((
        "psnr_db unit ratio",
        psnr_db_from_mse(255.0 * 255.0, 255.0).unwrap() == 0.0,
    ));
    let table = psnr_db_from_mse(13.27 * 13.27, 255.0).unwrap();
    checks.push(("psnr_db rmse 13.27", (table - 25.68).abs() <= 0.01));
    let halved = psnr_db_from_mse(13.27 * 13.27 / 4.0, 255.0).unwrap();
    checks.push((
        "psnr_db halving rmse",
        (halved - table - 20.0 * 2f64.log10()).abs() <= 1e-12,
    ));
    checks.push((
        "psnr_db zero mse",
        matches!(psnr_db(&steps, &steps, 255.0), Err(Error::ZeroMse)),
    ));

    let failed: Vec<&str> = checks
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(n, _)| *n)
        .collect();
    report(
        10,
        "image quality metrics",
        failed.is_empty(),
        &if failed.is_empty() {
            format!("{} examples exact", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    );
}
