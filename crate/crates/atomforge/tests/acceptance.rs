//! End-to-end acceptance checks, one test per criterion. Each prints a
//! single "ACCEPTANCE <n> PASS/FAIL: ..." line (visible with --nocapture)
//! before asserting, so a full run yields a scoreboard.
//!
//! Every reference value here is computed by an independent test-side
//! oracle (Airy reflection, Poisson/binomial tail recurrences) rather than
//! by calling back into the code under test.

use std::time::Instant;

use atomforge::config::Config;
use atomforge::imaging::{
    empirical_optimal_threshold, fit_histogram, simulate_roi_sums, SiteLight,
};
use atomforge::montecarlo::sweep_offsets;
use atomforge::optics::{lattice_profile, membrane_reflection};
use atomforge::planner::{
    plan_compression, plan_to_devices, simulate_pipeline, verify_no_crossings, Axis,
    DeviceTarget, RearrangementPlan, SegmentKind,
};
use atomforge::rng::{make_rng, streams};
use atomforge::spectroscopy::{
    fit_lifetime, fit_mixture, lifetime_curve, map_twophoton, mixture_survival,
    two_photon_response,
};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn report(n: usize, what: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} {tag}: {what} ({detail})");
    assert!(pass, "acceptance criterion {n} failed: {what}: {detail}");
}

/// Airy summation for a free-standing film, the textbook alternative to the
/// characteristic-matrix route: r = r12(1 - e^{2iβ})/(1 - r12² e^{2iβ}).
fn airy_reflection(thickness_nm: f64, n: f64, wavelength_nm: f64) -> Complex64 {
    let r12 = (1.0 - n) / (1.0 + n);
    let beta = 2.0 * std::f64::consts::PI * n * thickness_nm / wavelength_nm;
    let e2ib = Complex64::new(0.0, 2.0 * beta).exp();
    r12 * (Complex64::new(1.0, 0.0) - e2ib) / (Complex64::new(1.0, 0.0) - r12 * r12 * e2ib)
}

#[test]
fn criterion_01_standing_wave_structure() {
    let t0 = Instant::now();
    // Plane-wave regime: a waist of 500 µm puts the Rayleigh range near a
    // meter, so the Gaussian envelope deviates from 1 by ~1e-13 over the
    // scan and the profile must match the plane-wave oracle exactly.
    let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
    let profile = lattice_profile(&rr, 935.0, 500.0, 0.25, 1.0, 1.5, 30_001).unwrap();
    let z1_um = profile.maxima[0].z_um;
    let ratio = profile.maxima[0].intensity_ratio;

    let r_oracle = airy_reflection(330.0, 2.0, 935.0);
    let k_um = 2.0 * std::f64::consts::PI / 0.935;
    // Maxima of |1 + r e^{2ikz}|² sit where 2kz + arg r = 2πm.
    let z1_oracle = (2.0 * std::f64::consts::PI - r_oracle.arg()) / (2.0 * k_um);
    let ratio_oracle = (1.0 + r_oracle.norm()).powi(2);

    let dz_nm = (z1_um - z1_oracle).abs() * 1e3;
    let dratio = (ratio - ratio_oracle).abs();
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = dz_nm < 1.0
        && dratio < 1e-6
        && (200.0..=350.0).contains(&(z1_um * 1e3))
        && (1.5..=2.6).contains(&ratio)
        && elapsed < 1.0;
    report(
        1,
        "first standing-wave maximum matches the independent film oracle",
        pass,
        &format!(
            "z1 {:.4} nm (oracle {:.4}, diff {dz_nm:.2e} nm), ratio {ratio:.9} \
             (oracle {ratio_oracle:.9}, diff {dratio:.2e}), {elapsed:.2} s",
            z1_um * 1e3,
            z1_oracle * 1e3
        ),
    );
}

#[test]
fn criterion_02_loading_fraction_sweep() {
    let t0 = Instant::now();
    let config = Config::default();
    assert_eq!(config.mc.n_trials, 10_000, "sweep must run 1e4 trials per offset");
    let offsets = [100.0, 175.0, 250.0, 325.0, 400.0];
    let dists = sweep_offsets(&config, &offsets, 42).unwrap();
    let (best_offset, max_z1) = dists
        .iter()
        .map(|d| (d.offset_nm, d.well_fractions[0]))
        .fold((0.0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = (0.30..=0.50).contains(&max_z1) && elapsed < 120.0;
    report(
        2,
        "peak first-well loading fraction lies in [0.30, 0.50]",
        pass,
        &format!("max z1 fraction {max_z1:.4} at offset {best_offset} nm, {elapsed:.1} s"),
    );
}

#[test]
fn criterion_03_mixture_weight_recovery() {
    let t0 = Instant::now();
    let truth = [0.29, 0.66, 0.05];
    let centers = [-60.0, -38.0, -25.0];
    let width = 10.0;
    let noise = 0.02;
    let points = 141;
    let lo = centers[0] - 4.0 * width;
    let hi = centers[2] + 4.0 * width;
    let deltas: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();

    let mut ok = 0;
    for seed in 0..100u64 {
        let mut rng = make_rng(seed, streams::SPECTROSCOPY + 1);
        let gauss = Normal::new(0.0, noise).unwrap();
        let survivals: Vec<f64> = deltas
            .iter()
            .map(|&d| {
                (mixture_survival(d, &truth, &centers, width, 0.0) + gauss.sample(&mut rng))
                    .clamp(0.0, 1.0)
            })
            .collect();
        let fit = fit_mixture(&deltas, &survivals, &centers, width, 0.0).unwrap();
        if fit
            .weights
            .iter()
            .zip(&truth)
            .all(|(w, t)| (w - t).abs() <= 0.05)
        {
            ok += 1;
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = ok >= 95 && elapsed < 30.0;
    report(
        3,
        "well weights recovered to ±0.05 in at least 95 of 100 noisy fits",
        pass,
        &format!("{ok}/100 within tolerance, {elapsed:.1} s"),
    );
}

/// Poisson pmf by upward recurrence, p0 = e^{-λ}, p(k+1) = p(k)·λ/(k+1).
fn poisson_cdf_table(lambda: f64, k_max: u32) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(k_max as usize + 1);
    let mut pmf = (-lambda).exp();
    let mut acc = pmf;
    cdf.push(acc);
    for k in 0..k_max {
        pmf *= lambda / (k + 1) as f64;
        acc += pmf;
        cdf.push(acc);
    }
    cdf
}

/// Exhaustive integer-threshold sweep over exact Poisson tails; ties go to
/// the smaller threshold, matching the production convention.
fn oracle_threshold_sweep(lambda_bg: f64, lambda_sig: f64) -> (u32, f64) {
    let t_max = (lambda_sig + 12.0 * lambda_sig.sqrt() + 30.0).ceil() as u32;
    let cdf_bg = poisson_cdf_table(lambda_bg, t_max);
    let cdf_sig = poisson_cdf_table(lambda_sig, t_max);
    let mut best = (0u32, f64::NEG_INFINITY);
    for t in 0..=t_max {
        let miss = cdf_sig[t as usize];
        let false_alarm = 1.0 - cdf_bg[t as usize];
        let fid = 1.0 - 0.5 * (miss + false_alarm);
        if fid > best.1 {
            best = (t, fid);
        }
    }
    best
}

#[test]
fn criterion_04_imaging_fidelity() {
    let t0 = Instant::now();
    let cfg = Config::default().imaging;

    let mut rng = make_rng(7, streams::IMAGING);
    let (sums, _) = simulate_roi_sums(10_000, 0.5, SiteLight::FreeAtom, &cfg, &mut rng);
    let fit = fit_histogram(&sums).unwrap();
    let (t_oracle, fid_oracle) = oracle_threshold_sweep(fit.lambda_bg, fit.lambda_sig);
    let free_ok = fit.fidelity >= 0.99
        && fit.threshold == t_oracle
        && (fit.fidelity - fid_oracle).abs() < 1e-6;

    // On-device set: dimmer atoms that can vanish mid-exposure. The fidelity
    // is measured against the simulation truth, which captures the loss
    // smear that no two-Poisson description can.
    let mut rng_dev = make_rng(7, streams::IMAGING + 1);
    let (dev_sums, dev_truth) =
        simulate_roi_sums(10_000, 0.5, SiteLight::DeviceAtom, &cfg, &mut rng_dev);
    let (dev_t, dev_fid, _, _) = empirical_optimal_threshold(&dev_sums, &dev_truth).unwrap();
    let dev_ok = (dev_fid - 0.86).abs() <= 0.03 && (4..=6).contains(&dev_t);

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = free_ok && dev_ok && elapsed < 30.0;
    report(
        4,
        "free-space fidelity >= 0.99 matching the exact-tail sweep; device set near 0.86 at threshold ~5",
        pass,
        &format!(
            "free fidelity {:.5} at t={} (oracle {:.5} at t={}), device fidelity {:.4} at t={}, {elapsed:.1} s",
            fit.fidelity, fit.threshold, fid_oracle, t_oracle, dev_fid, dev_t
        ),
    );
}

fn chirp_profile_ok(plan: &RearrangementPlan) -> bool {
    for tone in &plan.tones {
        for seg in &tone.segments {
            if seg.kind != SegmentKind::Chirp {
                continue;
            }
            if seg.slew_at(0.0).abs() > 1e-9 || seg.slew_at(seg.t_ms).abs() > 1e-9 {
                return false;
            }
            // Straddle the parabola junction; at the hardware slew limit a
            // 1e-13 ms step moves the frequency by at most 1e-10 MHz, so a
            // jump larger than 1e-9 is a genuine discontinuity.
            let mid = 0.5 * seg.t_ms;
            let eps = 1e-13;
            if (seg.frequency_at(mid - eps) - seg.frequency_at(mid + eps)).abs() > 1e-9 {
                return false;
            }
            if (seg.slew_at(mid - eps) - seg.slew_at(mid + eps)).abs() > 1e-9 {
                return false;
            }
        }
    }
    true
}

#[test]
fn criterion_05_planner_exhaustive() {
    let t0 = Instant::now();
    let config = Config::default();
    let n = config.tweezer.tones_x_mhz.len();
    assert_eq!(n, 9);
    let mut checked = 0usize;
    let mut min_gap = f64::INFINITY;
    for bits in 0..(1u32 << n) {
        let occupied: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        let m = occupied.iter().filter(|&&b| b).count();

        let plan = plan_compression(&occupied, &config.tweezer).unwrap();
        // Defect-free: targets form one contiguous block; order-preserving:
        // source order survives.
        assert_eq!(plan.assignments.len(), m);
        for w in plan.assignments.windows(2) {
            assert!(w[1].from_site > w[0].from_site);
            assert_eq!(w[1].to_site, w[0].to_site + 1);
        }
        assert!(chirp_profile_ok(&plan));
        let gap = verify_no_crossings(&plan, Axis::X).unwrap();
        min_gap = min_gap.min(gap);

        let delivery = plan_to_devices(&occupied, DeviceTarget::OnePerDevice, &config).unwrap();
        assert_eq!(delivery.assignments.len(), m);
        for w in delivery.assignments.windows(2) {
            assert!(w[1].from_site > w[0].from_site);
            assert!(w[1].to_site > w[0].to_site);
        }
        assert!(chirp_profile_ok(&delivery));
        let gap = verify_no_crossings(&delivery, Axis::X).unwrap();
        min_gap = min_gap.min(gap);

        checked += 1;
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let pass = checked == 512 && elapsed < 10.0;
    report(
        5,
        "all 512 row patterns plan crossing-free, order-preserving, defect-free",
        pass,
        &format!("{checked} patterns, min tone gap {min_gap:.3} MHz, {elapsed:.1} s"),
    );
}

/// Binomial tail P(Bin(n, p) >= k) by direct pmf summation.
fn binomial_tail(n: u32, p: f64, k: u32) -> f64 {
    let mut tail = 0.0;
    for i in k..=n {
        let mut choose = 1.0;
        for j in 0..i {
            choose *= (n - j) as f64 / (j + 1) as f64;
        }
        tail += choose * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32);
    }
    tail
}

#[test]
fn criterion_06_pipeline_statistics() {
    let t0 = Instant::now();
    let config = Config::default();
    let n_sites = config.tweezer.tones_x_mhz.len() as u32;
    let shots = 10_000;

    let lossless = simulate_pipeline(&config, 9, shots, 11, false).unwrap();
    let mut worst_sigma = 0.0f64;
    for (j, &raw) in lossless.raw.iter().enumerate() {
        let tail = binomial_tail(n_sites, config.rates.load_prob, j as u32 + 1);
        let sigma = (tail * (1.0 - tail) / shots as f64).sqrt();
        worst_sigma = worst_sigma.max((raw - tail).abs() / sigma);
    }

    let lossy = simulate_pipeline(&config, 9, shots, 11, true).unwrap();
    let all_populated = lossy.raw.iter().all(|&r| r > 0.0);
    let corrected_above = lossy
        .raw
        .iter()
        .zip(&lossy.corrected)
        .all(|(&r, &c)| c > r);

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = worst_sigma <= 3.0 && all_populated && corrected_above && elapsed < 60.0;
    report(
        6,
        "lossless slot fills match the binomial tail; loss correction lifts every slot",
        pass,
        &format!(
            "worst |raw - tail| = {worst_sigma:.2} sigma, lossy slots all populated: {all_populated}, \
             corrected > raw slot-wise: {corrected_above}, {elapsed:.1} s"
        ),
    );
}

#[test]
fn criterion_07_two_photon_map() {
    let t0 = Instant::now();
    let cfg = Config::default().twophoton;
    let grid = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let d852 = grid(-280.0, 165.0, 90);
    let d1470 = grid(-220.0, 225.0, 90);
    let cell = d852[1] - d852[0];
    let map = map_twophoton(&cfg, &d852, &d1470);
    let (a852, a1470, _) = map.max_detected_point();
    let ridge_sum = a852 + a1470;
    let ridge_ok = (ridge_sum - cfg.light_shift_mhz).abs() <= cell + 1e-9;

    // Scan the single-photon loss lines finely in the 1470 detuning,
    // including the points where the two-photon ridge crosses them.
    let max = map.max_detected();
    let mut worst_null = 0.0f64;
    for &line in &[0.0, -251.0] {
        for i in 0..=1200 {
            let d = -300.0 + 0.5 * i as f64;
            worst_null = worst_null.max(two_photon_response(line, d, &cfg).detected);
        }
    }
    let null_ok = worst_null < 0.01 * max;

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = ridge_ok && null_ok && elapsed < 10.0;
    report(
        7,
        "loss lines dark at 0 and -251 MHz; bright ridge sits at sum detuning +30 MHz",
        pass,
        &format!(
            "argmax sum {ridge_sum:.1} MHz (target {} ± {cell:.0}), worst null {:.2e} of max, {elapsed:.1} s",
            cfg.light_shift_mhz,
            worst_null / max
        ),
    );
}

#[test]
fn criterion_08_lifetime_recovery() {
    let t0 = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for &tau in &[13.6, 0.78] {
        let times: Vec<f64> = (0..12).map(|i| 2.0 * tau * i as f64 / 11.0).collect();
        let mut estimates = Vec::with_capacity(20);
        for seed in 0..20u64 {
            let mut rng = make_rng(seed, streams::LIFETIME);
            let curve = lifetime_curve(&times, tau, 200, &mut rng);
            estimates.push(fit_lifetime(&curve).unwrap().tau_s);
        }
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se_mean = (var / n).sqrt();
        let rel = (mean - tau) / tau;
        let ok = rel.abs() <= 0.05 && (mean - tau).abs() <= 3.0 * se_mean;
        pass &= ok;
        details.push(format!(
            "tau {tau}: mean {mean:.4} ({:+.2}%, {:.1} sigma)",
            rel * 100.0,
            (mean - tau).abs() / se_mean
        ));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    report(
        8,
        "both trap lifetimes recovered within 5% and 3 sigma over 20 seeds",
        pass,
        &format!("{}, {elapsed:.1} s", details.join("; ")),
    );
}

#[test]
fn criterion_09_autofocus() {
    use atomforge::autofocus::{
        bilateral_filter, laplacian_score, make_defocus_stack, scan_focus,
        synthetic_device_pattern, FocusSide,
    };
    use atomforge::image::ImageF32;

    let t0 = Instant::now();
    let zs: Vec<f64> = (0..21).map(|i| -4.0 + 8.0 * i as f64 / 20.0).collect();
    let step = zs[1] - zs[0];
    let mut worst_miss = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = make_rng(seed, streams::AUTOFOCUS);
        let pattern = synthetic_device_pattern(120, 80, 5, &mut rng);
        let focus = -2.0 + 4.0 * rng.random::<f64>();
        let stack = make_defocus_stack(&pattern, &zs, focus, 0.6);
        let res = scan_focus(&zs, &stack, 1.2, 20.0, 1.0, FocusSide::Below).unwrap();
        worst_miss = worst_miss.max((res.best_z_um - focus).abs());
    }
    let stacks_ok = worst_miss <= step + 1e-9;

    // Dyadic affine coefficients store exactly in f32, so the interior
    // 4-neighbor Laplacian cancels term by term.
    let mut affine = ImageF32::zeros(64, 48);
    for y in 0..48 {
        for x in 0..64 {
            affine.set(x, y, 2.0 + 0.5 * x as f32 - 0.75 * y as f32);
        }
    }
    let affine_ok = laplacian_score(&affine) == 0.0;

    let mut flat = ImageF32::zeros(32, 24);
    for v in &mut flat.data {
        *v = 11.5;
    }
    let filtered = bilateral_filter(&flat, 1.5, 10.0);
    let constant_ok = filtered.data == flat.data;

    let elapsed = t0.elapsed().as_secs_f64();
    let pass = stacks_ok && affine_ok && constant_ok && elapsed < 60.0;
    report(
        9,
        "focus found within one grid step on 20 stacks; affine and constant edge cases exact",
        pass,
        &format!(
            "worst focus miss {worst_miss:.3} µm (step {step:.1}), affine Laplacian zero: {affine_ok}, \
             constant fixed point: {constant_ok}, {elapsed:.1} s"
        ),
    );
}

mod determinism {
    use std::collections::BTreeMap;
    use std::path::Path;
    use std::process::Output;

    fn run(args: &[&str], out_dir: &Path) -> Output {
        let exe = env!("CARGO_BIN_EXE_atomforge");
        std::process::Command::new(exe)
            .args(args)
            .arg("--out")
            .arg(out_dir)
            .output()
            .expect("CLI binary runs")
    }

    fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut files = BTreeMap::new();
        for entry in std::fs::read_dir(dir).expect("output dir exists") {
            let entry = entry.unwrap();
            let name = entry.file_name().into_string().unwrap();
            files.insert(name, std::fs::read(entry.path()).unwrap());
        }
        files
    }

    /// Run one subcommand with two different thread counts and demand
    /// byte-identical stdout and output files.
    fn check_subcommand(label: &str, args: &[&str], root: &Path) -> String {
        let dir_a = root.join(format!("{label}-a"));
        let dir_b = root.join(format!("{label}-b"));
        let mut args_a: Vec<&str> = args.to_vec();
        args_a.extend(["--threads", "1"]);
        let mut args_b: Vec<&str> = args.to_vec();
        args_b.extend(["--threads", "3"]);
        let out_a = run(&args_a, &dir_a);
        let out_b = run(&args_b, &dir_b);
        assert!(
            out_a.status.success() && out_b.status.success(),
            "{label} failed: {} / {}",
            String::from_utf8_lossy(&out_a.stderr),
            String::from_utf8_lossy(&out_b.stderr)
        );
        assert_eq!(
            out_a.stdout, out_b.stdout,
            "{label}: stdout differs between thread counts"
        );
        let files_a = dir_bytes(&dir_a);
        let files_b = dir_bytes(&dir_b);
        let names: Vec<&String> = files_a.keys().collect();
        assert_eq!(
            files_a.keys().collect::<Vec<_>>(),
            files_b.keys().collect::<Vec<_>>(),
            "{label}: file sets differ"
        );
        for (name, bytes) in &files_a {
            assert_eq!(
                bytes,
                files_b.get(name).unwrap(),
                "{label}: {name} differs between thread counts"
            );
        }
        format!("{label} ({} files)", names.len())
    }

    #[test]
    fn criterion_10_byte_identical_across_threads() {
        let t0 = std::time::Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path();

        // Small-trial config keeps the loading subcommand inside the budget
        // while still exercising its parallel path.
        let cfg_path = root.join("small.toml");
        std::fs::write(&cfg_path, "[mc]\nn_trials = 200\n").unwrap();
        let cfg = cfg_path.to_str().unwrap();

        // Shared inputs for the analysis subcommands, prepared once.
        let prep = root.join("prep");
        let out = run(
            &["simulate-imaging", "--shots", "500", "--seed", "5"],
            &prep,
        );
        assert!(out.status.success(), "prep imaging run failed");
        let frame = prep.join("frame.raw");
        let frame = frame.to_str().unwrap();
        let prep_avg = root.join("prep-avg");
        let out = run(&["average", "--inputs", frame, frame, "--seed", "5"], &prep_avg);
        assert!(out.status.success(), "prep average run failed");
        let avg = prep_avg.join("average.raw");
        let avg = avg.to_str().unwrap();

        let mut lines = Vec::new();
        let checks: Vec<(&str, Vec<&str>)> = vec![
            ("lattice", vec!["lattice", "--offset-nm", "250", "--seed", "5"]),
            (
                "simulate-loading",
                vec![
                    "simulate-loading",
                    "--offset-nm",
                    "250",
                    "--config",
                    cfg,
                    "--seed",
                    "5",
                ],
            ),
            (
                "simulate-imaging",
                vec!["simulate-imaging", "--shots", "2000", "--seed", "5"],
            ),
            ("fit-blowout", vec!["fit-blowout", "--seed", "5"]),
            ("fit-mixture", vec!["fit-mixture", "--seed", "5"]),
            ("map-twophoton", vec!["map-twophoton", "--seed", "5"]),
            (
                "lifetime",
                vec!["lifetime", "--region", "device", "--seed", "5"],
            ),
            (
                "autofocus-scan",
                vec!["autofocus-scan", "--steps", "7", "--seed", "5"],
            ),
            (
                "plan",
                vec!["plan", "--target", "one-per-device", "--seed", "5"],
            ),
            (
                "pipeline",
                vec!["pipeline", "--shots", "2000", "--seed", "5"],
            ),
            (
                "average",
                vec!["average", "--inputs", frame, frame, "--seed", "5"],
            ),
            ("overlay", vec!["overlay", "--image", avg, "--seed", "5"]),
        ];
        for (label, args) in &checks {
            lines.push(check_subcommand(label, args, root));
        }

        let elapsed = t0.elapsed().as_secs_f64();
        super::report(
            10,
            "every subcommand is byte-identical across --threads",
            true,
            &format!("{} subcommands verified, {elapsed:.1} s", lines.len()),
        );
    }
}
