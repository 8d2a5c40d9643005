//! Command-line drivers. Every subcommand loads one config, resolves one
//! seed, writes its results plus a run manifest into --out, and prints a
//! short deterministic summary on stdout. Wall-clock timing goes to stderr
//! so reruns with the same seed and config produce byte-identical files
//! and stdout regardless of --threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{average_frames, overlay_devices, subtract_background};
use crate::autofocus::{make_defocus_stack, scan_focus, synthetic_device_pattern, FocusSide};
use crate::config::{load_config, Config};
use crate::error::{Error, Result};
use crate::image::{read_raw, write_f32_raw, write_pgm, write_u16_raw, ImageF32, LoadedImage};
use crate::imaging::{
    decode_occupancy, empirical_optimal_threshold, fit_histogram, render_frame,
    simulate_roi_sums, SiteLight,
};
use crate::montecarlo::sweep_offsets;
use crate::optics::{lattice_profile, membrane_reflection};
use crate::planner::{
    plan_compression, plan_to_devices, simulate_pipeline, verify_no_crossings, Axis,
    DeviceTarget, RearrangementPlan,
};
use crate::rng::{make_rng, resolve_seed, streams};
use crate::spectroscopy::{
    blowout_survival, fit_blowout, fit_lifetime, fit_mixture, lifetime_curve, map_twophoton,
    mixture_survival, BlowoutParams,
};

/// "a:b:n" = n evenly spaced values from a to b; a bare number = one value.
#[derive(Debug, Clone)]
struct Sweep(Vec<f64>);

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Sweep, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [one] => {
                let v: f64 = one.parse().map_err(|_| format!("bad number {one:?}"))?;
                Ok(Sweep(vec![v]))
            }
            [a, b, n] => {
                let a: f64 = a.parse().map_err(|_| format!("bad start {a:?}"))?;
                let b: f64 = b.parse().map_err(|_| format!("bad stop {b:?}"))?;
                let n: usize = n.parse().map_err(|_| format!("bad count {n:?}"))?;
                if n == 0 {
                    return Err("sweep count must be >= 1".into());
                }
                if n == 1 {
                    return Ok(Sweep(vec![a]));
                }
                let step = (b - a) / (n - 1) as f64;
                Ok(Sweep((0..n).map(|i| a + step * i as f64).collect()))
            }
            _ => Err(format!("expected VALUE or START:STOP:COUNT, got {s:?}")),
        }
    }
}

/// Comma-separated f64 list as a single CLI value.
#[derive(Debug, Clone)]
struct F64List(Vec<f64>);

impl FromStr for F64List {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<F64List, String> {
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad number {p:?}"))
            })
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map(F64List)
    }
}

#[derive(Parser)]
#[command(
    name = "atomforge",
    version,
    about = "Simulate and analyze tweezer-to-chip atom delivery"
)]
struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed; beats ATOMFORGE_SEED and the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 0 keeps the library default. Results do not depend
    /// on this.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Standing-wave profile above the membrane and its maxima.
    Lattice {
        /// Tweezer focus height above the surface, nm.
        #[arg(long)]
        offset_nm: Option<f64>,
        /// Scan ceiling, µm.
        #[arg(long, default_value_t = 3.0)]
        z_max_um: f64,
        /// Profile sample count.
        #[arg(long, default_value_t = 3000)]
        points: usize,
    },
    /// Monte Carlo of the tweezer-to-standing-wave handoff.
    SimulateLoading {
        /// Focal offsets to sweep, nm, as START:STOP:COUNT.
        #[arg(long, allow_hyphen_values = true)]
        sweep: Option<Sweep>,
        /// Single focal offset, nm (default: config value).
        #[arg(long, conflicts_with = "sweep")]
        offset_nm: Option<f64>,
    },
    /// Photon-count histograms for free and on-device atoms.
    SimulateImaging {
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        /// Occupancy probability per shot (default: loading rate).
        #[arg(long)]
        p_occupied: Option<f64>,
    },
    /// Fit one blow-out dip; synthesizes data unless --data is given.
    FitBlowout {
        /// Two-column CSV (detuning_mhz, survival).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = -40.0, allow_negative_numbers = true)]
        center_mhz: f64,
        #[arg(long, default_value_t = 10.0)]
        width_mhz: f64,
        #[arg(long, default_value_t = 0.9)]
        depth: f64,
        /// Gaussian noise on synthetic survival points.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 61)]
        points: usize,
    },
    /// Fit well weights to a multi-dip survival curve.
    FitMixture {
        /// Two-column CSV (detuning_mhz, survival).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Dip centers, MHz, comma separated.
        #[arg(long, default_value = "-60,-38,-25", allow_hyphen_values = true)]
        centers_mhz: F64List,
        #[arg(long, default_value_t = 10.0)]
        width_mhz: f64,
        #[arg(long, default_value_t = 0.0)]
        floor: f64,
        /// True weights for synthetic data, comma separated.
        #[arg(long, default_value = "0.29,0.66,0.05", allow_hyphen_values = true)]
        weights: F64List,
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long, default_value_t = 141)]
        points: usize,
    },
    /// Detected-signal map over both probe detunings.
    MapTwophoton {
        /// 852 nm detuning grid, MHz.
        #[arg(long, default_value = "-280:165:90", allow_hyphen_values = true)]
        d852: Sweep,
        /// 1470 nm detuning grid, MHz.
        #[arg(long, default_value = "-220:225:90", allow_hyphen_values = true)]
        d1470: Sweep,
    },
    /// Synthetic hold-time scan and exponential lifetime fit.
    Lifetime {
        /// Which trap's lifetime to simulate: "loading" or "device".
        #[arg(long, default_value = "loading")]
        region: String,
        #[arg(long, default_value_t = 12)]
        points: usize,
        /// Scan end, s (default: 2x the true lifetime).
        #[arg(long)]
        t_max_s: Option<f64>,
        /// Atoms per hold-time point.
        #[arg(long, default_value_t = 200)]
        atoms: u32,
    },
    /// Score a synthetic defocus stack and pick the focus.
    AutofocusScan {
        #[arg(long, default_value_t = -4.0, allow_negative_numbers = true)]
        z_min_um: f64,
        #[arg(long, default_value_t = 4.0)]
        z_max_um: f64,
        #[arg(long, default_value_t = 21)]
        steps: usize,
        #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
        true_focus_um: f64,
        #[arg(long, default_value_t = 0.6)]
        blur_px_per_um: f64,
        /// Stop at this fraction of the peak score (1 = argmax).
        #[arg(long, default_value_t = 1.0)]
        target_fraction: f64,
        /// Approach side: "below" or "above".
        #[arg(long, default_value = "below")]
        side: String,
    },
    /// Plan tone trajectories for one occupancy pattern.
    Plan {
        /// Occupancy as a 0/1 string, one digit per site; random if omitted.
        #[arg(long)]
        pattern: Option<String>,
        /// "compress", "one-per-device", or "n-on-one".
        #[arg(long, default_value = "compress")]
        target: String,
        /// Atom count for the n-on-one target.
        #[arg(long, default_value_t = 9)]
        n: usize,
    },
    /// Load -> image -> rearrange -> image statistics over many shots.
    Pipeline {
        #[arg(long, default_value_t = 9)]
        slots: usize,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        /// Disable every survival step (pure loading statistics).
        #[arg(long)]
        no_losses: bool,
    },
    /// Average u16 raw frames into one f32 frame.
    Average {
        /// Input .raw frames (u16, with sidecars).
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
    },
    /// Locate device columns in an averaged image and mark them.
    Overlay {
        /// Averaged image (.raw f32 or u16, with sidecar).
        #[arg(long)]
        image: PathBuf,
        /// Optional background image to subtract first.
        #[arg(long)]
        background: Option<PathBuf>,
    },
}

/// Records every file written so the manifest can list them.
struct Outputs {
    dir: PathBuf,
    names: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Outputs> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            names: Vec::new(),
        })
    }

    /// Path for a file written by some external helper; records the name.
    fn path(&mut self, name: &str) -> PathBuf {
        self.names.push(name.to_string());
        self.dir.join(name)
    }

    fn write_text(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, content).map_err(|e| Error::io(path.display().to_string(), e))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("value serializes");
        text.push('\n');
        self.write_text(name, &text)
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    outputs: Vec<String>,
}

fn config_sha256(config: &Config) -> String {
    let mut hasher = Sha256::new();
    hasher.update(config.canonical_toml().as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    hex
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    match execute(cli) {
        Ok(()) => {
            eprintln!("done in {:.1} ms", started.elapsed().as_secs_f64() * 1e3);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        // Ignore the error: the global pool can only be sized once per
        // process, and a fixed pool never changes any result anyway.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let config = load_config(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &config)?;
    let mut out = Outputs::new(&cli.out)?;
    let name = dispatch(&cli.command, &config, seed, &mut out)?;
    let mut outputs = out.names.clone();
    outputs.sort();
    let manifest = RunManifest {
        subcommand: name,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_sha256: config_sha256(&config),
        outputs,
    };
    out.write_json("run_manifest.json", &manifest)
}

fn dispatch(
    command: &Command,
    config: &Config,
    seed: u64,
    out: &mut Outputs,
) -> Result<&'static str> {
    match command {
        Command::Lattice {
            offset_nm,
            z_max_um,
            points,
        } => cmd_lattice(config, out, *offset_nm, *z_max_um, *points),
        Command::SimulateLoading { sweep, offset_nm } => {
            cmd_loading(config, seed, out, sweep.as_ref(), *offset_nm)
        }
        Command::SimulateImaging { shots, p_occupied } => {
            cmd_imaging(config, seed, out, *shots, *p_occupied)
        }
        Command::FitBlowout {
            data,
            center_mhz,
            width_mhz,
            depth,
            noise,
            points,
        } => cmd_blowout(
            seed,
            out,
            data.as_deref(),
            *center_mhz,
            *width_mhz,
            *depth,
            *noise,
            *points,
        ),
        Command::FitMixture {
            data,
            centers_mhz,
            width_mhz,
            floor,
            weights,
            noise,
            points,
        } => cmd_mixture(
            seed,
            out,
            data.as_deref(),
            &centers_mhz.0,
            *width_mhz,
            *floor,
            &weights.0,
            *noise,
            *points,
        ),
        Command::MapTwophoton { d852, d1470 } => cmd_map(config, out, &d852.0, &d1470.0),
        Command::Lifetime {
            region,
            points,
            t_max_s,
            atoms,
        } => cmd_lifetime(config, seed, out, region, *points, *t_max_s, *atoms),
        Command::AutofocusScan {
            z_min_um,
            z_max_um,
            steps,
            true_focus_um,
            blur_px_per_um,
            target_fraction,
            side,
        } => cmd_autofocus(
            seed,
            out,
            *z_min_um,
            *z_max_um,
            *steps,
            *true_focus_um,
            *blur_px_per_um,
            *target_fraction,
            side,
        ),
        Command::Plan { pattern, target, n } => {
            cmd_plan(config, seed, out, pattern.as_deref(), target, *n)
        }
        Command::Pipeline {
            slots,
            shots,
            no_losses,
        } => cmd_pipeline(config, seed, out, *slots, *shots, !*no_losses),
        Command::Average { inputs } => cmd_average(out, inputs),
        Command::Overlay { image, background } => {
            cmd_overlay(config, out, image, background.as_deref())
        }
    }
}

fn cmd_lattice(
    config: &Config,
    out: &mut Outputs,
    offset_nm: Option<f64>,
    z_max_um: f64,
    points: usize,
) -> Result<&'static str> {
    let tw = &config.tweezer;
    let chip = &config.chip;
    let offset = offset_nm.unwrap_or(config.mc.focal_offset_nm);
    let reflection = membrane_reflection(chip.film_thickness_nm, chip.film_index, tw.wavelength_nm)?;
    let profile = lattice_profile(
        &reflection,
        tw.wavelength_nm,
        tw.waist_um,
        offset * 1e-3,
        tw.kappa_d1_mhz,
        z_max_um,
        points,
    )?;

    let mut csv = String::from("z_nm,intensity_ratio,stark_shift_mhz\n");
    for (z, i) in profile.z_um.iter().zip(&profile.intensity_ratio) {
        let _ = writeln!(
            csv,
            "{},{},{}",
            z * 1e3,
            i,
            crate::optics::stark_shift_d1(*i, tw.kappa_d1_mhz)
        );
    }
    out.write_text("lattice.csv", &csv)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        reflectance: f64,
        transmittance: f64,
        r_magnitude: f64,
        r_phase_rad: f64,
        focal_offset_nm: f64,
        maxima: &'a [crate::optics::LatticeMaximum],
    }
    out.write_json(
        "lattice_summary.json",
        &Summary {
            reflectance: reflection.reflectance(),
            transmittance: reflection.transmittance(),
            r_magnitude: reflection.r.norm(),
            r_phase_rad: reflection.r.arg(),
            focal_offset_nm: offset,
            maxima: &profile.maxima,
        },
    )?;
    let first = &profile.maxima[0];
    println!(
        "lattice: z1 = {:.2} nm, ratio = {:.6}, |r| = {:.6}",
        first.z_um * 1e3,
        first.intensity_ratio,
        reflection.r.norm()
    );
    Ok("lattice")
}

fn cmd_loading(
    config: &Config,
    seed: u64,
    out: &mut Outputs,
    sweep: Option<&Sweep>,
    offset_nm: Option<f64>,
) -> Result<&'static str> {
    let offsets: Vec<f64> = match sweep {
        Some(s) => s.0.clone(),
        None => vec![offset_nm.unwrap_or(config.mc.focal_offset_nm)],
    };
    let results = sweep_offsets(config, &offsets, seed)?;
    let k = config.mc.n_wells as usize;
    let mut header = String::from("offset_nm");
    for i in 1..=k {
        let _ = write!(header, ",w_z{i}");
    }
    header.push_str(",w_lost");
    for i in 1..=k {
        let _ = write!(header, ",se_z{i}");
    }
    header.push_str(",se_lost\n");
    let mut csv = header;
    for d in &results {
        let _ = write!(csv, "{}", d.offset_nm);
        for w in &d.well_fractions {
            let _ = write!(csv, ",{w}");
        }
        let _ = write!(csv, ",{}", d.lost_fraction);
        for s in &d.well_stderr {
            let _ = write!(csv, ",{s}");
        }
        let _ = writeln!(csv, ",{}", d.lost_stderr);
    }
    out.write_text("loading.csv", &csv)?;
    let best = results
        .iter()
        .max_by(|a, b| a.well_fractions[0].total_cmp(&b.well_fractions[0]))
        .expect("at least one offset");
    println!(
        "loading: best z1 fraction {:.4} at offset {} nm ({} trials/offset)",
        best.well_fractions[0], best.offset_nm, best.n_trials
    );
    Ok("simulate-loading")
}

#[derive(Serialize)]
struct EmpiricalSummary {
    threshold: u32,
    fidelity: f64,
    miss_rate: f64,
    false_alarm_rate: f64,
}

fn cmd_imaging(
    config: &Config,
    seed: u64,
    out: &mut Outputs,
    shots: usize,
    p_occupied: Option<f64>,
) -> Result<&'static str> {
    let cfg = &config.imaging;
    let p = p_occupied.unwrap_or(config.rates.load_prob);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("p_occupied must lie in [0, 1], got {p}")));
    }

    #[derive(Serialize)]
    struct HistogramReport {
        site: &'static str,
        n_shots: usize,
        p_occupied: f64,
        fit: crate::imaging::HistogramFit,
        empirical: EmpiricalSummary,
    }

    for (name, site, stream) in [
        ("free", SiteLight::FreeAtom, streams::IMAGING),
        ("device", SiteLight::DeviceAtom, streams::IMAGING + 1),
    ] {
        let mut rng = make_rng(seed, stream);
        let (sums, truth) = simulate_roi_sums(shots, p, site, cfg, &mut rng);
        let fit = fit_histogram(&sums)?;
        let (t, fid, miss, fa) = empirical_optimal_threshold(&sums, &truth)?;
        let mut csv = String::from("shot,sum,occupied\n");
        for (i, (s, o)) in sums.iter().zip(&truth).enumerate() {
            let _ = writeln!(csv, "{i},{s},{}", u8::from(*o));
        }
        out.write_text(&format!("sums_{name}.csv"), &csv)?;
        println!(
            "imaging {name}: fit fidelity {:.4} at t = {}, empirical {:.4} at t = {t}",
            fit.fidelity, fit.threshold, fid
        );
        out.write_json(
            &format!("histogram_{name}.json"),
            &HistogramReport {
                site: name,
                n_shots: shots,
                p_occupied: p,
                fit,
                empirical: EmpiricalSummary {
                    threshold: t,
                    fidelity: fid,
                    miss_rate: miss,
                    false_alarm_rate: fa,
                },
            },
        )?;
    }

    // One rendered example frame of the loading row, plus its decode.
    let n_sites = config.tweezer.n_sites();
    let mut rng = make_rng(seed, streams::IMAGING + 2);
    let sites: Vec<SiteLight> = (0..n_sites)
        .map(|_| {
            use rand::Rng;
            if rng.random::<f64>() < p {
                SiteLight::FreeAtom
            } else {
                SiteLight::Empty
            }
        })
        .collect();
    let frame = render_frame(&sites, cfg, cfg.exposure_ms, &mut rng)?;
    write_u16_raw(&out.path("frame.raw"), &frame.image, "photon_counts")?;
    out.names.push("frame.json".into());
    let float_img = ImageF32 {
        width: frame.image.width,
        height: frame.image.height,
        data: frame.image.data.iter().map(|&v| v as f32).collect(),
    };
    write_pgm(&out.path("frame.pgm"), &float_img)?;
    let occupancy = decode_occupancy(&frame, cfg.threshold);
    out.write_json("occupancy.json", &occupancy)?;
    Ok("simulate-imaging")
}

/// Two-column CSV with an optional header line.
fn read_xy_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::BadData {
                path: path.display().to_string(),
                message: format!("line {}: expected 2 columns, got {}", lineno + 1, cols.len()),
            });
        }
        match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            _ if lineno == 0 => continue, // header
            _ => {
                return Err(Error::BadData {
                    path: path.display().to_string(),
                    message: format!("line {}: not numeric: {line:?}", lineno + 1),
                });
            }
        }
    }
    if xs.is_empty() {
        return Err(Error::BadData {
            path: path.display().to_string(),
            message: "no data rows".into(),
        });
    }
    Ok((xs, ys))
}

fn gaussian_noise(rng: &mut impl rand::Rng, sigma: f64) -> f64 {
    use rand_distr::{Distribution, Normal};
    Normal::new(0.0, sigma.max(0.0)).expect("finite sigma").sample(rng)
}

#[allow(clippy::too_many_arguments)]
fn cmd_blowout(
    seed: u64,
    out: &mut Outputs,
    data: Option<&Path>,
    center_mhz: f64,
    width_mhz: f64,
    depth: f64,
    noise: f64,
    points: usize,
) -> Result<&'static str> {
    let (deltas, survivals) = match data {
        Some(path) => read_xy_csv(path)?,
        None => {
            let truth = BlowoutParams {
                center_mhz,
                width_mhz,
                depth,
                floor: 0.0,
            };
            let mut rng = make_rng(seed, streams::SPECTROSCOPY);
            let lo = center_mhz - 5.0 * width_mhz;
            let hi = center_mhz + 5.0 * width_mhz;
            let deltas: Vec<f64> = (0..points.max(4))
                .map(|i| lo + (hi - lo) * i as f64 / (points.max(4) - 1) as f64)
                .collect();
            let survivals: Vec<f64> = deltas
                .iter()
                .map(|&d| (blowout_survival(d, &truth) + gaussian_noise(&mut rng, noise)).clamp(0.0, 1.0))
                .collect();
            (deltas, survivals)
        }
    };
    let mut csv = String::from("detuning_mhz,survival\n");
    for (d, s) in deltas.iter().zip(&survivals) {
        let _ = writeln!(csv, "{d},{s}");
    }
    out.write_text("blowout_data.csv", &csv)?;
    let fit = fit_blowout(&deltas, &survivals)?;
    println!(
        "blowout: center {:.3} MHz, width {:.3} MHz, depth {:.4}",
        fit.center_mhz, fit.width_mhz, fit.depth
    );
    out.write_json("blowout_fit.json", &fit)?;
    Ok("fit-blowout")
}

#[allow(clippy::too_many_arguments)]
fn cmd_mixture(
    seed: u64,
    out: &mut Outputs,
    data: Option<&Path>,
    centers_mhz: &[f64],
    width_mhz: f64,
    floor: f64,
    weights: &[f64],
    noise: f64,
    points: usize,
) -> Result<&'static str> {
    let (deltas, survivals) = match data {
        Some(path) => read_xy_csv(path)?,
        None => {
            if weights.len() != centers_mhz.len() {
                return Err(Error::Config(format!(
                    "{} weights for {} centers",
                    weights.len(),
                    centers_mhz.len()
                )));
            }
            let lo = centers_mhz.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 4.0 * width_mhz;
            let hi = centers_mhz.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 4.0 * width_mhz;
            let mut rng = make_rng(seed, streams::SPECTROSCOPY + 1);
            let deltas: Vec<f64> = (0..points.max(4))
                .map(|i| lo + (hi - lo) * i as f64 / (points.max(4) - 1) as f64)
                .collect();
            let survivals: Vec<f64> = deltas
                .iter()
                .map(|&d| {
                    (mixture_survival(d, weights, centers_mhz, width_mhz, floor)
                        + gaussian_noise(&mut rng, noise))
                    .clamp(0.0, 1.0)
                })
                .collect();
            (deltas, survivals)
        }
    };
    let mut csv = String::from("detuning_mhz,survival\n");
    for (d, s) in deltas.iter().zip(&survivals) {
        let _ = writeln!(csv, "{d},{s}");
    }
    out.write_text("mixture_data.csv", &csv)?;
    let fit = fit_mixture(&deltas, &survivals, centers_mhz, width_mhz, floor)?;

    #[derive(Serialize)]
    struct Report<'a> {
        centers_mhz: &'a [f64],
        width_mhz: f64,
        floor: f64,
        weights: &'a [f64],
        rms_residual: f64,
    }
    println!(
        "mixture: weights {:?}, rms {:.5}",
        fit.weights
            .iter()
            .map(|w| (w * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        fit.rms_residual
    );
    out.write_json(
        "mixture_fit.json",
        &Report {
            centers_mhz,
            width_mhz,
            floor,
            weights: &fit.weights,
            rms_residual: fit.rms_residual,
        },
    )?;
    Ok("fit-mixture")
}

fn cmd_map(
    config: &Config,
    out: &mut Outputs,
    d852: &[f64],
    d1470: &[f64],
) -> Result<&'static str> {
    if d852.is_empty() || d1470.is_empty() {
        return Err(Error::Config("map grids must be non-empty".into()));
    }
    let map = map_twophoton(&config.twophoton, d852, d1470);
    let mut csv = String::from("d852_mhz,d1470_mhz,signal,survival,detected\n");
    for (i, &a) in map.d852_mhz.iter().enumerate() {
        for (j, &b) in map.d1470_mhz.iter().enumerate() {
            let idx = i * map.d1470_mhz.len() + j;
            let _ = writeln!(
                csv,
                "{a},{b},{},{},{}",
                map.signal[idx], map.survival[idx], map.detected[idx]
            );
        }
    }
    out.write_text("twophoton_map.csv", &csv)?;
    let (best_852, best_1470, best_detected) = map.max_detected_point();

    #[derive(Serialize)]
    struct Summary {
        max_detected: f64,
        argmax_d852_mhz: f64,
        argmax_d1470_mhz: f64,
        two_photon_sum_mhz: f64,
        light_shift_mhz: f64,
    }
    println!(
        "map: peak {:.4} at ({}, {}) MHz, sum {:.2} MHz",
        best_detected,
        best_852,
        best_1470,
        best_852 + best_1470
    );
    out.write_json(
        "twophoton_summary.json",
        &Summary {
            max_detected: best_detected,
            argmax_d852_mhz: best_852,
            argmax_d1470_mhz: best_1470,
            two_photon_sum_mhz: best_852 + best_1470,
            light_shift_mhz: config.twophoton.light_shift_mhz,
        },
    )?;
    Ok("map-twophoton")
}

fn cmd_lifetime(
    config: &Config,
    seed: u64,
    out: &mut Outputs,
    region: &str,
    points: usize,
    t_max_s: Option<f64>,
    atoms: u32,
) -> Result<&'static str> {
    let tau = match region {
        "loading" => config.rates.lifetime_loading_s,
        "device" => config.rates.lifetime_device_s,
        other => {
            return Err(Error::Config(format!(
                "region must be \"loading\" or \"device\", got {other:?}"
            )));
        }
    };
    if points < 3 || atoms == 0 {
        return Err(Error::Config("lifetime needs points >= 3 and atoms >= 1".into()));
    }
    let t_max = t_max_s.unwrap_or(2.0 * tau);
    let times: Vec<f64> = (0..points)
        .map(|i| t_max * i as f64 / (points - 1) as f64)
        .collect();
    let mut rng = make_rng(seed, streams::LIFETIME);
    let curve = lifetime_curve(&times, tau, atoms, &mut rng);
    let mut csv = String::from("time_s,survival,n_atoms\n");
    for p in &curve {
        let _ = writeln!(csv, "{},{},{}", p.time_s, p.survival, p.n_atoms);
    }
    out.write_text("lifetime.csv", &csv)?;
    let fit = fit_lifetime(&curve)?;

    #[derive(Serialize)]
    struct Report {
        region: String,
        true_tau_s: f64,
        fit: crate::spectroscopy::LifetimeFit,
    }
    println!(
        "lifetime {region}: tau {:.3} +- {:.3} s (true {tau})",
        fit.tau_s, fit.sigma_tau_s
    );
    out.write_json(
        "lifetime_fit.json",
        &Report {
            region: region.to_string(),
            true_tau_s: tau,
            fit,
        },
    )?;
    Ok("lifetime")
}

#[allow(clippy::too_many_arguments)]
fn cmd_autofocus(
    seed: u64,
    out: &mut Outputs,
    z_min_um: f64,
    z_max_um: f64,
    steps: usize,
    true_focus_um: f64,
    blur_px_per_um: f64,
    target_fraction: f64,
    side: &str,
) -> Result<&'static str> {
    let side = match side {
        "below" => FocusSide::Below,
        "above" => FocusSide::Above,
        other => {
            return Err(Error::Config(format!(
                "side must be \"below\" or \"above\", got {other:?}"
            )));
        }
    };
    if steps < 2 || !(z_max_um > z_min_um) {
        return Err(Error::Config("autofocus needs steps >= 2 and z_max > z_min".into()));
    }
    let mut rng = make_rng(seed, streams::AUTOFOCUS);
    let pattern = synthetic_device_pattern(160, 120, 5, &mut rng);
    let z: Vec<f64> = (0..steps)
        .map(|i| z_min_um + (z_max_um - z_min_um) * i as f64 / (steps - 1) as f64)
        .collect();
    let stack = make_defocus_stack(&pattern, &z, true_focus_um, blur_px_per_um);
    let result = scan_focus(&z, &stack, 1.2, 20.0, target_fraction, side)?;
    let mut csv = String::from("z_um,score\n");
    for (zi, s) in result.z_um.iter().zip(&result.scores) {
        let _ = writeln!(csv, "{zi},{s}");
    }
    out.write_text("autofocus.csv", &csv)?;

    #[derive(Serialize)]
    struct Report {
        true_focus_um: f64,
        best_z_um: f64,
        best_index: usize,
    }
    println!(
        "autofocus: best z {} µm (true {true_focus_um})",
        result.best_z_um
    );
    out.write_json(
        "autofocus_result.json",
        &Report {
            true_focus_um,
            best_z_um: result.best_z_um,
            best_index: result.best_index,
        },
    )?;
    Ok("autofocus-scan")
}

fn cmd_plan(
    config: &Config,
    seed: u64,
    out: &mut Outputs,
    pattern: Option<&str>,
    target: &str,
    n: usize,
) -> Result<&'static str> {
    let n_sites = match target {
        "n-on-one" => config.tweezer.tones_y_mhz.len(),
        _ => config.tweezer.tones_x_mhz.len(),
    };
    let occupied: Vec<bool> = match pattern {
        Some(p) => p
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!(
                    "pattern must be 0s and 1s, got {other:?}"
                ))),
            })
            .collect::<Result<_>>()?,
        None => {
            use rand::Rng;
            let mut rng = make_rng(seed, streams::PLANNER);
            (0..n_sites)
                .map(|_| rng.random::<f64>() < config.rates.load_prob)
                .collect()
        }
    };
    let plan: RearrangementPlan = match target {
        "compress" => plan_compression(&occupied, &config.tweezer)?,
        "one-per-device" => plan_to_devices(&occupied, DeviceTarget::OnePerDevice, config)?,
        "n-on-one" => plan_to_devices(&occupied, DeviceTarget::NOnOneDevice(n), config)?,
        other => {
            return Err(Error::Config(format!(
                "target must be compress, one-per-device, or n-on-one, got {other:?}"
            )));
        }
    };
    let gap_x = verify_no_crossings(&plan, Axis::X)?;
    let gap_y = verify_no_crossings(&plan, Axis::Y)?;
    out.write_json("plan.json", &plan)?;

    #[derive(Serialize)]
    struct Summary {
        pattern: String,
        n_atoms: usize,
        total_ms: f64,
        max_peak_slew_mhz_per_ms: f64,
        min_gap_x_mhz: f64,
        min_gap_y_mhz: f64,
    }
    let pattern_str: String = occupied.iter().map(|&b| if b { '1' } else { '0' }).collect();
    println!(
        "plan {target}: {} atoms, {:.3} ms, peak slew {:.2} MHz/ms",
        plan.assignments.len(),
        plan.total_ms,
        plan.max_peak_slew()
    );
    out.write_json(
        "plan_summary.json",
        &Summary {
            pattern: pattern_str,
            n_atoms: plan.assignments.len(),
            total_ms: plan.total_ms,
            max_peak_slew_mhz_per_ms: plan.max_peak_slew(),
            min_gap_x_mhz: gap_x,
            min_gap_y_mhz: gap_y,
        },
    )?;
    Ok("plan")
}

fn cmd_pipeline(
    config: &Config,
    seed: u64,
    out: &mut Outputs,
    slots: usize,
    shots: usize,
    losses_on: bool,
) -> Result<&'static str> {
    let stats = simulate_pipeline(config, slots, shots, seed, losses_on)?;
    let mut csv = String::from("slot,raw,corrected\n");
    for j in 0..stats.n_slots {
        let _ = writeln!(csv, "{j},{},{}", stats.raw[j], stats.corrected[j]);
    }
    out.write_text("pipeline.csv", &csv)?;
    println!(
        "pipeline: {} shots, mean loaded {:.3}, slot0 raw {:.4} corrected {:.4}",
        stats.n_shots, stats.mean_loaded, stats.raw[0], stats.corrected[0]
    );
    out.write_json("pipeline_summary.json", &stats)?;
    Ok("pipeline")
}

fn cmd_average(out: &mut Outputs, inputs: &[PathBuf]) -> Result<&'static str> {
    let mut frames = Vec::with_capacity(inputs.len());
    for path in inputs {
        let (img, sidecar) = read_raw(path)?;
        match img {
            LoadedImage::U16(f) => frames.push(f),
            LoadedImage::F32(_) => {
                return Err(Error::BadData {
                    path: path.display().to_string(),
                    message: format!("expected u16 frame, sidecar says {}", sidecar.dtype),
                });
            }
        }
    }
    let avg = average_frames(&frames)?;
    write_f32_raw(&out.path("average.raw"), &avg, "averaged_frame")?;
    out.names.push("average.json".into());
    write_pgm(&out.path("average.pgm"), &avg)?;
    println!("average: {} frames, {}x{}", frames.len(), avg.width, avg.height);
    Ok("average")
}

fn cmd_overlay(
    config: &Config,
    out: &mut Outputs,
    image: &Path,
    background: Option<&Path>,
) -> Result<&'static str> {
    let load_f32 = |path: &Path| -> Result<ImageF32> {
        let (img, _) = read_raw(path)?;
        Ok(match img {
            LoadedImage::F32(f) => f,
            LoadedImage::U16(u) => ImageF32 {
                width: u.width,
                height: u.height,
                data: u.data.iter().map(|&v| v as f32).collect(),
            },
        })
    };
    let img = load_f32(image)?;
    let (img, offset) = match background {
        Some(bg_path) => {
            let bg = load_f32(bg_path)?;
            let sub = subtract_background(&img, &bg)?;
            (sub.image, Some(sub.offset))
        }
        None => (img, None),
    };
    let overlay = overlay_devices(&img, &config.chip)?;
    write_pgm(&out.path("overlay.pgm"), &overlay.image)?;

    #[derive(Serialize)]
    struct Summary {
        scale_px_per_um: f64,
        origin_px: f64,
        n_peaks_used: usize,
        device_columns_px: Vec<f64>,
        background_offset: Option<f64>,
    }
    println!(
        "overlay: scale {:.4} px/µm, origin {:.2} px, {} peaks",
        overlay.scale_px_per_um, overlay.origin_px, overlay.n_peaks_used
    );
    out.write_json(
        "overlay_summary.json",
        &Summary {
            scale_px_per_um: overlay.scale_px_per_um,
            origin_px: overlay.origin_px,
            n_peaks_used: overlay.n_peaks_used,
            device_columns_px: overlay.device_columns_px,
            background_offset: offset,
        },
    )?;
    Ok("overlay")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_parses_single_and_range() {
        let s: Sweep = "250".parse().unwrap();
        assert_eq!(s.0, vec![250.0]);
        let s: Sweep = "100:400:4".parse().unwrap();
        assert_eq!(s.0, vec![100.0, 200.0, 300.0, 400.0]);
        assert!("1:2".parse::<Sweep>().is_err());
        assert!("a:b:3".parse::<Sweep>().is_err());
        assert!("1:2:0".parse::<Sweep>().is_err());
    }

    #[test]
    fn f64_list_parses() {
        let l: F64List = "-60, -38,-25".parse().unwrap();
        assert_eq!(l.0, vec![-60.0, -38.0, -25.0]);
        assert!("1,x".parse::<F64List>().is_err());
    }

    #[test]
    fn cli_structure_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
