//! Monte Carlo of the handoff from a free-space tweezer to the membrane
//! standing wave. The tweezer focus is parked a small distance above where
//! the surface will be; the chip then slides in laterally at the transport
//! speed, so the reflected beam (and with it the lattice contrast) ramps
//! from zero to full as the beam crosses the device edge. Each trial
//! integrates one thermal atom through the ramp plus a settle period and
//! reports which well it ends bound in.
//!
//! Units follow the rest of the crate: µm, ms, µK.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::constants::CS_MASS_UK_MS2_PER_UM2;
use crate::error::{Error, Result};
use crate::optics::{lattice_profile, membrane_reflection, TrapField};
use crate::rng::{make_rng, streams};

/// Lateral distance over which the beam crosses the device edge and the
/// reflected amplitude turns on, µm. A couple of waists on either side of
/// the edge.
pub const RAMP_TRAVEL_UM: f64 = 5.0;

/// Boltzmann sampling keeps positions below this energy, in units of T.
const SAMPLER_ENERGY_CUTOFF: f64 = 8.0;

/// The sampler needs the trap to actually confine the cloud; below this
/// depth/temperature ratio the truncated distribution is meaningless.
pub const MIN_DEPTH_TO_TEMPERATURE: f64 = 4.0;

/// Verlet accuracy floor: at least this many steps per oscillation period
/// of the stiffest lattice well.
const STEPS_PER_WELL_PERIOD: f64 = 20.0;

/// C1 ramp used for the reflected amplitude as the beam crosses the edge:
/// u^3 (10 - 15u + 6u^2), flat at both ends.
pub fn smooth_ramp(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Effective focal offset at lateral position `site_x_um` when the chip is
/// tilted: µm times mrad is nm exactly.
pub fn tilted_offset_nm(base_offset_nm: f64, site_x_um: f64, tilt_mrad: f64) -> f64 {
    base_offset_nm + site_x_um * tilt_mrad
}

/// Where one trial ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Bound in lattice well n (1 = closest to the surface).
    Well(u32),
    /// Hit the surface, left the tracked wells, or ended unbound.
    Lost,
}

/// One lattice well with its basin and escape threshold.
#[derive(Debug, Clone, Copy)]
struct Well {
    z_um: f64,
    basin_lo_um: f64,
    basin_hi_um: f64,
    /// Lower of the two barrier energies, µK; bound means E below this.
    separatrix_uk: f64,
}

/// Everything one trial needs, precomputed once per (config, offset).
#[derive(Debug, Clone)]
pub struct TransferScenario {
    pub field: TrapField,
    pub depth_uk: f64,
    pub temperature_uk: f64,
    pub dt_ms: f64,
    pub approach_ms: f64,
    pub settle_ms: f64,
    pub n_wells: u32,
    wells: Vec<Well>,
    /// Inverse-CDF table for the initial axial position.
    sample_z_um: Vec<f64>,
    sample_cdf: Vec<f64>,
    sigma_v: f64,
}

impl TransferScenario {
    pub fn from_config(config: &Config, focal_offset_nm: f64) -> Result<TransferScenario> {
        let tw = &config.tweezer;
        let chip = &config.chip;
        let mc = &config.mc;
        let depth = tw.trap_depth_uk;
        let temperature = mc.temperature_uk;
        if depth < MIN_DEPTH_TO_TEMPERATURE * temperature {
            return Err(Error::TrapTooShallow {
                depth_uk: depth,
                temperature_uk: temperature,
            });
        }
        let reflection =
            membrane_reflection(chip.film_thickness_nm, chip.film_index, tw.wavelength_nm)?;
        let focus_um = focal_offset_nm * 1e-3;
        let field = TrapField::new(&reflection, tw.wavelength_nm, tw.waist_um, focus_um);

        // Wells and barriers of the full-contrast lattice.
        let z_max = focus_um + 2.0 * field.rayleigh_um;
        let profile = lattice_profile(
            &reflection,
            tw.wavelength_nm,
            tw.waist_um,
            focus_um,
            tw.kappa_d1_mhz,
            z_max,
            4096,
        )?;
        let mut wells = Vec::new();
        let maxima = &profile.maxima;
        for i in 0..maxima.len().saturating_sub(1) {
            let lo_bracket = if i == 0 { 0.0 } else { maxima[i - 1].z_um };
            let basin_lo = golden_min(lo_bracket, maxima[i].z_um, |z| field.intensity(z, 1.0));
            let basin_hi =
                golden_min(maxima[i].z_um, maxima[i + 1].z_um, |z| field.intensity(z, 1.0));
            let u_lo = -depth * field.intensity(basin_lo, 1.0);
            let u_hi = -depth * field.intensity(basin_hi, 1.0);
            wells.push(Well {
                z_um: maxima[i].z_um,
                basin_lo_um: basin_lo,
                basin_hi_um: basin_hi,
                separatrix_uk: u_lo.min(u_hi),
            });
        }

        // Initial positions: Boltzmann in the free tweezer, truncated at a
        // fixed energy cutoff (cannot exceed the depth itself).
        let cutoff = (SAMPLER_ENERGY_CUTOFF * temperature).min(0.9 * depth);
        let z_bound = field.rayleigh_um * (cutoff / (depth - cutoff)).sqrt();
        let n_grid = 2001;
        let mut sample_z_um = Vec::with_capacity(n_grid);
        let mut sample_cdf = Vec::with_capacity(n_grid);
        let mut acc = 0.0;
        for i in 0..n_grid {
            let z = focus_um - z_bound + 2.0 * z_bound * i as f64 / (n_grid - 1) as f64;
            let du = depth * (1.0 - field.intensity(z, 0.0));
            acc += (-du / temperature).exp();
            sample_z_um.push(z);
            sample_cdf.push(acc);
        }
        let total = acc;
        for c in &mut sample_cdf {
            *c /= total;
        }

        let scenario = TransferScenario {
            field,
            depth_uk: depth,
            temperature_uk: temperature,
            dt_ms: mc.timestep_us * 1e-3,
            approach_ms: RAMP_TRAVEL_UM / mc.approach_speed_um_per_ms,
            settle_ms: mc.settle_ms,
            n_wells: mc.n_wells,
            wells,
            sample_z_um,
            sample_cdf,
            sigma_v: (temperature / CS_MASS_UK_MS2_PER_UM2).sqrt(),
        };
        scenario.validate_timestep()?;
        Ok(scenario)
    }

    /// Reject timesteps too coarse for the stiffest well of the final
    /// lattice; the integrator would still be stable but energy errors
    /// leak atoms across the separatrix.
    fn validate_timestep(&self) -> Result<()> {
        let z1 = self.wells[0].z_um;
        let h = 1e-4;
        let i2 = (self.field.intensity(z1 - h, 1.0) - 2.0 * self.field.intensity(z1, 1.0)
            + self.field.intensity(z1 + h, 1.0))
            / (h * h);
        let omega2 = self.depth_uk * (-i2) / CS_MASS_UK_MS2_PER_UM2;
        if omega2 <= 0.0 {
            return Err(Error::Scenario("first lattice well has no curvature".into()));
        }
        let period_ms = 2.0 * std::f64::consts::PI / omega2.sqrt();
        let dt_max = period_ms / STEPS_PER_WELL_PERIOD;
        if self.dt_ms > dt_max {
            return Err(Error::Scenario(format!(
                "timestep {:.4} µs exceeds {:.4} µs ({} steps per {:.4} µs well period)",
                self.dt_ms * 1e3,
                dt_max * 1e3,
                STEPS_PER_WELL_PERIOD,
                period_ms * 1e3
            )));
        }
        Ok(())
    }

    /// Reflected-amplitude scale at time t: the edge-crossing fraction.
    pub fn ramp_at(&self, t_ms: f64) -> f64 {
        if t_ms >= self.approach_ms {
            1.0
        } else {
            smooth_ramp(t_ms / self.approach_ms)
        }
    }

    /// Draw an initial (z, v) from the thermal cloud in the free tweezer.
    pub fn sample_initial(&self, rng: &mut impl Rng) -> (f64, f64) {
        let u: f64 = rng.random();
        let idx = self.sample_cdf.partition_point(|&c| c < u);
        let z = if idx == 0 {
            self.sample_z_um[0]
        } else {
            // Linear interpolation inside the CDF bin.
            let c0 = self.sample_cdf[idx - 1];
            let c1 = self.sample_cdf[idx];
            let f = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
            self.sample_z_um[idx - 1] + f * (self.sample_z_um[idx] - self.sample_z_um[idx - 1])
        };
        let normal = Normal::new(0.0, self.sigma_v).expect("sigma_v is finite");
        (z, normal.sample(rng))
    }

    /// Velocity-Verlet trajectory from (z0, v0) through approach + settle.
    /// One force evaluation per step; the end-of-step force is reused.
    pub fn propagate(&self, z0: f64, v0: f64) -> (f64, f64, Outcome) {
        let dt = self.dt_ms;
        let inv_m = 1.0 / CS_MASS_UK_MS2_PER_UM2;
        let n_steps = ((self.approach_ms + self.settle_ms) / dt).ceil() as usize;
        let mut z = z0;
        let mut v = v0;
        let mut f = self.depth_uk * self.field.d_intensity_dz(z, self.ramp_at(0.0));
        for step in 1..=n_steps {
            v += 0.5 * dt * f * inv_m;
            z += dt * v;
            let ramp = self.ramp_at(step as f64 * dt);
            f = self.depth_uk * self.field.d_intensity_dz(z, ramp);
            v += 0.5 * dt * f * inv_m;
            // Once the chip is mostly under the beam, the surface absorbs.
            if ramp >= 0.5 && z <= 0.0 {
                return (z, v, Outcome::Lost);
            }
        }
        (z, v, self.classify(z, v))
    }

    pub fn run_trial(&self, rng: &mut impl Rng) -> Outcome {
        let (z0, v0) = self.sample_initial(rng);
        self.propagate(z0, v0).2
    }

    /// Bind the endpoint to a well: inside its basin and below the lower
    /// of the two barrier energies. Wells past `n_wells` count as lost.
    fn classify(&self, z: f64, v: f64) -> Outcome {
        if z <= 0.0 {
            return Outcome::Lost;
        }
        let e = 0.5 * CS_MASS_UK_MS2_PER_UM2 * v * v - self.depth_uk * self.field.intensity(z, 1.0);
        for (i, w) in self.wells.iter().enumerate() {
            if z >= w.basin_lo_um && z < w.basin_hi_um {
                if e < w.separatrix_uk && (i as u32) < self.n_wells {
                    return Outcome::Well(i as u32 + 1);
                }
                return Outcome::Lost;
            }
        }
        Outcome::Lost
    }

    /// Well centers of the final lattice, ascending from the surface.
    pub fn well_centers_um(&self) -> Vec<f64> {
        self.wells.iter().map(|w| w.z_um).collect()
    }
}

/// Minimize f on [a, b] by golden section; returns the argmin.
fn golden_min(mut a: f64, mut b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..60 {
        if f1 > f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        }
    }
    0.5 * (a + b)
}

/// Tallied outcome fractions for one focal offset.
#[derive(Debug, Clone, Serialize)]
pub struct LoadingDistribution {
    pub offset_nm: f64,
    pub n_trials: usize,
    /// Fraction ending in well 1..=n_wells.
    pub well_fractions: Vec<f64>,
    pub lost_fraction: f64,
    /// Binomial standard errors, same order.
    pub well_stderr: Vec<f64>,
    pub lost_stderr: f64,
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Run `config.mc.n_trials` independent trials at one focal offset.
/// Trial i always uses RNG stream MONTECARLO + i, so offsets in a sweep
/// share initial samples (common random numbers) and the result does not
/// depend on the rayon thread count.
pub fn loading_distribution(
    config: &Config,
    focal_offset_nm: f64,
    seed: u64,
) -> Result<LoadingDistribution> {
    let scenario = TransferScenario::from_config(config, focal_offset_nm)?;
    let n_trials = config.mc.n_trials as usize;
    let outcomes: Vec<Outcome> = (0..n_trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = make_rng(seed, streams::MONTECARLO + i as u64);
            scenario.run_trial(&mut rng)
        })
        .collect();
    let k = scenario.n_wells as usize;
    let mut counts = vec![0usize; k];
    let mut lost = 0usize;
    for o in &outcomes {
        match *o {
            Outcome::Well(w) => counts[(w - 1) as usize] += 1,
            Outcome::Lost => lost += 1,
        }
    }
    let well_fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n_trials as f64).collect();
    let lost_fraction = lost as f64 / n_trials as f64;
    Ok(LoadingDistribution {
        offset_nm: focal_offset_nm,
        n_trials,
        well_stderr: well_fractions
            .iter()
            .map(|&p| binomial_se(p, n_trials))
            .collect(),
        lost_stderr: binomial_se(lost_fraction, n_trials),
        well_fractions,
        lost_fraction,
    })
}

/// Sweep the focal offset; one distribution per value.
pub fn sweep_offsets(
    config: &Config,
    offsets_nm: &[f64],
    seed: u64,
) -> Result<Vec<LoadingDistribution>> {
    offsets_nm
        .iter()
        .map(|&o| loading_distribution(config, o, seed))
        .collect()
}
