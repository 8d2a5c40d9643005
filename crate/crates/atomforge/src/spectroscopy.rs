//! Spectroscopic models and fits: blow-out survival dips, well-population
//! mixtures, the two-photon probe response, and trap-lifetime decay.

use rand::Rng;
use serde::Serialize;

use crate::config::TwoPhotonConfig;
use crate::constants::F_PRIME_4_OFFSET_MHZ;
use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, simplex_least_squares, LmOptions};

/// Unit-height Lorentzian with full width at half maximum `fwhm`:
/// L(±fwhm/2) = 1/2.
pub fn lorentzian(delta: f64, fwhm: f64) -> f64 {
    let x = 2.0 * delta / fwhm;
    1.0 / (1.0 + x * x)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BlowoutParams {
    pub center_mhz: f64,
    pub width_mhz: f64,
    /// Fraction of the probed population removed at resonance.
    pub depth: f64,
    /// Survival far below the dip (resonant background loss).
    pub floor: f64,
}

/// Survival after a blow-out pulse at probe detuning `delta_mhz`:
/// floor + (1-floor)(1 - depth·L). Algebraically 1 - depth(1-floor)L, so a
/// fit can only determine the product depth·(1-floor); fits report depth
/// with floor pinned at zero.
pub fn blowout_survival(delta_mhz: f64, p: &BlowoutParams) -> f64 {
    p.floor + (1.0 - p.floor) * (1.0 - p.depth * lorentzian(delta_mhz - p.center_mhz, p.width_mhz))
}

/// Survival for a population spread over wells with distinct shifts
/// `centers_mhz`, weights on the simplex, shared linewidth.
pub fn mixture_survival(
    delta_mhz: f64,
    weights: &[f64],
    centers_mhz: &[f64],
    width_mhz: f64,
    floor: f64,
) -> f64 {
    assert_eq!(weights.len(), centers_mhz.len());
    let dip: f64 = weights
        .iter()
        .zip(centers_mhz)
        .map(|(w, c)| w * lorentzian(delta_mhz - c, width_mhz))
        .sum();
    1.0 - (1.0 - floor) * dip
}

#[derive(Debug, Clone, Serialize)]
pub struct BlowoutFit {
    pub center_mhz: f64,
    pub width_mhz: f64,
    pub depth: f64,
    pub rms_residual: f64,
    pub iterations: usize,
}

/// Fit a single blow-out dip. Three identifiable parameters (center, width,
/// depth); see [`blowout_survival`] for why floor is not one of them.
pub fn fit_blowout(deltas_mhz: &[f64], survivals: &[f64]) -> Result<BlowoutFit> {
    if deltas_mhz.len() != survivals.len() {
        return Err(Error::Model("detuning/survival length mismatch".into()));
    }
    let n = deltas_mhz.len();
    if n < 4 {
        return Err(Error::Model(format!("need at least 4 points, got {n}")));
    }
    let (i_min, s_min) = survivals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, &s)| (i, s))
        .unwrap();
    let span = deltas_mhz.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
        - deltas_mhz.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let p0 = [deltas_mhz[i_min], (span / 6.0).max(1e-3), (1.0 - s_min).clamp(0.05, 1.0)];

    let fit = levenberg_marquardt(n, &p0, LmOptions::default(), |p, out| {
        let params = BlowoutParams {
            center_mhz: p[0],
            width_mhz: p[1].abs().max(1e-9),
            depth: p[2],
            floor: 0.0,
        };
        for i in 0..n {
            out[i] = blowout_survival(deltas_mhz[i], &params) - survivals[i];
        }
    })?;
    let depth = fit.params[2];
    if !(-0.05..=1.05).contains(&depth) {
        return Err(Error::FitDiverged(format!(
            "blow-out depth {depth:.3} outside [0, 1]"
        )));
    }
    Ok(BlowoutFit {
        center_mhz: fit.params[0],
        width_mhz: fit.params[1].abs(),
        depth: depth.clamp(0.0, 1.0),
        rms_residual: (2.0 * fit.cost / n as f64).sqrt(),
        iterations: fit.iterations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MixtureFit {
    pub weights: Vec<f64>,
    pub rms_residual: f64,
}

/// Fit simplex-constrained well weights to a survival curve, with centers
/// and linewidth supplied by the optical model. Errors when any two centers
/// sit closer than half a linewidth: the weights are then degenerate.
pub fn fit_mixture(
    deltas_mhz: &[f64],
    survivals: &[f64],
    centers_mhz: &[f64],
    width_mhz: f64,
    floor: f64,
) -> Result<MixtureFit> {
    if deltas_mhz.len() != survivals.len() {
        return Err(Error::Model("detuning/survival length mismatch".into()));
    }
    let k = centers_mhz.len();
    if k == 0 || !(width_mhz > 0.0) || !(0.0..1.0).contains(&floor) {
        return Err(Error::Model(
            "mixture fit needs centers, width > 0, floor in [0, 1)".into(),
        ));
    }
    for i in 0..k {
        for j in i + 1..k {
            let gap = (centers_mhz[i] - centers_mhz[j]).abs();
            if gap < width_mhz / 2.0 {
                return Err(Error::NonIdentifiable(format!(
                    "centers {:.3} and {:.3} MHz are {gap:.3} apart, closer than half the \
                     linewidth {width_mhz:.3}",
                    centers_mhz[i], centers_mhz[j]
                )));
            }
        }
    }
    let n = deltas_mhz.len();
    let mut a = vec![0.0; n * k];
    let mut y = vec![0.0; n];
    for i in 0..n {
        for j in 0..k {
            a[i * k + j] = lorentzian(deltas_mhz[i] - centers_mhz[j], width_mhz);
        }
        y[i] = (1.0 - survivals[i]) / (1.0 - floor);
    }
    let weights = simplex_least_squares(&a, &y, n, k)?;
    let mut ss = 0.0;
    for i in 0..n {
        let mut pred = 0.0;
        for j in 0..k {
            pred += a[i * k + j] * weights[j];
        }
        ss += ((pred - y[i]) * (1.0 - floor)).powi(2);
    }
    Ok(MixtureFit {
        weights,
        rms_residual: (ss / n as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TwoPhotonResponse {
    /// Photons emitted at 895 nm per exposure, before loss.
    pub signal: f64,
    /// Probability the atom survives the exposure.
    pub survival: f64,
    /// Observable signal: emission gated by survival.
    pub detected: f64,
}

/// Background-free probe response: 852 nm + 1470 nm drive, detection at
/// 895 nm. The intermediate state is light-shifted in the trap; detunings
/// are quoted relative to the free-space lines.
pub fn two_photon_response(
    delta_852_mhz: f64,
    delta_1470_mhz: f64,
    cfg: &TwoPhotonConfig,
) -> TwoPhotonResponse {
    let ls = cfg.light_shift_mhz;
    let two_photon_detuning = delta_852_mhz + delta_1470_mhz - ls;
    let signal = cfg.signal_amplitude * lorentzian(two_photon_detuning, cfg.gamma_2ph_mhz);
    // Single-photon scattering off the F'=5 line and its F'=4 neighbor
    // ejects the atom. The trap is magic for this transition, so the loss
    // lines sit at the bare positions while the two-photon feature shifts.
    let loss_rate = cfg.loss_rate_per_ms
        * (lorentzian(delta_852_mhz, cfg.gamma_852_mhz)
            + lorentzian(delta_852_mhz - F_PRIME_4_OFFSET_MHZ, cfg.gamma_852_mhz));
    let survival = (-loss_rate * cfg.exposure_ms).exp();
    TwoPhotonResponse {
        signal,
        survival,
        detected: signal * survival,
    }
}

/// Dense response map over a detuning grid, row-major over (852, 1470).
#[derive(Debug, Clone)]
pub struct TwoPhotonMap {
    pub d852_mhz: Vec<f64>,
    pub d1470_mhz: Vec<f64>,
    pub signal: Vec<f64>,
    pub survival: Vec<f64>,
    pub detected: Vec<f64>,
}

pub fn map_twophoton(cfg: &TwoPhotonConfig, d852_mhz: &[f64], d1470_mhz: &[f64]) -> TwoPhotonMap {
    let mut signal = Vec::with_capacity(d852_mhz.len() * d1470_mhz.len());
    let mut survival = Vec::with_capacity(signal.capacity());
    let mut detected = Vec::with_capacity(signal.capacity());
    for &a in d852_mhz {
        for &b in d1470_mhz {
            let resp = two_photon_response(a, b, cfg);
            signal.push(resp.signal);
            survival.push(resp.survival);
            detected.push(resp.detected);
        }
    }
    TwoPhotonMap {
        d852_mhz: d852_mhz.to_vec(),
        d1470_mhz: d1470_mhz.to_vec(),
        signal,
        survival,
        detected,
    }
}

impl TwoPhotonMap {
    pub fn detected_at(&self, i852: usize, i1470: usize) -> f64 {
        self.detected[i852 * self.d1470_mhz.len() + i1470]
    }

    pub fn survival_at(&self, i852: usize, i1470: usize) -> f64 {
        self.survival[i852 * self.d1470_mhz.len() + i1470]
    }

    pub fn max_detected(&self) -> f64 {
        self.detected.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// (d852, d1470, detected) of the brightest grid cell; the first cell
    /// wins ties so the argmax is deterministic.
    pub fn max_detected_point(&self) -> (f64, f64, f64) {
        let mut best = (self.d852_mhz[0], self.d1470_mhz[0], f64::NEG_INFINITY);
        for (i, &a) in self.d852_mhz.iter().enumerate() {
            for (j, &b) in self.d1470_mhz.iter().enumerate() {
                let v = self.detected_at(i, j);
                if v > best.2 {
                    best = (a, b, v);
                }
            }
        }
        best
    }

    /// Bright-ridge samples: for each 852 column whose peak detected signal
    /// clears `min_fraction` of the global max, the 1470 detuning of that
    /// peak.
    pub fn ridge(&self, min_fraction: f64) -> Vec<(f64, f64)> {
        let global = self.max_detected();
        let mut out = Vec::new();
        for (i, &a) in self.d852_mhz.iter().enumerate() {
            let mut best = 0.0;
            let mut best_b = self.d1470_mhz[0];
            for (j, &b) in self.d1470_mhz.iter().enumerate() {
                let v = self.detected_at(i, j);
                if v > best {
                    best = v;
                    best_b = b;
                }
            }
            if best >= min_fraction * global {
                out.push((a, best_b));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LifetimePoint {
    pub time_s: f64,
    pub survival: f64,
    pub n_atoms: u32,
}

/// Simulate a hold-time scan: at each time, `n_atoms` independent atoms
/// survive with probability e^{-t/tau}.
pub fn lifetime_curve(
    times_s: &[f64],
    tau_s: f64,
    n_atoms: u32,
    rng: &mut impl Rng,
) -> Vec<LifetimePoint> {
    times_s
        .iter()
        .map(|&t| {
            let p = (-t / tau_s).exp();
            let mut survivors = 0u32;
            for _ in 0..n_atoms {
                if rng.random::<f64>() < p {
                    survivors += 1;
                }
            }
            LifetimePoint {
                time_s: t,
                survival: survivors as f64 / n_atoms as f64,
                n_atoms,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LifetimeFit {
    pub tau_s: f64,
    pub sigma_tau_s: f64,
    /// Fitted survival extrapolated to t = 0.
    pub amplitude: f64,
}

/// Exponential-decay fit: weighted log-linear solve for a starting point,
/// then a least-squares refinement on the linear scale. The refinement
/// matters because ln(survival) is biased low for binomial counts while
/// survival itself is unbiased, so the log-only estimate of tau sits a few
/// percent under the truth at realistic atom numbers.
pub fn fit_lifetime(points: &[LifetimePoint]) -> Result<LifetimeFit> {
    let usable: Vec<&LifetimePoint> = points.iter().filter(|p| p.survival > 0.0).collect();
    if usable.len() < 3 {
        return Err(Error::Model(format!(
            "need at least 3 nonzero survival points, got {}",
            usable.len()
        )));
    }
    let mut sw = 0.0;
    let mut swx = 0.0;
    let mut swy = 0.0;
    let mut swxx = 0.0;
    let mut swxy = 0.0;
    for p in &usable {
        let n = p.n_atoms as f64;
        // Cap p̂ away from 1 so a loss-free point keeps a finite weight.
        let ph = p.survival.min(1.0 - 0.5 / n);
        let var_ln = (1.0 - ph) / (n * ph);
        let w = 1.0 / var_ln;
        let x = p.time_s;
        let y = p.survival.ln();
        sw += w;
        swx += w * x;
        swy += w * y;
        swxx += w * x * x;
        swxy += w * x * y;
    }
    let det = sw * swxx - swx * swx;
    if det.abs() < 1e-300 {
        return Err(Error::Model("degenerate hold-time design".into()));
    }
    let slope = (sw * swxy - swx * swy) / det;
    let intercept = (swxx * swy - swx * swxy) / det;
    if !(slope < 0.0) {
        return Err(Error::FitDiverged(format!(
            "nonnegative decay slope {slope:.3e}; lifetime undefined"
        )));
    }

    // Linear-scale refinement over every point, zeros included.
    let times: Vec<f64> = points.iter().map(|p| p.time_s).collect();
    let survs: Vec<f64> = points.iter().map(|p| p.survival).collect();
    let m = points.len();
    let p0 = [intercept.exp(), -1.0 / slope];
    let lm = crate::fit::levenberg_marquardt(
        m,
        &p0,
        crate::fit::LmOptions::default(),
        |p, out| {
            for i in 0..m {
                out[i] = p[0] * (-times[i] / p[1]).exp() - survs[i];
            }
        },
    )?;
    let amplitude = lm.params[0];
    let tau = lm.params[1];
    if !(tau > 0.0) || !(amplitude > 0.0) {
        return Err(Error::FitDiverged(format!(
            "refined decay fit left the physical region: amplitude {amplitude:.3e}, tau {tau:.3e}"
        )));
    }

    // Covariance from the analytic Jacobian at the optimum.
    let (mut saa, mut sat, mut stt) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let e = (-times[i] / tau).exp();
        let da = e;
        let dt = amplitude * e * times[i] / (tau * tau);
        saa += da * da;
        sat += da * dt;
        stt += dt * dt;
    }
    let jdet = saa * stt - sat * sat;
    if jdet.abs() < 1e-300 {
        return Err(Error::Model("degenerate hold-time design".into()));
    }
    let s2 = 2.0 * lm.cost / (m.saturating_sub(2).max(1)) as f64;
    Ok(LifetimeFit {
        tau_s: tau,
        sigma_tau_s: (s2 * saa / jdet).sqrt(),
        amplitude,
    })
}
