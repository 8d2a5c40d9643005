//! Fluorescence-imaging simulation and occupancy decoding.
//!
//! Photon counts are Poissonian. A site's ROI collects `signal_per_roi`
//! photons on top of `bg_per_roi` background (both scaled by exposure);
//! atoms held on a device emit less and can be lost mid-exposure, which
//! truncates their photon collection at a uniform random fraction.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;
use statrs::distribution::{Discrete, DiscreteCDF};

use crate::config::ImagingConfig;
use crate::error::{Error, Result};
use crate::image::ImageU16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl Roi {
    fn overlaps(&self, other: &Roi) -> bool {
        self.x < other.x + other.size
            && other.x < self.x + self.size
            && self.y < other.y + other.size
            && other.y < self.y + self.size
    }
}

/// What occupies a tweezer site during an exposure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SiteLight {
    Empty,
    /// Atom in a free-space tweezer.
    FreeAtom,
    /// Atom held in the standing wave on a device.
    DeviceAtom,
}

/// One camera frame with its per-site ROIs.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: ImageU16,
    pub rois: Vec<Roi>,
    pub exposure_ms: f64,
}

impl Frame {
    /// Validates that ROIs are in bounds and mutually disjoint.
    pub fn new(image: ImageU16, rois: Vec<Roi>, exposure_ms: f64) -> Result<Frame> {
        for (i, roi) in rois.iter().enumerate() {
            if roi.x + roi.size > image.width || roi.y + roi.size > image.height {
                return Err(Error::Scenario(format!(
                    "ROI {i} at ({}, {}) size {} exceeds {}x{} frame",
                    roi.x, roi.y, roi.size, image.width, image.height
                )));
            }
            for (j, other) in rois.iter().enumerate().take(i) {
                if roi.overlaps(other) {
                    return Err(Error::Scenario(format!("ROIs {j} and {i} overlap")));
                }
            }
        }
        Ok(Frame {
            image,
            rois,
            exposure_ms,
        })
    }
}

/// Single-row ROI layout for n sites: 2 px frame margin, 2 px gaps.
pub fn layout_rois(n_sites: usize, roi_size: usize) -> (usize, usize, Vec<Roi>) {
    const MARGIN: usize = 2;
    const GAP: usize = 2;
    let width = 2 * MARGIN + n_sites * roi_size + n_sites.saturating_sub(1) * GAP;
    let height = 2 * MARGIN + roi_size;
    let rois = (0..n_sites)
        .map(|i| Roi {
            x: MARGIN + i * (roi_size + GAP),
            y: MARGIN,
            size: roi_size,
        })
        .collect();
    (width, height, rois)
}

fn sample_poisson(mean: f64, rng: &mut impl Rng) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(mean).expect("positive mean").sample(rng);
    draw as u32
}

/// Mean ROI photon numbers (background, signal) for one site, after exposure
/// scaling and any mid-exposure loss truncation.
fn roi_means(site: SiteLight, cfg: &ImagingConfig, exposure_ms: f64, rng: &mut impl Rng) -> (f64, f64) {
    let scale = exposure_ms / cfg.exposure_ref_ms;
    let bg = cfg.bg_per_roi * scale;
    let sig = match site {
        SiteLight::Empty => 0.0,
        SiteLight::FreeAtom => cfg.signal_per_roi * scale,
        SiteLight::DeviceAtom => {
            let base = cfg.device_signal_per_roi * scale;
            if rng.random::<f64>() < cfg.device_loss_prob {
                base * rng.random::<f64>()
            } else {
                base
            }
        }
    };
    (bg, sig)
}

/// Render one frame of the site row. Signal and background are spread
/// uniformly over each ROI's pixels; pixels outside ROIs see the ambient
/// background rate.
pub fn render_frame(
    sites: &[SiteLight],
    cfg: &ImagingConfig,
    exposure_ms: f64,
    rng: &mut impl Rng,
) -> Result<Frame> {
    if sites.is_empty() {
        return Err(Error::Scenario("render_frame needs at least one site".into()));
    }
    if !(exposure_ms > 0.0) {
        return Err(Error::Scenario(format!("exposure must be > 0, got {exposure_ms}")));
    }
    let roi_size = cfg.roi_size_px as usize;
    let (width, height, rois) = layout_rois(sites.len(), roi_size);
    let n_px = (roi_size * roi_size) as f64;
    let ambient = cfg.bg_per_roi * (exposure_ms / cfg.exposure_ref_ms) / n_px;

    let mut image = ImageU16::zeros(width, height);
    for idx in 0..image.data.len() {
        image.data[idx] = sample_poisson(ambient, rng).min(u16::MAX as u32) as u16;
    }
    for (site, roi) in sites.iter().zip(&rois) {
        let (bg, sig) = roi_means(*site, cfg, exposure_ms, rng);
        let per_px = (bg + sig) / n_px;
        for dy in 0..roi_size {
            for dx in 0..roi_size {
                let v = sample_poisson(per_px, rng).min(u16::MAX as u32) as u16;
                image.set(roi.x + dx, roi.y + dy, v);
            }
        }
    }
    Frame::new(image, rois, exposure_ms)
}

/// Per-site occupancy decoded from one frame.
#[derive(Debug, Clone, Serialize)]
pub struct OccupancyMatrix {
    pub occupied: Vec<bool>,
    pub photon_sums: Vec<u32>,
    /// Wall time of the decode, µs. Not part of any serialized artifact.
    #[serde(skip)]
    pub decode_micros: u128,
}

/// Sum each ROI and compare against the threshold. Work is linear in the
/// number of ROI pixels; the rest of the frame is never touched.
pub fn decode_occupancy(frame: &Frame, threshold: f64) -> OccupancyMatrix {
    let start = std::time::Instant::now();
    let mut occupied = Vec::with_capacity(frame.rois.len());
    let mut photon_sums = Vec::with_capacity(frame.rois.len());
    for roi in &frame.rois {
        let mut sum = 0u32;
        for dy in 0..roi.size {
            for dx in 0..roi.size {
                sum += frame.image.at(roi.x + dx, roi.y + dy) as u32;
            }
        }
        photon_sums.push(sum);
        occupied.push(sum as f64 > threshold);
    }
    OccupancyMatrix {
        occupied,
        photon_sums,
        decode_micros: start.elapsed().as_micros(),
    }
}

/// Draw ROI photon sums for `n_shots` independent exposures where each shot
/// holds an atom with probability `p_occupied`. Returns (sums, truth).
/// Sampling the ROI sum directly is distribution-identical to summing the
/// per-pixel draws of render_frame.
pub fn simulate_roi_sums(
    n_shots: usize,
    p_occupied: f64,
    site: SiteLight,
    cfg: &ImagingConfig,
    rng: &mut impl Rng,
) -> (Vec<u32>, Vec<bool>) {
    let mut sums = Vec::with_capacity(n_shots);
    let mut truth = Vec::with_capacity(n_shots);
    for _ in 0..n_shots {
        let occ = rng.random::<f64>() < p_occupied;
        let kind = if occ { site } else { SiteLight::Empty };
        let (bg, sig) = roi_means(kind, cfg, cfg.exposure_ms, rng);
        sums.push(sample_poisson(bg + sig, rng));
        truth.push(occ);
    }
    (sums, truth)
}

#[derive(Debug, Clone, Serialize)]
pub struct HistogramFit {
    /// Mixture weight of the signal component.
    pub pi_signal: f64,
    pub lambda_bg: f64,
    pub lambda_sig: f64,
    /// Optimal integer threshold: occupied when sum > threshold.
    pub threshold: u32,
    /// Balanced fidelity 1 - (miss + false alarm)/2 at `threshold`.
    pub fidelity: f64,
    pub miss_rate: f64,
    pub false_alarm_rate: f64,
    pub em_iterations: usize,
}

/// Fit a two-component Poisson mixture to ROI sums by EM, then sweep every
/// integer threshold for the balanced-fidelity optimum.
pub fn fit_histogram(sums: &[u32]) -> Result<HistogramFit> {
    if sums.len() < 10 {
        return Err(Error::Model(format!(
            "histogram fit needs >= 10 samples, got {}",
            sums.len()
        )));
    }
    let max = *sums.iter().max().unwrap();
    let min = *sums.iter().min().unwrap();
    if max == min {
        return Err(Error::Model("histogram has no contrast".into()));
    }
    // Aggregate to counts per value; EM cost becomes O(max · iters).
    let mut hist = vec![0f64; max as usize + 1];
    for &s in sums {
        hist[s as usize] += 1.0;
    }
    let n = sums.len() as f64;
    let mean = sums.iter().map(|&s| s as f64).sum::<f64>() / n;

    // Deterministic init: split at the overall mean.
    let (mut lo_sum, mut lo_n, mut hi_sum, mut hi_n) = (0.0, 0.0, 0.0, 0.0);
    for (v, &c) in hist.iter().enumerate() {
        if (v as f64) <= mean {
            lo_sum += v as f64 * c;
            lo_n += c;
        } else {
            hi_sum += v as f64 * c;
            hi_n += c;
        }
    }
    let mut lambda_bg = if lo_n > 0.0 { (lo_sum / lo_n).max(0.05) } else { mean * 0.5 };
    let mut lambda_sig = if hi_n > 0.0 { hi_sum / hi_n } else { mean * 2.0 + 1.0 };
    let mut pi = (hi_n / n).clamp(0.05, 0.95);

    let ln_pmf = |lambda: f64, v: u64| -> f64 {
        statrs::distribution::Poisson::new(lambda)
            .expect("positive lambda")
            .ln_pmf(v)
    };

    let mut iterations = 0;
    for iter in 0..500 {
        iterations = iter + 1;
        let mut resp_n = 0.0;
        let mut resp_sum = 0.0;
        let mut rest_sum = 0.0;
        for (v, &c) in hist.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let ls = pi.ln() + ln_pmf(lambda_sig, v as u64);
            let lb = (1.0 - pi).ln() + ln_pmf(lambda_bg, v as u64);
            let m = ls.max(lb);
            let r = ((ls - m).exp()) / ((ls - m).exp() + (lb - m).exp());
            resp_n += c * r;
            resp_sum += c * r * v as f64;
            rest_sum += c * (1.0 - r) * v as f64;
        }
        let new_pi = (resp_n / n).clamp(1e-6, 1.0 - 1e-6);
        let new_sig = if resp_n > 0.0 { (resp_sum / resp_n).max(0.05) } else { lambda_sig };
        let new_bg = if n - resp_n > 0.0 {
            (rest_sum / (n - resp_n)).max(0.05)
        } else {
            lambda_bg
        };
        let moved = (new_pi - pi).abs() + (new_sig - lambda_sig).abs() + (new_bg - lambda_bg).abs();
        pi = new_pi;
        lambda_sig = new_sig;
        lambda_bg = new_bg;
        if moved < 1e-10 {
            break;
        }
    }
    if lambda_sig < lambda_bg {
        std::mem::swap(&mut lambda_sig, &mut lambda_bg);
        pi = 1.0 - pi;
    }
    if lambda_sig - lambda_bg < 0.5 {
        return Err(Error::NonIdentifiable(format!(
            "histogram components collapse: lambda_bg = {lambda_bg:.3}, lambda_sig = {lambda_sig:.3}"
        )));
    }

    let (threshold, fidelity, miss, fa) = optimal_threshold(lambda_bg, lambda_sig);
    Ok(HistogramFit {
        pi_signal: pi,
        lambda_bg,
        lambda_sig,
        threshold,
        fidelity,
        miss_rate: miss,
        false_alarm_rate: fa,
        em_iterations: iterations,
    })
}

/// Balanced classification fidelity of "occupied = sum > t" for Poisson
/// background/signal components.
pub fn classification_fidelity(lambda_bg: f64, lambda_sig: f64, t: u32) -> f64 {
    let (_, fid) = rates_at(lambda_bg, lambda_sig, t);
    fid
}

fn rates_at(lambda_bg: f64, lambda_sig: f64, t: u32) -> ((f64, f64), f64) {
    let bg = statrs::distribution::Poisson::new(lambda_bg.max(1e-12)).unwrap();
    let sig = statrs::distribution::Poisson::new(lambda_sig.max(1e-12)).unwrap();
    let false_alarm = 1.0 - bg.cdf(t as u64);
    let miss = sig.cdf(t as u64);
    ((miss, false_alarm), 1.0 - 0.5 * (miss + false_alarm))
}

/// Exhaustive integer-threshold sweep; returns (threshold, fidelity, miss,
/// false alarm). Ties go to the smaller threshold.
pub fn optimal_threshold(lambda_bg: f64, lambda_sig: f64) -> (u32, f64, f64, f64) {
    let t_max = (lambda_sig + 10.0 * lambda_sig.sqrt() + 20.0) as u32;
    let mut best = (0u32, f64::NEG_INFINITY, 0.0, 0.0);
    for t in 0..=t_max {
        let ((miss, fa), fid) = rates_at(lambda_bg, lambda_sig, t);
        if fid > best.1 {
            best = (t, fid, miss, fa);
        }
    }
    best
}

/// Miss and false-alarm rates of "occupied = sum > t" measured against the
/// ground truth. Unlike the fitted-component rates this captures shapes a
/// Poisson pair cannot, such as the low tail from atoms lost mid-exposure.
pub fn empirical_rates(sums: &[u32], truth: &[bool], t: u32) -> Result<(f64, f64)> {
    if sums.len() != truth.len() || sums.is_empty() {
        return Err(Error::Model(format!(
            "empirical rates need matched non-empty sums/truth, got {} and {}",
            sums.len(),
            truth.len()
        )));
    }
    let (mut miss, mut n_occ, mut fa, mut n_empty) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &occ) in sums.iter().zip(truth) {
        if occ {
            n_occ += 1;
            if s <= t {
                miss += 1;
            }
        } else {
            n_empty += 1;
            if s > t {
                fa += 1;
            }
        }
    }
    if n_occ == 0 || n_empty == 0 {
        return Err(Error::Model(
            "empirical rates need both occupied and empty shots".into(),
        ));
    }
    Ok((miss as f64 / n_occ as f64, fa as f64 / n_empty as f64))
}

/// Integer-threshold sweep of the empirical balanced fidelity; returns
/// (threshold, fidelity, miss, false alarm). Ties go to the smaller t.
pub fn empirical_optimal_threshold(
    sums: &[u32],
    truth: &[bool],
) -> Result<(u32, f64, f64, f64)> {
    let t_max = *sums.iter().max().unwrap_or(&0);
    let mut best = (0u32, f64::NEG_INFINITY, 0.0, 0.0);
    for t in 0..=t_max {
        let (miss, fa) = empirical_rates(sums, truth, t)?;
        let fid = 1.0 - 0.5 * (miss + fa);
        if fid > best.1 {
            best = (t, fid, miss, fa);
        }
    }
    Ok(best)
}
