//! Rearrangement planning: chirped AOD tone trajectories that compress a
//! partially loaded row and carry it onto the photonic devices, plus the
//! statistical pipeline model that predicts end-to-end filling.
//!
//! Moves use a symmetric piecewise-quadratic chirp (accelerate to midpoint,
//! mirror to rest), so frequency and slew are continuous and the peak slew
//! is 2|Δf|/T. All tones of a phase move simultaneously for the same
//! duration; order-preserving targets therefore never cross.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{CompressionAnchor, Config, TweezerConfig};
use crate::error::{Error, Result};
use crate::rng::{make_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentKind {
    Hold,
    Chirp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub axis: Axis,
    pub f0_mhz: f64,
    pub f1_mhz: f64,
    pub t_ms: f64,
}

impl Segment {
    pub fn hold(axis: Axis, f_mhz: f64, t_ms: f64) -> Segment {
        Segment {
            kind: SegmentKind::Hold,
            axis,
            f0_mhz: f_mhz,
            f1_mhz: f_mhz,
            t_ms,
        }
    }

    pub fn chirp(axis: Axis, f0_mhz: f64, f1_mhz: f64, t_ms: f64) -> Segment {
        Segment {
            kind: SegmentKind::Chirp,
            axis,
            f0_mhz,
            f1_mhz,
            t_ms,
        }
    }

    /// Frequency at local time t in [0, t_ms].
    pub fn frequency_at(&self, t_ms: f64) -> f64 {
        match self.kind {
            SegmentKind::Hold => self.f0_mhz,
            SegmentKind::Chirp => {
                let df = self.f1_mhz - self.f0_mhz;
                let u = (t_ms / self.t_ms).clamp(0.0, 1.0);
                if u <= 0.5 {
                    self.f0_mhz + 2.0 * df * u * u
                } else {
                    self.f1_mhz - 2.0 * df * (1.0 - u) * (1.0 - u)
                }
            }
        }
    }

    /// Instantaneous slew df/dt at local time t.
    pub fn slew_at(&self, t_ms: f64) -> f64 {
        match self.kind {
            SegmentKind::Hold => 0.0,
            SegmentKind::Chirp => {
                let df = self.f1_mhz - self.f0_mhz;
                let u = (t_ms / self.t_ms).clamp(0.0, 1.0);
                if u <= 0.5 {
                    4.0 * df * u / self.t_ms
                } else {
                    4.0 * df * (1.0 - u) / self.t_ms
                }
            }
        }
    }

    /// Largest |df/dt| over the segment: 2|Δf|/T, reached at the midpoint.
    pub fn peak_slew(&self) -> f64 {
        match self.kind {
            SegmentKind::Hold => 0.0,
            SegmentKind::Chirp => 2.0 * (self.f1_mhz - self.f0_mhz).abs() / self.t_ms,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToneTrajectory {
    /// "x3" = fourth X tone, "y0" = first Y tone.
    pub tone_id: String,
    pub segments: Vec<Segment>,
}

impl ToneTrajectory {
    pub fn total_ms(&self) -> f64 {
        self.segments.iter().map(|s| s.t_ms).sum()
    }

    /// Frequency at global plan time, segments concatenated. Times beyond
    /// the end return the final frequency.
    pub fn frequency_at(&self, t_ms: f64) -> f64 {
        let mut t = t_ms;
        for seg in &self.segments {
            if t <= seg.t_ms {
                return seg.frequency_at(t);
            }
            t -= seg.t_ms;
        }
        self.segments
            .last()
            .map(|s| s.f1_mhz)
            .unwrap_or(f64::NAN)
    }

    pub fn peak_slew(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.peak_slew())
            .fold(0.0, f64::max)
    }
}

/// One planned atom move, in site/slot indices.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Assignment {
    pub from_site: usize,
    pub to_site: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RearrangementPlan {
    pub tones: Vec<ToneTrajectory>,
    pub assignments: Vec<Assignment>,
    pub total_ms: f64,
}

impl RearrangementPlan {
    pub fn max_peak_slew(&self) -> f64 {
        self.tones.iter().map(|t| t.peak_slew()).fold(0.0, f64::max)
    }
}

/// Where the rearrangement should deliver atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceTarget {
    /// One atom onto each device, left to right; surplus atoms park beyond
    /// the device block.
    OnePerDevice,
    /// k atoms spread along a single device. Requires a single X tone and
    /// at least k Y tones.
    NOnOneDevice(usize),
}

fn check_band(tw: &TweezerConfig, tone: f64, what: &str) -> Result<()> {
    if tone < tw.tone_min_mhz || tone > tw.tone_max_mhz {
        return Err(Error::Scenario(format!(
            "{what} needs tone {tone:.3} MHz outside the AOD band [{}, {}]",
            tw.tone_min_mhz, tw.tone_max_mhz
        )));
    }
    Ok(())
}

fn check_slew(tw: &TweezerConfig, plan: &RearrangementPlan) -> Result<()> {
    let peak = plan.max_peak_slew();
    if peak > tw.max_slew_mhz_per_ms {
        return Err(Error::Scenario(format!(
            "plan peak slew {peak:.3} MHz/ms exceeds limit {}",
            tw.max_slew_mhz_per_ms
        )));
    }
    Ok(())
}

/// Compress the occupied sites of the X row into a contiguous block at the
/// native tone pitch, preserving order, in `compress_ms`. Unoccupied tones
/// are extinguished (they carry no atom and appear in no trajectory).
pub fn plan_compression(occupied: &[bool], tw: &TweezerConfig) -> Result<RearrangementPlan> {
    if occupied.len() != tw.tones_x_mhz.len() {
        return Err(Error::Scenario(format!(
            "pattern has {} sites, array has {}",
            occupied.len(),
            tw.tones_x_mhz.len()
        )));
    }
    let filled: Vec<usize> = (0..occupied.len()).filter(|&i| occupied[i]).collect();
    let m = filled.len();
    let n = occupied.len();
    let start = if m == 0 {
        0
    } else {
        match tw.compression_anchor {
            CompressionAnchor::Left => filled[0],
            CompressionAnchor::Center => {
                let mean = filled.iter().sum::<usize>() as f64 / m as f64;
                let ideal = mean - (m as f64 - 1.0) / 2.0;
                (ideal.round().max(0.0) as usize).min(n - m)
            }
            CompressionAnchor::Device => 0,
        }
    };
    let mut tones = Vec::with_capacity(m);
    let mut assignments = Vec::with_capacity(m);
    for (j, &site) in filled.iter().enumerate() {
        let target = start + j;
        let f0 = tw.tones_x_mhz[site];
        let f1 = tw.tones_x_mhz[target];
        let seg = if site == target {
            Segment::hold(Axis::X, f0, tw.compress_ms)
        } else {
            Segment::chirp(Axis::X, f0, f1, tw.compress_ms)
        };
        tones.push(ToneTrajectory {
            tone_id: format!("x{site}"),
            segments: vec![seg],
        });
        assignments.push(Assignment {
            from_site: site,
            to_site: target,
        });
    }
    let plan = RearrangementPlan {
        tones,
        assignments,
        total_ms: tw.compress_ms,
    };
    check_slew(tw, &plan)?;
    Ok(plan)
}

/// Plan the move onto the chip: an X phase aligning columns to their
/// targets, then a Y phase descending `loading_offset_um` at the transport
/// speed. Phase durations are shared by all tones of that phase.
pub fn plan_to_devices(
    occupied: &[bool],
    target: DeviceTarget,
    config: &Config,
) -> Result<RearrangementPlan> {
    let tw = &config.tweezer;
    let chip = &config.chip;
    match target {
        DeviceTarget::OnePerDevice => {
            if occupied.len() != tw.tones_x_mhz.len() {
                return Err(Error::Scenario(format!(
                    "pattern has {} sites, array has {}",
                    occupied.len(),
                    tw.tones_x_mhz.len()
                )));
            }
            let filled: Vec<usize> = (0..occupied.len()).filter(|&i| occupied[i]).collect();
            // Targets: device centers for the first atoms, park columns
            // beyond the device block for the rest, all order-preserving.
            let n_dev = chip.n_devices as usize;
            let mut target_x = Vec::with_capacity(filled.len());
            for (j, _) in filled.iter().enumerate() {
                let x = if j < n_dev {
                    chip.device_center_x_um(j as u32)
                } else {
                    chip.device_center_x_um((n_dev - 1) as u32)
                        + chip.park_offset_um
                        + (j - n_dev) as f64 * chip.device_pitch_um
                };
                target_x.push(x);
            }
            build_two_phase_plan(&filled, &target_x, config)
        }
        DeviceTarget::NOnOneDevice(k) => {
            if tw.tones_x_mhz.len() != 1 {
                return Err(Error::Scenario(format!(
                    "placing {k} atoms on one device needs a single X tone, found {}",
                    tw.tones_x_mhz.len()
                )));
            }
            if occupied.len() != tw.tones_y_mhz.len() {
                return Err(Error::Scenario(format!(
                    "pattern has {} sites, Y array has {}",
                    occupied.len(),
                    tw.tones_y_mhz.len()
                )));
            }
            let filled: Vec<usize> = (0..occupied.len()).filter(|&i| occupied[i]).collect();
            if filled.len() != k {
                return Err(Error::Scenario(format!(
                    "target wants {k} atoms, pattern holds {}",
                    filled.len()
                )));
            }
            let span = (k.saturating_sub(1)) as f64 * chip.intra_device_spacing_um;
            if span > chip.device_length_um {
                return Err(Error::Scenario(format!(
                    "{k} atoms at {} µm spacing span {span} µm, device is only {} µm long",
                    chip.intra_device_spacing_um, chip.device_length_um
                )));
            }
            plan_column_onto_device(&filled, k, config)
        }
    }
}

/// Shared X-then-Y construction for row delivery.
fn build_two_phase_plan(
    filled: &[usize],
    target_x_um: &[f64],
    config: &Config,
) -> Result<RearrangementPlan> {
    let tw = &config.tweezer;
    let chip = &config.chip;
    let mut f_targets = Vec::with_capacity(filled.len());
    let mut max_dx = 0.0f64;
    for (j, &site) in filled.iter().enumerate() {
        let f0 = tw.tones_x_mhz[site];
        let f1 = tw.um_to_tone(target_x_um[j]);
        check_band(tw, f1, "X target")?;
        max_dx = max_dx.max((target_x_um[j] - tw.tone_to_um(f0)).abs());
        f_targets.push((f0, f1));
    }
    let t_x = max_dx / tw.move_speed_um_per_ms;
    let t_y = chip.loading_offset_um / tw.move_speed_um_per_ms;

    let mut tones = Vec::with_capacity(filled.len() + 1);
    let mut assignments = Vec::with_capacity(filled.len());
    for (j, &site) in filled.iter().enumerate() {
        let (f0, f1) = f_targets[j];
        let mut segments = Vec::new();
        if t_x > 0.0 {
            segments.push(if (f1 - f0).abs() < 1e-12 {
                Segment::hold(Axis::X, f0, t_x)
            } else {
                Segment::chirp(Axis::X, f0, f1, t_x)
            });
        }
        segments.push(Segment::hold(Axis::X, f1, t_y));
        tones.push(ToneTrajectory {
            tone_id: format!("x{site}"),
            segments,
        });
        assignments.push(Assignment {
            from_site: site,
            to_site: j,
        });
    }
    // The single Y tone carries the whole row down to the chip.
    let fy0 = tw.tones_y_mhz[0];
    let fy1 = fy0 - chip.loading_offset_um / tw.aod_scale_um_per_mhz;
    check_band(tw, fy1, "Y approach")?;
    let mut y_segments = Vec::new();
    if t_x > 0.0 {
        y_segments.push(Segment::hold(Axis::Y, fy0, t_x));
    }
    y_segments.push(Segment::chirp(Axis::Y, fy0, fy1, t_y));
    tones.push(ToneTrajectory {
        tone_id: "y0".into(),
        segments: y_segments,
    });

    let plan = RearrangementPlan {
        tones,
        assignments,
        total_ms: t_x + t_y,
    };
    check_slew(tw, &plan)?;
    Ok(plan)
}

/// k atoms on Y tones, one X tone: align the column to the device center,
/// then one Y chirp per atom combining the approach with the spread along
/// the device.
fn plan_column_onto_device(
    filled: &[usize],
    k: usize,
    config: &Config,
) -> Result<RearrangementPlan> {
    let tw = &config.tweezer;
    let chip = &config.chip;
    let fx0 = tw.tones_x_mhz[0];
    let fx1 = tw.um_to_tone(chip.device_center_x_um(0));
    check_band(tw, fx1, "X target")?;
    let dx = (tw.tone_to_um(fx0) - chip.device_center_x_um(0)).abs();
    let t_x = dx / tw.move_speed_um_per_ms;

    // The column descends by the loading offset around its own centroid
    // while the spread contracts or expands to the device spacing.
    let f_center =
        filled.iter().map(|&s| tw.tones_y_mhz[s]).sum::<f64>() / k as f64;
    let mut y_plans = Vec::with_capacity(k);
    let mut max_dy = 0.0f64;
    for (j, &site) in filled.iter().enumerate() {
        let fy0 = tw.tones_y_mhz[site];
        let spread = (j as f64 - (k as f64 - 1.0) / 2.0) * chip.intra_device_spacing_um;
        let fy1 =
            f_center + (spread - chip.loading_offset_um) / tw.aod_scale_um_per_mhz;
        check_band(tw, fy1, "Y target")?;
        max_dy = max_dy.max((fy1 - fy0).abs() * tw.aod_scale_um_per_mhz);
        y_plans.push((site, fy0, fy1));
    }
    let t_y = max_dy / tw.move_speed_um_per_ms;

    let mut tones = Vec::with_capacity(k + 1);
    let mut x_segments = Vec::new();
    if t_x > 0.0 {
        x_segments.push(if (fx1 - fx0).abs() < 1e-12 {
            Segment::hold(Axis::X, fx0, t_x)
        } else {
            Segment::chirp(Axis::X, fx0, fx1, t_x)
        });
    }
    x_segments.push(Segment::hold(Axis::X, fx1, t_y));
    tones.push(ToneTrajectory {
        tone_id: "x0".into(),
        segments: x_segments,
    });
    let mut assignments = Vec::with_capacity(k);
    for (j, (site, fy0, fy1)) in y_plans.into_iter().enumerate() {
        let mut segments = Vec::new();
        if t_x > 0.0 {
            segments.push(Segment::hold(Axis::Y, fy0, t_x));
        }
        segments.push(if (fy1 - fy0).abs() < 1e-12 {
            Segment::hold(Axis::Y, fy0, t_y)
        } else {
            Segment::chirp(Axis::Y, fy0, fy1, t_y)
        });
        tones.push(ToneTrajectory {
            tone_id: format!("y{site}"),
            segments,
        });
        assignments.push(Assignment {
            from_site: site,
            to_site: j,
        });
    }
    let plan = RearrangementPlan {
        tones,
        assignments,
        total_ms: t_x + t_y,
    };
    check_slew(tw, &plan)?;
    Ok(plan)
}

/// Sample every tone of one axis on a µs grid and verify the frequency
/// ordering never changes and no two tones touch. Returns the smallest gap
/// seen, in MHz.
pub fn verify_no_crossings(plan: &RearrangementPlan, axis: Axis) -> Result<f64> {
    let tones: Vec<&ToneTrajectory> = plan
        .tones
        .iter()
        .filter(|t| t.segments.iter().any(|s| s.axis == axis && s.t_ms > 0.0))
        .collect();
    if tones.len() < 2 {
        return Ok(f64::INFINITY);
    }
    let total = plan.total_ms;
    let steps = (total * 1000.0).ceil() as usize + 1;
    let f_at = |tone: &ToneTrajectory, i: usize| {
        let t = total * i as f64 / (steps - 1) as f64;
        tone.frequency_at(t)
    };
    // Initial ordering.
    let mut order: Vec<usize> = (0..tones.len()).collect();
    order.sort_by(|&a, &b| f_at(tones[a], 0).total_cmp(&f_at(tones[b], 0)));
    let mut min_gap = f64::INFINITY;
    for i in 0..steps {
        for w in order.windows(2) {
            let lo = f_at(tones[w[0]], i);
            let hi = f_at(tones[w[1]], i);
            let gap = hi - lo;
            if gap <= 0.0 {
                return Err(Error::Scenario(format!(
                    "tones {} and {} cross at t = {:.3} ms",
                    tones[w[0]].tone_id,
                    tones[w[1]].tone_id,
                    total * i as f64 / (steps - 1) as f64
                )));
            }
            min_gap = min_gap.min(gap);
        }
    }
    Ok(min_gap)
}

/// End-to-end filling statistics for the delivery pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineStats {
    pub n_shots: usize,
    pub n_slots: usize,
    /// Probability the final image shows slot j occupied.
    pub raw: Vec<f64>,
    /// Raw corrected for the final readout's own losses, clipped to 1.
    pub corrected: Vec<f64>,
    /// Mean atoms loaded per shot before any loss.
    pub mean_loaded: f64,
}

/// Monte Carlo of load → image → compress → deliver → final image.
/// With `losses_on` = false every survival step is skipped, leaving pure
/// binomial loading statistics. Shots use independent RNG streams, so the
/// result is identical for any thread count.
pub fn simulate_pipeline(
    config: &Config,
    n_slots: usize,
    n_shots: usize,
    seed: u64,
    losses_on: bool,
) -> Result<PipelineStats> {
    let n_sites = config.tweezer.tones_x_mhz.len();
    if n_slots == 0 || n_shots == 0 {
        return Err(Error::Scenario("pipeline needs slots >= 1 and shots >= 1".into()));
    }
    let rates = &config.rates;
    let shot_results: Vec<(Vec<bool>, u32)> = (0..n_shots)
        .into_par_iter()
        .map(|shot| {
            use rand::Rng;
            let mut rng = make_rng(seed, streams::PIPELINE + shot as u64);
            let mut loaded = 0u32;
            let mut survivors = 0usize;
            for _ in 0..n_sites {
                if rng.random::<f64>() < rates.load_prob {
                    loaded += 1;
                    // First image: the atom must survive being looked at.
                    if !losses_on || rng.random::<f64>() < rates.imaging_survival {
                        survivors += 1;
                    }
                }
            }
            // Compression packs survivors in order; slot j gets the j-th
            // one. Delivery and the final readout thin them further.
            let mut final_slots = vec![false; n_slots];
            for (j, slot) in final_slots.iter_mut().enumerate() {
                if j >= survivors {
                    break;
                }
                let rearranged = !losses_on || rng.random::<f64>() < rates.rearrange_survival;
                let seen = !losses_on || rng.random::<f64>() < rates.imaging_survival;
                *slot = rearranged && seen;
            }
            (final_slots, loaded)
        })
        .collect();

    let mut raw = vec![0.0; n_slots];
    let mut total_loaded = 0u64;
    for (slots, loaded) in &shot_results {
        for (j, &s) in slots.iter().enumerate() {
            if s {
                raw[j] += 1.0;
            }
        }
        total_loaded += *loaded as u64;
    }
    for r in &mut raw {
        *r /= n_shots as f64;
    }
    let corrected: Vec<f64> = raw
        .iter()
        .map(|&r| (r / rates.imaging_survival).min(1.0))
        .collect();
    Ok(PipelineStats {
        n_shots,
        n_slots,
        raw,
        corrected,
        mean_loaded: total_loaded as f64 / n_shots as f64,
    })
}
