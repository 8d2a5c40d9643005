//! Run configuration: a flat TOML file with one section per hardware
//! subsystem. Every field has a default, so an empty file (or no file) is a
//! valid run; unknown keys are rejected to catch typos.
//!
//! Units are encoded in field names: _nm, _um, _mhz, _uk (µK, meaning energy
//! over k_B), _ms, _s. All values are validated on load and failures name the
//! offending field and bound.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Membrane + device geometry of the photonic chip.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipConfig {
    /// Suspended-film thickness in nm. Measured values scatter by ~10 nm
    /// around 330; the standing-wave geometry is insensitive at that level.
    pub film_thickness_nm: f64,
    /// Film refractive index at the trap wavelength.
    pub film_index: f64,
    /// Width of one suspended device in µm.
    pub device_width_um: f64,
    /// Length of one suspended device in µm.
    pub device_length_um: f64,
    /// Center-to-center pitch of adjacent devices in µm.
    pub device_pitch_um: f64,
    /// Number of devices across the chip.
    pub n_devices: u32,
    /// Device tilt relative to the optical axis, in mrad.
    pub device_tilt_mrad: f64,
    /// Spacing between atoms placed along a single device, in µm.
    pub intra_device_spacing_um: f64,
    /// Distance beyond the used region where surplus atoms are parked, in µm.
    pub park_offset_um: f64,
    /// Y distance from the loading row to the device row, in µm.
    pub loading_offset_um: f64,
}

impl Default for ChipConfig {
    fn default() -> Self {
        ChipConfig {
            film_thickness_nm: 330.0,
            film_index: 2.0,
            device_width_um: 1.1,
            device_length_um: 63.0,
            device_pitch_um: 11.0,
            n_devices: 12,
            device_tilt_mrad: 0.0,
            intra_device_spacing_um: 6.0,
            park_offset_um: 25.0,
            loading_offset_um: 40.0,
        }
    }
}

impl ChipConfig {
    /// Center x of device `d` in the chip frame, where device 0 sits at 0.
    pub fn device_center_x_um(&self, d: u32) -> f64 {
        d as f64 * self.device_pitch_um
    }
}

/// Anchor choice for the row-compression step of a rearrangement plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionAnchor {
    /// Keep the leftmost occupied site fixed.
    Left,
    /// Center the packed block on the occupied sites' midpoint.
    Center,
    /// Align the packed block to the device anchor tone.
    Device,
}

/// Tweezer array generated by crossed AODs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TweezerConfig {
    /// Trap wavelength in nm (magic for the D2 transition).
    pub wavelength_nm: f64,
    /// Beam waist (1/e² intensity radius) at focus, in µm.
    pub waist_um: f64,
    /// Free-space trap depth at focus in µK.
    pub trap_depth_uk: f64,
    /// D1 light shift per unit of local intensity ratio, MHz. 1.0 keeps
    /// spectroscopy in normalized units; calibrate against measured shifts.
    pub kappa_d1_mhz: f64,
    /// RF tones on the X-axis AOD, MHz, strictly increasing.
    pub tones_x_mhz: Vec<f64>,
    /// RF tones on the Y-axis AOD, MHz, strictly increasing.
    pub tones_y_mhz: Vec<f64>,
    /// Usable AOD band, MHz; planned trajectories must stay inside it.
    pub tone_min_mhz: f64,
    pub tone_max_mhz: f64,
    /// Deflection scale of the AOD pair, µm of focal-plane motion per MHz.
    pub aod_scale_um_per_mhz: f64,
    /// Hardware slew limit for tone frequency ramps, MHz/ms.
    pub max_slew_mhz_per_ms: f64,
    /// Duration of the row-compression move, ms.
    pub compress_ms: f64,
    /// Transport speed for device-bound moves, µm/ms.
    pub move_speed_um_per_ms: f64,
    /// Anchor for row compression.
    pub compression_anchor: CompressionAnchor,
    /// Tone frequency that maps onto the first device center, MHz.
    pub device_anchor_tone_mhz: f64,
}

impl Default for TweezerConfig {
    fn default() -> Self {
        TweezerConfig {
            wavelength_nm: 935.0,
            waist_um: 1.1,
            trap_depth_uk: 2000.0,
            kappa_d1_mhz: 1.0,
            tones_x_mhz: vec![80.0, 91.0, 102.0, 113.0, 124.0, 135.0, 146.0, 157.0, 168.0],
            tones_y_mhz: vec![100.0],
            tone_min_mhz: 60.0,
            tone_max_mhz: 200.0,
            aod_scale_um_per_mhz: 1.0,
            max_slew_mhz_per_ms: 500.0,
            compress_ms: 1.0,
            move_speed_um_per_ms: 6.0,
            compression_anchor: CompressionAnchor::Device,
            device_anchor_tone_mhz: 80.0,
        }
    }
}

impl TweezerConfig {
    pub fn n_sites(&self) -> usize {
        self.tones_x_mhz.len() * self.tones_y_mhz.len()
    }

    /// Map an X-axis tone to chip-frame µm: the anchor tone lands on the
    /// center of device 0.
    pub fn tone_to_um(&self, tone_mhz: f64) -> f64 {
        (tone_mhz - self.device_anchor_tone_mhz) * self.aod_scale_um_per_mhz
    }

    pub fn um_to_tone(&self, x_um: f64) -> f64 {
        self.device_anchor_tone_mhz + x_um / self.aod_scale_um_per_mhz
    }

    /// Site positions in chip-frame µm, row-major over (y, x). Y is relative
    /// to the first Y tone.
    pub fn site_positions_um(&self) -> Vec<(f64, f64)> {
        let y0 = self.tones_y_mhz[0];
        let mut out = Vec::with_capacity(self.n_sites());
        for &ty in &self.tones_y_mhz {
            for &tx in &self.tones_x_mhz {
                out.push((self.tone_to_um(tx), (ty - y0) * self.aod_scale_um_per_mhz));
            }
        }
        out
    }
}

/// Empirical survival/loading rates used by the pipeline model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateTable {
    /// Probability that a tweezer site loads a single atom.
    pub load_prob: f64,
    /// Survival probability through one imaging exposure.
    pub imaging_survival: f64,
    /// Survival probability through a full rearrangement move.
    pub rearrange_survival: f64,
    /// Trap lifetime at the loading position, seconds.
    pub lifetime_loading_s: f64,
    /// Trap lifetime on the device, seconds.
    pub lifetime_device_s: f64,
}

impl Default for RateTable {
    fn default() -> Self {
        RateTable {
            load_prob: 0.55,
            imaging_survival: 0.875,
            rearrange_survival: 0.77,
            lifetime_loading_s: 13.6,
            lifetime_device_s: 0.78,
        }
    }
}

/// Fluorescence-imaging model parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    /// Side length of the square per-site ROI, pixels.
    pub roi_size_px: u32,
    /// Mean signal photons collected per ROI from one atom at the reference
    /// exposure, in free space.
    pub signal_per_roi: f64,
    /// Mean background photons per ROI at the reference exposure.
    pub bg_per_roi: f64,
    /// Exposure used when rendering frames, ms.
    pub exposure_ms: f64,
    /// Exposure at which signal_per_roi and bg_per_roi are quoted, ms.
    pub exposure_ref_ms: f64,
    /// Photon-count threshold separating empty from occupied ROIs.
    pub threshold: f64,
    /// Mean signal photons per ROI for an atom held on a device (reference
    /// exposure). Lower than free space: modified trap and scattered light.
    pub device_signal_per_roi: f64,
    /// Probability that a device-held atom is lost during the exposure,
    /// truncating its photon collection at a uniform random time.
    pub device_loss_prob: f64,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        ImagingConfig {
            roi_size_px: 4,
            signal_per_roi: 25.0,
            bg_per_roi: 2.0,
            exposure_ms: 40.0,
            exposure_ref_ms: 40.0,
            threshold: 5.0,
            device_signal_per_roi: 9.0,
            device_loss_prob: 0.65,
        }
    }
}

/// Two-photon probe model: drive at 852 nm + 1470 nm, detect 895 nm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhotonConfig {
    /// Single-photon (852 nm) loss linewidth, MHz FWHM.
    pub gamma_852_mhz: f64,
    /// Two-photon signal linewidth, MHz FWHM.
    pub gamma_2ph_mhz: f64,
    /// Light shift of the intermediate state in the trap, MHz.
    pub light_shift_mhz: f64,
    /// Detected signal photons per exposure at two-photon resonance.
    pub signal_amplitude: f64,
    /// Scattering loss rate at single-photon resonance, events/ms.
    pub loss_rate_per_ms: f64,
    /// Probe exposure, ms.
    pub exposure_ms: f64,
}

impl Default for TwoPhotonConfig {
    fn default() -> Self {
        TwoPhotonConfig {
            gamma_852_mhz: 60.0,
            gamma_2ph_mhz: 10.0,
            light_shift_mhz: 30.0,
            signal_amplitude: 25.0,
            loss_rate_per_ms: 5.0,
            exposure_ms: 40.0,
        }
    }
}

/// Classical-dynamics loading simulation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    /// Atom temperature before the move, µK.
    pub temperature_uk: f64,
    /// Lateral approach speed toward the device, µm/ms.
    pub approach_speed_um_per_ms: f64,
    /// Tweezer focal plane height above the device surface, nm.
    pub focal_offset_nm: f64,
    /// Integrator timestep, µs. Validated against energy drift at run time.
    pub timestep_us: f64,
    /// Settling time after the approach completes, ms.
    pub settle_ms: f64,
    /// Trials per scenario.
    pub n_trials: u32,
    /// Number of standing-wave wells tracked individually (z1..zk).
    pub n_wells: u32,
    /// Base RNG seed (overridden by ATOMFORGE_SEED or --seed).
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            temperature_uk: 50.0,
            approach_speed_um_per_ms: 6.0,
            focal_offset_nm: 250.0,
            timestep_us: 0.015,
            settle_ms: 0.12,
            n_trials: 10_000,
            n_wells: 3,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub chip: ChipConfig,
    pub tweezer: TweezerConfig,
    pub rates: RateTable,
    pub imaging: ImagingConfig,
    pub twophoton: TwoPhotonConfig,
    pub mc: McConfig,
}

fn check(ok: bool, field: &'static str, reason: &'static str, value: impl ToString) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ConfigField {
            field,
            reason,
            value: value.to_string(),
        })
    }
}

fn check_prob(p: f64, field: &'static str) -> Result<()> {
    check(p.is_finite() && (0.0..=1.0).contains(&p), field, "must lie in [0, 1]", p)
}

fn check_pos(x: f64, field: &'static str) -> Result<()> {
    check(x.is_finite() && x > 0.0, field, "must be > 0", x)
}

fn check_tones(tones: &[f64], field: &'static str) -> Result<()> {
    check(!tones.is_empty(), field, "must not be empty", "[]")?;
    for w in tones.windows(2) {
        check(
            w[1] > w[0],
            field,
            "must be strictly increasing",
            format!("{} then {}", w[0], w[1]),
        )?;
    }
    for &t in tones {
        check(t.is_finite() && t > 0.0, field, "tones must be > 0", t)?;
    }
    Ok(())
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let c = &self.chip;
        check_pos(c.film_thickness_nm, "chip.film_thickness_nm")?;
        check(
            c.film_index.is_finite() && c.film_index > 1.0,
            "chip.film_index",
            "must be > 1",
            c.film_index,
        )?;
        check_pos(c.device_width_um, "chip.device_width_um")?;
        check_pos(c.device_length_um, "chip.device_length_um")?;
        check(
            c.device_pitch_um > c.device_width_um,
            "chip.device_pitch_um",
            "must exceed device_width_um",
            c.device_pitch_um,
        )?;
        check(c.n_devices >= 1, "chip.n_devices", "must be >= 1", c.n_devices)?;
        check(
            c.device_tilt_mrad.is_finite() && c.device_tilt_mrad.abs() < 50.0,
            "chip.device_tilt_mrad",
            "magnitude must be < 50",
            c.device_tilt_mrad,
        )?;
        check_pos(c.intra_device_spacing_um, "chip.intra_device_spacing_um")?;
        check_pos(c.park_offset_um, "chip.park_offset_um")?;
        check_pos(c.loading_offset_um, "chip.loading_offset_um")?;

        let t = &self.tweezer;
        check_pos(t.wavelength_nm, "tweezer.wavelength_nm")?;
        check_pos(t.waist_um, "tweezer.waist_um")?;
        check_pos(t.trap_depth_uk, "tweezer.trap_depth_uk")?;
        check(
            t.kappa_d1_mhz.is_finite() && t.kappa_d1_mhz != 0.0,
            "tweezer.kappa_d1_mhz",
            "must be finite and nonzero",
            t.kappa_d1_mhz,
        )?;
        check_tones(&t.tones_x_mhz, "tweezer.tones_x_mhz")?;
        check_tones(&t.tones_y_mhz, "tweezer.tones_y_mhz")?;
        check(
            t.tone_min_mhz > 0.0 && t.tone_max_mhz > t.tone_min_mhz,
            "tweezer.tone_max_mhz",
            "band must satisfy 0 < min < max",
            format!("[{}, {}]", t.tone_min_mhz, t.tone_max_mhz),
        )?;
        for &tone in t.tones_x_mhz.iter().chain(&t.tones_y_mhz) {
            check(
                tone >= t.tone_min_mhz && tone <= t.tone_max_mhz,
                "tweezer.tones_x_mhz",
                "tones must lie inside the AOD band",
                tone,
            )?;
        }
        check_pos(t.aod_scale_um_per_mhz, "tweezer.aod_scale_um_per_mhz")?;
        check_pos(t.max_slew_mhz_per_ms, "tweezer.max_slew_mhz_per_ms")?;
        check_pos(t.compress_ms, "tweezer.compress_ms")?;
        check_pos(t.move_speed_um_per_ms, "tweezer.move_speed_um_per_ms")?;
        check_pos(t.device_anchor_tone_mhz, "tweezer.device_anchor_tone_mhz")?;

        let r = &self.rates;
        check_prob(r.load_prob, "rates.load_prob")?;
        check_prob(r.imaging_survival, "rates.imaging_survival")?;
        check_prob(r.rearrange_survival, "rates.rearrange_survival")?;
        check_pos(r.lifetime_loading_s, "rates.lifetime_loading_s")?;
        check_pos(r.lifetime_device_s, "rates.lifetime_device_s")?;

        let i = &self.imaging;
        check(i.roi_size_px >= 1, "imaging.roi_size_px", "must be >= 1", i.roi_size_px)?;
        check(
            i.signal_per_roi.is_finite() && i.signal_per_roi >= 0.0,
            "imaging.signal_per_roi",
            "must be >= 0",
            i.signal_per_roi,
        )?;
        check(
            i.bg_per_roi.is_finite() && i.bg_per_roi >= 0.0,
            "imaging.bg_per_roi",
            "must be >= 0",
            i.bg_per_roi,
        )?;
        check_pos(i.exposure_ms, "imaging.exposure_ms")?;
        check_pos(i.exposure_ref_ms, "imaging.exposure_ref_ms")?;
        check(
            i.threshold.is_finite() && i.threshold >= 0.0,
            "imaging.threshold",
            "must be >= 0",
            i.threshold,
        )?;
        check(
            i.device_signal_per_roi.is_finite() && i.device_signal_per_roi >= 0.0,
            "imaging.device_signal_per_roi",
            "must be >= 0",
            i.device_signal_per_roi,
        )?;
        check_prob(i.device_loss_prob, "imaging.device_loss_prob")?;

        let p = &self.twophoton;
        check_pos(p.gamma_852_mhz, "twophoton.gamma_852_mhz")?;
        check_pos(p.gamma_2ph_mhz, "twophoton.gamma_2ph_mhz")?;
        check(
            p.light_shift_mhz.is_finite(),
            "twophoton.light_shift_mhz",
            "must be finite",
            p.light_shift_mhz,
        )?;
        check(
            p.signal_amplitude.is_finite() && p.signal_amplitude >= 0.0,
            "twophoton.signal_amplitude",
            "must be >= 0",
            p.signal_amplitude,
        )?;
        check(
            p.loss_rate_per_ms.is_finite() && p.loss_rate_per_ms >= 0.0,
            "twophoton.loss_rate_per_ms",
            "must be >= 0",
            p.loss_rate_per_ms,
        )?;
        check_pos(p.exposure_ms, "twophoton.exposure_ms")?;

        let m = &self.mc;
        check(
            m.temperature_uk.is_finite() && m.temperature_uk >= 0.0,
            "mc.temperature_uk",
            "must be >= 0",
            m.temperature_uk,
        )?;
        check_pos(m.approach_speed_um_per_ms, "mc.approach_speed_um_per_ms")?;
        check(
            m.focal_offset_nm.is_finite(),
            "mc.focal_offset_nm",
            "must be finite",
            m.focal_offset_nm,
        )?;
        check_pos(m.timestep_us, "mc.timestep_us")?;
        check(
            m.settle_ms.is_finite() && m.settle_ms >= 0.0,
            "mc.settle_ms",
            "must be >= 0",
            m.settle_ms,
        )?;
        check(m.n_trials >= 1, "mc.n_trials", "must be >= 1", m.n_trials)?;
        check(
            (1..=8).contains(&m.n_wells),
            "mc.n_wells",
            "must lie in 1..=8",
            m.n_wells,
        )?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Config> {
        let config: Config =
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical serialized form, used for the run-manifest hash when the
    /// configuration did not come from a file.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Load a config file, or the built-in defaults when `path` is None.
pub fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => {
            let config = Config::default();
            config.validate()?;
            Ok(config)
        }
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            Config::from_toml_str(&text)
        }
    }
}
