//! Frame post-processing: averaging, background subtraction, and geometric
//! overlay of the known device grid onto an averaged image.

use serde::Serialize;

use crate::config::ChipConfig;
use crate::error::{Error, Result};
use crate::image::{ImageF32, ImageU16};

/// Pixelwise mean of identically-sized frames. Sums are accumulated in u64
/// before one division, so the result is exact and independent of frame
/// order.
pub fn average_frames(frames: &[ImageU16]) -> Result<ImageF32> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Model("average_frames: no frames".into()))?;
    for (i, f) in frames.iter().enumerate() {
        if f.width != first.width || f.height != first.height {
            return Err(Error::Model(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.width, f.height, first.width, first.height
            )));
        }
    }
    let mut sums = vec![0u64; first.data.len()];
    for f in frames {
        for (acc, &v) in sums.iter_mut().zip(&f.data) {
            *acc += v as u64;
        }
    }
    let n = frames.len() as f64;
    let mut out = ImageF32::zeros(first.width, first.height);
    for (o, &s) in out.data.iter_mut().zip(&sums) {
        *o = (s as f64 / n) as f32;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubtractResult {
    #[serde(skip)]
    pub image: ImageF32,
    /// Constant added after subtraction to keep every pixel nonnegative:
    /// max(0, -min(img - bg)).
    pub offset: f64,
}

/// Subtract a background image, then shift so no pixel is negative.
pub fn subtract_background(img: &ImageF32, bg: &ImageF32) -> Result<SubtractResult> {
    if img.width != bg.width || img.height != bg.height {
        return Err(Error::Model(format!(
            "background is {}x{}, image is {}x{}",
            bg.width, bg.height, img.width, img.height
        )));
    }
    let mut diff: Vec<f64> = img
        .data
        .iter()
        .zip(&bg.data)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let min = diff.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let offset = (-min).max(0.0);
    for d in &mut diff {
        *d += offset;
    }
    let mut out = ImageF32::zeros(img.width, img.height);
    for (o, &d) in out.data.iter_mut().zip(&diff) {
        *o = d as f32;
    }
    Ok(SubtractResult { image: out, offset })
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlayResult {
    #[serde(skip)]
    pub image: ImageF32,
    /// Fitted image scale, pixels per µm.
    pub scale_px_per_um: f64,
    /// Fitted pixel column of device 0.
    pub origin_px: f64,
    /// Device-center columns marked in the overlay, px.
    pub device_columns_px: Vec<f64>,
    pub n_peaks_used: usize,
}

/// Find bright device columns in an averaged image, fit the pixel scale
/// against the known device pitch, and mark every expected device center.
/// Peaks are matched to consecutive devices; at least two are required.
pub fn overlay_devices(img: &ImageF32, chip: &ChipConfig) -> Result<OverlayResult> {
    let profile: Vec<f64> = (0..img.width)
        .map(|x| (0..img.height).map(|y| img.at(x, y) as f64).sum())
        .collect();
    let max = profile.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = profile.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let cut = min + 0.5 * (max - min);
    let mut peaks = Vec::new();
    for x in 1..img.width - 1 {
        if profile[x] >= cut && profile[x] > profile[x - 1] && profile[x] >= profile[x + 1] {
            // Parabolic sub-pixel refinement.
            let denom = profile[x - 1] - 2.0 * profile[x] + profile[x + 1];
            let frac = if denom.abs() > 0.0 {
                0.5 * (profile[x - 1] - profile[x + 1]) / denom
            } else {
                0.0
            };
            peaks.push(x as f64 + frac.clamp(-0.5, 0.5));
        }
    }
    if peaks.len() < 2 {
        return Err(Error::Model(format!(
            "overlay needs >= 2 device peaks, found {}",
            peaks.len()
        )));
    }
    // Least-squares line peak_px ≈ origin + scale · (pitch · index).
    let n = peaks.len() as f64;
    let xs: Vec<f64> = (0..peaks.len())
        .map(|i| i as f64 * chip.device_pitch_um)
        .collect();
    let sx: f64 = xs.iter().sum();
    let sy: f64 = peaks.iter().sum();
    let sxx: f64 = xs.iter().map(|v| v * v).sum();
    let sxy: f64 = xs.iter().zip(&peaks).map(|(a, b)| a * b).sum();
    let det = n * sxx - sx * sx;
    if det.abs() < 1e-12 {
        return Err(Error::Model("degenerate peak layout".into()));
    }
    let scale = (n * sxy - sx * sy) / det;
    let origin = (sxx * sy - sx * sxy) / det;
    if !(scale > 0.0) {
        return Err(Error::Model(format!("non-positive fitted scale {scale}")));
    }

    let mut overlay = img.clone();
    let mark = (max / img.height as f64 * 1.5) as f32;
    let mut device_columns = Vec::new();
    for d in 0..chip.n_devices {
        let col = origin + scale * chip.device_center_x_um(d);
        let c = col.round();
        if c < 0.0 || c as usize >= img.width {
            continue;
        }
        device_columns.push(col);
        let c = c as usize;
        for y in 0..overlay.height {
            if y % 2 == 0 {
                overlay.set(c, y, mark);
            }
        }
    }
    Ok(OverlayResult {
        image: overlay,
        scale_px_per_um: scale,
        origin_px: origin,
        device_columns_px: device_columns,
        n_peaks_used: peaks.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;
    use rand::Rng;

    #[test]
    fn average_is_exact_and_order_free() {
        let mut rng = make_rng(31, 0);
        let mut frames = Vec::new();
        for _ in 0..7 {
            let mut f = ImageU16::zeros(9, 5);
            for v in &mut f.data {
                *v = (rng.random::<u16>()) % 1000;
            }
            frames.push(f);
        }
        let a = average_frames(&frames).unwrap();
        let mut shuffled = frames.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let b = average_frames(&shuffled).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        // Spot-check one pixel against a hand sum.
        let manual: u64 = frames.iter().map(|f| f.data[11] as u64).sum();
        assert_eq!(a.data[11], (manual as f64 / 7.0) as f32);
    }

    #[test]
    fn average_rejects_mixed_sizes() {
        let frames = vec![ImageU16::zeros(4, 4), ImageU16::zeros(5, 4)];
        assert!(average_frames(&frames).is_err());
    }

    #[test]
    fn subtraction_is_nonnegative_with_recorded_offset() {
        let mut img = ImageF32::zeros(4, 1);
        img.data.copy_from_slice(&[1.0, 5.0, 2.0, 0.5]);
        let mut bg = ImageF32::zeros(4, 1);
        bg.data.copy_from_slice(&[2.0, 1.0, 1.0, 0.5]);
        let res = subtract_background(&img, &bg).unwrap();
        assert_eq!(res.offset, 1.0);
        assert_eq!(res.image.data, vec![0.0, 5.0, 2.0, 1.0]);
    }

    #[test]
    fn subtraction_with_no_negatives_keeps_zero_offset() {
        let mut img = ImageF32::zeros(3, 1);
        img.data.copy_from_slice(&[2.0, 3.0, 4.0]);
        let bg = ImageF32::zeros(3, 1);
        let res = subtract_background(&img, &bg).unwrap();
        assert_eq!(res.offset, 0.0);
        assert_eq!(res.image.data, img.data);
    }

    #[test]
    fn overlay_recovers_scale_from_synthetic_stripes() {
        // Devices at pitch 11 µm, image scale 2.0 px/µm, origin at 8 px.
        let chip = ChipConfig {
            n_devices: 4,
            ..ChipConfig::default()
        };
        let scale = 2.0;
        let origin = 8.0;
        let mut img = ImageF32::zeros(110, 20);
        for d in 0..4u32 {
            let col = (origin + scale * chip.device_center_x_um(d)).round() as usize;
            for y in 0..20 {
                img.set(col, y, 50.0);
                img.set(col - 1, y, 20.0);
                img.set(col + 1, y, 20.0);
            }
        }
        let res = overlay_devices(&img, &chip).unwrap();
        assert!((res.scale_px_per_um - scale).abs() < 0.02, "{res:?}");
        assert!((res.origin_px - origin).abs() < 0.6, "{res:?}");
        assert_eq!(res.n_peaks_used, 4);
        assert_eq!(res.device_columns_px.len(), 4);
    }

    #[test]
    fn overlay_needs_two_peaks() {
        let mut img = ImageF32::zeros(40, 10);
        for y in 0..10 {
            img.set(20, y, 10.0);
        }
        assert!(overlay_devices(&img, &ChipConfig::default()).is_err());
    }
}
