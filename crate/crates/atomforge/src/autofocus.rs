//! Focus scoring for chip-alignment scans: edge-preserving denoise followed
//! by a squared-Laplacian sharpness score, evaluated across a z-stack.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageF32;

/// Edge-preserving bilateral filter. Space and range kernels are Gaussian;
/// the window is truncated at 2σ_space and clipped at image borders.
/// Output is computed as center + Σw(v - center)/Σw, which keeps constant
/// regions exactly constant.
pub fn bilateral_filter(img: &ImageF32, sigma_space_px: f64, sigma_range: f64) -> ImageF32 {
    assert!(sigma_space_px > 0.0 && sigma_range > 0.0);
    let radius = (2.0 * sigma_space_px).ceil() as isize;
    let inv_2ss = 1.0 / (2.0 * sigma_space_px * sigma_space_px);
    let inv_2sr = 1.0 / (2.0 * sigma_range * sigma_range);
    let mut spatial = Vec::with_capacity(((2 * radius + 1) * (2 * radius + 1)) as usize);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            spatial.push((-((dx * dx + dy * dy) as f64) * inv_2ss).exp());
        }
    }
    let mut out = ImageF32::zeros(img.width, img.height);
    let (w, h) = (img.width as isize, img.height as isize);
    for y in 0..h {
        for x in 0..w {
            let center = img.at(x as usize, y as usize) as f64;
            let mut wsum = 0.0;
            let mut dsum = 0.0;
            for dy in -radius..=radius {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    continue;
                }
                for dx in -radius..=radius {
                    let xx = x + dx;
                    if xx < 0 || xx >= w {
                        continue;
                    }
                    let v = img.at(xx as usize, yy as usize) as f64;
                    let dv = v - center;
                    let wgt = spatial[((dy + radius) * (2 * radius + 1) + (dx + radius)) as usize]
                        * (-dv * dv * inv_2sr).exp();
                    wsum += wgt;
                    dsum += wgt * dv;
                }
            }
            out.set(x as usize, y as usize, (center + dsum / wsum) as f32);
        }
    }
    out
}

/// Sharpness: sum of squared 4-neighbor Laplacian responses over interior
/// pixels. Border pixels are excluded, so an affine intensity ramp scores
/// exactly zero.
pub fn laplacian_score(img: &ImageF32) -> f64 {
    if img.width < 3 || img.height < 3 {
        return 0.0;
    }
    let mut score = 0.0;
    for y in 1..img.height - 1 {
        for x in 1..img.width - 1 {
            let lap = 4.0 * img.at(x, y) as f64
                - img.at(x - 1, y) as f64
                - img.at(x + 1, y) as f64
                - img.at(x, y - 1) as f64
                - img.at(x, y + 1) as f64;
            score += lap * lap;
        }
    }
    score
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusSide {
    /// Approach from low z: first slice reaching the target wins.
    Below,
    /// Approach from high z.
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct FocusResult {
    pub best_z_um: f64,
    pub best_index: usize,
    pub z_um: Vec<f64>,
    pub scores: Vec<f64>,
}

/// Score a focus stack and select a slice. With `target_fraction` = 1 the
/// argmax wins; below 1, the first slice (approaching from `side`) whose
/// score reaches target_fraction × max wins, which lets a scan stop on the
/// near shoulder of the focus curve. A featureless stack (all scores equal)
/// resolves to the middle slice, index n/2.
pub fn scan_focus(
    z_um: &[f64],
    slices: &[ImageF32],
    sigma_space_px: f64,
    sigma_range: f64,
    target_fraction: f64,
    side: FocusSide,
) -> Result<FocusResult> {
    if z_um.len() != slices.len() || z_um.is_empty() {
        return Err(Error::Scenario(format!(
            "focus stack mismatch: {} z values, {} slices",
            z_um.len(),
            slices.len()
        )));
    }
    if !(0.0 < target_fraction && target_fraction <= 1.0) {
        return Err(Error::Scenario(format!(
            "target_fraction must lie in (0, 1], got {target_fraction}"
        )));
    }
    let scores: Vec<f64> = slices
        .iter()
        .map(|s| laplacian_score(&bilateral_filter(s, sigma_space_px, sigma_range)))
        .collect();
    let max = scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = scores.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let best_index = if max - min <= 0.0 {
        scores.len() / 2
    } else {
        let target = target_fraction * max;
        let found = match side {
            FocusSide::Below => scores.iter().position(|&s| s >= target),
            FocusSide::Above => scores.iter().rposition(|&s| s >= target),
        };
        found.expect("max reaches its own target")
    };
    Ok(FocusResult {
        best_z_um: z_um[best_index],
        best_index,
        z_um: z_um.to_vec(),
        scores,
    })
}

/// Separable Gaussian blur, truncated at 3σ, with border renormalization.
/// σ = 0 returns the input unchanged.
pub fn gaussian_blur(img: &ImageF32, sigma_px: f64) -> ImageF32 {
    if sigma_px <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma_px).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma_px * sigma_px)).exp())
        .collect();
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = ImageF32::zeros(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for d in -radius..=radius {
                let xx = x + d;
                if xx < 0 || xx >= w {
                    continue;
                }
                let k = kernel[(d + radius) as usize];
                acc += k * img.at(xx as usize, y as usize) as f64;
                norm += k;
            }
            tmp.set(x as usize, y as usize, (acc / norm) as f32);
        }
    }
    let mut out = ImageF32::zeros(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for d in -radius..=radius {
                let yy = y + d;
                if yy < 0 || yy >= h {
                    continue;
                }
                let k = kernel[(d + radius) as usize];
                acc += k * tmp.at(x as usize, yy as usize) as f64;
                norm += k;
            }
            out.set(x as usize, y as usize, (acc / norm) as f32);
        }
    }
    out
}

/// Synthetic chip image: bright device stripes over a noisy background.
/// Used by focus-scan simulations and tests.
pub fn synthetic_device_pattern(
    width: usize,
    height: usize,
    n_stripes: usize,
    rng: &mut impl Rng,
) -> ImageF32 {
    let mut img = ImageF32::zeros(width, height);
    let period = width.max(1) / n_stripes.max(1);
    for y in 0..height {
        for x in 0..width {
            let in_stripe = period > 0 && (x % period) < (period / 4).max(1);
            let base = if in_stripe { 90.0 } else { 12.0 };
            let noise = 4.0 * (rng.random::<f64>() - 0.5);
            img.set(x, y, (base + noise) as f32);
        }
    }
    img
}

/// Defocus model: blur grows linearly with distance from the focal plane.
pub fn make_defocus_stack(
    pattern: &ImageF32,
    z_um: &[f64],
    focus_z_um: f64,
    blur_px_per_um: f64,
) -> Vec<ImageF32> {
    z_um.iter()
        .map(|&z| gaussian_blur(pattern, blur_px_per_um * (z - focus_z_um).abs()))
        .collect()
}
