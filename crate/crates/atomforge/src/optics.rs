//! Optical model: tweezer focus, membrane reflection, and the standing-wave
//! lattice formed above the chip.
//!
//! Conventions: time dependence e^{-iωt}; the trap beam is incident from the
//! vacuum side and the membrane front surface sits at z = 0 with z measured
//! upward into vacuum. The reflected wave interferes with the incident one,
//! so the on-axis intensity is |1 + r·e^{2ikz}|² in the plane-wave limit.
//! Intensities are quoted as ratios to the free-space focus intensity.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex amplitude reflection/transmission of the suspended film.
#[derive(Debug, Clone, Copy)]
pub struct ReflectionResult {
    pub r: Complex64,
    pub t: Complex64,
}

impl ReflectionResult {
    pub fn reflectance(&self) -> f64 {
        self.r.norm_sqr()
    }

    pub fn transmittance(&self) -> f64 {
        self.t.norm_sqr()
    }

    /// A perfectly transparent interface (no membrane).
    pub fn none() -> Self {
        ReflectionResult {
            r: Complex64::new(0.0, 0.0),
            t: Complex64::new(1.0, 0.0),
        }
    }
}

/// Normal-incidence reflection off a free-standing dielectric film,
/// computed with the film's characteristic matrix.
pub fn membrane_reflection(
    thickness_nm: f64,
    film_index: f64,
    wavelength_nm: f64,
) -> Result<ReflectionResult> {
    if !(thickness_nm >= 0.0) || !(wavelength_nm > 0.0) || !(film_index >= 1.0) {
        return Err(Error::Scenario(format!(
            "membrane_reflection needs thickness >= 0, index >= 1, wavelength > 0; \
             got d={thickness_nm} nm, n={film_index}, lambda={wavelength_nm} nm"
        )));
    }
    let beta = 2.0 * std::f64::consts::PI * film_index * thickness_nm / wavelength_nm;
    let (sin_b, cos_b) = beta.sin_cos();
    // Characteristic matrix [[cos β, -i sin β / n], [-i n sin β, cos β]];
    // the -i sign keeps the reflected phase consistent with e^{-iωt}.
    let m00 = Complex64::new(cos_b, 0.0);
    let m01 = Complex64::new(0.0, -sin_b / film_index);
    let m10 = Complex64::new(0.0, -film_index * sin_b);
    let m11 = Complex64::new(cos_b, 0.0);
    // Vacuum on both sides.
    let denom = m00 + m01 + m10 + m11;
    let r = (m00 + m01 - m10 - m11) / denom;
    let t = Complex64::new(2.0, 0.0) / denom;
    Ok(ReflectionResult { r, t })
}

/// Relative intensity of a focused Gaussian beam: 1 at the focus, radial
/// offset `r_um`, axial offset `z_um` from the focal plane.
pub fn gaussian_intensity(r_um: f64, z_um: f64, waist_um: f64, wavelength_nm: f64) -> f64 {
    let zr = rayleigh_range_um(waist_um, wavelength_nm);
    let w_sq_rel = 1.0 + (z_um / zr).powi(2);
    (1.0 / w_sq_rel) * (-2.0 * r_um * r_um / (waist_um * waist_um * w_sq_rel)).exp()
}

pub fn rayleigh_range_um(waist_um: f64, wavelength_nm: f64) -> f64 {
    std::f64::consts::PI * waist_um * waist_um / (wavelength_nm * 1e-3)
}

/// On-axis standing-wave intensity ratio at height `z_um` above the surface
/// for a plane incident wave of unit intensity.
pub fn standing_wave_intensity(z_um: f64, reflection: &ReflectionResult, k_um: f64) -> f64 {
    let phase = Complex64::new(0.0, 2.0 * k_um * z_um).exp();
    (Complex64::new(1.0, 0.0) + reflection.r * phase).norm_sqr()
}

/// The on-axis trap field above the membrane: incident focused beam plus its
/// reflection. The reflected beam diverges from the image focus at -z_f.
#[derive(Debug, Clone, Copy)]
pub struct TrapField {
    /// |r| of the membrane.
    pub rho_max: f64,
    /// arg r of the membrane, radians.
    pub phase: f64,
    /// Vacuum wavenumber, 1/µm.
    pub k_um: f64,
    /// Focal plane height above the surface, µm.
    pub focus_um: f64,
    /// Rayleigh range, µm.
    pub rayleigh_um: f64,
}

impl TrapField {
    pub fn new(reflection: &ReflectionResult, wavelength_nm: f64, waist_um: f64, focus_um: f64) -> Self {
        TrapField {
            rho_max: reflection.r.norm(),
            phase: reflection.r.arg(),
            k_um: 2.0 * std::f64::consts::PI / (wavelength_nm * 1e-3),
            focus_um,
            rayleigh_um: rayleigh_range_um(waist_um, wavelength_nm),
        }
    }

    /// Intensity ratio at height z with the reflected amplitude scaled by
    /// `ramp` in [0, 1] (0 = free beam, 1 = full membrane reflection).
    pub fn intensity(&self, z_um: f64, ramp: f64) -> f64 {
        let rho = self.rho_max * ramp;
        let env = self.envelope(z_um - self.focus_um);
        let env_im = self.envelope(z_um + self.focus_um);
        let cross = 2.0 * rho * (env * env_im).sqrt();
        env + rho * rho * env_im + cross * (2.0 * self.k_um * z_um + self.phase).cos()
    }

    /// d(intensity)/dz, analytic; the Monte Carlo force kernel.
    pub fn d_intensity_dz(&self, z_um: f64, ramp: f64) -> f64 {
        let rho = self.rho_max * ramp;
        let env = self.envelope(z_um - self.focus_um);
        let env_im = self.envelope(z_um + self.focus_um);
        let d_env = self.d_envelope(z_um - self.focus_um);
        let d_env_im = self.d_envelope(z_um + self.focus_um);
        let geo = (env * env_im).sqrt();
        let d_geo = if geo > 0.0 {
            0.5 * (d_env * env_im + env * d_env_im) / geo
        } else {
            0.0
        };
        let theta = 2.0 * self.k_um * z_um + self.phase;
        let (sin_t, cos_t) = theta.sin_cos();
        d_env + rho * rho * d_env_im + 2.0 * rho * (d_geo * cos_t - geo * 2.0 * self.k_um * sin_t)
    }

    fn envelope(&self, dz_um: f64) -> f64 {
        1.0 / (1.0 + (dz_um / self.rayleigh_um).powi(2))
    }

    fn d_envelope(&self, dz_um: f64) -> f64 {
        let e = self.envelope(dz_um);
        -2.0 * dz_um / (self.rayleigh_um * self.rayleigh_um) * e * e
    }
}

/// One refined intensity maximum of the lattice.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LatticeMaximum {
    pub z_um: f64,
    pub intensity_ratio: f64,
    pub stark_shift_mhz: f64,
}

/// Sampled standing-wave profile above the surface plus its first maxima.
#[derive(Debug, Clone)]
pub struct LatticeProfile {
    pub z_um: Vec<f64>,
    pub intensity_ratio: Vec<f64>,
    pub maxima: Vec<LatticeMaximum>,
}

/// Minimum number of resolved maxima for a usable lattice profile; the
/// loading analysis tracks wells z1..z3.
pub const MIN_MAXIMA: usize = 3;

/// Sample the standing-wave intensity on [0, z_max] and locate its maxima.
/// `kappa_d1_mhz` converts intensity ratio to a D1 shift for each maximum.
pub fn lattice_profile(
    reflection: &ReflectionResult,
    wavelength_nm: f64,
    waist_um: f64,
    focal_offset_um: f64,
    kappa_d1_mhz: f64,
    z_max_um: f64,
    n_points: usize,
) -> Result<LatticeProfile> {
    if n_points < 16 || !(z_max_um > 0.0) {
        return Err(Error::Scenario(format!(
            "lattice_profile needs n_points >= 16 and z_max > 0; got {n_points}, {z_max_um}"
        )));
    }
    let field = TrapField::new(reflection, wavelength_nm, waist_um, focal_offset_um);
    let dz = z_max_um / (n_points - 1) as f64;
    let z_um: Vec<f64> = (0..n_points).map(|i| i as f64 * dz).collect();
    let intensity_ratio: Vec<f64> = z_um.iter().map(|&z| field.intensity(z, 1.0)).collect();

    let mut maxima = Vec::new();
    for i in 1..n_points - 1 {
        if intensity_ratio[i] > intensity_ratio[i - 1]
            && intensity_ratio[i] >= intensity_ratio[i + 1]
        {
            let (z, val) = refine_maximum(
                z_um[i],
                dz,
                intensity_ratio[i - 1],
                intensity_ratio[i],
                intensity_ratio[i + 1],
                |z| field.intensity(z, 1.0),
            );
            maxima.push(LatticeMaximum {
                z_um: z,
                intensity_ratio: val,
                stark_shift_mhz: stark_shift_d1(val, kappa_d1_mhz),
            });
        }
    }
    if maxima.len() < MIN_MAXIMA {
        return Err(Error::TooFewMaxima {
            found: maxima.len(),
            need: MIN_MAXIMA,
        });
    }
    Ok(LatticeProfile {
        z_um,
        intensity_ratio,
        maxima,
    })
}

/// Parabolic refinement of a grid maximum, followed by one golden-section
/// polish on the continuous profile to push grid error well below 1 nm.
fn refine_maximum(
    z_mid: f64,
    dz: f64,
    y_lo: f64,
    y_mid: f64,
    y_hi: f64,
    f: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let denom = y_lo - 2.0 * y_mid + y_hi;
    let offset = if denom.abs() > 0.0 {
        0.5 * (y_lo - y_hi) / denom * dz
    } else {
        0.0
    };
    let mut a = z_mid + offset - 0.6 * dz;
    let mut b = z_mid + offset + 0.6 * dz;
    // Golden-section: 40 iterations shrink the bracket by ~1e-8.
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..40 {
        if f1 < f2 {
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
    let z = 0.5 * (a + b);
    (z, f(z))
}

/// D1 transition light shift for a given local intensity ratio. Linear in
/// intensity; `kappa_mhz` is the calibrated shift per unit ratio.
pub fn stark_shift_d1(intensity_ratio: f64, kappa_mhz: f64) -> f64 {
    kappa_mhz * intensity_ratio
}

/// D2 shift at the magic trap wavelength: zero by construction.
pub fn magic_d2_shift(_intensity_ratio: f64) -> f64 {
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent closed-form oracle: Airy summation for a free-standing
    /// film, r = r12(1 - e^{2iβ})/(1 - r12² e^{2iβ}), r12 = (1-n)/(1+n).
    fn airy_reflection(thickness_nm: f64, n: f64, wavelength_nm: f64) -> Complex64 {
        let r12 = (1.0 - n) / (1.0 + n);
        let beta = 2.0 * std::f64::consts::PI * n * thickness_nm / wavelength_nm;
        let e2ib = Complex64::new(0.0, 2.0 * beta).exp();
        r12 * (Complex64::new(1.0, 0.0) - e2ib)
            / (Complex64::new(1.0, 0.0) - r12 * r12 * e2ib)
    }

    #[test]
    fn matches_airy_oracle_for_nominal_film() {
        let got = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let want = airy_reflection(330.0, 2.0, 935.0);
        assert_relative_eq!(got.r.re, want.re, epsilon = 1e-12);
        assert_relative_eq!(got.r.im, want.im, epsilon = 1e-12);
        // Frozen values from the oracle evaluated independently.
        assert_relative_eq!(got.r.norm(), 0.5850358226605763, epsilon = 1e-10);
        assert_relative_eq!(got.r.arg(), 2.9177862178146223, epsilon = 1e-10);
    }

    #[test]
    fn matches_airy_oracle_across_thickness() {
        for i in 0..60 {
            let d = 10.0 + 12.0 * i as f64;
            let got = membrane_reflection(d, 2.0, 935.0).unwrap().r;
            let want = airy_reflection(d, 2.0, 935.0);
            assert!((got - want).norm() < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn quarter_wave_film_hits_closed_form() {
        // d = λ/(4n): |r| = (n²-1)/(n²+1), phase π.
        let d = 935.0 / (4.0 * 2.0);
        let got = membrane_reflection(d, 2.0, 935.0).unwrap();
        assert_relative_eq!(got.r.re, -0.6, epsilon = 1e-12);
        assert!(got.r.im.abs() < 1e-12);
        assert_relative_eq!(got.transmittance(), 0.64, epsilon = 1e-12);
    }

    #[test]
    fn zero_thickness_is_transparent() {
        let got = membrane_reflection(0.0, 2.0, 935.0).unwrap();
        assert!(got.r.norm() < 1e-15);
        assert_relative_eq!(got.t.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn energy_is_conserved() {
        for d in [50.0, 116.875, 330.0, 340.0, 700.0] {
            for n in [1.5, 2.0, 3.5] {
                let rr = membrane_reflection(d, n, 935.0).unwrap();
                assert_relative_eq!(rr.reflectance() + rr.transmittance(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn standing_wave_has_half_wavelength_period() {
        let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let k = 2.0 * std::f64::consts::PI / 0.935;
        let a = standing_wave_intensity(0.40, &rr, k);
        let b = standing_wave_intensity(0.40 + 0.935 / 2.0, &rr, k);
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn first_maximum_position_and_height_plane_wave() {
        // Oracle: maxima of |1 + r e^{2ikz}|² sit at 2kz + arg r = 2πm,
        // first one above the surface at z1 = (2π - arg r)/(2k) ≈ 250.4 nm,
        // height (1+|r|)².
        let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let k = 2.0 * std::f64::consts::PI / 0.935;
        let z1_oracle = (2.0 * std::f64::consts::PI - rr.r.arg()) / (2.0 * k);
        assert_relative_eq!(z1_oracle, 0.2504, epsilon = 5e-4);
        let peak = standing_wave_intensity(z1_oracle, &rr, k);
        assert_relative_eq!(peak, (1.0 + rr.r.norm()).powi(2), epsilon = 1e-12);
        // And it's within the measured first-maximum band.
        assert!(z1_oracle > 0.20 && z1_oracle < 0.35);
    }

    #[test]
    fn lattice_profile_finds_ordered_maxima() {
        let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let lp = lattice_profile(&rr, 935.0, 1.1, 0.25, 1.0, 2.0, 4001).unwrap();
        assert!(lp.maxima.len() >= 3);
        let z1 = lp.maxima[0].z_um;
        let z2 = lp.maxima[1].z_um;
        // Spacing between adjacent maxima is λ/2 up to envelope pull.
        assert_relative_eq!(z2 - z1, 0.4675, epsilon = 5e-3);
        // With the focus on z1, the first maximum is the deepest.
        assert!(lp.maxima[0].intensity_ratio >= lp.maxima[1].intensity_ratio);
        assert!(lp.maxima[1].intensity_ratio >= lp.maxima[2].intensity_ratio);
    }

    #[test]
    fn lattice_profile_without_membrane_errors() {
        let rr = ReflectionResult::none();
        let err = lattice_profile(&rr, 935.0, 1.1, 0.25, 1.0, 2.0, 4001).unwrap_err();
        match err {
            Error::TooFewMaxima { found, need } => {
                assert!(found < need);
            }
            other => panic!("expected TooFewMaxima, got {other:?}"),
        }
    }

    #[test]
    fn trap_field_gradient_matches_numeric_derivative() {
        let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let field = TrapField::new(&rr, 935.0, 1.1, 0.25);
        for ramp in [0.0, 0.3, 1.0] {
            for z in [0.05, 0.25, 0.51, 1.3, 2.7] {
                let h = 1e-6;
                let numeric = (field.intensity(z + h, ramp) - field.intensity(z - h, ramp))
                    / (2.0 * h);
                let analytic = field.d_intensity_dz(z, ramp);
                assert_relative_eq!(analytic, numeric, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn trap_field_ramp_zero_is_free_beam() {
        let rr = membrane_reflection(330.0, 2.0, 935.0).unwrap();
        let field = TrapField::new(&rr, 935.0, 1.1, 0.25);
        let z = 0.7;
        let free = gaussian_intensity(0.0, z - 0.25, 1.1, 935.0);
        assert_relative_eq!(field.intensity(z, 0.0), free, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_intensity_basics() {
        assert_relative_eq!(gaussian_intensity(0.0, 0.0, 1.1, 935.0), 1.0);
        // 1/e² at one waist radius.
        assert_relative_eq!(
            gaussian_intensity(1.1, 0.0, 1.1, 935.0),
            (-2.0f64).exp(),
            epsilon = 1e-12
        );
        // Half the peak one Rayleigh range away.
        let zr = rayleigh_range_um(1.1, 935.0);
        assert_relative_eq!(gaussian_intensity(0.0, zr, 1.1, 935.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(zr, 4.0657, epsilon = 1e-3);
    }

    #[test]
    fn stark_shift_is_linear_and_magic_is_zero() {
        assert_relative_eq!(stark_shift_d1(2.5, 1.0), 2.5);
        assert_relative_eq!(stark_shift_d1(2.5, -14.0), -35.0);
        assert_eq!(magic_d2_shift(2.5), 0.0);
    }
}
