//! Randomized invariant checks for the pure-math core: things that must
//! hold for every input, not just the calibrated defaults.

use atomforge::config::Config;
use atomforge::imaging::{decode_occupancy, render_frame, SiteLight};
use atomforge::montecarlo::smooth_ramp;
use atomforge::optics::{membrane_reflection, standing_wave_intensity};
use atomforge::planner::{verify_no_crossings, Axis, RearrangementPlan, Segment, ToneTrajectory};
use atomforge::rng::make_rng;
use atomforge::spectroscopy::{fit_lifetime, fit_mixture, LifetimePoint};
use proptest::prelude::*;

proptest! {
    /// A lossless dielectric film reflects and transmits all incident power.
    #[test]
    fn membrane_conserves_energy(
        thickness_nm in 0.0..3000.0f64,
        index in 1.0001..4.0f64,
        wavelength_nm in 400.0..1600.0f64,
    ) {
        let rr = membrane_reflection(thickness_nm, index, wavelength_nm).unwrap();
        prop_assert!((rr.reflectance() + rr.transmittance() - 1.0).abs() < 1e-9);
    }

    /// Plane-wave interference can never leave the [(1-|r|)², (1+|r|)²] band.
    #[test]
    fn standing_wave_stays_inside_interference_bounds(
        thickness_nm in 10.0..2000.0f64,
        index in 1.2..3.5f64,
        z_um in 0.0..5.0f64,
    ) {
        let rr = membrane_reflection(thickness_nm, index, 935.0).unwrap();
        let k = 2.0 * std::f64::consts::PI / 0.935;
        let i = standing_wave_intensity(z_um, &rr, k);
        let rho = rr.r.norm();
        prop_assert!(i >= (1.0 - rho).powi(2) - 1e-12);
        prop_assert!(i <= (1.0 + rho).powi(2) + 1e-12);
    }

    /// Chirps hit their endpoints, stay between them, respect the peak-slew
    /// bound, and move monotonically.
    #[test]
    fn chirp_segment_invariants(
        f0 in 60.0..200.0f64,
        f1 in 60.0..200.0f64,
        t_ms in 0.001..50.0f64,
        u1 in 0.0..1.0f64,
        u2 in 0.0..1.0f64,
    ) {
        let seg = Segment::chirp(Axis::X, f0, f1, t_ms);
        prop_assert_eq!(seg.frequency_at(0.0), f0);
        prop_assert_eq!(seg.frequency_at(t_ms), f1);
        let (lo, hi) = (f0.min(f1), f0.max(f1));
        for &u in &[u1, u2] {
            let f = seg.frequency_at(u * t_ms);
            prop_assert!(f >= lo - 1e-9 && f <= hi + 1e-9);
            prop_assert!(seg.slew_at(u * t_ms).abs() <= seg.peak_slew() * (1.0 + 1e-12) + 1e-12);
        }
        let (a, b) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        let fa = seg.frequency_at(a * t_ms);
        let fb = seg.frequency_at(b * t_ms);
        if f1 >= f0 {
            prop_assert!(fb >= fa - 1e-9);
        } else {
            prop_assert!(fb <= fa + 1e-9);
        }
    }

    /// The approach ramp is a normalized, symmetric, monotone sigmoid.
    #[test]
    fn smooth_ramp_is_a_symmetric_sigmoid(u1 in 0.0..1.0f64, u2 in 0.0..1.0f64) {
        for &u in &[u1, u2] {
            let s = smooth_ramp(u);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((smooth_ramp(1.0 - u) + s - 1.0).abs() < 1e-12);
        }
        let (a, b) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        prop_assert!(smooth_ramp(b) >= smooth_ramp(a));
    }

    /// Serializing a valid config and reading it back is the identity on
    /// the canonical form (the run-manifest hash relies on this).
    #[test]
    fn config_canonical_form_round_trips(
        waist_um in 0.3..5.0f64,
        trap_depth_uk in 100.0..5000.0f64,
        load_prob in 0.01..0.99f64,
        film_thickness_nm in 50.0..900.0f64,
        kappa_d1_mhz in 0.1..20.0f64,
        exposure_ms in 1.0..100.0f64,
    ) {
        let mut config = Config::default();
        config.tweezer.waist_um = waist_um;
        config.tweezer.trap_depth_uk = trap_depth_uk;
        config.tweezer.kappa_d1_mhz = kappa_d1_mhz;
        config.rates.load_prob = load_prob;
        config.chip.film_thickness_nm = film_thickness_nm;
        config.imaging.exposure_ms = exposure_ms;
        let text = config.canonical_toml();
        let reparsed = Config::from_toml_str(&text).unwrap();
        prop_assert_eq!(text, reparsed.canonical_toml());
    }

    /// Whatever the data, fitted well weights form a sub-simplex: each
    /// nonnegative, together at most 1.
    #[test]
    fn mixture_weights_live_on_the_simplex(
        survivals in proptest::collection::vec(0.0..1.0f64, 61),
    ) {
        let centers = [-60.0, -38.0, -25.0];
        let deltas: Vec<f64> = (0..61).map(|i| -95.0 + 2.0 * i as f64).collect();
        let fit = fit_mixture(&deltas, &survivals, &centers, 10.0, 0.0).unwrap();
        let mut sum = 0.0;
        for &w in &fit.weights {
            prop_assert!(w >= -1e-12);
            sum += w;
        }
        prop_assert!(sum <= 1.0 + 1e-9);
    }

    /// Raising the photon threshold can only turn sites off, never on, and
    /// never changes the measured sums.
    #[test]
    fn occupancy_decoding_is_monotone_in_threshold(
        seed in 0u64..1000,
        t1 in 0.0..40.0f64,
        dt in 0.1..40.0f64,
    ) {
        let config = Config::default();
        let sites = [
            SiteLight::Empty,
            SiteLight::FreeAtom,
            SiteLight::DeviceAtom,
            SiteLight::FreeAtom,
            SiteLight::Empty,
        ];
        let mut rng = make_rng(seed, 0);
        let frame = render_frame(&sites, &config.imaging, 40.0, &mut rng).unwrap();
        let strict = decode_occupancy(&frame, t1 + dt);
        let loose = decode_occupancy(&frame, t1);
        prop_assert_eq!(&strict.photon_sums, &loose.photon_sums);
        for (s, l) in strict.occupied.iter().zip(&loose.occupied) {
            prop_assert!(!s | l, "site occupied at high threshold but not at low");
        }
    }

    /// Two tones that swap places must be rejected by the crossing check.
    #[test]
    fn swapped_tone_targets_always_cross(
        fa in 60.0..199.0f64,
        gap in 0.5..40.0f64,
        t_ms in 0.1..10.0f64,
    ) {
        let fb = (fa + gap).min(200.0);
        let plan = RearrangementPlan {
            tones: vec![
                ToneTrajectory {
                    tone_id: "x0".into(),
                    segments: vec![Segment::chirp(Axis::X, fa, fb, t_ms)],
                },
                ToneTrajectory {
                    tone_id: "x1".into(),
                    segments: vec![Segment::chirp(Axis::X, fb, fa, t_ms)],
                },
            ],
            assignments: vec![],
            total_ms: t_ms,
        };
        prop_assert!(verify_no_crossings(&plan, Axis::X).is_err());
    }

    /// On noise-free exponential data the lifetime fit is numerically exact.
    #[test]
    fn lifetime_fit_recovers_clean_decay(
        tau_s in 0.05..50.0f64,
        amplitude in 0.5..1.0f64,
    ) {
        let points: Vec<LifetimePoint> = (0..12)
            .map(|i| {
                let t = 2.0 * tau_s * i as f64 / 11.0;
                LifetimePoint {
                    time_s: t,
                    survival: amplitude * (-t / tau_s).exp(),
                    n_atoms: 200,
                }
            })
            .collect();
        let fit = fit_lifetime(&points).unwrap();
        prop_assert!((fit.tau_s - tau_s).abs() / tau_s < 1e-6);
        prop_assert!((fit.amplitude - amplitude).abs() < 1e-6);
    }
}
