use std::f64::consts::PI;

use proptest::prelude::*;
use tcsim::signalkit::{
    autocorrelation, cross_correlation_phase, lorentz_fit, lorentzian, peak_detect, power_spectrum, welch_spectrum, wrap,
    Spectrum, WindowKind,
};

fn tone(n: usize, dt: f64, f: f64, amp: f64, phase: f64) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * PI * f * i as f64 * dt + phase).cos()).collect()
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

proptest! {
    #[test]
    fn rectangular_power_sums_to_mean_square(x in prop::collection::vec(-10.0f64..10.0, 16..300)) {
        let s = power_spectrum(&x, 1e-3, WindowKind::Rectangular).unwrap();
        let ms = mean_square(&x);
        prop_assert!((s.total_power() - ms).abs() <= 1e-10 * ms.max(1e-300));
    }

    #[test]
    fn power_scales_quadratically(x in prop::collection::vec(-1.0f64..1.0, 16..200), c in 0.01f64..100.0) {
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (a, b) = (power_spectrum(&x, 1.0, WindowKind::Hann).unwrap(), power_spectrum(&y, 1.0, WindowKind::Hann).unwrap());
        for (p, q) in a.power.iter().zip(&b.power) {
            prop_assert!((q - c * c * p).abs() <= 1e-9 * (c * c * p).abs().max(1e-12));
        }
    }

    #[test]
    fn peaks_do_not_depend_on_amplitude(
        f1 in 50.0f64..150.0, f2 in 250.0f64..400.0, a2 in 0.05f64..1.0, c in 1e-3f64..1e3,
    ) {
        let dt = 1e-3;
        let x: Vec<f64> = tone(2000, dt, f1, 1.0, 0.3).iter().zip(tone(2000, dt, f2, a2, 1.1)).map(|(a, b)| a + b).collect();
        let y: Vec<f64> = x.iter().map(|v| c * v).collect();
        let pa = peak_detect(&power_spectrum(&x, dt, WindowKind::Hann).unwrap(), 10.0, true);
        let pb = peak_detect(&power_spectrum(&y, dt, WindowKind::Hann).unwrap(), 10.0, true);
        prop_assert_eq!(pa.len(), pb.len());
        for (p, q) in pa.iter().zip(&pb) {
            prop_assert_eq!(p.bin, q.bin);
            prop_assert!((p.freq - q.freq).abs() < 1e-6);
            prop_assert!((p.prominence_db - q.prominence_db).abs() < 1e-6);
        }
    }

    #[test]
    fn welch_preserves_mean_square_of_stationary_tone(f in 20.0f64..200.0, segments in 2usize..10) {
        // Hann-weighted power of a tone is its mean square up to leakage.
        let x = tone(8000, 1e-3, f, 1.0, 0.0);
        let s = welch_spectrum(&x, 1e-3, WindowKind::Hann, segments).unwrap();
        prop_assert!((s.total_power() - 0.5).abs() < 0.02, "{}", s.total_power());
        prop_assert_eq!(s.segments, segments);
    }

    #[test]
    fn lorentz_fit_is_scale_equivariant(
        f0 in 4000.0f64..6000.0, gamma in 40.0f64..300.0, c in 1e-3f64..1e3,
    ) {
        let res = 10.0;
        // Deterministic ripple keeps the problem from being exactly noiseless.
        let power: Vec<f64> = (0..1000)
            .map(|k| lorentzian(k as f64 * res, 1.0, f0, gamma, 0.02) + 0.003 * (k as f64 * 1.7).sin())
            .collect();
        let spec = Spectrum::from_linear(power, res, WindowKind::Hann);
        let a = lorentz_fit(&spec, f0 + 5.0, 800.0).unwrap();
        let b = lorentz_fit(&spec.scaled(c), f0 + 5.0, 800.0).unwrap();
        prop_assert!((a.gamma_fwhm - b.gamma_fwhm).abs() <= 1e-4 * a.gamma_fwhm);
        prop_assert!((a.f0 - b.f0).abs() <= 1e-3);
        prop_assert!((b.amplitude / a.amplitude - c).abs() <= 1e-4 * c);
        prop_assert!((a.gamma_fwhm / gamma - 1.0).abs() < 0.1);
    }

    #[test]
    fn phase_of_a_locked_tone_is_its_offset(phi in -3.0f64..3.0, amp in 0.1f64..10.0) {
        let dt = 1e-6;
        let f = 5e3;
        let x = tone(20_000, dt, f, amp, phi);
        let t_int = 1e-3;
        let pt = cross_correlation_phase(&x, 0.0, dt, f, t_int).unwrap();
        for (p, e) in pt.inst_phase.iter().zip(pt.envelope()) {
            prop_assert!(wrap(p - phi).abs() < 1e-3);
            // |F − iQ| of a pure tone over whole periods is A·T/2.
            prop_assert!((e - amp * t_int / 2.0).abs() < 1e-3 * amp * t_int);
        }
        prop_assert!(pt.discontinuities.is_empty());
    }

    #[test]
    fn phase_follows_a_constant_input_shift(theta in -3.0f64..3.0) {
        let dt = 1e-6;
        // (f + f_r)·T is whole, so the image term integrates to zero.
        let a = cross_correlation_phase(&tone(10_000, dt, 6.25e3, 1.0, 0.0), 0.0, dt, 3.75e3, 1e-3).unwrap();
        let b = cross_correlation_phase(&tone(10_000, dt, 6.25e3, 1.0, theta), 0.0, dt, 3.75e3, 1e-3).unwrap();
        for (p, q) in a.inst_phase.iter().zip(&b.inst_phase) {
            prop_assert!(wrap(q - p - theta).abs() < 1e-6);
        }
    }

    #[test]
    fn sinusoid_envelope_respects_the_amplitude_bound(
        f in 1e3f64..20e3, fr in 1e3f64..20e3, amp in 0.1f64..5.0,
    ) {
        let dt = 1e-6;
        let t_int = 2.0 / fr.min(f) + 1e-4;
        let x = tone(20_000, dt, f, amp, 0.4);
        let pt = cross_correlation_phase(&x, 0.0, dt, fr, t_int).unwrap();
        // Main term at most A·T/2, image term at most A/(2π(f + f_r)).
        let bound = amp * t_int / 2.0 + amp / (2.0 * PI * (f + fr)) + 2.0 * amp * dt;
        for e in pt.envelope() {
            prop_assert!(e <= bound, "{} > {}", e, bound);
        }
    }

    #[test]
    fn autocorrelation_starts_at_mean_square(x in prop::collection::vec(-5.0f64..5.0, 16..200)) {
        let r = autocorrelation(&x, 1.0, 5.0).unwrap();
        prop_assert_eq!(r.len(), 6);
        prop_assert!((r[0] - mean_square(&x)).abs() <= 1e-12 * mean_square(&x).max(1.0));
    }

    #[test]
    fn wrap_lands_in_half_open_interval(a in -1e4f64..1e4) {
        let w = wrap(a);
        prop_assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
        let k = ((a - w) / (2.0 * PI)).round();
        prop_assert!((a - w - 2.0 * PI * k).abs() < 1e-9);
    }
}

#[test]
fn phase_jump_is_flagged_where_it_happens() {
    let dt = 1e-6;
    let f = 5e3;
    let n = 40_000;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let phi = if t < 20e-3 { 0.0 } else { PI };
            (2.0 * PI * f * t + phi).cos()
        })
        .collect();
    let pt = cross_correlation_phase(&x, 0.0, dt, f, 0.5e-3).unwrap();
    assert_eq!(pt.discontinuities.len(), 1, "{:?}", pt.discontinuities);
    let d = pt.discontinuities[0];
    assert!((d.time - 20e-3).abs() < 0.5e-3, "{}", d.time);
    assert!((d.jump.abs() - PI).abs() < 0.2, "{}", d.jump);
}

#[test]
fn wrong_reference_tilts_the_phase() {
    let dt = 1e-7;
    let x = tone(50_000, dt, 8.7e3, 1.0, 0.0);
    let pt = cross_correlation_phase(&x, 0.0, dt, 10.7e3, 5.0 / 19.4e3).unwrap();
    assert!((pt.carrier_offset_hz() + 2e3).abs() < 1.0, "{}", pt.carrier_offset_hz());
    let flat = pt.detrended_phase();
    assert!(flat.iter().all(|p| p.abs() < 1e-3), "{:?}", flat.iter().fold(0.0f64, |m, p| m.max(p.abs())));
}
