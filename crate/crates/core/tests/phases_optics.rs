use std::f64::consts::PI;

use proptest::prelude::*;
use tcsim::integrator::{evolve, PhaseSchedule, SimConfig};
use tcsim::model::{DensityMatrix, LossModel, SystemParams};
use tcsim::optics::{attach_intensity, polarization, transmitted_intensity};
use tcsim::phases::{
    classify, limit_cycle_report, reorganization_time, run_sweep, run_sweep_with, Axis, PhaseError, PhaseLabel,
    SweepParameter, SweepSpec,
};
use tcsim::signalkit::cross_correlation_phase;
use tcsim::{ClassifierConfig, ReadoutConfig, Trace};

fn single(label: &str, w: f64, kappa: f64, e0: f64) -> ReadoutConfig {
    ReadoutConfig {
        dipole_weights: [(label.to_string(), w)].into_iter().collect(),
        coupling_constant: kappa,
        input_field: e0,
        double_pass: false,
    }
}

fn coherence_trace(im: &[f64]) -> Trace {
    let mut t = Trace::new(0.0, 1e-7);
    t.set_channel("im_rho13", im.to_vec()).unwrap();
    t
}

fn short_run(horizon: f64) -> Trace {
    let p = SystemParams::baseline();
    evolve(
        &DensityMatrix::equal_mixed(),
        &p,
        &LossModel::baseline(p.t1, p.t2),
        &SimConfig::with_dt(4e-9, horizon),
        &PhaseSchedule::empty(),
    )
    .unwrap()
}

proptest! {
    /// I = (E₀ + κ·Im P)² rises with κ·Im P wherever the field stays positive.
    #[test]
    fn intensity_is_monotone_in_kappa_times_polarization(
        e0 in 0.1f64..10.0, kappa in 0.01f64..5.0, mut im in prop::collection::vec(-1.0f64..1.0, 2..50),
    ) {
        im.retain(|p| e0 + kappa * p >= 0.0);
        im.sort_by(|a, b| a.total_cmp(b));
        prop_assume!(im.len() >= 2);
        let i = transmitted_intensity(&coherence_trace(&im), &single("13", 1.0, kappa, e0)).unwrap();
        for w in i.windows(2) {
            prop_assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn double_pass_equals_doubled_coupling(e0 in 0.1f64..5.0, kappa in 0.01f64..2.0, im in prop::collection::vec(-1.0f64..1.0, 1..20)) {
        let t = coherence_trace(&im);
        let mut twice = single("13", 1.0, kappa, e0);
        twice.double_pass = true;
        let a = transmitted_intensity(&t, &twice).unwrap();
        let b = transmitted_intensity(&t, &single("13", 1.0, 2.0 * kappa, e0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }
}

#[test]
fn spin_coherence_readout_uses_rho12() {
    let trace = short_run(0.2e-3);
    let p = polarization(&trace, &single("12", 1.0, 1.0, 1.0)).unwrap();
    assert_eq!(p.as_slice(), trace.channel("im_rho12").unwrap());
    let mut t = trace.clone();
    attach_intensity(&mut t, &single("12", 0.5, 2.0, 1.0)).unwrap();
    let i = t.channel("intensity").unwrap();
    for (v, q) in i.iter().zip(trace.channel("im_rho12").unwrap()) {
        assert!((v - (1.0 + q).powi(2)).abs() < 1e-14);
    }
}

#[test]
fn matching_readout_sums_the_optical_coherences() {
    let trace = short_run(0.2e-3);
    let p = SystemParams::baseline();
    let pol = polarization(&trace, &ReadoutConfig::matching(&p)).unwrap();
    for (k, v) in pol.iter().enumerate() {
        let expect = p.t1 * trace.channel("im_rho13").unwrap()[k]
            + p.t2 * trace.channel("im_rho14").unwrap()[k]
            + p.t2 * trace.channel("im_rho23").unwrap()[k]
            + p.t1 * trace.channel("im_rho24").unwrap()[k];
        assert!((v - expect).abs() < 1e-15);
    }
}

fn small_spec() -> SweepSpec {
    let mut sim = SimConfig::with_dt(4e-9, 1e-3);
    sim.record_stride = 25;
    SweepSpec::new(
        vec![
            Axis {
                parameter: SweepParameter::DeltaS,
                values: vec![0.0, 12e6],
            },
            Axis {
                parameter: SweepParameter::Omega,
                values: vec![0.2e6, 0.26e6, 0.3e6],
            },
        ],
        SystemParams::baseline(),
        sim,
    )
}

#[test]
fn sweep_results_do_not_depend_on_worker_count() {
    let spec = small_spec();
    let a = run_sweep(&spec, 1).unwrap();
    let b = run_sweep(&spec, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 6);
    // Row-major: the first axis varies slowest.
    let coords: Vec<(f64, f64)> = a.iter().map(|p| (p.coordinates[0].1, p.coordinates[1].1)).collect();
    assert_eq!(coords[0], (0.0, 0.2e6));
    assert_eq!(coords[1], (0.0, 0.26e6));
    assert_eq!(coords[3], (12e6, 0.2e6));
    for p in &a {
        let params = p.params.as_ref().unwrap();
        assert_eq!(params.system.delta_s, p.coordinates[0].1);
        assert_eq!(params.system.omega, p.coordinates[1].1);
        assert!(p.error.is_none() && p.label.is_some());
    }
}

#[test]
fn sweep_hands_every_trace_to_the_callback() {
    let seen = std::sync::Mutex::new(Vec::new());
    run_sweep_with(&small_spec(), 3, |i, t| seen.lock().unwrap().push((i, t.len()))).unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
}

#[test]
fn ratio_axes_hold_the_named_coefficient() {
    let mut spec = small_spec();
    spec.axes = vec![Axis {
        parameter: SweepParameter::RatioHoldT2,
        values: vec![1.1],
    }];
    let p = spec.point_params(&spec.coordinates()[0]).unwrap();
    assert_eq!(p.system.t2, 1.2);
    assert!((p.system.t1 - 1.32).abs() < 1e-12);
    spec.axes[0].parameter = SweepParameter::RatioHoldT1;
    let p = spec.point_params(&spec.coordinates()[0]).unwrap();
    assert_eq!(p.system.t1, 1.87);
    assert!((p.system.t1 / p.system.t2 - 1.1).abs() < 1e-12);
}

#[test]
fn over_budget_sweep_is_refused() {
    let mut spec = small_spec();
    spec.budget = 5;
    assert!(matches!(run_sweep(&spec, 1), Err(PhaseError::BudgetExceeded { points: 6, budget: 5 })));
}

#[test]
fn circular_orbit_geometry() {
    let dt = 1e-6;
    let f = 5e3;
    let r = 0.01;
    let n = 20_000;
    let mut t = Trace::new(0.0, dt);
    let ph: Vec<f64> = (0..n).map(|i| 2.0 * PI * f * i as f64 * dt).collect();
    t.set_channel("rho11", ph.iter().map(|p| 0.25 + r * p.cos()).collect()).unwrap();
    t.set_channel("rho22", ph.iter().map(|p| 0.25 + r * p.sin()).collect()).unwrap();
    t.set_channel("rho33", ph.iter().map(|p| 0.25 - 0.5 * r * p.cos()).collect()).unwrap();
    let rep = limit_cycle_report(&t, ("rho11", "rho22"), ("rho11", "rho33"), (5e-3, 20e-3)).unwrap();
    assert!((rep.period - 1.0 / f).abs() < 2.0 * dt, "{}", rep.period);
    // Counter-clockwise, so the shoelace area is positive.
    assert!((rep.enclosed_area - PI * r * r).abs() < 0.01 * PI * r * r, "{}", rep.enclosed_area);
    assert!((rep.diameter - 2.0 * r).abs() < 0.01 * r);
    assert!(rep.closure_distance < 1e-3 * r);
    assert!(rep.r_squared > 0.999_999);
}

#[test]
fn flat_orbit_has_no_period() {
    let mut t = Trace::new(0.0, 1e-6);
    for c in ["rho11", "rho22", "rho33"] {
        t.set_channel(c, vec![0.25; 5000]).unwrap();
    }
    assert!(matches!(
        limit_cycle_report(&t, ("rho11", "rho22"), ("rho11", "rho33"), (0.0, 5e-3)),
        Err(PhaseError::NoPeriodDetected(_))
    ));
}

#[test]
fn reorganization_time_of_a_recovering_envelope() {
    // Amplitude collapses at the kick and recovers linearly over 2 ms.
    let dt = 1e-6;
    let f = 20e3;
    let kick = 5e-3;
    let x: Vec<f64> = (0..20_000)
        .map(|i| {
            let t = i as f64 * dt;
            let a = if t < kick { 1.0 } else { ((t - kick) / 2e-3).min(1.0) };
            a * (2.0 * PI * f * t).cos()
        })
        .collect();
    let pt = cross_correlation_phase(&x, 0.0, dt, f, 0.2e-3).unwrap();
    let settle = reorganization_time(&pt, kick, 20e-3, 0.1).unwrap();
    // Enters the ±10% band when the ramp reaches 0.9, i.e. 1.8 ms in.
    assert!((settle - 1.8e-3).abs() < 0.2e-3, "{settle}");
}

#[test]
fn baseline_intensity_is_not_stationary() {
    let p = SystemParams::baseline();
    let mut t = short_run(4e-3);
    attach_intensity(&mut t, &ReadoutConfig::matching(&p)).unwrap();
    let point = classify(&t, None, &ClassifierConfig::default()).unwrap();
    assert_ne!(point.label, Some(PhaseLabel::Stationary));
    assert!(point.instability_rms > 1e-3);
}
