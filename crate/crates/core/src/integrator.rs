//! Fixed-step RK4 propagation of the mean-field master equation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat4::{Mat4, C64, DIM};
use crate::model::{
    kernel_state, liouvillian_matrix, DensityMatrix, LossModel, MasterEquation, ModelError,
    SystemParams,
};
use crate::trace::{coherence_label, Diagnostics, Trace, COHERENCES, POPULATION_CHANNELS};

/// Largest allowed dt·max|H| per step, in radians.
pub const STABILITY_LIMIT: f64 = 0.5;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step too large: dt·max|H| = {phase:.3} rad exceeds {STABILITY_LIMIT}")]
    StabilityGuard { phase: f64 },
    #[error("state became non-finite at step {step} (t = {time:e} s)")]
    NonFiniteState {
        step: u64,
        time: f64,
        partial: Box<Trace>,
    },
    #[error("self-consistent stationary state did not converge after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64 },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseEvent {
    pub time: f64,
    pub phase_jump: f64,
}

/// Drive-phase jumps, sorted by strictly increasing time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PhaseEvent>", into = "Vec<PhaseEvent>")]
pub struct PhaseSchedule {
    events: Vec<PhaseEvent>,
}

impl TryFrom<Vec<PhaseEvent>> for PhaseSchedule {
    type Error = IntegrateError;
    fn try_from(events: Vec<PhaseEvent>) -> Result<Self, IntegrateError> {
        PhaseSchedule::new(events)
    }
}

impl From<PhaseSchedule> for Vec<PhaseEvent> {
    fn from(s: PhaseSchedule) -> Self {
        s.events
    }
}

impl PhaseSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(events: Vec<PhaseEvent>) -> Result<Self, IntegrateError> {
        for e in &events {
            if !e.time.is_finite() || !e.phase_jump.is_finite() || e.time < 0.0 {
                return Err(IntegrateError::InvalidConfig(format!(
                    "phase event at t = {} is not a finite non-negative time",
                    e.time
                )));
            }
        }
        if events.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(IntegrateError::InvalidConfig(
                "phase event times must be strictly increasing".into(),
            ));
        }
        Ok(PhaseSchedule { events })
    }

    /// Jumps of π at each of the given times.
    pub fn pi_kicks(times: &[f64]) -> Result<Self, IntegrateError> {
        Self::new(
            times
                .iter()
                .map(|&time| PhaseEvent {
                    time,
                    phase_jump: std::f64::consts::PI,
                })
                .collect(),
        )
    }

    pub fn events(&self) -> &[PhaseEvent] {
        &self.events
    }

    /// Sum of all jumps with event time ≤ t.
    pub fn phase_at(&self, t: f64) -> f64 {
        self.events
            .iter()
            .take_while(|e| e.time <= t)
            .map(|e| e.phase_jump)
            .sum()
    }

    pub fn check_horizon(&self, horizon: f64) -> Result<(), IntegrateError> {
        match self.events.last() {
            Some(e) if e.time > horizon => Err(IntegrateError::InvalidConfig(format!(
                "phase event at {} s lies beyond the horizon {} s",
                e.time, horizon
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialState {
    /// ρ_nn = 1/4 for all levels.
    #[default]
    EqualMixed,
    /// ρ₁₁ = ρ₂₂ = 1/2.
    GroundMixed,
    /// Explicit matrix given as real and imaginary parts.
    Explicit { re: [[f64; 4]; 4], im: [[f64; 4]; 4] },
}

impl InitialState {
    pub fn density(&self) -> Result<DensityMatrix, ModelError> {
        let rho = match self {
            InitialState::EqualMixed => DensityMatrix::equal_mixed(),
            InitialState::GroundMixed => DensityMatrix::ground_mixed(),
            InitialState::Explicit { re, im } => {
                let mut m = Mat4::zeros();
                for i in 0..DIM {
                    for j in 0..DIM {
                        m[(i, j)] = C64::new(re[i][j], im[i][j]);
                    }
                }
                DensityMatrix(m)
            }
        };
        rho.validate()?;
        Ok(rho)
    }
}

/// Full-rate recording window, at most [`FastWindow::MAX_DURATION`] long.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FastWindow {
    pub start: f64,
    pub duration: f64,
}

impl FastWindow {
    pub const MAX_DURATION: f64 = 1e-3;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub record_stride: u64,
    #[serde(default)]
    pub initial_state: InitialState,
    #[serde(default = "default_renorm_interval")]
    pub renorm_interval: u64,
    #[serde(default)]
    pub fast_window: Option<FastWindow>,
}

fn default_renorm_interval() -> u64 {
    10_000
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-9,
            horizon: 50e-3,
            record_stride: 100,
            initial_state: InitialState::EqualMixed,
            renorm_interval: default_renorm_interval(),
            fast_window: None,
        }
    }
}

impl SimConfig {
    /// Config with the stride chosen for a 10 MS/s record.
    pub fn with_dt(dt: f64, horizon: f64) -> Self {
        SimConfig {
            dt,
            horizon,
            record_stride: ((1e-7 / dt).round() as u64).max(1),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let bad = |m: &str| Err(IntegrateError::InvalidConfig(m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be > 0");
        }
        if !(self.horizon >= self.dt) || !self.horizon.is_finite() {
            return bad("horizon must be >= dt");
        }
        if self.record_stride < 1 {
            return bad("record_stride must be >= 1");
        }
        if self.renorm_interval < 1 {
            return bad("renorm_interval must be >= 1");
        }
        if let Some(w) = self.fast_window {
            if !(w.duration > 0.0 && w.duration <= FastWindow::MAX_DURATION) {
                return bad("fast_window duration must be in (0, 1 ms]");
            }
            if !(w.start >= 0.0 && w.start + w.duration <= self.horizon) {
                return bad("fast_window must lie within the horizon");
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    pub fn sample_interval(&self) -> f64 {
        self.dt * self.record_stride as f64
    }
}

/// One classical RK4 step. H is rebuilt from each stage's state estimate.
pub fn rk4_step(
    rho: &DensityMatrix,
    dt: f64,
    params: &SystemParams,
    loss: &LossModel,
    phase: f64,
) -> Result<DensityMatrix, IntegrateError> {
    let eq = MasterEquation::new(params, loss);
    guard(&eq, rho, dt)?;
    Ok(DensityMatrix(step(&eq, &rho.0, dt, phase)))
}

fn guard(eq: &MasterEquation, rho: &DensityMatrix, dt: f64) -> Result<(), IntegrateError> {
    let phase = dt * eq.max_hamiltonian_element(rho);
    if phase < STABILITY_LIMIT {
        Ok(())
    } else {
        Err(IntegrateError::StabilityGuard { phase })
    }
}

#[inline]
fn step(eq: &MasterEquation, rho: &Mat4, dt: f64, phase: f64) -> Mat4 {
    let k1 = eq.rhs(rho, phase);
    let k2 = eq.rhs(&(*rho + k1 * (0.5 * dt)), phase);
    let k3 = eq.rhs(&(*rho + k2 * (0.5 * dt)), phase);
    let k4 = eq.rhs(&(*rho + k3 * dt), phase);
    *rho + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

/// Step index of the first boundary at or after `time`.
fn boundary_index(time: f64, dt: f64) -> u64 {
    let s = time / dt;
    let r = s.round();
    if (s - r).abs() < 1e-9 {
        r as u64
    } else {
        s.ceil() as u64
    }
}

struct Recorder {
    trace: Trace,
    pops: [Vec<f64>; DIM],
    re: [Vec<f64>; COHERENCES.len()],
    im: [Vec<f64>; COHERENCES.len()],
}

impl Recorder {
    fn new(t0: f64, dt_sample: f64, capacity: usize) -> Self {
        let v = || Vec::with_capacity(capacity);
        Recorder {
            trace: Trace::new(t0, dt_sample),
            pops: std::array::from_fn(|_| v()),
            re: std::array::from_fn(|_| v()),
            im: std::array::from_fn(|_| v()),
        }
    }

    fn push(&mut self, rho: &Mat4) {
        for i in 0..DIM {
            self.pops[i].push(rho.0[i][i].re);
        }
        for (k, &(r, c)) in COHERENCES.iter().enumerate() {
            self.re[k].push(rho.0[r][c].re);
            self.im[k].push(rho.0[r][c].im);
        }
        let d = &mut self.trace.diagnostics;
        let tr = rho.trace();
        d.max_trace_error = d.max_trace_error.max((tr.re - 1.0).abs().max(tr.im.abs()));
        for i in 0..DIM {
            d.min_population = d.min_population.min(rho.0[i][i].re);
        }
    }

    fn finish(self, diagnostics: Diagnostics) -> Trace {
        let Recorder {
            mut trace,
            pops,
            re,
            im,
        } = self;
        let recorded = trace.diagnostics;
        for (name, data) in POPULATION_CHANNELS.iter().zip(pops) {
            trace.channels.push(crate::trace::Channel {
                name: name.to_string(),
                data,
            });
        }
        for ((&(r, c), re), im) in COHERENCES.iter().zip(re).zip(im) {
            let label = coherence_label(r, c);
            trace.channels.push(crate::trace::Channel {
                name: format!("re_rho{label}"),
                data: re,
            });
            trace.channels.push(crate::trace::Channel {
                name: format!("im_rho{label}"),
                data: im,
            });
        }
        trace.diagnostics = Diagnostics {
            max_trace_error: recorded.max_trace_error,
            min_population: recorded.min_population,
            ..diagnostics
        };
        trace
    }
}

/// Output of [`evolve_with_fast_window`].
#[derive(Clone, Debug)]
pub struct Evolution {
    pub trace: Trace,
    pub fast: Option<Trace>,
    pub final_state: DensityMatrix,
}

/// Propagates ρ₀ from t = 0 to the horizon and records the decimated trace.
pub fn evolve(
    rho0: &DensityMatrix,
    params: &SystemParams,
    loss: &LossModel,
    sim: &SimConfig,
    schedule: &PhaseSchedule,
) -> Result<Trace, IntegrateError> {
    evolve_with_fast_window(rho0, params, loss, sim, schedule).map(|e| e.trace)
}

/// Like [`evolve`], additionally recording every step inside
/// `sim.fast_window` when one is configured.
pub fn evolve_with_fast_window(
    rho0: &DensityMatrix,
    params: &SystemParams,
    loss: &LossModel,
    sim: &SimConfig,
    schedule: &PhaseSchedule,
) -> Result<Evolution, IntegrateError> {
    params.validate()?;
    loss.validate()?;
    sim.validate()?;
    schedule.check_horizon(sim.horizon)?;
    rho0.validate()?;

    let eq = MasterEquation::new(params, loss);
    guard(&eq, rho0, sim.dt)?;
    // The mean-field shift is bounded by |Δ_s|, so check the worst case too.
    let worst = eq.hamiltonian_with_shift(params.delta_s.abs() * params.units.to_angular(), 0.0);
    let phase = sim.dt * worst.max_abs();
    if phase >= STABILITY_LIMIT {
        return Err(IntegrateError::StabilityGuard { phase });
    }

    let steps = sim.steps();
    let stride = sim.record_stride;
    let mut rec = Recorder::new(0.0, sim.sample_interval(), (steps / stride + 1) as usize);
    let fast_range = sim.fast_window.map(|w| {
        let a = boundary_index(w.start, sim.dt);
        let b = boundary_index(w.start + w.duration, sim.dt).min(steps);
        (a, b)
    });
    let mut fast = fast_range.map(|(a, b)| Recorder::new(a as f64 * sim.dt, sim.dt, (b - a + 1) as usize));
    let event_steps: Vec<(u64, f64)> = schedule
        .events()
        .iter()
        .map(|e| (boundary_index(e.time, sim.dt), e.phase_jump))
        .collect();
    let mut next_event = 0;

    let mut diag = Diagnostics {
        min_population: f64::INFINITY,
        ..Default::default()
    };
    rec.trace.diagnostics.min_population = f64::INFINITY;
    if let Some(f) = fast.as_mut() {
        f.trace.diagnostics.min_population = f64::INFINITY;
    }

    let mut rho = rho0.0;
    let mut phase = 0.0;
    for i in 0..=steps {
        while next_event < event_steps.len() && event_steps[next_event].0 <= i {
            phase += event_steps[next_event].1;
            next_event += 1;
        }
        if i % stride == 0 {
            rec.push(&rho);
        }
        if let (Some(f), Some((a, b))) = (fast.as_mut(), fast_range) {
            if (a..=b).contains(&i) {
                f.push(&rho);
            }
        }
        if i == steps {
            break;
        }
        rho = step(&eq, &rho, sim.dt, phase);
        let done = i + 1;
        if done % sim.renorm_interval == 0 {
            if !rho.is_finite() {
                diag.steps = done;
                let partial = rec.finish(diag);
                return Err(IntegrateError::NonFiniteState {
                    step: done,
                    time: done as f64 * sim.dt,
                    partial: Box::new(partial),
                });
            }
            diag.max_hermiticity_drift = diag.max_hermiticity_drift.max(rho.hermiticity_error());
            rho = DensityMatrix(rho).hygiene().0;
        }
    }
    if !rho.is_finite() {
        diag.steps = steps;
        return Err(IntegrateError::NonFiniteState {
            step: steps,
            time: steps as f64 * sim.dt,
            partial: Box::new(rec.finish(diag)),
        });
    }
    diag.max_hermiticity_drift = diag.max_hermiticity_drift.max(rho.hermiticity_error());
    diag.steps = steps;
    Ok(Evolution {
        trace: rec.finish(diag),
        fast: fast.map(|f| f.finish(diag)),
        final_state: DensityMatrix(rho),
    })
}

pub const FIXED_POINT_DAMPING: f64 = 0.5;
pub const FIXED_POINT_MAX_ITER: usize = 500;
pub const FIXED_POINT_TOL: f64 = 1e-10;

/// Self-consistent stationary state ρ = ker L(ρ) by damped fixed-point
/// iteration, seeded from the ground-doublet mixture.
pub fn steady_state_frozen(
    params: &SystemParams,
    loss: &LossModel,
) -> Result<DensityMatrix, IntegrateError> {
    params.validate()?;
    loss.validate()?;
    let mut rho = DensityMatrix::ground_mixed().0;
    let mut last_change = f64::INFINITY;
    for iteration in 1..=FIXED_POINT_MAX_ITER {
        let m = liouvillian_matrix(params, loss, &DensityMatrix(rho));
        let Some(kernel) = kernel_state(&m) else {
            return Err(IntegrateError::NoConvergence {
                iterations: iteration,
                last_change,
            });
        };
        // Without a mean-field term the map is constant: take the kernel as is.
        let next = if params.delta_s == 0.0 {
            kernel
        } else {
            rho * (1.0 - FIXED_POINT_DAMPING) + kernel * FIXED_POINT_DAMPING
        };
        last_change = (next - rho).max_abs();
        rho = next;
        if last_change < FIXED_POINT_TOL {
            return Ok(DensityMatrix(rho).hygiene());
        }
        if params.delta_s == 0.0 {
            return Ok(DensityMatrix(rho).hygiene());
        }
    }
    Err(IntegrateError::NoConvergence {
        iterations: FIXED_POINT_MAX_ITER,
        last_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn baseline() -> (SystemParams, LossModel) {
        let p = SystemParams::baseline();
        (p, LossModel::baseline(p.t1, p.t2))
    }

    #[test]
    fn undriven_ground_state_is_preserved_exactly() {
        let (mut p, loss) = baseline();
        p.omega = 0.0;
        let rho = DensityMatrix::pure(0);
        let out = rk4_step(&rho, 1e-9, &p, &loss, 0.0).unwrap();
        assert_eq!(out, rho);
    }

    #[test]
    fn step_preserves_trace() {
        let (p, loss) = baseline();
        let mut rho = DensityMatrix::ground_mixed();
        for _ in 0..1000 {
            rho = rk4_step(&rho, 1e-9, &p, &loss, 0.3).unwrap();
        }
        assert!((rho.0.trace().re - 1.0).abs() < 1e-12);
        assert!(rho.0.trace().im.abs() < 1e-12);
    }

    #[test]
    fn stability_guard_trips_on_large_step() {
        let (p, loss) = baseline();
        let err = rk4_step(&DensityMatrix::pure(0), 1e-7, &p, &loss, 0.0).unwrap_err();
        assert!(matches!(err, IntegrateError::StabilityGuard { .. }));
    }

    #[test]
    fn schedule_validation_and_phase() {
        assert!(PhaseSchedule::pi_kicks(&[2.0, 1.0]).is_err());
        assert!(PhaseSchedule::pi_kicks(&[1.0, 1.0]).is_err());
        let s = PhaseSchedule::pi_kicks(&[1.0, 2.0]).unwrap();
        assert_eq!(s.phase_at(0.5), 0.0);
        assert_eq!(s.phase_at(1.0), std::f64::consts::PI);
        assert_eq!(s.phase_at(3.0), 2.0 * std::f64::consts::PI);
    }

    #[test]
    fn schedule_beyond_horizon_is_rejected() {
        let (p, loss) = baseline();
        let sim = SimConfig::with_dt(1e-9, 1e-6);
        let s = PhaseSchedule::pi_kicks(&[2e-6]).unwrap();
        let err = evolve(&DensityMatrix::equal_mixed(), &p, &loss, &sim, &s).unwrap_err();
        assert!(matches!(err, IntegrateError::InvalidConfig(_)));
    }

    #[test]
    fn config_validation() {
        let mut sim = SimConfig::default();
        assert!(sim.validate().is_ok());
        sim.dt = 0.0;
        assert!(sim.validate().is_err());
        sim.dt = 1e-9;
        sim.record_stride = 0;
        assert!(sim.validate().is_err());
        sim.record_stride = 1;
        sim.horizon = 1e-10;
        assert!(sim.validate().is_err());
        sim.horizon = 1e-2;
        sim.fast_window = Some(FastWindow {
            start: 0.0,
            duration: 2e-3,
        });
        assert!(sim.validate().is_err());
    }

    #[test]
    fn boundary_index_rounds_up_off_grid() {
        assert_eq!(boundary_index(5.6e-3, 1e-9), 5_600_000);
        assert_eq!(boundary_index(2.5e-9, 1e-9), 3);
        assert_eq!(boundary_index(0.0, 1e-9), 0);
    }

    #[test]
    fn evolve_records_decimated_samples() {
        let (p, loss) = baseline();
        let sim = SimConfig {
            dt: 1e-9,
            horizon: 1e-6,
            record_stride: 100,
            ..Default::default()
        };
        let trace = evolve(&DensityMatrix::equal_mixed(), &p, &loss, &sim, &PhaseSchedule::empty()).unwrap();
        assert_eq!(trace.len(), 11);
        assert!((trace.dt_sample - 1e-7).abs() < 1e-20);
        assert_eq!(trace.channels.len(), 4 + 2 * COHERENCES.len());
        assert_eq!(trace.diagnostics.steps, 1000);
    }

    #[test]
    fn fast_window_records_every_step() {
        let (p, loss) = baseline();
        let sim = SimConfig {
            dt: 1e-9,
            horizon: 2e-6,
            record_stride: 100,
            fast_window: Some(FastWindow {
                start: 1e-6,
                duration: 5e-7,
            }),
            ..Default::default()
        };
        let ev = evolve_with_fast_window(
            &DensityMatrix::equal_mixed(),
            &p,
            &loss,
            &sim,
            &PhaseSchedule::empty(),
        )
        .unwrap();
        let fast = ev.fast.unwrap();
        assert_eq!(fast.len(), 501);
        // Fast and decimated records agree where they overlap.
        assert_eq!(fast.channel("rho33").unwrap()[0], ev.trace.channel("rho33").unwrap()[10]);
    }

    #[test]
    fn undriven_stationary_state_is_ground_mix() {
        let (mut p, loss) = baseline();
        p.omega = 0.0;
        let rho = steady_state_frozen(&p, &loss).unwrap();
        // Spin relaxation empties |2⟩ into |1⟩; without thermal pumping |1⟩ is the only stationary state.
        assert!((rho.populations()[0] - 1.0).abs() < 1e-9, "{:?}", rho.populations());
    }
}
