//! Phase classification, parameter sweeps and limit-cycle diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{evolve, IntegrateError, PhaseSchedule, SimConfig};
use crate::model::{LossModel, LossSpec, ModelError, SystemParams};
use crate::optics::{attach_intensity, OpticsError, ReadoutConfig};
use crate::signalkit::{
    linear_fit, peak_detect, peak_fwhm, power_spectrum, welch_spectrum, PhaseTrace, SignalError, Spectrum,
    WindowKind,
};
use crate::trace::{Diagnostics, Trace, TraceError, INTENSITY};

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error("analysis window too short: {0}")]
    WindowTooShort(String),
    #[error("analysis window [{start:e}, {end:e}] s must lie within the final half of the trace (from {tail_start:e} s)")]
    WindowOutsideTail { start: f64, end: f64, tail_start: f64 },
    #[error("no oscillation period detected in `{0}`")]
    NoPeriodDetected(String),
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("sweep has {points} points, budget is {budget}")]
    BudgetExceeded { points: usize, budget: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseLabel {
    /// Output settles to a constant.
    Stationary,
    /// Unstable output without a distinguishable periodic component.
    #[serde(rename = "broken_tts_i")]
    BrokenTtsI,
    /// Unstable output carrying a sharp, isolated spectral line.
    TimeCrystal,
    /// Unstable output whose line is broadened or buried in other components.
    #[serde(rename = "broken_tts_ii")]
    BrokenTtsII,
}

impl PhaseLabel {
    /// Numeric code for grid files, in order of increasing drive.
    pub fn code(self) -> u8 {
        match self {
            PhaseLabel::Stationary => 0,
            PhaseLabel::BrokenTtsI => 1,
            PhaseLabel::TimeCrystal => 2,
            PhaseLabel::BrokenTtsII => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhaseLabel::Stationary => "stationary",
            PhaseLabel::BrokenTtsI => "broken_tts_i",
            PhaseLabel::TimeCrystal => "time_crystal",
            PhaseLabel::BrokenTtsII => "broken_tts_ii",
        }
    }
}

/// Thresholds of the decision tree. All are ratio- or dB-based so the
/// outcome does not depend on the scale of the analyzed channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub channel: String,
    /// std/mean below this counts as stationary.
    pub stationary_rms: f64,
    /// Required height of a line above the median background.
    pub prominence_db: f64,
    /// Widest line, in FFT bins, still counted as crystalline.
    pub width_ceiling_bins: f64,
    /// Required lead of the strongest line over the next one.
    pub isolation_db: f64,
    /// Default window: this final fraction of the trace.
    pub window_fraction: f64,
    /// Welch segments averaged for the spectrum.
    pub segments: usize,
    pub spectrum_window: WindowKind,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            channel: INTENSITY.to_string(),
            stationary_rms: 1e-3,
            prominence_db: 10.0,
            width_ceiling_bins: 20.0,
            isolation_db: 10.0,
            window_fraction: 0.4,
            segments: 8,
            spectrum_window: WindowKind::Hann,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), PhaseError> {
        let ok = self.stationary_rms >= 0.0
            && self.prominence_db.is_finite()
            && self.width_ceiling_bins > 0.0
            && self.isolation_db.is_finite()
            && self.window_fraction > 0.0
            && self.window_fraction <= 0.5
            && self.segments >= 1;
        if ok {
            Ok(())
        } else {
            Err(PhaseError::InvalidSpec(format!("classifier thresholds out of range: {self:?}")))
        }
    }
}

/// Parameters of a simulated point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointParams {
    pub system: SystemParams,
    pub loss: LossModel,
    pub sim: SimConfig,
    pub readout: ReadoutConfig,
    pub schedule: PhaseSchedule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    /// Sweep coordinates, one (parameter, value) per axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coordinates: Vec<(SweepParameter, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PointParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<PhaseLabel>,
    /// Present exactly when the label is TimeCrystal.
    pub crystal_freq: Option<f64>,
    /// Prominence of the strongest line over the median background.
    pub peak_prominence_db: Option<f64>,
    pub peak_freq: Option<f64>,
    pub peak_fwhm: Option<f64>,
    pub instability_rms: f64,
    /// FFT bin width of the analysis spectrum.
    pub resolution: f64,
    pub window: [f64; 2],
    pub channel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PhasePoint {
    fn failed(coordinates: Vec<(SweepParameter, f64)>, params: Option<PointParams>, err: &PhaseError) -> Self {
        PhasePoint {
            coordinates,
            params,
            label: None,
            crystal_freq: None,
            peak_prominence_db: None,
            peak_freq: None,
            peak_fwhm: None,
            instability_rms: f64::NAN,
            resolution: f64::NAN,
            window: [f64::NAN, f64::NAN],
            channel: String::new(),
            diagnostics: None,
            error: Some(err.to_string()),
        }
    }
}

/// Resolves the analysis window, defaulting to the configured final fraction.
pub fn analysis_window(trace: &Trace, window: Option<(f64, f64)>, cfg: &ClassifierConfig) -> Result<(f64, f64), PhaseError> {
    let end_t = trace.time(trace.len());
    let tail_start = trace.t0 + 0.5 * trace.duration();
    let (start, end) = window.unwrap_or((end_t - cfg.window_fraction * trace.duration(), end_t));
    let slack = 0.5 * trace.dt_sample;
    if !(start >= tail_start - slack && end <= end_t + slack && end > start) {
        return Err(PhaseError::WindowOutsideTail { start, end, tail_start });
    }
    Ok((start, end))
}

/// Labels the dynamics of `cfg.channel` inside `window` (default: final
/// `cfg.window_fraction` of the trace).
///
/// 1. std/mean below `stationary_rms` gives Stationary.
/// 2. No spectral line `prominence_db` above both the median background
///    and its neighbouring valleys gives BrokenTTS-I.
/// 3. A line narrower than `width_ceiling_bins` bins and leading every other
///    line by `isolation_db` gives TimeCrystal.
/// 4. Any other line gives BrokenTTS-II.
pub fn classify(trace: &Trace, window: Option<(f64, f64)>, cfg: &ClassifierConfig) -> Result<PhasePoint, PhaseError> {
    cfg.validate()?;
    let (start, end) = analysis_window(trace, window, cfg)?;
    let sub = trace.window(start, end);
    let x = sub.channel(&cfg.channel)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(PhaseError::InvalidSpec(format!("channel `{}` holds non-finite samples", cfg.channel)));
    }
    let n = x.len() as f64;
    if x.len() < 2 {
        return Err(PhaseError::WindowTooShort(format!("{} samples", x.len())));
    }
    let mean = x.iter().sum::<f64>() / n;
    let std = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let instability_rms = if std == 0.0 { 0.0 } else { std / mean.abs() };

    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let spec = welch_spectrum(&centered, sub.dt_sample, cfg.spectrum_window, cfg.segments).map_err(|e| match e {
        SignalError::TooShort { got, needed } => {
            PhaseError::WindowTooShort(format!("{got} samples, need at least {needed}"))
        }
        other => other.into(),
    })?;

    let mut point = PhasePoint {
        coordinates: Vec::new(),
        params: None,
        label: None,
        crystal_freq: None,
        peak_prominence_db: None,
        peak_freq: None,
        peak_fwhm: None,
        instability_rms,
        resolution: spec.resolution,
        window: [start, end],
        channel: cfg.channel.clone(),
        diagnostics: Some(trace.diagnostics),
        error: None,
    };
    if instability_rms < cfg.stationary_rms {
        point.label = Some(PhaseLabel::Stationary);
        return Ok(point);
    }

    // A line has to clear both the median background and its own valleys;
    // ripple on a sloping noise floor clears only the first.
    let lines = peak_detect(&spec, cfg.prominence_db, true);
    let Some(top) = lines.first().copied() else {
        point.label = Some(PhaseLabel::BrokenTtsI);
        if let Some(p) = peak_detect(&spec, f64::NEG_INFINITY, true).first() {
            point.peak_prominence_db = Some(p.prominence_db);
            point.peak_freq = Some(p.freq);
        }
        return Ok(point);
    };
    point.peak_prominence_db = Some(top.prominence_db);
    point.peak_freq = Some(top.freq);
    // The width is read on a lightly smoothed copy so that bin-to-bin
    // scatter on a broad line does not cut the half-maximum short.
    let width = peak_fwhm(&smoothed(&spec, SMOOTHING_BINS), top.bin);
    point.peak_fwhm = Some(width);
    let lead = lines
        .iter()
        .find(|p| p.bin != top.bin)
        .map_or(f64::INFINITY, |p| top.prominence_db - p.prominence_db);
    if width < cfg.width_ceiling_bins * spec.resolution && lead >= cfg.isolation_db {
        point.label = Some(PhaseLabel::TimeCrystal);
        point.crystal_freq = Some(top.freq);
    } else {
        point.label = Some(PhaseLabel::BrokenTtsII);
    }
    Ok(point)
}

/// Moving-average length used before reading a line width.
pub const SMOOTHING_BINS: usize = 5;

fn smoothed(spec: &Spectrum, bins: usize) -> Spectrum {
    let half = bins / 2;
    let n = spec.power.len();
    let power = (0..n)
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(n);
            spec.power[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    Spectrum::from_linear(power, spec.resolution, spec.window)
}

/// Sweepable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    DeltaS,
    Omega,
    /// Pump power, mapped to Ω = `omega_per_sqrt_power`·√P.
    Power,
    T1,
    T2,
    /// t₁/t₂ with t₁ held at its base value.
    RatioHoldT1,
    /// t₁/t₂ with t₂ held at its base value.
    RatioHoldT2,
    Delta2,
    Delta3,
    Delta4,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::DeltaS => "delta_s",
            SweepParameter::Omega => "omega",
            SweepParameter::Power => "power",
            SweepParameter::T1 => "t1",
            SweepParameter::T2 => "t2",
            SweepParameter::RatioHoldT1 => "ratio_hold_t1",
            SweepParameter::RatioHoldT2 => "ratio_hold_t2",
            SweepParameter::Delta2 => "delta2",
            SweepParameter::Delta3 => "delta3",
            SweepParameter::Delta4 => "delta4",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

pub const DEFAULT_BUDGET: usize = 64;

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

/// Drive amplitude for a pump power: Ω = c·√P.
pub fn power_to_omega(power: f64, omega_per_sqrt_power: f64) -> f64 {
    omega_per_sqrt_power * power.sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: Vec<Axis>,
    pub system: SystemParams,
    #[serde(default)]
    pub loss: LossSpec,
    pub sim: SimConfig,
    /// Fixed readout; by default the weights follow each point's couplings.
    #[serde(default)]
    pub readout: Option<ReadoutConfig>,
    #[serde(default)]
    pub schedule: PhaseSchedule,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub omega_per_sqrt_power: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

impl SweepSpec {
    pub fn new(axes: Vec<Axis>, system: SystemParams, sim: SimConfig) -> Self {
        SweepSpec {
            axes,
            system,
            loss: LossSpec::default(),
            sim,
            readout: None,
            schedule: PhaseSchedule::empty(),
            classifier: ClassifierConfig::default(),
            omega_per_sqrt_power: None,
            budget: DEFAULT_BUDGET,
        }
    }

    pub fn point_count(&self) -> usize {
        self.axes.iter().map(|a| a.values.len()).product()
    }

    /// Checks axes, thresholds and budget before anything runs.
    pub fn validate(&self) -> Result<(), PhaseError> {
        if self.axes.is_empty() {
            return Err(PhaseError::InvalidSpec("at least one axis is required".into()));
        }
        for a in &self.axes {
            if a.values.is_empty() {
                return Err(PhaseError::InvalidSpec(format!("axis `{}` has no values", a.parameter.name())));
            }
            if a.values.iter().any(|v| !v.is_finite()) {
                return Err(PhaseError::InvalidSpec(format!("axis `{}` has non-finite values", a.parameter.name())));
            }
            if a.parameter == SweepParameter::Power {
                if self.omega_per_sqrt_power.is_none() {
                    return Err(PhaseError::InvalidSpec("power axis needs omega_per_sqrt_power".into()));
                }
                if a.values.iter().any(|&v| v < 0.0) {
                    return Err(PhaseError::InvalidSpec("power values must be >= 0".into()));
                }
            }
        }
        let points = self.point_count();
        if points > self.budget {
            return Err(PhaseError::BudgetExceeded {
                points,
                budget: self.budget,
            });
        }
        self.system.validate()?;
        self.sim.validate()?;
        self.schedule.check_horizon(self.sim.horizon)?;
        self.classifier.validate()?;
        if let Some(r) = &self.readout {
            r.validate()?;
        }
        Ok(())
    }

    /// Grid coordinates in row-major order (first axis slowest).
    pub fn coordinates(&self) -> Vec<Vec<(SweepParameter, f64)>> {
        let mut out = vec![Vec::new()];
        for a in &self.axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    a.values.iter().map(move |&v| {
                        let mut c = prefix.clone();
                        c.push((a.parameter, v));
                        c
                    })
                })
                .collect();
        }
        out
    }

    /// Resolved parameters for one grid point.
    pub fn point_params(&self, coords: &[(SweepParameter, f64)]) -> Result<PointParams, PhaseError> {
        let base = self.system;
        let mut p = base;
        for &(param, v) in coords {
            match param {
                SweepParameter::DeltaS => p.delta_s = v,
                SweepParameter::Omega => p.omega = v,
                SweepParameter::Power => {
                    let c = self
                        .omega_per_sqrt_power
                        .ok_or_else(|| PhaseError::InvalidSpec("power axis needs omega_per_sqrt_power".into()))?;
                    p.omega = power_to_omega(v, c);
                }
                SweepParameter::T1 => p.t1 = v,
                SweepParameter::T2 => p.t2 = v,
                SweepParameter::RatioHoldT1 => {
                    p.t1 = base.t1;
                    p.t2 = base.t1 / v;
                }
                SweepParameter::RatioHoldT2 => {
                    p.t2 = base.t2;
                    p.t1 = base.t2 * v;
                }
                SweepParameter::Delta2 => p.delta2 = v,
                SweepParameter::Delta3 => p.delta3 = v,
                SweepParameter::Delta4 => p.delta4 = v,
            }
        }
        p.validate()?;
        let loss = self.loss.resolve(&p);
        loss.validate()?;
        Ok(PointParams {
            system: p,
            loss,
            sim: self.sim.clone(),
            readout: self.readout.clone().unwrap_or_else(|| ReadoutConfig::matching(&p)),
            schedule: self.schedule.clone(),
        })
    }
}

/// Evolves one parameter set and appends the intensity channel.
pub fn simulate_point(params: &PointParams) -> Result<Trace, PhaseError> {
    let rho0 = params.sim.initial_state.density()?;
    let mut trace = evolve(&rho0, &params.system, &params.loss, &params.sim, &params.schedule)?;
    attach_intensity(&mut trace, &params.readout)?;
    Ok(trace)
}

/// Simulates and classifies every grid point on `jobs` worker threads.
///
/// Results come back in grid order and do not depend on `jobs`. A failing
/// point is reported in place with its error message.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<Vec<PhasePoint>, PhaseError> {
    run_sweep_with(spec, jobs, |_, _| {})
}

/// [`run_sweep`] with a callback receiving each point's index and trace,
/// e.g. for persisting traces.
pub fn run_sweep_with<F>(spec: &SweepSpec, jobs: usize, on_trace: F) -> Result<Vec<PhasePoint>, PhaseError>
where
    F: Fn(usize, &Trace) + Sync,
{
    spec.validate()?;
    let coords = spec.coordinates();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PhaseError::InvalidSpec(format!("thread pool: {e}")))?;
    let points = pool.install(|| {
        coords
            .into_par_iter()
            .enumerate()
            .map(|(i, c)| {
                let params = match spec.point_params(&c) {
                    Ok(p) => p,
                    Err(e) => return PhasePoint::failed(c, None, &e),
                };
                let result = simulate_point(&params).and_then(|trace| {
                    on_trace(i, &trace);
                    classify(&trace, None, &spec.classifier)
                });
                match result {
                    Ok(mut point) => {
                        point.coordinates = c;
                        point.params = Some(params);
                        point
                    }
                    Err(e) => PhasePoint::failed(c, Some(params), &e),
                }
            })
            .collect()
    });
    Ok(points)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitCycleReport {
    pub pair: (String, String),
    pub companion: (String, String),
    /// Dominant period of the pair's first coordinate.
    pub period: f64,
    /// Closest approach of the orbit to its starting point between half a
    /// period and one and a half periods later.
    pub closure_distance: f64,
    /// Largest point separation over one period.
    pub diameter: f64,
    /// Signed shoelace area over one period.
    pub enclosed_area: f64,
    /// Coefficient of determination of a straight-line fit on the companion
    /// pair.
    pub r_squared: f64,
}

/// Orbit diagnostics of the `pair` projection inside `window`.
pub fn limit_cycle_report(
    trace: &Trace,
    pair: (&str, &str),
    companion: (&str, &str),
    window: (f64, f64),
) -> Result<LimitCycleReport, PhaseError> {
    let sub = trace.window(window.0, window.1);
    let x = sub.channel(pair.0)?;
    let y = sub.channel(pair.1)?;
    let cx = sub.channel(companion.0)?;
    let cy = sub.channel(companion.1)?;
    let dt = sub.dt_sample;

    let mean = x.iter().sum::<f64>() / x.len().max(1) as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let spec = power_spectrum(&centered, dt, WindowKind::Hann).map_err(|_| PhaseError::NoPeriodDetected(pair.0.into()))?;
    let top = peak_detect(&spec, f64::NEG_INFINITY, true)
        .into_iter()
        .next()
        .ok_or_else(|| PhaseError::NoPeriodDetected(pair.0.into()))?;
    let period = 1.0 / top.freq;
    let per = (period / dt).round() as usize;
    if per < 3 || 3 * per / 2 + 1 >= x.len() {
        return Err(PhaseError::NoPeriodDetected(pair.0.into()));
    }

    let orbit: Vec<(f64, f64)> = x.iter().zip(y).map(|(&a, &b)| (a, b)).collect();
    let start = orbit[0];
    let mut closure = f64::INFINITY;
    for k in per / 2..(3 * per / 2) {
        closure = closure.min(point_segment_distance(start, orbit[k], orbit[k + 1]));
    }
    let cycle = &orbit[..=per];
    let mut area = 0.0;
    for k in 0..cycle.len() {
        let (a, b) = (cycle[k], cycle[(k + 1) % cycle.len()]);
        area += a.0 * b.1 - b.0 * a.1;
    }
    area *= 0.5;
    let mut diameter = 0.0f64;
    for (i, a) in cycle.iter().enumerate() {
        for b in &cycle[i + 1..] {
            diameter = diameter.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }

    Ok(LimitCycleReport {
        pair: (pair.0.into(), pair.1.into()),
        companion: (companion.0.into(), companion.1.into()),
        period,
        closure_distance: closure,
        diameter,
        enclosed_area: area,
        r_squared: r_squared(cx, cy),
    })
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - s * dx).hypot(p.1 - a.1 - s * dy)
}

/// R² of the least-squares line y ≈ a·x + b; 1 for an exactly constant y.
pub fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let (slope, intercept) = linear_fit(x, y);
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    if ss_tot == 0.0 {
        return 1.0;
    }
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

/// Time after a perturbation at `kick` until the oscillation envelope of
/// `phase` re-enters, and then stays within, a ±`band` fraction of its
/// settled level. The settled level is the median envelope over the second
/// half of [kick, until]. `None` when that half holds no windows.
pub fn reorganization_time(phase: &PhaseTrace, kick: f64, until: f64, band: f64) -> Option<f64> {
    let env = phase.envelope();
    let half_t = 0.5 * phase.window;
    let mid = 0.5 * (kick + until);
    let centres: Vec<(f64, f64)> = phase
        .tau
        .iter()
        .zip(&env)
        .map(|(t, e)| (t + half_t, *e))
        .filter(|(c, _)| *c + half_t >= kick && *c + half_t <= until)
        .collect();
    let mut settled: Vec<f64> = centres.iter().filter(|(c, _)| *c >= mid).map(|(_, e)| *e).collect();
    if settled.is_empty() {
        return None;
    }
    settled.sort_by(|a, b| a.total_cmp(b));
    let level = settled[settled.len() / 2];
    let last_out = centres
        .iter()
        .filter(|(c, e)| *c < mid && ((e / level) - 1.0).abs() > band)
        .map(|(c, _)| *c)
        .fold(f64::NEG_INFINITY, f64::max);
    Some(if last_out.is_finite() { (last_out - kick).max(0.0) } else { 0.0 })
}
