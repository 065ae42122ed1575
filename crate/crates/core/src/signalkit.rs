//! Time-series analysis: spectra, autocorrelation, the rect-windowed
//! cross-correlation phase extractor, Lorentzian line fits and peak picking.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_SPECTRUM_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("series too short: {got} samples, need at least {needed}")]
    TooShort { got: usize, needed: usize },
    #[error("integration window too short: {0}")]
    WindowTooShort(String),
    #[error("fit window holds {bins} bins, need at least {needed}")]
    WindowTooNarrow { bins: usize, needed: usize },
    #[error("Lorentz fit diverged: residual {final_residual:e} vs initial {initial_residual:e}")]
    FitDiverged {
        initial_residual: f64,
        final_residual: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Rectangular,
    #[default]
    Hann,
}

impl WindowKind {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; n],
            // Periodic Hann: exact sidelobe pattern on the DFT grid.
            WindowKind::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Half-width of the main lobe in bins.
    pub fn main_lobe_bins(self) -> usize {
        match self {
            WindowKind::Rectangular => 1,
            WindowKind::Hann => 2,
        }
    }
}

/// One-sided power spectrum.
///
/// `power` is normalized so that its sum equals the (window-weighted) mean
/// square of the input; `power_db` is 10·log₁₀ of power relative to the
/// largest bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub power_db: Vec<f64>,
    pub window: WindowKind,
    /// Bin spacing in Hz, the inverse of the (segment) duration.
    pub resolution: f64,
    /// Number of averaged segments (1 for a single periodogram).
    pub segments: usize,
}

impl Spectrum {
    fn from_power(power: Vec<f64>, resolution: f64, window: WindowKind, segments: usize) -> Self {
        let freqs = (0..power.len()).map(|k| k as f64 * resolution).collect();
        let peak = power.iter().copied().fold(0.0, f64::max);
        let power_db = power.iter().map(|&p| to_db(p, peak)).collect();
        Spectrum {
            freqs,
            power,
            power_db,
            window,
            resolution,
            segments,
        }
    }

    /// Copy with every power value multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Spectrum {
        Spectrum::from_power(
            self.power.iter().map(|p| p * c).collect(),
            self.resolution,
            self.window,
            self.segments,
        )
    }

    /// Builds a spectrum from explicit linear power values on a uniform grid
    /// starting at 0 Hz.
    pub fn from_linear(power: Vec<f64>, resolution: f64, window: WindowKind) -> Self {
        Spectrum::from_power(power, resolution, window, 1)
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    /// Bin closest to frequency `f`.
    pub fn bin_of(&self, f: f64) -> usize {
        ((f / self.resolution).round().max(0.0) as usize).min(self.len().saturating_sub(1))
    }
}

fn to_db(p: f64, reference: f64) -> f64 {
    if reference <= 0.0 {
        return 0.0;
    }
    10.0 * (p.max(reference * 1e-300) / reference).log10()
}

fn periodogram(x: &[f64], window: WindowKind, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = x.len();
    let w = window.coefficients(n);
    let energy: f64 = w.iter().map(|v| v * v).sum();
    let mut buf: Vec<Complex64> = x.iter().zip(&w).map(|(&a, &b)| Complex64::new(a * b, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let norm = 1.0 / (n as f64 * energy);
    (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr() * norm;
            // Fold negative frequencies in, except DC and Nyquist.
            if k == 0 || (n.is_multiple_of(2) && k == half) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

/// Windowed periodogram of the whole series.
pub fn power_spectrum(x: &[f64], dt: f64, window: WindowKind) -> Result<Spectrum, SignalError> {
    check_series(x, dt)?;
    let mut planner = FftPlanner::new();
    let power = periodogram(x, window, &mut planner);
    Ok(Spectrum::from_power(power, 1.0 / (x.len() as f64 * dt), window, 1))
}

/// Welch estimate: `segments` equal segments at 50% overlap, averaged.
///
/// Averaging tames the exponential scatter of a single periodogram, which
/// matters when peaks are judged against a median background.
pub fn welch_spectrum(
    x: &[f64],
    dt: f64,
    window: WindowKind,
    segments: usize,
) -> Result<Spectrum, SignalError> {
    check_series(x, dt)?;
    if segments <= 1 {
        return power_spectrum(x, dt, window);
    }
    // `segments` half-overlapping pieces span (segments + 1)/2 lengths.
    let len = 2 * x.len() / (segments + 1);
    if len < MIN_SPECTRUM_LEN {
        return Err(SignalError::TooShort {
            got: x.len(),
            needed: MIN_SPECTRUM_LEN * (segments + 1) / 2,
        });
    }
    let hop = len / 2;
    let mut planner = FftPlanner::new();
    let mut acc = vec![0.0; len / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + len <= x.len() && count < segments {
        for (a, p) in acc.iter_mut().zip(periodogram(&x[start..start + len], window, &mut planner)) {
            *a += p;
        }
        count += 1;
        start += hop;
    }
    for a in acc.iter_mut() {
        *a /= count as f64;
    }
    Ok(Spectrum::from_power(acc, 1.0 / (len as f64 * dt), window, count))
}

fn check_series(x: &[f64], dt: f64) -> Result<(), SignalError> {
    if !(dt > 0.0) {
        return Err(SignalError::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if x.len() < MIN_SPECTRUM_LEN {
        return Err(SignalError::TooShort {
            got: x.len(),
            needed: MIN_SPECTRUM_LEN,
        });
    }
    Ok(())
}

/// ⟨x(t)·x(t − τ)⟩ averaged over the valid overlap, for τ = 0, dt, …,
/// max_lag.
pub fn autocorrelation(x: &[f64], dt: f64, max_lag: f64) -> Result<Vec<f64>, SignalError> {
    if !(dt > 0.0) || !(max_lag >= 0.0) {
        return Err(SignalError::InvalidArgument("dt and max_lag must be positive".into()));
    }
    let n = x.len();
    let lags = (max_lag / dt).round() as usize;
    if n < 2 || lags >= n {
        return Err(SignalError::TooShort {
            got: n,
            needed: lags + 1,
        });
    }
    let mut out = if (n as f64) * (lags as f64 + 1.0) <= 5e7 {
        (0..=lags)
            .map(|k| x[k..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect::<Vec<_>>()
    } else {
        fft_lagged_products(x, lags)
    };
    for (k, v) in out.iter_mut().enumerate() {
        *v /= (n - k) as f64;
    }
    // Keep lag zero exact.
    out[0] = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
    Ok(out)
}

/// Σᵢ x[i]·x[i − k] for k ≤ lags via zero-padded FFT.
fn fft_lagged_products(x: &[f64], lags: usize) -> Vec<f64> {
    let size = (x.len() + lags + 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(size)
        .collect();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in buf.iter_mut() {
        *z = Complex64::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..=lags].iter().map(|z| z.re / size as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discontinuity {
    pub time: f64,
    pub jump: f64,
}

/// Output of [`cross_correlation_phase`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    /// Window start times τ.
    pub tau: Vec<f64>,
    /// In-phase correlation F(τ) = ∫ x(t)·cos(ω_r(t − τ)) dt over [τ, τ + T].
    pub f: Vec<f64>,
    /// Quadrature partner ∫ x(t)·sin(ω_r(t − τ)) dt.
    pub q: Vec<f64>,
    /// Unwrapped phase of the signal relative to the reference carrier.
    pub inst_phase: Vec<f64>,
    pub discontinuities: Vec<Discontinuity>,
    pub reference_hz: f64,
    pub window: f64,
}

impl PhaseTrace {
    /// |F − iQ|, the local oscillation amplitude scaled by T/2.
    pub fn envelope(&self) -> Vec<f64> {
        self.f.iter().zip(&self.q).map(|(a, b)| a.hypot(*b)).collect()
    }

    /// Least-squares slope of `inst_phase` against τ divided by 2π: the
    /// offset between signal and reference frequency.
    pub fn carrier_offset_hz(&self) -> f64 {
        linear_fit(&self.tau, &self.inst_phase).0 / (2.0 * PI)
    }

    /// `inst_phase` with its best-fit straight line removed.
    pub fn detrended_phase(&self) -> Vec<f64> {
        let (slope, intercept) = linear_fit(&self.tau, &self.inst_phase);
        self.tau
            .iter()
            .zip(&self.inst_phase)
            .map(|(t, p)| p - (slope * t + intercept))
            .collect()
    }
}

/// Ordinary least squares y ≈ slope·x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return (0.0, y.first().copied().unwrap_or(0.0));
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Rule for flagging phase discontinuities in a [`PhaseTrace`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscontinuityRule {
    /// Minimum |Δφ| across a span of two integration windows.
    pub min_jump: f64,
    /// Flag only where the envelope dips below this fraction of its median;
    /// `None` disables the gate.
    pub envelope_fraction: Option<f64>,
}

impl Default for DiscontinuityRule {
    fn default() -> Self {
        DiscontinuityRule {
            min_jump: PI / 2.0,
            envelope_fraction: Some(0.3),
        }
    }
}

/// Rect-windowed cross-correlation of `x` with a reference tone.
///
/// `x[0]` is taken to be sampled at time `t0`. The τ grid advances by the
/// largest whole number of samples not exceeding T/8. The phase is read
/// from the analytic pair (F, Q): arg(F − iQ) − ω_r·τ, unwrapped along τ.
/// For a tone cos(ω₀t + φ) this is φ + (ω₀ − ω_r)(τ + T/2).
pub fn cross_correlation_phase(
    x: &[f64],
    t0: f64,
    dt: f64,
    reference_hz: f64,
    window: f64,
) -> Result<PhaseTrace, SignalError> {
    if !(dt > 0.0) || !(reference_hz > 0.0) {
        return Err(SignalError::InvalidArgument(
            "dt and reference frequency must be > 0".into(),
        ));
    }
    if window * reference_hz < 2.0 {
        return Err(SignalError::WindowTooShort(format!(
            "T = {window:e} s covers {:.2} reference periods, need 2",
            window * reference_hz
        )));
    }
    let width = (window / dt).round() as usize;
    if width < 8 || width > x.len() {
        return Err(SignalError::WindowTooShort(format!(
            "T spans {width} samples of a {}-sample series",
            x.len()
        )));
    }
    let stride = ((width as f64 / 8.0).floor() as usize).max(1);
    let omega = 2.0 * PI * reference_hz;
    let (cos_ref, sin_ref): (Vec<f64>, Vec<f64>) = (0..width)
        .map(|k| {
            let a = omega * k as f64 * dt;
            (a.cos(), a.sin())
        })
        .unzip();

    let mut tau = Vec::new();
    let mut f = Vec::new();
    let mut q = Vec::new();
    let mut start = 0;
    while start + width <= x.len() {
        let seg = &x[start..start + width];
        let fi: f64 = seg.iter().zip(&cos_ref).map(|(a, b)| a * b).sum::<f64>() * dt;
        let qi: f64 = seg.iter().zip(&sin_ref).map(|(a, b)| a * b).sum::<f64>() * dt;
        tau.push(t0 + start as f64 * dt);
        f.push(fi);
        q.push(qi);
        start += stride;
    }

    let mut inst_phase = Vec::with_capacity(tau.len());
    for i in 0..tau.len() {
        let raw = (-q[i]).atan2(f[i]) - omega * tau[i];
        let value = match inst_phase.last() {
            None => wrap(raw),
            Some(&prev) => prev + wrap(raw - prev),
        };
        inst_phase.push(value);
    }

    let mut trace = PhaseTrace {
        tau,
        f,
        q,
        inst_phase,
        discontinuities: Vec::new(),
        reference_hz,
        window,
    };
    trace.discontinuities = find_discontinuities(&trace, &DiscontinuityRule::default());
    Ok(trace)
}

/// Wraps into (−π, π].
pub fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r == -PI {
        PI
    } else {
        r
    }
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Phase jumps of the detrended phase over spans of 2T that satisfy `rule`.
/// Consecutive flagged spans merge into one event, timed at the centre of
/// the window with the smallest envelope.
pub fn find_discontinuities(trace: &PhaseTrace, rule: &DiscontinuityRule) -> Vec<Discontinuity> {
    let n = trace.tau.len();
    if n < 2 {
        return Vec::new();
    }
    let step = trace.tau[1] - trace.tau[0];
    let span = ((2.0 * trace.window / step).round() as usize).max(1);
    if n <= span {
        return Vec::new();
    }
    // Median increment as the carrier slope, so the jumps themselves do not
    // tilt the baseline.
    let increments: Vec<f64> = trace.inst_phase.windows(2).map(|w| w[1] - w[0]).collect();
    let slope = median(&increments);
    let phase: Vec<f64> = trace.inst_phase.iter().enumerate().map(|(i, p)| p - slope * i as f64).collect();
    let env = trace.envelope();
    let gate = rule.envelope_fraction.map_or(f64::INFINITY, |f| f * median(&env));
    let flagged: Vec<bool> = (0..n - span)
        .map(|i| {
            let jump = (phase[i + span] - phase[i]).abs();
            let dip = env[i..=i + span].iter().copied().fold(f64::INFINITY, f64::min);
            jump > rule.min_jump && dip < gate
        })
        .collect();

    let mut events = Vec::new();
    let mut i = 0;
    while i < flagged.len() {
        if !flagged[i] {
            i += 1;
            continue;
        }
        let a = i;
        while i < flagged.len() && flagged[i] {
            i += 1;
        }
        let b = (i - 1 + span).min(n - 1);
        let at = (a..=b)
            .min_by(|&u, &v| env[u].total_cmp(&env[v]))
            .unwrap_or(a);
        events.push(Discontinuity {
            time: trace.tau[at] + 0.5 * trace.window,
            jump: phase[b] - phase[a],
        });
    }
    events
}

/// Lorentzian line A·(Γ/2)²/((f − f₀)² + (Γ/2)²) + c.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzFit {
    pub f0: f64,
    pub gamma_fwhm: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// Coherence time 1/(π·Γ).
    pub t2: f64,
    /// Sum of squared residuals at the optimum.
    pub residual: f64,
    /// Diagonal of σ²·(JᵀJ)⁻¹ in the order (A, f₀, Γ, c).
    pub variances: [f64; 4],
}

/// Record written to disk for a fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzRecord {
    pub f0_hz: f64,
    pub gamma_fwhm_hz: f64,
    pub t2_s: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub residual: f64,
}

impl From<&LorentzFit> for LorentzRecord {
    fn from(f: &LorentzFit) -> Self {
        LorentzRecord {
            f0_hz: f.f0,
            gamma_fwhm_hz: f.gamma_fwhm,
            t2_s: f.t2,
            amplitude: f.amplitude,
            offset: f.offset,
            residual: f.residual,
        }
    }
}

/// T₂ = 1/(πΓ).
pub fn coherence_time(gamma_fwhm: f64) -> f64 {
    1.0 / (PI * gamma_fwhm)
}

pub fn lorentzian(f: f64, amplitude: f64, f0: f64, gamma: f64, offset: f64) -> f64 {
    let h = 0.5 * gamma;
    amplitude * h * h / ((f - f0) * (f - f0) + h * h) + offset
}

pub const MIN_FIT_BINS: usize = 8;
const FIT_RESTARTS: usize = 5;
const FIT_MAX_ITER: usize = 200;

/// Least-squares Lorentzian fit to the linear power inside
/// [f_guess − fit_halfwidth, f_guess + fit_halfwidth].
///
/// Damped Gauss-Newton with closed-form derivatives, restarted five times
/// from jittered guesses around (f_guess, 4·resolution); the best optimum
/// wins.
pub fn lorentz_fit(spec: &Spectrum, f_guess: f64, fit_halfwidth: f64) -> Result<LorentzFit, SignalError> {
    let (fs, ys): (Vec<f64>, Vec<f64>) = spec
        .freqs
        .iter()
        .zip(&spec.power)
        .filter(|(f, _)| (**f - f_guess).abs() <= fit_halfwidth)
        .map(|(f, p)| (*f, *p))
        .unzip();
    if fs.len() < MIN_FIT_BINS {
        return Err(SignalError::WindowTooNarrow {
            bins: fs.len(),
            needed: MIN_FIT_BINS,
        });
    }
    let edge = fs.len() / 8 + 1;
    let mut tails: Vec<f64> = ys[..edge].iter().chain(&ys[ys.len() - edge..]).copied().collect();
    tails.sort_by(|a, b| a.total_cmp(b));
    let c0 = tails[tails.len() / 2];
    let a0 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max) - c0;
    let g0 = 4.0 * spec.resolution;

    let jitter: [(f64, f64); FIT_RESTARTS] = [(0.0, 1.0), (-1.0, 0.5), (1.0, 2.0), (-0.5, 4.0), (0.5, 0.25)];
    let mut best: Option<(LorentzFit, f64)> = None;
    for (df, gscale) in jitter {
        let start = [a0, f_guess + df * spec.resolution, g0 * gscale, c0];
        let initial = sum_sq(&fs, &ys, &start);
        if let Some(fit) = gauss_newton(&fs, &ys, start) {
            let better = best.as_ref().is_none_or(|(b, _)| fit.residual < b.residual);
            if better {
                best = Some((fit, initial));
            }
        }
    }
    let Some((fit, initial)) = best else {
        return Err(SignalError::FitDiverged {
            initial_residual: f64::NAN,
            final_residual: f64::NAN,
        });
    };
    let scale: f64 = ys.iter().map(|y| y * y).sum();
    let converged = fit.residual <= 0.5 * initial || fit.residual <= 1e-20 * scale;
    if !converged || !(fit.gamma_fwhm > 0.0) {
        return Err(SignalError::FitDiverged {
            initial_residual: initial,
            final_residual: fit.residual,
        });
    }
    Ok(fit)
}

fn sum_sq(fs: &[f64], ys: &[f64], p: &[f64; 4]) -> f64 {
    fs.iter()
        .zip(ys)
        .map(|(&f, &y)| {
            let r = lorentzian(f, p[0], p[1], p[2], p[3]) - y;
            r * r
        })
        .sum()
}

/// Residual gradient row (∂/∂A, ∂/∂f₀, ∂/∂Γ, ∂/∂c).
fn jacobian_row(f: f64, p: &[f64; 4]) -> [f64; 4] {
    let [a, f0, g, _] = *p;
    let h = 0.5 * g;
    let u = f - f0;
    let den = u * u + h * h;
    let shape = h * h / den;
    let d_f0 = a * h * h * 2.0 * u / (den * den);
    let d_g = a * h * u * u / (den * den);
    [shape, d_f0, d_g, 1.0]
}

fn gauss_newton(fs: &[f64], ys: &[f64], start: [f64; 4]) -> Option<LorentzFit> {
    use nalgebra::{Matrix4, Vector4};
    let mut p = start;
    let mut cost = sum_sq(fs, ys, &p);
    let mut lambda = 1e-3;
    for _ in 0..FIT_MAX_ITER {
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&f, &y) in fs.iter().zip(ys) {
            let j = Vector4::from(jacobian_row(f, &p));
            let r = y - lorentzian(f, p[0], p[1], p[2], p[3]);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] *= 1.0 + lambda;
                damped[(k, k)] += 1e-300;
            }
            let Some(step) = damped.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2], p[3] + step[3]];
            trial[2] = trial[2].abs();
            let c = sum_sq(fs, ys, &trial);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                p = trial;
                cost = c;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mut jtj = Matrix4::<f64>::zeros();
    for &f in fs {
        let j = Vector4::from(jacobian_row(f, &p));
        jtj += j * j.transpose();
    }
    let dof = (fs.len() as f64 - 4.0).max(1.0);
    let sigma2 = cost / dof;
    let variances = jtj
        .try_inverse()
        .map(|inv| [inv[(0, 0)] * sigma2, inv[(1, 1)] * sigma2, inv[(2, 2)] * sigma2, inv[(3, 3)] * sigma2])
        .unwrap_or([f64::NAN; 4]);
    Some(LorentzFit {
        f0: p[1],
        gamma_fwhm: p[2],
        amplitude: p[0],
        offset: p[3],
        t2: coherence_time(p[2]),
        residual: cost,
        variances,
    })
}

/// Bins this far below the largest one are rounding noise.
pub const NUMERICAL_FLOOR_DB: f64 = -200.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bin: usize,
    /// Parabolically interpolated peak frequency.
    pub freq: f64,
    pub power_db: f64,
    /// Height above the median background, in dB.
    pub prominence_db: f64,
}

/// Local maxima standing at least `min_prominence_db` above the median
/// background, sorted by prominence (highest first).
///
/// A maximum must also clear the higher of the two valleys separating it
/// from taller terrain by the same margin, which rejects window sidelobes
/// and ripples riding on a larger peak's skirt. With `exclude_dc` the DC bin
/// and the window's DC main lobe are ignored.
pub fn peak_detect(spec: &Spectrum, min_prominence_db: f64, exclude_dc: bool) -> Vec<Peak> {
    let n = spec.len();
    if n < 3 {
        return Vec::new();
    }
    let first = if exclude_dc { spec.window.main_lobe_bins() + 1 } else { 0 };
    if first >= n {
        return Vec::new();
    }
    let db = &spec.power_db;
    let background = median(&db[first..]);
    let mut peaks = Vec::new();
    for k in first.max(1)..n - 1 {
        if !(db[k] > db[k - 1] && db[k] >= db[k + 1]) {
            continue;
        }
        let above = db[k] - background;
        if above < min_prominence_db || db[k] < NUMERICAL_FLOOR_DB {
            continue;
        }
        if topographic_prominence(db, k, first) < min_prominence_db {
            continue;
        }
        peaks.push(Peak {
            bin: k,
            freq: interpolate_peak(spec, k),
            power_db: db[k],
            prominence_db: above,
        });
    }
    peaks.sort_by(|a, b| b.prominence_db.total_cmp(&a.prominence_db).then(a.bin.cmp(&b.bin)));
    peaks
}

fn topographic_prominence(db: &[f64], k: usize, first: usize) -> f64 {
    let h = db[k];
    let mut left_min = h;
    let mut left_base = f64::NEG_INFINITY;
    for j in (first..k).rev() {
        if db[j] > h {
            left_base = left_min;
            break;
        }
        left_min = left_min.min(db[j]);
    }
    if left_base == f64::NEG_INFINITY {
        left_base = left_min;
    }
    let mut right_min = h;
    let mut right_base = f64::NEG_INFINITY;
    for &v in &db[k + 1..] {
        if v > h {
            right_base = right_min;
            break;
        }
        right_min = right_min.min(v);
    }
    if right_base == f64::NEG_INFINITY {
        right_base = right_min;
    }
    h - left_base.max(right_base)
}

fn interpolate_peak(spec: &Spectrum, k: usize) -> f64 {
    let (a, b, c) = (spec.power_db[k - 1], spec.power_db[k], spec.power_db[k + 1]);
    let den = a - 2.0 * b + c;
    let shift = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    (k as f64 + shift.clamp(-0.5, 0.5)) * spec.resolution
}

/// Full width at half maximum of the peak at bin `k`, from linear
/// interpolation of the −3 dB crossings in linear power.
pub fn peak_fwhm(spec: &Spectrum, k: usize) -> f64 {
    let half = 0.5 * spec.power[k];
    let p = &spec.power;
    let mut lo = k as f64;
    for j in (0..k).rev() {
        if p[j] <= half {
            lo = j as f64 + (half - p[j]) / (p[j + 1] - p[j]);
            break;
        }
        lo = j as f64;
    }
    let mut hi = k as f64;
    for j in k + 1..p.len() {
        if p[j] <= half {
            hi = (j - 1) as f64 + (p[j - 1] - half) / (p[j - 1] - p[j]);
            break;
        }
        hi = j as f64;
    }
    (hi - lo) * spec.resolution
}
