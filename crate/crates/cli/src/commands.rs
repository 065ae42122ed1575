use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use tcsim::integrator::IntegrateError;
use tcsim::optics::attach_intensity;
use tcsim::phases::{classify as classify_trace, run_sweep, PhaseError, PhasePoint};
use tcsim::signalkit::{
    autocorrelation, cross_correlation_phase, find_discontinuities, lorentz_fit, peak_detect, welch_spectrum,
    Discontinuity, LorentzRecord, SignalError,
};
use tcsim::trace::{TraceError, POPULATION_CHANNELS};
use tcsim::{evolve, Trace};

use crate::config::{AnalysisConfig, ConfigFile};
use crate::manifest::{sha256_hex, InputFile, RunManifest, RunStatus};
use crate::plot::line_plot;
use crate::{Cli, CliError, TraceFormat};

fn require_config(cli: &Cli) -> Result<ConfigFile, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))?;
    ConfigFile::load(path)
}

fn optional_config(cli: &Cli) -> Result<ConfigFile, CliError> {
    cli.config.as_ref().map_or(Ok(ConfigFile::default()), |p| ConfigFile::load(p))
}

fn out_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| CliError::Config("--out is required for this command".into()))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.into()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_columns(path: &Path, header: &str, columns: &[&[f64]]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        let row: Vec<String> = columns.iter().map(|c| c[i].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn trace_error(e: TraceError) -> CliError {
    match e {
        TraceError::MissingChannel(c) => CliError::MissingChannel(c),
        TraceError::Io(e) => CliError::Io(e),
        other => CliError::Format(other.to_string()),
    }
}

fn signal_error(e: SignalError) -> CliError {
    CliError::Numerical(e.to_string())
}

fn phase_error(e: PhaseError) -> CliError {
    match e {
        PhaseError::Trace(t) => trace_error(t),
        PhaseError::Signal(s) => signal_error(s),
        e @ (PhaseError::Integrate(IntegrateError::NonFiniteState { .. })
        | PhaseError::Integrate(IntegrateError::NoConvergence { .. })
        | PhaseError::NoPeriodDetected(_)) => CliError::Numerical(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

fn read_trace(path: &Path) -> Result<(Trace, InputFile), CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let trace = Trace::read_any(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    let input = InputFile {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    };
    Ok((trace, input))
}

fn write_trace(dir: &Path, trace: &Trace, format: TraceFormat) -> Result<(), CliError> {
    if matches!(format, TraceFormat::Csv | TraceFormat::Both) {
        let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
        trace.write_csv(&mut w).map_err(trace_error)?;
        w.flush()?;
    }
    if matches!(format, TraceFormat::Binary | TraceFormat::Both) {
        let mut w = BufWriter::new(File::create(dir.join("trace.tcs"))?);
        trace.write_binary(&mut w).map_err(trace_error)?;
        w.flush()?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ChannelStats {
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

fn stats(x: &[f64]) -> ChannelStats {
    let n = x.len().max(1) as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    ChannelStats {
        mean,
        std: var.sqrt(),
        min: x.iter().copied().fold(f64::INFINITY, f64::min),
        max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Serialize)]
struct RunSummary {
    samples: usize,
    duration_s: f64,
    diagnostics: tcsim::trace::Diagnostics,
    /// Statistics over the second half of the run.
    tail: BTreeMap<String, ChannelStats>,
}

fn summarize(trace: &Trace) -> RunSummary {
    let tail = trace.tail(0.5);
    let tail = POPULATION_CHANNELS
        .iter()
        .copied()
        .chain(std::iter::once("intensity"))
        .filter_map(|c| tail.channel(c).ok().map(|x| (c.to_string(), stats(x))))
        .collect();
    RunSummary {
        samples: trace.len(),
        duration_s: trace.duration(),
        diagnostics: trace.diagnostics,
        tail,
    }
}

pub fn simulate(cli: &Cli, format: TraceFormat) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let params = cfg.point_params()?;
    let dir = out_dir(cli)?;
    let rho0 = params
        .sim
        .initial_state
        .density()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let start = Instant::now();
    let result = evolve(&rho0, &params.system, &params.loss, &params.sim, &params.schedule);
    let mut manifest = RunManifest::new("simulate");
    manifest.params = Some(params.clone());
    manifest.seed = cli.seed;
    let (mut trace, failure) = match result {
        Ok(t) => (t, None),
        Err(IntegrateError::NonFiniteState { partial, step, time }) => {
            let msg = format!("state became non-finite at step {step} (t = {time:e} s)");
            (*partial, Some(msg))
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };
    manifest.wall_clock_s = Some(start.elapsed().as_secs_f64());
    if failure.is_none() {
        attach_intensity(&mut trace, &params.readout).map_err(|e| CliError::Config(e.to_string()))?;
    }
    write_trace(&dir, &trace, format)?;
    write_json(&dir.join("summary.json"), &summarize(&trace))?;
    if let Some(msg) = failure {
        manifest.status = RunStatus::Partial;
        manifest.error = Some(msg.clone());
        manifest.seal(&dir)?;
        return Err(CliError::Numerical(msg));
    }
    let m = manifest.seal(&dir)?;
    println!("simulate: {} samples -> {} (hash {})", trace.len(), dir.display(), &m.content_hash[..12]);
    Ok(())
}

#[derive(Serialize)]
struct PhaseRecord<'a> {
    reference_hz: f64,
    integration_window_s: f64,
    carrier_offset_hz: f64,
    discontinuities: &'a [Discontinuity],
}

fn analysis_series(trace: &Trace, cfg: &AnalysisConfig) -> Result<(Trace, Vec<f64>), CliError> {
    let sub = match cfg.window {
        Some([a, b]) => trace.window(a, b),
        None => trace.clone(),
    };
    let x = sub.channel(&cfg.channel).map_err(trace_error)?;
    if x.is_empty() {
        return Err(CliError::Config("analysis window contains no samples".into()));
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centred = x.iter().map(|v| v - mean).collect();
    Ok((sub, centred))
}

pub fn analyze(cli: &Cli, path: &Path, channel: Option<&str>, plots: bool) -> Result<(), CliError> {
    let mut cfg = optional_config(cli)?.analysis();
    if let Some(c) = channel {
        cfg.channel = c.to_string();
    }
    cfg.plots |= plots;
    let dir = out_dir(cli)?;
    let start = Instant::now();
    let (trace, input) = read_trace(path)?;
    let (sub, x) = analysis_series(&trace, &cfg)?;
    let dt = sub.dt_sample;

    let spec = welch_spectrum(&x, dt, cfg.window_kind, cfg.segments).map_err(signal_error)?;
    write_columns(
        &dir.join("spectrum.csv"),
        "freq_hz,power,power_db",
        &[&spec.freqs, &spec.power, &spec.power_db],
    )?;
    let peaks = peak_detect(&spec, cfg.min_prominence_db, true);
    let mut lines = String::new();
    for p in &peaks {
        let _ = writeln!(lines, "{}", serde_json::to_string(p).map_err(|e| CliError::Io(e.into()))?);
    }
    fs::write(dir.join("peaks.jsonl"), lines)?;
    let strongest = peaks.first().map(|p| p.freq);
    let need_peak = |what: &str| CliError::Numerical(format!("{what}: no spectral peak above {} dB", cfg.min_prominence_db));

    if let Some(opt) = &cfg.lorentz {
        let guess = opt.f_guess_hz.or(strongest).ok_or_else(|| need_peak("lorentz fit"))?;
        let fit = lorentz_fit(&spec, guess, opt.halfwidth_hz).map_err(signal_error)?;
        write_json(&dir.join("lorentz.json"), &LorentzRecord::from(&fit))?;
    }
    if let Some(opt) = &cfg.phase {
        let reference = opt.reference_hz.or(strongest).ok_or_else(|| need_peak("phase extraction"))?;
        let pt = cross_correlation_phase(&x, sub.t0, dt, reference, opt.integration_window_s).map_err(signal_error)?;
        let events = find_discontinuities(&pt, &opt.rule);
        let env = pt.envelope();
        write_columns(
            &dir.join("phase.csv"),
            "tau_s,f,q,phase_rad,envelope",
            &[&pt.tau, &pt.f, &pt.q, &pt.inst_phase, &env],
        )?;
        write_json(
            &dir.join("phase_events.json"),
            &PhaseRecord {
                reference_hz: reference,
                integration_window_s: opt.integration_window_s,
                carrier_offset_hz: pt.carrier_offset_hz(),
                discontinuities: &events,
            },
        )?;
        if cfg.plots {
            fs::write(dir.join("phase.svg"), line_plot(&pt.tau, &pt.f, "tau (s)", "F(tau)"))?;
        }
    }
    if let Some(opt) = &cfg.autocorrelation {
        let r = autocorrelation(&x, dt, opt.max_lag_s).map_err(signal_error)?;
        let lags: Vec<f64> = (0..r.len()).map(|k| k as f64 * dt).collect();
        write_columns(&dir.join("autocorrelation.csv"), "lag_s,r", &[&lags, &r])?;
    }
    if cfg.plots {
        fs::write(dir.join("spectrum.svg"), line_plot(&spec.freqs, &spec.power_db, "frequency (Hz)", "power (dB)"))?;
    }

    let mut manifest = RunManifest::new("analyze");
    manifest.analysis = Some(cfg.clone());
    manifest.input = Some(input);
    manifest.seed = cli.seed;
    manifest.wall_clock_s = Some(start.elapsed().as_secs_f64());
    manifest.seal(&dir)?;
    match strongest {
        Some(f) => println!("analyze: {} peaks, strongest at {f:.3} Hz", peaks.len()),
        None => println!("analyze: no peaks above {} dB", cfg.min_prominence_db),
    }
    Ok(())
}

pub fn classify(cli: &Cli, path: &Path, channel: Option<&str>) -> Result<(), CliError> {
    let analysis = optional_config(cli)?.analysis();
    let mut cfg = analysis.classifier.clone();
    if let Some(c) = channel {
        cfg.channel = c.to_string();
    }
    let start = Instant::now();
    let (trace, input) = read_trace(path)?;
    let window = analysis.window.map(|[a, b]| (a, b));
    let point = classify_trace(&trace, window, &cfg).map_err(phase_error)?;
    println!("{}", serde_json::to_string(&point).map_err(|e| CliError::Io(e.into()))?);
    if cli.out.is_some() {
        let dir = out_dir(cli)?;
        write_json(&dir.join("classification.json"), &point)?;
        let mut manifest = RunManifest::new("classify");
        manifest.analysis = Some(AnalysisConfig {
            classifier: cfg,
            ..analysis
        });
        manifest.input = Some(input);
        manifest.seed = cli.seed;
        manifest.wall_clock_s = Some(start.elapsed().as_secs_f64());
        manifest.seal(&dir)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn grid_csv(points: &[PhasePoint], axes: &[&str]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{},label,crystal_freq_hz,peak_freq_hz,peak_prominence_db,peak_fwhm_hz,instability_rms,error",
        axes.join(",")
    );
    for p in points {
        let mut row: Vec<String> = p.coordinates.iter().map(|(_, v)| v.to_string()).collect();
        row.push(p.label.map_or(String::new(), |l| l.name().to_string()));
        row.push(opt_num(p.crystal_freq));
        row.push(opt_num(p.peak_freq));
        row.push(opt_num(p.peak_prominence_db));
        row.push(opt_num(p.peak_fwhm));
        row.push(p.instability_rms.to_string());
        row.push(csv_field(p.error.as_deref().unwrap_or("")));
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

#[derive(Serialize)]
struct SweepSummary {
    points: usize,
    failed: usize,
    labels: BTreeMap<String, usize>,
}

pub fn sweep(cli: &Cli) -> Result<(), CliError> {
    let cfg = require_config(cli)?;
    let spec = cfg.sweep_spec()?;
    let dir = out_dir(cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let start = Instant::now();
    let points = run_sweep(&spec, jobs).map_err(phase_error)?;
    let wall = start.elapsed().as_secs_f64();

    let mut lines = String::new();
    for p in &points {
        let _ = writeln!(lines, "{}", serde_json::to_string(p).map_err(|e| CliError::Io(e.into()))?);
    }
    fs::write(dir.join("results.jsonl"), lines)?;
    let axes: Vec<&str> = spec.axes.iter().map(|a| a.parameter.name()).collect();
    fs::write(dir.join("grid.csv"), grid_csv(&points, &axes))?;
    let mut labels = BTreeMap::new();
    for p in &points {
        if let Some(l) = p.label {
            *labels.entry(l.name().to_string()).or_insert(0) += 1;
        }
    }
    let failed = points.iter().filter(|p| p.error.is_some()).count();
    write_json(
        &dir.join("summary.json"),
        &SweepSummary {
            points: points.len(),
            failed,
            labels,
        },
    )?;

    for (i, p) in points.iter().enumerate() {
        let pdir = dir.join("points").join(format!("{i:04}"));
        fs::create_dir_all(&pdir)?;
        write_json(&pdir.join("point.json"), p)?;
        let mut m = RunManifest::new("sweep-point");
        m.params = p.params.clone();
        m.seed = cli.seed;
        if let Some(e) = &p.error {
            m.status = RunStatus::Failed;
            m.error = Some(e.clone());
        }
        m.seal(&pdir)?;
    }

    let mut manifest = RunManifest::new("sweep");
    manifest.sweep = Some(spec);
    manifest.seed = cli.seed;
    manifest.wall_clock_s = Some(wall);
    if failed > 0 {
        manifest.status = RunStatus::Partial;
        manifest.error = Some(format!("{failed} of {} points failed", points.len()));
    }
    manifest.seal(&dir)?;
    println!("sweep: {} points ({failed} failed) -> {}", points.len(), dir.display());
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} sweep points failed")));
    }
    Ok(())
}
