//! JSON run configuration. Frequencies in Hz, times in s, rates in 1/s.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tcsim::model::LossSpec;
use tcsim::phases::{Axis, PointParams, SweepSpec, DEFAULT_BUDGET};
use tcsim::signalkit::{DiscontinuityRule, WindowKind};
use tcsim::{ClassifierConfig, PhaseSchedule, ReadoutConfig, SimConfig, SystemParams};

use crate::CliError;

/// Top-level document. Every section is optional; missing physics sections
/// fall back to the baseline parameter set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub system: Option<SystemParams>,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    /// Fixed readout weights; by default they follow the drive couplings.
    #[serde(default)]
    pub readout: Option<ReadoutConfig>,
    #[serde(default)]
    pub schedule: Option<PhaseSchedule>,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axes: Vec<Axis>,
    #[serde(default)]
    pub omega_per_sqrt_power: Option<f64>,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub channel: String,
    /// [start, end] in seconds; the whole trace when absent.
    pub window: Option<[f64; 2]>,
    pub window_kind: WindowKind,
    /// Welch segments; 1 gives a single periodogram.
    pub segments: usize,
    /// Peaks below this prominence are not reported.
    pub min_prominence_db: f64,
    pub lorentz: Option<LorentzOptions>,
    pub phase: Option<PhaseOptions>,
    pub autocorrelation: Option<AutocorrelationOptions>,
    pub classifier: ClassifierConfig,
    /// Also write SVG plots next to the data files.
    pub plots: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            channel: "rho33".into(),
            window: None,
            window_kind: WindowKind::Hann,
            segments: 1,
            min_prominence_db: 10.0,
            lorentz: None,
            phase: None,
            autocorrelation: None,
            classifier: ClassifierConfig::default(),
            plots: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LorentzOptions {
    /// Half-width of the fitted band around the guess.
    pub halfwidth_hz: f64,
    /// Centre guess; the strongest reported peak when absent.
    #[serde(default)]
    pub f_guess_hz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseOptions {
    /// Reference tone; the strongest reported peak when absent.
    #[serde(default)]
    pub reference_hz: Option<f64>,
    pub integration_window_s: f64,
    #[serde(default)]
    pub rule: DiscontinuityRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutocorrelationOptions {
    pub max_lag_s: f64,
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some([a, b]) = self.window {
            if !(a.is_finite() && b.is_finite() && b > a) {
                return Err(invalid(format!("analysis.window [{a}, {b}] is not an increasing pair")));
            }
        }
        if self.segments == 0 {
            return Err(invalid("analysis.segments must be at least 1"));
        }
        if let Some(l) = &self.lorentz {
            if !(l.halfwidth_hz > 0.0) {
                return Err(invalid("analysis.lorentz.halfwidth_hz must be > 0"));
            }
        }
        if let Some(p) = &self.phase {
            if !(p.integration_window_s > 0.0) {
                return Err(invalid("analysis.phase.integration_window_s must be > 0"));
            }
            if p.reference_hz.is_some_and(|f| !(f > 0.0)) {
                return Err(invalid("analysis.phase.reference_hz must be > 0"));
            }
        }
        if let Some(a) = &self.autocorrelation {
            if !(a.max_lag_s > 0.0) {
                return Err(invalid("analysis.autocorrelation.max_lag_s must be > 0"));
            }
        }
        self.classifier.validate().map_err(invalid)
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and validates every section present.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ConfigFile = serde_json::from_str(text).map_err(invalid)?;
        cfg.point_params()?;
        cfg.analysis().validate()?;
        if cfg.sweep.is_some() {
            cfg.sweep_spec()?;
        }
        Ok(cfg)
    }

    pub fn system(&self) -> SystemParams {
        self.system.unwrap_or_else(SystemParams::baseline)
    }

    pub fn analysis(&self) -> AnalysisConfig {
        self.analysis.clone().unwrap_or_default()
    }

    /// Fully resolved single-run parameters.
    pub fn point_params(&self) -> Result<PointParams, CliError> {
        let system = self.system();
        system.validate().map_err(invalid)?;
        let loss = self.loss.unwrap_or_default().resolve(&system);
        loss.validate().map_err(invalid)?;
        let sim = self.sim.clone().unwrap_or_default();
        sim.validate().map_err(invalid)?;
        let schedule = self.schedule.clone().unwrap_or_default();
        schedule.check_horizon(sim.horizon).map_err(invalid)?;
        let readout = self.readout.clone().unwrap_or_else(|| ReadoutConfig::matching(&system));
        readout.validate().map_err(invalid)?;
        Ok(PointParams {
            system,
            loss,
            sim,
            readout,
            schedule,
        })
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, CliError> {
        let section = self.sweep.as_ref().ok_or_else(|| invalid("config has no `sweep` section"))?;
        let spec = SweepSpec {
            axes: section.axes.clone(),
            system: self.system(),
            loss: self.loss.unwrap_or_default(),
            sim: self.sim.clone().unwrap_or_default(),
            readout: self.readout.clone(),
            schedule: self.schedule.clone().unwrap_or_default(),
            classifier: self.analysis().classifier,
            omega_per_sqrt_power: section.omega_per_sqrt_power,
            budget: section.budget,
        };
        spec.validate().map_err(invalid)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_baseline() {
        let cfg = ConfigFile::parse("{}").unwrap();
        let p = cfg.point_params().unwrap();
        assert_eq!(p.system, SystemParams::baseline());
        assert_eq!(p.sim, SimConfig::default());
        assert!(p.schedule.events().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [r#"{"sytem": {}}"#, r#"{"sim": {"dt": 1e-9, "horizon": 1e-3, "record_stride": 100, "foo": 1}}"#] {
            assert!(matches!(ConfigFile::parse(doc), Err(CliError::Config(_))), "{doc}");
        }
    }

    #[test]
    fn non_positive_dt_is_a_config_error() {
        let doc = r#"{"sim": {"dt": 0.0, "horizon": 1e-3, "record_stride": 100}}"#;
        let err = ConfigFile::parse(doc).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("dt")), "{err}");
    }

    #[test]
    fn kick_past_horizon_is_rejected() {
        let doc = r#"{"sim": {"dt": 1e-9, "horizon": 1e-3, "record_stride": 100},
                      "schedule": [{"time": 2e-3, "phase_jump": 3.14}]}"#;
        assert!(ConfigFile::parse(doc).is_err());
    }

    #[test]
    fn sweep_over_budget_is_rejected_at_parse_time() {
        let doc = r#"{"sweep": {"axes": [{"parameter": "delta_s", "values": [0, 1, 2]}], "budget": 2}}"#;
        let err = ConfigFile::parse(doc).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }

    #[test]
    fn analysis_defaults_fill_missing_fields() {
        let cfg = ConfigFile::parse(r#"{"analysis": {"channel": "intensity"}}"#).unwrap();
        let a = cfg.analysis();
        assert_eq!(a.channel, "intensity");
        assert_eq!(a.segments, 1);
        assert_eq!(a.min_prominence_db, 10.0);
    }
}
