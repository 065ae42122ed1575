//! Detected intensity from the density-matrix trajectory, using a uniform
//! thin-slab closure of the slowly-varying-amplitude propagation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SystemParams;
use crate::trace::{Trace, TraceError, INTENSITY};

#[derive(Debug, Error)]
pub enum OpticsError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid readout configuration: {0}")]
    InvalidConfig(String),
}

/// Coherence labels accepted as dipole weight keys.
pub const READOUT_LABELS: [&str; 5] = ["13", "14", "23", "24", "12"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    /// Weight d_ge per coherence label (`"13"` for ρ₁₃ and so on).
    pub dipole_weights: BTreeMap<String, f64>,
    /// Aggregate coupling κ between polarization and field.
    pub coupling_constant: f64,
    /// Incident field amplitude E₀.
    pub input_field: f64,
    /// Light crosses the sample twice (mirror behind it).
    #[serde(default)]
    pub double_pass: bool,
}

impl ReadoutConfig {
    /// Weights mirroring the drive couplings: 13 and 24 get t₁, 14 and 23
    /// get t₂. κ = E₀ = 1, single pass.
    pub fn matching(params: &SystemParams) -> Self {
        let dipole_weights = [("13", params.t1), ("14", params.t2), ("23", params.t2), ("24", params.t1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        ReadoutConfig {
            dipole_weights,
            coupling_constant: 1.0,
            input_field: 1.0,
            double_pass: false,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        for (k, v) in &self.dipole_weights {
            if !READOUT_LABELS.contains(&k.as_str()) {
                return Err(OpticsError::InvalidConfig(format!(
                    "unknown coherence label `{k}` (expected one of {READOUT_LABELS:?})"
                )));
            }
            if !v.is_finite() {
                return Err(OpticsError::InvalidConfig(format!("weight `{k}` is not finite")));
            }
        }
        if !self.dipole_weights.values().any(|&v| v != 0.0) {
            return Err(OpticsError::InvalidConfig("all dipole weights are zero".into()));
        }
        if !self.coupling_constant.is_finite() || !self.input_field.is_finite() {
            return Err(OpticsError::InvalidConfig("κ and E₀ must be finite".into()));
        }
        Ok(())
    }

    fn path_factor(&self) -> f64 {
        if self.double_pass {
            2.0
        } else {
            1.0
        }
    }
}

/// Im P(t) with P = Σ d_ge·ρ_ge.
pub fn polarization(trace: &Trace, cfg: &ReadoutConfig) -> Result<Vec<f64>, OpticsError> {
    cfg.validate()?;
    let mut out = vec![0.0; trace.len()];
    for (label, &w) in &cfg.dipole_weights {
        let im = trace.channel(&format!("im_rho{label}"))?;
        for (o, v) in out.iter_mut().zip(im) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// I(t) = (E₀ + κ·Im P)², with κ doubled for a double pass.
pub fn transmitted_intensity(trace: &Trace, cfg: &ReadoutConfig) -> Result<Vec<f64>, OpticsError> {
    let k = cfg.coupling_constant * cfg.path_factor();
    Ok(polarization(trace, cfg)?
        .into_iter()
        .map(|p| {
            let e = cfg.input_field + k * p;
            e * e
        })
        .collect())
}

/// Computes I(t) and stores it as the `intensity` channel.
pub fn attach_intensity(trace: &mut Trace, cfg: &ReadoutConfig) -> Result<(), OpticsError> {
    let i = transmitted_intensity(trace, cfg)?;
    trace.set_channel(INTENSITY, i)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coherence_trace(im13: Vec<f64>) -> Trace {
        let n = im13.len();
        let mut t = Trace::new(0.0, 1e-7);
        for label in ["13", "14", "23", "24"] {
            t.set_channel(&format!("re_rho{label}"), vec![0.0; n]).unwrap();
            let data = if label == "13" { im13.clone() } else { vec![0.0; n] };
            t.set_channel(&format!("im_rho{label}"), data).unwrap();
        }
        t
    }

    fn unit_13() -> ReadoutConfig {
        ReadoutConfig {
            dipole_weights: [("13".to_string(), 1.0)].into_iter().collect(),
            coupling_constant: 0.5,
            input_field: 2.0,
            double_pass: false,
        }
    }

    #[test]
    fn zero_coherence_gives_zero_polarization_and_bare_field() {
        let t = coherence_trace(vec![0.0; 10]);
        let cfg = ReadoutConfig::matching(&SystemParams::baseline());
        assert!(polarization(&t, &cfg).unwrap().iter().all(|&v| v == 0.0));
        assert!(transmitted_intensity(&t, &cfg).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn imaginary_coherence_is_read_out() {
        let t = coherence_trace(vec![0.3; 5]);
        assert_eq!(polarization(&t, &unit_13()).unwrap(), vec![0.3; 5]);
    }

    #[test]
    fn polarization_is_linear_in_weights() {
        let t = coherence_trace((0..20).map(|i| (i as f64 * 0.3).sin()).collect());
        let mut cfg = unit_13();
        let a = polarization(&t, &cfg).unwrap();
        cfg.dipole_weights.insert("13".into(), 2.0);
        let b = polarization(&t, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn double_pass_doubles_the_modulation() {
        let t = coherence_trace(vec![0.1; 3]);
        let mut cfg = unit_13();
        cfg.double_pass = true;
        let i = transmitted_intensity(&t, &cfg).unwrap();
        assert!((i[0] - (2.0 + 0.1f64).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn vanishing_coupling_leaves_input_intensity() {
        let t = coherence_trace(vec![0.7; 4]);
        let mut cfg = unit_13();
        cfg.coupling_constant = 0.0;
        assert_eq!(transmitted_intensity(&t, &cfg).unwrap(), vec![4.0; 4]);
    }

    #[test]
    fn spin_coherence_requires_its_channel() {
        let t = coherence_trace(vec![0.0; 4]);
        let mut cfg = unit_13();
        cfg.dipole_weights.insert("12".into(), 1.0);
        assert!(matches!(
            polarization(&t, &cfg),
            Err(OpticsError::Trace(TraceError::MissingChannel(_)))
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = unit_13();
        cfg.dipole_weights.insert("13".into(), 0.0);
        assert!(cfg.validate().is_err());
        let mut cfg = unit_13();
        cfg.dipole_weights.insert("33".into(), 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = unit_13();
        cfg.coupling_constant = f64::NAN;
        assert!(cfg.validate().is_err());
    }
}
