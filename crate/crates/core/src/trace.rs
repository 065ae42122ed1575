//! Uniformly sampled multi-channel time series and its on-disk forms.
//!
//! Two encodings are supported:
//!
//! * CSV with a header row `t,rho11,...,intensity`, values printed with 17
//!   significant digits so a read-back is exact.
//! * The `TCS1` binary form: magic `TCS1`, then little-endian `u32` channel
//!   count, `f64` t0, `f64` sample spacing, `u64` sample count, the channel
//!   table (`u16` byte length + UTF-8 name per channel), and finally the
//!   samples as channel-major little-endian `f64`.

use std::io::{self, BufRead, BufWriter, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat4::C64;

pub const BINARY_MAGIC: &[u8; 4] = b"TCS1";

/// Population channel names, ρ₁₁ through ρ₄₄.
pub const POPULATION_CHANNELS: [&str; 4] = ["rho11", "rho22", "rho33", "rho44"];

/// Recorded coherences as zero-based (row, column) pairs: ρ₁₃, ρ₁₄, ρ₂₃,
/// ρ₂₄ and the spin coherence ρ₁₂.
pub const COHERENCES: [(usize, usize); 5] = [(0, 2), (0, 3), (1, 2), (1, 3), (0, 1)];

pub const INTENSITY: &str = "intensity";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("missing channel `{0}`")]
    MissingChannel(String),
    #[error("channel `{name}` has {got} samples, expected {expected}")]
    LengthMismatch {
        name: String,
        got: usize,
        expected: usize,
    },
    #[error("malformed trace: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Label of a coherence channel, e.g. `13` for ρ₁₃.
pub fn coherence_label(row: usize, col: usize) -> String {
    format!("{}{}", row + 1, col + 1)
}

/// Integrator health figures collected during a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub steps: u64,
    /// Worst ‖ρ − ρ†‖∞ observed right before a hygiene pass.
    pub max_hermiticity_drift: f64,
    /// Worst |Tr ρ − 1| over all recorded samples.
    pub max_trace_error: f64,
    /// Smallest diagonal element over all recorded samples.
    pub min_population: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub name: String,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub t0: f64,
    pub dt_sample: f64,
    pub channels: Vec<Channel>,
    pub diagnostics: Diagnostics,
}

impl Trace {
    pub fn new(t0: f64, dt_sample: f64) -> Self {
        Trace {
            t0,
            dt_sample,
            channels: Vec::new(),
            diagnostics: Diagnostics::default(),
        }
    }

    /// Builds a trace from a single named series.
    pub fn from_series(name: &str, t0: f64, dt_sample: f64, data: Vec<f64>) -> Self {
        let mut t = Trace::new(t0, dt_sample);
        t.channels.push(Channel {
            name: name.to_string(),
            data,
        });
        t
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.data.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt_sample
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt_sample
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn channel(&self, name: &str) -> Result<&[f64], TraceError> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.data.as_slice())
            .ok_or_else(|| TraceError::MissingChannel(name.to_string()))
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.iter().any(|c| c.name == name)
    }

    /// Adds or replaces a channel. Its length must match the existing ones.
    pub fn set_channel(&mut self, name: &str, data: Vec<f64>) -> Result<(), TraceError> {
        if !self.channels.is_empty() && data.len() != self.len() {
            return Err(TraceError::LengthMismatch {
                name: name.to_string(),
                got: data.len(),
                expected: self.len(),
            });
        }
        match self.channels.iter_mut().find(|c| c.name == name) {
            Some(c) => c.data = data,
            None => self.channels.push(Channel {
                name: name.to_string(),
                data,
            }),
        }
        Ok(())
    }

    /// Population ρ_nn for zero-based level n.
    pub fn population(&self, level: usize) -> Result<&[f64], TraceError> {
        self.channel(POPULATION_CHANNELS[level])
    }

    /// Complex coherence series ρ_{row,col} rebuilt from its re/im columns.
    pub fn coherence(&self, row: usize, col: usize) -> Result<Vec<C64>, TraceError> {
        let label = coherence_label(row, col);
        let re = self.channel(&format!("re_rho{label}"))?;
        let im = self.channel(&format!("im_rho{label}"))?;
        Ok(re.iter().zip(im).map(|(&a, &b)| C64::new(a, b)).collect())
    }

    /// Sub-trace covering samples whose time lies in [start, end).
    pub fn window(&self, start: f64, end: f64) -> Trace {
        let n = self.len();
        let lo = (((start - self.t0) / self.dt_sample).ceil().max(0.0) as usize).min(n);
        let hi = (((end - self.t0) / self.dt_sample).ceil().max(0.0) as usize).min(n);
        let hi = hi.max(lo);
        Trace {
            t0: self.time(lo),
            dt_sample: self.dt_sample,
            channels: self
                .channels
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    data: c.data[lo..hi].to_vec(),
                })
                .collect(),
            diagnostics: self.diagnostics,
        }
    }

    /// Final `fraction` of the trace.
    pub fn tail(&self, fraction: f64) -> Trace {
        let end = self.time(self.len());
        self.window(end - fraction * self.duration(), end)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut w = BufWriter::new(w);
        write!(w, "t")?;
        for c in &self.channels {
            write!(w, ",{}", c.name)?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.time(i))?;
            for c in &self.channels {
                write!(w, ",{:.16e}", c.data[i])?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a CSV trace. The sample spacing is taken from the first two rows.
    pub fn read_csv<R: Read>(r: R) -> Result<Trace, TraceError> {
        let mut lines = io::BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| TraceError::Format("empty file".into()))??;
        let names: Vec<&str> = header.trim().split(',').collect();
        if names.first() != Some(&"t") {
            return Err(TraceError::Format("first column must be `t`".into()));
        }
        let mut times = Vec::new();
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len() - 1];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.trim().split(',');
            let parse = |f: Option<&str>| -> Result<f64, TraceError> {
                f.ok_or_else(|| TraceError::Format(format!("row {}: too few fields", lineno + 2)))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| TraceError::Format(format!("row {}: {e}", lineno + 2)))
            };
            times.push(parse(fields.next())?);
            for col in cols.iter_mut() {
                col.push(parse(fields.next())?);
            }
            if fields.next().is_some() {
                return Err(TraceError::Format(format!("row {}: too many fields", lineno + 2)));
            }
        }
        let t0 = times.first().copied().unwrap_or(0.0);
        let dt = if times.len() >= 2 {
            (times[times.len() - 1] - t0) / (times.len() - 1) as f64
        } else {
            1.0
        };
        if !(dt > 0.0) {
            return Err(TraceError::Format("time column is not increasing".into()));
        }
        let mut trace = Trace::new(t0, dt);
        for (name, data) in names[1..].iter().zip(cols) {
            trace.set_channel(name, data)?;
        }
        Ok(trace)
    }

    pub fn write_binary<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut w = BufWriter::new(w);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.channels.len() as u32).to_le_bytes())?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&self.dt_sample.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for c in &self.channels {
            let name = c.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| TraceError::Format(format!("channel name too long: {}", c.name)))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(name)?;
        }
        for c in &self.channels {
            for x in &c.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<Trace, TraceError> {
        let mut r = io::BufReader::new(r);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(TraceError::Format("bad magic, expected TCS1".into()));
        }
        let n_channels = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let t0 = f64::from_le_bytes(read_array(&mut r)?);
        let dt = f64::from_le_bytes(read_array(&mut r)?);
        let n_samples = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let mut names = Vec::with_capacity(n_channels);
        for _ in 0..n_channels {
            let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            names.push(
                String::from_utf8(buf)
                    .map_err(|_| TraceError::Format("channel name is not UTF-8".into()))?,
            );
        }
        let mut trace = Trace::new(t0, dt);
        for name in names {
            let mut data = Vec::with_capacity(n_samples);
            for _ in 0..n_samples {
                data.push(f64::from_le_bytes(read_array(&mut r)?));
            }
            trace.channels.push(Channel { name, data });
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(TraceError::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(trace)
    }

    /// Reads either encoding, sniffing the magic bytes.
    pub fn read_any(bytes: &[u8]) -> Result<Trace, TraceError> {
        if bytes.starts_with(BINARY_MAGIC) {
            Trace::read_binary(bytes)
        } else {
            Trace::read_csv(bytes)
        }
    }
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Trace {
        let mut t = Trace::new(0.5, 1e-7);
        t.set_channel("rho11", vec![0.25, 0.5, 1.0 / 3.0]).unwrap();
        t.set_channel("intensity", vec![1.0, -2.5e-300, 7.0]).unwrap();
        t
    }

    #[test]
    fn missing_channel_is_reported() {
        let t = sample();
        assert!(matches!(t.channel("rho33"), Err(TraceError::MissingChannel(n)) if n == "rho33"));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut t = sample();
        assert!(t.set_channel("x", vec![1.0]).is_err());
    }

    #[test]
    fn csv_header_and_round_trip() {
        let t = sample();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,rho11,intensity\n"));
        let back = Trace::read_any(&buf).unwrap();
        assert_eq!(back.channels, t.channels);
        assert!((back.t0 - t.t0).abs() < 1e-15);
    }

    #[test]
    fn binary_rejects_bad_magic() {
        assert!(Trace::read_binary(&b"TCS2\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn window_selects_half_open_range() {
        let mut t = Trace::new(0.0, 1.0);
        t.set_channel("x", (0..10).map(f64::from).collect()).unwrap();
        let w = t.window(2.0, 5.0);
        assert_eq!(w.channel("x").unwrap(), &[2.0, 3.0, 4.0]);
        assert_eq!(w.t0, 2.0);
        assert_eq!(t.tail(0.3).channel("x").unwrap(), &[7.0, 8.0, 9.0]);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bitwise(
            data in proptest::collection::vec(proptest::num::f64::ANY, 0..64),
            t0 in -1.0f64..1.0,
        ) {
            let mut t = Trace::new(t0, 1e-7);
            t.set_channel("a", data.clone()).unwrap();
            t.set_channel("b", data.iter().map(|x| -x).collect()).unwrap();
            let mut buf = Vec::new();
            t.write_binary(&mut buf).unwrap();
            let back = Trace::read_any(&buf).unwrap();
            prop_assert_eq!(back.channels.len(), 2);
            for (a, b) in back.channels.iter().zip(&t.channels) {
                prop_assert_eq!(&a.name, &b.name);
                let bits_a: Vec<u64> = a.data.iter().map(|x| x.to_bits()).collect();
                let bits_b: Vec<u64> = b.data.iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(bits_a, bits_b);
            }
        }

        #[test]
        fn csv_round_trip_is_exact_for_finite_values(
            data in proptest::collection::vec(-1e6f64..1e6, 2..40),
        ) {
            let mut t = Trace::new(0.0, 0.25);
            t.set_channel("x", data.clone()).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            let back = Trace::read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back.channel("x").unwrap(), &data[..]);
        }
    }
}
