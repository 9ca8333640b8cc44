//! Observed event times on a finite window `(0, r]`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HawkesError, Result};

/// A realization `t_1 < t_2 < ... < t_n` on `(0, r]`.
///
/// The origin `t_0 = 0` and the stopping time `t_{n+1} = r` are virtual
/// points and are never stored in `times`. An event exactly at `r` is
/// admitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSeries {
    times: Vec<f64>,
    stopping_time: f64,
}

impl EventSeries {
    pub fn new(times: Vec<f64>, stopping_time: f64) -> Result<Self> {
        if !(stopping_time.is_finite() && stopping_time > 0.0) {
            return Err(HawkesError::InvalidEvents(format!(
                "stopping time must be finite and positive, got {stopping_time}"
            )));
        }
        let mut prev = 0.0;
        for (i, &t) in times.iter().enumerate() {
            if !t.is_finite() || t <= 0.0 || t > stopping_time {
                return Err(HawkesError::InvalidEvents(format!(
                    "event {i} at {t} lies outside (0, {stopping_time}]"
                )));
            }
            if i > 0 && t <= prev {
                return Err(HawkesError::InvalidEvents(format!(
                    "times must be strictly increasing: event {i} at {t} follows {prev}"
                )));
            }
            prev = t;
        }
        Ok(Self {
            times,
            stopping_time,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// The stopping time `r`.
    pub fn stopping_time(&self) -> f64 {
        self.stopping_time
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean gap between consecutive events, counting the gap from the origin.
    pub fn mean_gap(&self) -> f64 {
        match self.times.last() {
            Some(&last) => last / self.times.len() as f64,
            None => self.stopping_time,
        }
    }

    /// Stable content hash used to check that two fits saw the same data.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.stopping_time.to_bits().to_le_bytes());
        for t in &self.times {
            hasher.update(t.to_bits().to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut out = String::with_capacity(16);
        for byte in &digest[..8] {
            let _ = write!(out, "{byte:02x}");
        }
        out
    }

    /// Writes the delimited text form: a `# r=<value>` comment, the `time`
    /// header and one event per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# r={}", self.stopping_time)?;
        writeln!(w, "time")?;
        for t in &self.times {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    /// Reads the delimited text form. Extra columns after the first are
    /// ignored so simulation output can be read back directly. When the
    /// file carries no `# r=` comment, `default_r` is used.
    pub fn read_text<R: BufRead>(reader: R, default_r: Option<f64>) -> Result<Self> {
        let mut r = default_r;
        let mut times = Vec::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(value) = comment.trim().strip_prefix("r=") {
                    let parsed = value.trim().parse::<f64>().map_err(|e| HawkesError::Parse {
                        line: lineno,
                        message: format!("bad stopping time: {e}"),
                    })?;
                    r = Some(parsed);
                }
                continue;
            }
            let first = line.split(',').next().unwrap_or("").trim();
            if !saw_header {
                if first != "time" {
                    return Err(HawkesError::Parse {
                        line: lineno,
                        message: format!("expected header `time`, found `{line}`"),
                    });
                }
                saw_header = true;
                continue;
            }
            let t = first.parse::<f64>().map_err(|e| HawkesError::Parse {
                line: lineno,
                message: format!("bad event time `{first}`: {e}"),
            })?;
            times.push(t);
        }
        let r = r.ok_or_else(|| {
            HawkesError::InvalidEvents("missing stopping time (`# r=<value>`)".to_string())
        })?;
        Self::new(times, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_duplicates_and_out_of_window() {
        assert!(EventSeries::new(vec![1.0, 1.0], 2.0).is_err());
        assert!(EventSeries::new(vec![0.0, 1.0], 2.0).is_err());
        assert!(EventSeries::new(vec![1.0, 3.0], 2.0).is_err());
        assert!(EventSeries::new(vec![2.0, 1.0], 3.0).is_err());
        assert!(EventSeries::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn admits_event_at_stopping_time() {
        let ev = EventSeries::new(vec![0.5, 2.0], 2.0).unwrap();
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let ev = EventSeries::new(vec![0.1, 0.2 + 1e-15, std::f64::consts::PI], 10.0).unwrap();
        let mut buf = Vec::new();
        ev.write_text(&mut buf).unwrap();
        let back = EventSeries::read_text(&buf[..], None).unwrap();
        assert_eq!(ev, back);
        assert_eq!(ev.fingerprint(), back.fingerprint());
    }

    #[test]
    fn reads_simulation_output_and_sidecar_r() {
        let text = "time,parent_index,generation\n1.5,0,0\n2.5,1,1\n";
        let ev = EventSeries::read_text(text.as_bytes(), Some(3.0)).unwrap();
        assert_eq!(ev.times(), &[1.5, 2.5]);
        assert!(EventSeries::read_text(text.as_bytes(), None).is_err());
        assert!(EventSeries::read_text("t\n1\n".as_bytes(), Some(2.0)).is_err());
    }
}
