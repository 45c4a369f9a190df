use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gaussian::DetectorAngles;
use crate::{Error, Result};

const CSV_MAGIC: &str = "# kipa records v1";
const COLUMNS: [&str; 4] = ["port1_x", "port1_p", "port2_x", "port2_p"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpState {
    On,
    Off,
}

impl fmt::Display for PumpState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PumpState::On => "on",
            PumpState::Off => "off",
        })
    }
}

impl FromStr for PumpState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(PumpState::On),
            "off" => Ok(PumpState::Off),
            _ => Err(Error::Validation(format!("unknown pump state '{s}'"))),
        }
    }
}

/// Scaled quadrature samples of both outputs, one `(X1, P1, X2, P2)` row per
/// measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRecords {
    samples: Vec<[f64; 4]>,
    pump_state: PumpState,
    seed: u64,
}

impl QuadratureRecords {
    pub fn new(samples: Vec<[f64; 4]>, pump_state: PumpState, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("records must contain at least one sample".into()));
        }
        Ok(Self {
            samples,
            pump_state,
            seed,
        })
    }

    /// Builds records from per-port `(X, P)` columns.
    pub fn from_columns(
        port1: (&[f64], &[f64]),
        port2: (&[f64], &[f64]),
        pump_state: PumpState,
        seed: u64,
    ) -> Result<Self> {
        let n = port1.0.len();
        if [port1.1.len(), port2.0.len(), port2.1.len()].iter().any(|&m| m != n) {
            return Err(Error::Validation("quadrature columns differ in length".into()));
        }
        let samples = (0..n)
            .map(|i| [port1.0[i], port1.1[i], port2.0[i], port2.1[i]])
            .collect();
        Self::new(samples, pump_state, seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[[f64; 4]] {
        &self.samples
    }

    pub fn pump_state(&self) -> PumpState {
        self.pump_state
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column `k` of `(X1, P1, X2, P2)`.
    pub fn column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |s| s[k])
    }

    /// Applies the detector rotation to every sample.
    pub fn rotated(&self, angles: DetectorAngles) -> Self {
        let r = angles.matrix();
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut out = [0.0; 4];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..4).map(|k| r[(i, k)] * s[k]).sum();
                }
                out
            })
            .collect();
        Self {
            samples,
            pump_state: self.pump_state,
            seed: self.seed,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{CSV_MAGIC} pump_state={} seed={} n={}",
            self.pump_state,
            self.seed,
            self.len()
        )?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(COLUMNS)?;
        for s in &self.samples {
            wr.serialize(s)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = BufReader::new(r);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let meta = first
            .trim()
            .strip_prefix(CSV_MAGIC)
            .ok_or_else(|| Error::Validation("missing records header line".into()))?;
        let mut pump_state = None;
        let mut seed = None;
        let mut n = None;
        for field in meta.split_whitespace() {
            match field.split_once('=') {
                Some(("pump_state", v)) => pump_state = Some(v.parse()?),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (pump_state, seed) = pump_state
            .zip(seed)
            .ok_or_else(|| Error::Validation("records header lacks pump_state or seed".into()))?;
        let mut rd = csv::Reader::from_reader(reader);
        if rd.headers()?.iter().ne(COLUMNS) {
            return Err(Error::Validation(format!("records columns must be {}", COLUMNS.join(","))));
        }
        let samples = rd
            .deserialize::<[f64; 4]>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if let Some(n) = n {
            if n != samples.len() {
                return Err(Error::Validation(format!(
                    "header declares {n} samples, file has {}",
                    samples.len()
                )));
            }
        }
        Self::new(samples, pump_state, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rec = QuadratureRecords::new(
            vec![[0.1, -0.2, 1e-17, 3.0], [1.0 / 3.0, 2.0, -5.5, 0.0]],
            PumpState::Off,
            42,
        )
        .unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# kipa records v1 pump_state=off seed=42 n=2\nport1_x,"));
        let back = QuadratureRecords::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn shape_checks() {
        assert!(QuadratureRecords::new(vec![], PumpState::On, 0).is_err());
        let a = [1.0, 2.0];
        let b = [1.0];
        assert!(QuadratureRecords::from_columns((&a, &a), (&a, &b), PumpState::On, 0).is_err());
    }

    #[test]
    fn quarter_turn_swaps_quadratures() {
        let rec = QuadratureRecords::new(vec![[1.0, 2.0, 3.0, 4.0]], PumpState::On, 0).unwrap();
        let r = rec.rotated(DetectorAngles::new(std::f64::consts::FRAC_PI_2, 0.0));
        let s = r.samples()[0];
        assert!((s[0] - 2.0).abs() < 1e-15 && (s[1] + 1.0).abs() < 1e-15);
        assert_eq!(&s[2..], &[3.0, 4.0]);
    }
}
