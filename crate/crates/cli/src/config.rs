//! Run configuration: a TOML file with one section per stage. Every physical
//! quantity carries its unit in the key name (`_Hz`, `_dB`, `_quanta`, ...).
//!
//! ```toml
//! [device]
//! f_a_Hz = 7.147e9
//! kappa_e1_Hz = 19.4e6
//! kappa_e2_Hz = 13.2e6
//! kappa_i_Hz = 3.0e6
//!
//! [pump]
//! cooperativity_range = [0.05, 0.5]
//! points = 10
//!
//! [sampler]
//! samples = 100000
//! seed = 2024
//! ```

use std::path::{Path, PathBuf};

use kipa_core::cavity::{HeatingModel, HeatingOrder, ResonatorParams};
use kipa_core::gaussian::LogBase;
use kipa_core::measurement::{AngleMode, ChainParams, MIN_GRID_POINTS};
use kipa_core::units::hz_to_angular;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const DEFAULT_POINTS: usize = 10;
const DEFAULT_ANGLE_GRID: usize = 64;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    device: RawDevice,
    #[serde(default)]
    pump: RawPump,
    heating: Option<RawHeating>,
    #[serde(default)]
    chain: RawChains,
    #[serde(default)]
    analysis: RawAnalysis,
    sampler: Option<RawSampler>,
    #[serde(default)]
    output: RawOutput,
    calibration: Option<RawCalibration>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    #[serde(rename = "f_a_Hz")]
    f_a: Option<f64>,
    #[serde(rename = "kappa_e1_Hz")]
    kappa_e1: Option<f64>,
    #[serde(rename = "kappa_e2_Hz")]
    kappa_e2: Option<f64>,
    #[serde(rename = "kappa_i_Hz")]
    kappa_i: Option<f64>,
    #[serde(rename = "n_e1_quanta")]
    n_e1: Option<f64>,
    #[serde(rename = "n_e2_quanta")]
    n_e2: Option<f64>,
    #[serde(rename = "n_i_quanta")]
    n_i: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPump {
    cooperativity: Option<Vec<f64>>,
    cooperativity_range: Option<[f64; 2]>,
    power_au: Option<Vec<f64>>,
    power_range_au: Option<[f64; 2]>,
    points: Option<usize>,
    phase_rad: Option<f64>,
    #[serde(rename = "detuning_Hz")]
    detuning: Option<f64>,
    #[serde(rename = "sideband_Hz")]
    sideband: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeating {
    pump_order: Option<HeatingOrder>,
    heating_order: Option<HeatingOrder>,
    c_pump_per_au: Option<f64>,
    c_heat_per_au: Option<f64>,
    fit_data: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChains {
    #[serde(default)]
    port1: RawChain,
    #[serde(default)]
    port2: RawChain,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    #[serde(rename = "gain_dB")]
    gain_db: Option<f64>,
    #[serde(rename = "n_add_quanta")]
    n_add: Option<f64>,
    #[serde(rename = "bandwidth_Hz")]
    bandwidth: Option<f64>,
    impedance_ohm: Option<f64>,
    #[serde(rename = "if_Hz")]
    if_freq: Option<f64>,
    #[serde(rename = "sample_rate_Hz")]
    sample_rate: Option<f64>,
    loss_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    angle_mode: Option<AngleMode>,
    angle_grid: Option<usize>,
    log_base: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSampler {
    samples: usize,
    seed: Option<u64>,
    xi_quanta: Option<f64>,
    write_records: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
    formats: Option<Vec<Format>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalibration {
    curve: PathBuf,
    #[serde(rename = "frequency_Hz")]
    frequency: Option<f64>,
    impedance_ohm: Option<f64>,
    #[serde(rename = "bandwidth_Hz")]
    bandwidth: Option<f64>,
    #[serde(rename = "gain_dB_init")]
    gain_db_init: Option<f64>,
    n_add_init_quanta: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// What the sweep axis holds.
#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    Cooperativity(Vec<f64>),
    /// Pump power in arbitrary units; mapped through the heating model.
    Power(Vec<f64>),
}

impl Sweep {
    pub fn values(&self) -> &[f64] {
        match self {
            Sweep::Cooperativity(v) | Sweep::Power(v) => v,
        }
    }

    pub fn axis(&self) -> &'static str {
        match self {
            Sweep::Cooperativity(_) => "cooperativity",
            Sweep::Power(_) => "power_au",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepSource {
    List(Vec<f64>),
    Range { start: f64, stop: f64, points: usize },
}

impl SweepSource {
    fn resolve(&self, points: Option<usize>) -> Vec<f64> {
        match self {
            SweepSource::List(v) => v.clone(),
            SweepSource::Range { start, stop, points: p } => linspace(*start, *stop, points.unwrap_or(*p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepSpec {
    Cooperativity(SweepSource),
    Power(SweepSource),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PumpSettings {
    pub phase: f64,
    /// rad/s
    pub detuning: f64,
    /// Sideband offset at which outputs are evaluated (rad/s).
    pub sideband: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeatingSource {
    Params { c_pump: f64, c_heat: f64 },
    /// CSV of measured points to fit.
    Data(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatingSpec {
    pub model: HeatingModel,
    pub source: HeatingSource,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Analysis {
    pub angle_mode: AngleMode,
    pub angle_grid: usize,
    pub log_base: LogBase,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerSpec {
    pub samples: usize,
    pub seed: Option<u64>,
    pub xi: f64,
    pub write_records: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationSpec {
    pub curve: PathBuf,
    /// `(ω, R, B)` used when the curve file does not state them.
    pub defaults: Option<(f64, f64, f64)>,
    /// `(linear gain, n_add)`
    pub init: Option<(f64, f64)>,
}

/// Validated configuration. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: PathBuf,
    pub device: ResonatorParams,
    pub sweep: Option<SweepSpec>,
    pub pump: PumpSettings,
    pub heating: Option<HeatingSpec>,
    pub chains: [ChainParams; 2],
    pub detection_loss: [f64; 2],
    pub analysis: Analysis,
    pub sampler: Option<SamplerSpec>,
    pub output_dir: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub calibration: Option<CalibrationSpec>,
}

/// `n` evenly spaced values including both ends.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|k| start + (stop - start) * k as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading config {}", path.display()), e))?;
        Self::parse(&text, path)
    }

    /// Parses `text` as if read from `path`.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::config(path, e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Resolver { path, base }.resolve(raw)
    }

    /// Sweep values, with `points` overriding the count of a range.
    pub fn sweep_values(&self, points: Option<usize>) -> Option<Sweep> {
        self.sweep.as_ref().map(|s| match s {
            SweepSpec::Cooperativity(src) => Sweep::Cooperativity(src.resolve(points)),
            SweepSpec::Power(src) => Sweep::Power(src.resolve(points)),
        })
    }
}

struct Resolver<'a> {
    path: &'a Path,
    base: PathBuf,
}

impl Resolver<'_> {
    fn err(&self, field: &str, message: impl std::fmt::Display) -> CliError {
        CliError::config(self.path, format!("{field}: {message}"))
    }

    fn positive(&self, field: &str, v: f64) -> Result<f64> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(field, format!("{v} must be positive")))
        }
    }

    fn non_negative(&self, field: &str, v: f64) -> Result<f64> {
        if v >= 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(self.err(field, format!("{v} must be non-negative")))
        }
    }

    fn existing(&self, field: &str, p: PathBuf) -> Result<PathBuf> {
        let p = if p.is_absolute() { p } else { self.base.join(p) };
        if p.is_file() {
            Ok(p)
        } else {
            Err(self.err(field, format!("file {} does not exist", p.display())))
        }
    }

    fn resolve(&self, raw: RawConfig) -> Result<RunConfig> {
        let device = self.device(&raw.device)?;
        let pump = self.pump_settings(&raw.pump)?;
        let sweep = self.sweep(&raw.pump)?;
        let heating = raw.heating.map(|h| self.heating(h)).transpose()?;
        if matches!(sweep, Some(SweepSpec::Power(_))) && heating.is_none() {
            return Err(self.err("[pump] power_au", "a power sweep needs a [heating] section"));
        }
        let chain1 = self.chain("[chain.port1]", &raw.chain.port1, ChainParams::reference_port1(), device)?;
        let chain2 = self.chain("[chain.port2]", &raw.chain.port2, ChainParams::reference_port2(), device)?;
        let analysis = self.analysis(&raw.analysis)?;
        let sampler = raw.sampler.map(|s| self.sampler(&s)).transpose()?;
        let formats = raw.output.formats.unwrap_or_else(|| vec![Format::Csv, Format::Json]);
        if formats.is_empty() {
            return Err(self.err("[output] formats", "at least one format is required"));
        }
        let output_dir = raw
            .output
            .dir
            .map(|d| if d.is_absolute() { d } else { self.base.join(d) });
        let calibration = raw.calibration.map(|c| self.calibration(c)).transpose()?;
        Ok(RunConfig {
            source: self.path.to_path_buf(),
            device,
            sweep,
            pump,
            heating,
            chains: [chain1.0, chain2.0],
            detection_loss: [chain1.1, chain2.1],
            analysis,
            sampler,
            output_dir,
            formats,
            calibration,
        })
    }

    fn device(&self, d: &RawDevice) -> Result<ResonatorParams> {
        let r = ResonatorParams::reference_device();
        let hz = |field: &str, v: Option<f64>, default: f64| -> Result<f64> {
            v.map_or(Ok(default), |v| self.positive(field, v).map(hz_to_angular))
        };
        let n = |field: &str, v: Option<f64>| v.map_or(Ok(0.0), |v| self.non_negative(field, v));
        let kappa_i = match d.kappa_i {
            Some(v) => hz_to_angular(self.non_negative("[device] kappa_i_Hz", v)?),
            None => r.kappa_i,
        };
        let p = ResonatorParams {
            omega_a: hz("[device] f_a_Hz", d.f_a, r.omega_a)?,
            kappa_e1: hz("[device] kappa_e1_Hz", d.kappa_e1, r.kappa_e1)?,
            kappa_e2: hz("[device] kappa_e2_Hz", d.kappa_e2, r.kappa_e2)?,
            kappa_i,
            n_e1: n("[device] n_e1_quanta", d.n_e1)?,
            n_e2: n("[device] n_e2_quanta", d.n_e2)?,
            n_i: n("[device] n_i_quanta", d.n_i)?,
        };
        p.validate().map_err(|e| self.err("[device]", e))?;
        Ok(p)
    }

    fn pump_settings(&self, p: &RawPump) -> Result<PumpSettings> {
        let finite = |field: &str, v: Option<f64>, default: f64| -> Result<f64> {
            match v {
                Some(v) if !v.is_finite() => Err(self.err(field, format!("{v} must be finite"))),
                Some(v) => Ok(v),
                None => Ok(default),
            }
        };
        Ok(PumpSettings {
            phase: finite("[pump] phase_rad", p.phase_rad, -std::f64::consts::FRAC_PI_2)?,
            detuning: hz_to_angular(finite("[pump] detuning_Hz", p.detuning, 0.0)?),
            sideband: hz_to_angular(finite("[pump] sideband_Hz", p.sideband, 0.0)?),
        })
    }

    fn sweep(&self, p: &RawPump) -> Result<Option<SweepSpec>> {
        let sources = [
            p.cooperativity.is_some(),
            p.cooperativity_range.is_some(),
            p.power_au.is_some(),
            p.power_range_au.is_some(),
        ];
        match sources.iter().filter(|s| **s).count() {
            0 => {
                if p.points.is_some() {
                    return Err(self.err("[pump] points", "given without a range"));
                }
                return Ok(None);
            }
            1 => {}
            _ => {
                return Err(self.err(
                    "[pump]",
                    "give exactly one of cooperativity, cooperativity_range, power_au, power_range_au",
                ))
            }
        }
        let list = |field: &str, v: &[f64]| -> Result<SweepSource> {
            if v.is_empty() {
                return Err(self.err(field, "sweep is empty"));
            }
            for (k, x) in v.iter().enumerate() {
                self.non_negative(&format!("{field}[{k}]"), *x)?;
            }
            Ok(SweepSource::List(v.to_vec()))
        };
        let range = |field: &str, r: [f64; 2]| -> Result<SweepSource> {
            let start = self.non_negative(&format!("{field}[0]"), r[0])?;
            let stop = self.non_negative(&format!("{field}[1]"), r[1])?;
            if stop < start {
                return Err(self.err(field, format!("stop {stop} is below start {start}")));
            }
            let points = p.points.unwrap_or(DEFAULT_POINTS);
            if points == 0 {
                return Err(self.err("[pump] points", "sweep is empty"));
            }
            Ok(SweepSource::Range { start, stop, points })
        };
        if p.points.is_some() && (p.cooperativity.is_some() || p.power_au.is_some()) {
            return Err(self.err("[pump] points", "only applies to a range"));
        }
        let spec = if let Some(v) = &p.cooperativity {
            SweepSpec::Cooperativity(list("[pump] cooperativity", v)?)
        } else if let Some(r) = p.cooperativity_range {
            SweepSpec::Cooperativity(range("[pump] cooperativity_range", r)?)
        } else if let Some(v) = &p.power_au {
            SweepSpec::Power(list("[pump] power_au", v)?)
        } else {
            SweepSpec::Power(range("[pump] power_range_au", p.power_range_au.unwrap_or_default())?)
        };
        Ok(Some(spec))
    }

    fn heating(&self, h: RawHeating) -> Result<HeatingSpec> {
        let model = HeatingModel {
            pump_order: h.pump_order.unwrap_or_default(),
            heating_order: h.heating_order.unwrap_or_default(),
        };
        let source = match (h.c_pump_per_au, h.c_heat_per_au, h.fit_data) {
            (Some(a), Some(b), None) => HeatingSource::Params {
                c_pump: self.non_negative("[heating] c_pump_per_au", a)?,
                c_heat: self.non_negative("[heating] c_heat_per_au", b)?,
            },
            (None, None, Some(p)) => HeatingSource::Data(self.existing("[heating] fit_data", p)?),
            _ => {
                return Err(self.err(
                    "[heating]",
                    "give either both c_pump_per_au and c_heat_per_au, or fit_data",
                ))
            }
        };
        Ok(HeatingSpec { model, source })
    }

    fn chain(
        &self,
        section: &str,
        c: &RawChain,
        default: ChainParams,
        device: ResonatorParams,
    ) -> Result<(ChainParams, f64)> {
        let field = |k: &str| format!("{section} {k}");
        let gain_db = match c.gain_db {
            Some(g) if !g.is_finite() => return Err(self.err(&field("gain_dB"), "must be finite")),
            Some(g) => g,
            None => default.gain_db,
        };
        let or = |k: &str, v: Option<f64>, d: f64| v.map_or(Ok(d), |v| self.positive(&field(k), v));
        let chain = ChainParams {
            gain_db,
            n_add: c.n_add.map_or(Ok(default.n_add), |v| self.non_negative(&field("n_add_quanta"), v))?,
            bandwidth: or("bandwidth_Hz", c.bandwidth, default.bandwidth)?,
            impedance: or("impedance_ohm", c.impedance_ohm, default.impedance)?,
            omega_a: device.omega_a,
            omega_if: hz_to_angular(or("if_Hz", c.if_freq, default.if_hz())?),
            sample_rate: or("sample_rate_Hz", c.sample_rate, default.sample_rate)?,
        };
        chain.validate().map_err(|e| self.err(section, e))?;
        let loss = c.loss_fraction.unwrap_or(0.0);
        if !(0.0..1.0).contains(&loss) {
            return Err(self.err(&field("loss_fraction"), format!("{loss} must lie in [0, 1)")));
        }
        Ok((chain, loss))
    }

    fn analysis(&self, a: &RawAnalysis) -> Result<Analysis> {
        let angle_grid = a.angle_grid.unwrap_or(DEFAULT_ANGLE_GRID);
        if angle_grid < MIN_GRID_POINTS {
            return Err(self.err(
                "[analysis] angle_grid",
                format!("{angle_grid} is below the minimum of {MIN_GRID_POINTS}"),
            ));
        }
        let log_base = match &a.log_base {
            Some(s) => s.parse().map_err(|e| self.err("[analysis] log_base", e))?,
            None => LogBase::Two,
        };
        Ok(Analysis {
            angle_mode: a.angle_mode.unwrap_or_default(),
            angle_grid,
            log_base,
        })
    }

    fn sampler(&self, s: &RawSampler) -> Result<SamplerSpec> {
        let xi = s.xi_quanta.unwrap_or(0.5);
        if !xi.is_finite() {
            return Err(self.err("[sampler] xi_quanta", format!("{xi} must be finite")));
        }
        Ok(SamplerSpec {
            samples: s.samples,
            seed: s.seed,
            xi,
            write_records: s.write_records.unwrap_or(false),
        })
    }

    fn calibration(&self, c: RawCalibration) -> Result<CalibrationSpec> {
        let curve = self.existing("[calibration] curve", c.curve)?;
        let defaults = match (c.frequency, c.impedance_ohm, c.bandwidth) {
            (None, None, None) => None,
            (Some(f), Some(r), Some(b)) => Some((
                hz_to_angular(self.positive("[calibration] frequency_Hz", f)?),
                self.positive("[calibration] impedance_ohm", r)?,
                self.positive("[calibration] bandwidth_Hz", b)?,
            )),
            _ => {
                return Err(self.err(
                    "[calibration]",
                    "frequency_Hz, impedance_ohm and bandwidth_Hz go together",
                ))
            }
        };
        let init = match (c.gain_db_init, c.n_add_init_quanta) {
            (None, None) => None,
            (Some(g), Some(n)) => Some((kipa_core::units::db_to_linear(g), n)),
            _ => return Err(self.err("[calibration]", "gain_dB_init and n_add_init_quanta go together")),
        };
        Ok(CalibrationSpec { curve, defaults, init })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        RunConfig::parse(s, Path::new("test.toml"))
    }

    #[test]
    fn empty_config_uses_reference_values() {
        let c = parse("").unwrap();
        assert_eq!(c.device, ResonatorParams::reference_device());
        assert_eq!(c.chains[0], ChainParams::reference_port1());
        assert_eq!(c.chains[1], ChainParams::reference_port2());
        assert!(c.sweep.is_none());
        assert_eq!(c.analysis.angle_grid, DEFAULT_ANGLE_GRID);
    }

    #[test]
    fn range_and_points_override() {
        let c = parse("[pump]\ncooperativity_range = [0.1, 0.5]\npoints = 5\n").unwrap();
        let s = c.sweep_values(None).unwrap();
        assert_eq!(s.axis(), "cooperativity");
        assert_eq!(s.values().len(), 5);
        assert!((s.values()[4] - 0.5).abs() < 1e-15);
        assert_eq!(c.sweep_values(Some(3)).unwrap().values(), &[0.1, 0.30000000000000004, 0.5]);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = parse("[device]\nf_a_Hz = 7e9\nkappa_e3_Hz = 1e6\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("kappa_e3_Hz"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn field_named_in_validation_error() {
        let e = parse("[pump]\ncooperativity = [0.1, -0.2]\n").unwrap_err();
        assert!(e.to_string().contains("[pump] cooperativity[1]"), "{e}");
        let e = parse("[pump]\ncooperativity = []\n").unwrap_err();
        assert!(e.to_string().contains("empty"), "{e}");
        let e = parse("[pump]\ncooperativity = [0.1]\npower_au = [1.0]\n").unwrap_err();
        assert!(e.to_string().contains("exactly one"), "{e}");
        let e = parse("[pump]\npower_au = [1.0]\n").unwrap_err();
        assert!(e.to_string().contains("[heating]"), "{e}");
        let e = parse("[chain.port1]\nbandwidth_Hz = 60e6\n").unwrap_err();
        assert!(e.to_string().contains("[chain.port1]"), "{e}");
        let e = parse("[heating]\nfit_data = \"missing.csv\"\n").unwrap_err();
        assert!(e.to_string().contains("does not exist"), "{e}");
    }

    #[test]
    fn unit_conversions() {
        let c = parse("[device]\nf_a_Hz = 5e9\n[pump]\ndetuning_Hz = 1e6\n").unwrap();
        assert!((c.device.omega_a - hz_to_angular(5e9)).abs() < 1e-3);
        assert!((c.pump.detuning - hz_to_angular(1e6)).abs() < 1e-9);
        assert_eq!(c.chains[0].omega_a, c.device.omega_a);
    }
}
