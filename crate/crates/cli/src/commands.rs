//! Pipelines behind the subcommands. Sweep points are evaluated in parallel
//! and collected in order; all files are written afterwards from one thread.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kipa_core::calibration::{fit_noise_curve, CalFitResult, NoiseCurve};
use kipa_core::cavity::{
    apply_detection_loss, fit_pump_sweep, output_covariance, HeatingModel, Observable, PumpConfig,
    PumpSweepFit, SweepFitOptions, SweepObservation,
};
use kipa_core::gaussian::{
    duan_epr_of_matrix, log_negativity_of_matrix, rotate_matrix, CovarianceMatrix2M, LogBase,
};
use kipa_core::measurement::{
    derive_seed, on_off_subtract, optimize_angles, sample_pump_off, sample_quadratures, QuadratureRecords,
    SampleRole,
};
use kipa_core::units::{linear_to_db, variance_to_db};
use log::{info, warn};
use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{linspace, Format, HeatingSource, RunConfig, SamplerSpec, Sweep};
use crate::error::{CliError, Result};
use crate::table::{RowKind, SweepRow, SweepTable};

const DEFAULT_FIGURE_POINTS: usize = 100;

/// Settings shared by every subcommand after merging flags, environment and
/// configuration.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub formats: Vec<Format>,
    pub points: Option<usize>,
}

/// One evaluated operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub cooperativity: f64,
    pub n_i: f64,
}

/// Heating parameters in use, either given or fitted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatingReport {
    pub model: HeatingModel,
    pub source: String,
    pub c_pump_per_au: f64,
    pub c_heat_per_au: f64,
    pub sigma_c_pump: Option<f64>,
    pub sigma_c_heat: Option<f64>,
    pub residual_norm: Option<f64>,
    pub data_points: usize,
    #[serde(skip)]
    pub data: Vec<SweepObservation>,
}

impl HeatingReport {
    pub fn point(&self, power: f64) -> SweepPoint {
        SweepPoint {
            value: power,
            cooperativity: self.model.cooperativity(self.c_pump_per_au, power),
            n_i: self.model.occupancy(self.c_heat_per_au, power),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Figure {
    Fig2,
    Fig3,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FigureSummary {
    pub figure: String,
    pub version: u32,
    pub log_base: String,
    pub heating: HeatingReport,
    /// Deepest squeezing per port, in dB below vacuum (positive = squeezed).
    #[serde(rename = "min_squeezing_dB")]
    pub min_squeezing_db: [f64; 2],
    pub min_squeezing_power_au: [f64; 2],
    pub max_e_n: f64,
    pub max_e_n_ebits: f64,
    pub max_e_n_nats: f64,
    pub max_e_n_power_au: f64,
    #[serde(rename = "min_epr_dB")]
    pub min_epr_db: f64,
    pub squeezing_non_monotone: [bool; 2],
    pub entanglement_non_monotone: bool,
    /// The figure's own quantity turns around inside the sweep.
    pub non_monotone: bool,
}

#[derive(Debug, Deserialize)]
struct DataRow {
    observable: String,
    power_au: f64,
    #[serde(rename = "value_dB")]
    value_db: f64,
    #[serde(rename = "sigma_dB")]
    sigma_db: Option<f64>,
}

/// Reads pump-sweep data with columns `observable,power_au,value_dB,sigma_dB`.
/// Variances are in dB relative to vacuum (`10·log₁₀(2ΔX²)`), Δ_EPR in dB
/// relative to 1; `sigma_dB` may be empty.
pub fn read_sweep_data(path: &Path) -> Result<Vec<SweepObservation>> {
    let file = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for (k, row) in reader.deserialize::<DataRow>().enumerate() {
        let row = row.map_err(|e| CliError::config(path, format!("row {}: {e}", k + 1)))?;
        let observable: Observable = row
            .observable
            .parse()
            .map_err(|e| CliError::config(path, format!("row {}: {e}", k + 1)))?;
        let scale = match observable {
            Observable::Epr => 1.0,
            _ => 0.5,
        };
        let value = scale * 10f64.powf(row.value_db / 10.0);
        let sigma = row.sigma_db.map(|s| value * std::f64::consts::LN_10 / 10.0 * s);
        out.push(SweepObservation {
            power: row.power_au,
            observable,
            value,
            sigma,
        });
    }
    Ok(out)
}

pub fn resolve_heating(cfg: &RunConfig) -> Result<Option<HeatingReport>> {
    let Some(spec) = &cfg.heating else {
        return Ok(None);
    };
    match &spec.source {
        HeatingSource::Params { c_pump, c_heat } => Ok(Some(HeatingReport {
            model: spec.model,
            source: "config".into(),
            c_pump_per_au: *c_pump,
            c_heat_per_au: *c_heat,
            sigma_c_pump: None,
            sigma_c_heat: None,
            residual_norm: None,
            data_points: 0,
            data: Vec::new(),
        })),
        HeatingSource::Data(path) => {
            let data = read_sweep_data(path)?;
            let options = SweepFitOptions {
                model: spec.model,
                pump_phase: cfg.pump.phase,
                detuning: cfg.pump.detuning,
                omega: cfg.pump.sideband,
                ..SweepFitOptions::default()
            };
            let fit: PumpSweepFit = fit_pump_sweep(&data, &cfg.device, &options)?;
            info!(
                "heating fit: c_pump = {:.6} ± {:.6}, c_heat = {:.6} ± {:.6}",
                fit.c_pump, fit.sigma_c_pump, fit.c_heat, fit.sigma_c_heat
            );
            Ok(Some(HeatingReport {
                model: spec.model,
                source: "fit".into(),
                c_pump_per_au: fit.c_pump,
                c_heat_per_au: fit.c_heat,
                sigma_c_pump: Some(fit.sigma_c_pump),
                sigma_c_heat: Some(fit.sigma_c_heat),
                residual_norm: Some(fit.residual_norm),
                data_points: data.len(),
                data,
            }))
        }
    }
}

/// Maps sweep values to operating points.
pub fn sweep_points(cfg: &RunConfig, sweep: &Sweep, heating: Option<&HeatingReport>) -> Result<Vec<SweepPoint>> {
    match sweep {
        Sweep::Cooperativity(v) => Ok(v
            .iter()
            .map(|&c| SweepPoint {
                value: c,
                cooperativity: c,
                n_i: cfg.device.n_i,
            })
            .collect()),
        Sweep::Power(v) => {
            let h = heating.ok_or_else(|| CliError::config(&cfg.source, "a power sweep needs a [heating] section"))?;
            Ok(v.iter().map(|&p| h.point(p)).collect())
        }
    }
}

/// Output state at `pt`, including detection loss.
pub fn point_state(cfg: &RunConfig, pt: &SweepPoint) -> Result<CovarianceMatrix2M> {
    let mut device = cfg.device;
    device.n_i = pt.n_i;
    let pump = PumpConfig::with_cooperativity(pt.cooperativity)
        .phase(cfg.pump.phase)
        .detuning(cfg.pump.detuning);
    let v = output_covariance(&device, &pump, cfg.pump.sideband)?;
    Ok(apply_detection_loss(&v, cfg.detection_loss)?)
}

fn db_columns(dx1: f64, dx2: f64, epr: f64) -> (f64, f64, f64) {
    (variance_to_db(dx1), variance_to_db(dx2), linear_to_db(epr))
}

pub fn model_row(cfg: &RunConfig, pt: &SweepPoint) -> Result<SweepRow> {
    let v = point_state(cfg, pt)?;
    let (angles, _) = optimize_angles(v.matrix(), cfg.analysis.angle_mode, cfg.analysis.angle_grid)?;
    let m = rotate_matrix(v.matrix(), angles);
    let (dx1, dx2, epr) = (m[(0, 0)], m[(2, 2)], duan_epr_of_matrix(&m));
    let (dx1_db, dx2_db, epr_db) = db_columns(dx1, dx2, epr);
    Ok(SweepRow {
        kind: RowKind::Model,
        sweep_value: pt.value,
        cooperativity: pt.cooperativity,
        n_i: pt.n_i,
        phi1: angles.phi_1(),
        phi2: angles.phi_2(),
        dx1,
        dx1_se: 0.0,
        dx2,
        dx2_se: 0.0,
        dx1_db,
        dx2_db,
        epr,
        epr_se: 0.0,
        epr_db,
        e_n: log_negativity_of_matrix(&m, cfg.analysis.log_base)?,
        e_n_se: 0.0,
    })
}

pub struct SampledPoint {
    pub row: SweepRow,
    pub on: QuadratureRecords,
    pub off: QuadratureRecords,
}

/// Sample, subtract, choose detector angles, then jackknife every column at
/// those fixed angles.
pub fn sample_row(cfg: &RunConfig, s: &SamplerSpec, seed: u64, index: usize, pt: &SweepPoint) -> Result<SampledPoint> {
    let v = point_state(cfg, pt)?;
    let on = sample_quadratures(&v, &cfg.chains, s.samples, derive_seed(seed, index as u64, SampleRole::PumpOn))?;
    let off = sample_pump_off(&cfg.chains, s.samples, derive_seed(seed, index as u64, SampleRole::PumpOff))?;
    let moments = on_off_subtract(&on, &off, s.xi)?;
    let (angles, _) = optimize_angles(&moments.matrix, cfg.analysis.angle_mode, cfg.analysis.angle_grid)?;
    let rot = |x: &Matrix4<f64>| rotate_matrix(x, angles);
    let base = cfg.analysis.log_base;
    let (dx1, dx1_se) = moments.statistic(|x| rot(x)[(0, 0)]);
    let (dx2, dx2_se) = moments.statistic(|x| rot(x)[(2, 2)]);
    let (epr, epr_se) = moments.statistic(|x| duan_epr_of_matrix(&rot(x)));
    let (e_n, e_n_se) = moments.statistic(|x| log_negativity_of_matrix(x, base).unwrap_or(f64::NAN));
    let (dx1_db, dx2_db, epr_db) = db_columns(dx1, dx2, epr);
    Ok(SampledPoint {
        row: SweepRow {
            kind: RowKind::Sampled,
            sweep_value: pt.value,
            cooperativity: pt.cooperativity,
            n_i: pt.n_i,
            phi1: angles.phi_1(),
            phi2: angles.phi_2(),
            dx1,
            dx1_se,
            dx2,
            dx2_se,
            dx1_db,
            dx2_db,
            epr,
            epr_se,
            epr_db,
            e_n,
            e_n_se,
        },
        on,
        off,
    })
}

pub fn model_rows(cfg: &RunConfig, points: &[SweepPoint]) -> Result<Vec<SweepRow>> {
    points.par_iter().map(|pt| model_row(cfg, pt)).collect()
}

pub fn sample_points(cfg: &RunConfig, s: &SamplerSpec, seed: u64, points: &[SweepPoint]) -> Result<Vec<SampledPoint>> {
    points
        .par_iter()
        .enumerate()
        .map(|(i, pt)| sample_row(cfg, s, seed, i, pt))
        .collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Writes `stem.csv` and/or `stem.json`; returns the paths written.
pub fn emit_table(table: &SweepTable, dir: &Path, stem: &str, formats: &[Format]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    for f in formats {
        let path = dir.join(match f {
            Format::Csv => format!("{stem}.csv"),
            Format::Json => format!("{stem}.json"),
        });
        let mut w = create_file(&path)?;
        match f {
            Format::Csv => table.write_csv(&mut w)?,
            Format::Json => table.write_json(&mut w)?,
        }
        finish(w, &path)?;
        written.push(path);
    }
    Ok(written)
}

fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(kipa_core::Error::from)?;
    writeln!(w).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    finish(w, path)
}

fn require_sweep(cfg: &RunConfig, opts: &RunOptions) -> Result<Sweep> {
    cfg.sweep_values(opts.points)
        .ok_or_else(|| CliError::config(&cfg.source, "[pump]: no sweep given"))
}

fn require_seed(cfg: &RunConfig, opts: &RunOptions) -> Result<u64> {
    opts.seed
        .or(cfg.sampler.and_then(|s| s.seed))
        .ok_or_else(|| CliError::config(&cfg.source, "[sampler] seed: required for sampling (or pass --seed)"))
}

pub fn run_model(cfg: &RunConfig, opts: &RunOptions) -> Result<SweepTable> {
    let sweep = require_sweep(cfg, opts)?;
    let heating = resolve_heating(cfg)?;
    let points = sweep_points(cfg, &sweep, heating.as_ref())?;
    let rows = model_rows(cfg, &points)?;
    let table = SweepTable::new("sweep-model", sweep.axis(), cfg.analysis.log_base, rows);
    for p in emit_table(&table, &opts.out_dir, "model", &opts.formats)? {
        info!("wrote {}", p.display());
    }
    Ok(table)
}

fn write_records(dir: &Path, sampled: &[SampledPoint]) -> Result<()> {
    let dir = dir.join("records");
    create_dir(&dir)?;
    for (i, s) in sampled.iter().enumerate() {
        for (tag, rec) in [("on", &s.on), ("off", &s.off)] {
            let path = dir.join(format!("point_{i:03}_{tag}.csv"));
            let mut w = create_file(&path)?;
            rec.write_csv(&mut w)?;
            finish(w, &path)?;
        }
    }
    Ok(())
}

pub fn run_sample(cfg: &RunConfig, opts: &RunOptions) -> Result<SweepTable> {
    let s = cfg
        .sampler
        .ok_or_else(|| CliError::config(&cfg.source, "[sampler]: section required for sampling"))?;
    let seed = require_seed(cfg, opts)?;
    let sweep = require_sweep(cfg, opts)?;
    let heating = resolve_heating(cfg)?;
    let points = sweep_points(cfg, &sweep, heating.as_ref())?;
    let sampled = sample_points(cfg, &s, seed, &points)?;
    if s.write_records {
        write_records(&opts.out_dir, &sampled)?;
    }
    let rows = sampled.into_iter().map(|p| p.row).collect();
    let table = SweepTable::new("sweep-sample", sweep.axis(), cfg.analysis.log_base, rows);
    for p in emit_table(&table, &opts.out_dir, "sample", &opts.formats)? {
        info!("wrote {}", p.display());
    }
    Ok(table)
}

/// Reads the curve, fits it and writes `calibration.json` plus
/// `calibration_residuals.csv`. A fit that stops without converging is
/// written out and then reported as an error.
pub fn run_calibrate(cfg: &RunConfig, curve_override: Option<&Path>, opts: &RunOptions) -> Result<CalFitResult> {
    let spec = cfg.calibration.as_ref();
    let path = match (curve_override, spec) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(s)) => s.curve.clone(),
        (None, None) => {
            return Err(CliError::Usage(
                "calibrate needs --curve or a [calibration] curve entry".into(),
            ))
        }
    };
    let file = File::open(&path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let curve = NoiseCurve::read_csv(file, spec.and_then(|s| s.defaults))?;
    let fit = fit_noise_curve(&curve, spec.and_then(|s| s.init))?;
    for w in &fit.warnings {
        warn!("{w}");
    }
    create_dir(&opts.out_dir)?;
    let json = opts.out_dir.join("calibration.json");
    emit_json(&fit, &json)?;
    let res_path = opts.out_dir.join("calibration_residuals.csv");
    let mut w = create_file(&res_path)?;
    let io = |e| CliError::io(format!("writing {}", res_path.display()), e);
    writeln!(w, "# kipa calibration-residuals v1").map_err(io)?;
    writeln!(w, "temperature_K,measured_V2_per_Hz,model_V2_per_Hz,residual_V2_per_Hz").map_err(io)?;
    for ((t, n), r) in curve.points().iter().zip(&fit.residuals) {
        writeln!(w, "{t},{n},{},{r}", n + r).map_err(io)?;
    }
    finish(w, &res_path)?;
    info!("gain = {:.4} dB, n_add = {:.4}", fit.gain_db, fit.n_add);
    if !fit.converged {
        return Err(kipa_core::Error::FitNotConverged {
            iterations: fit.iterations,
            reason: format!("{:?}", fit.termination),
            last: vec![fit.gain_linear, fit.n_add],
        }
        .into());
    }
    Ok(fit)
}

fn interior_extremum(values: &[f64], minimum: bool) -> bool {
    let sign = if minimum { 1.0 } else { -1.0 };
    let v: Vec<f64> = values.iter().map(|x| sign * x).collect();
    let Some((k, lo)) = v
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
    else {
        return false;
    };
    const TOL: f64 = 1e-9;
    k > 0 && k + 1 < v.len() && v[0] - lo > TOL && v[v.len() - 1] - lo > TOL
}

fn argmin_by<F: Fn(&SweepRow) -> f64>(rows: &[SweepRow], f: F) -> (f64, f64) {
    rows.iter()
        .map(|r| (f(r), r.sweep_value))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap_or((f64::NAN, f64::NAN))
}

pub fn summarize(figure: Figure, log_base: LogBase, heating: HeatingReport, rows: &[SweepRow]) -> FigureSummary {
    let model: Vec<SweepRow> = rows.iter().filter(|r| r.kind == RowKind::Model).cloned().collect();
    let (d1, p1) = argmin_by(&model, |r| r.dx1_db);
    let (d2, p2) = argmin_by(&model, |r| r.dx2_db);
    let (neg_en, p_en) = argmin_by(&model, |r| -r.e_n);
    let max_e_n = -neg_en;
    let (ebits, nats) = match log_base {
        LogBase::Two => (max_e_n, max_e_n * std::f64::consts::LN_2),
        LogBase::E => (max_e_n / std::f64::consts::LN_2, max_e_n),
    };
    let (min_epr_db, _) = argmin_by(&model, |r| r.epr_db);
    let col = |f: fn(&SweepRow) -> f64| model.iter().map(f).collect::<Vec<f64>>();
    let squeezing_non_monotone = [
        interior_extremum(&col(|r| r.dx1), true),
        interior_extremum(&col(|r| r.dx2), true),
    ];
    let entanglement_non_monotone = interior_extremum(&col(|r| r.e_n), false);
    let non_monotone = match figure {
        Figure::Fig2 => squeezing_non_monotone.iter().any(|b| *b),
        Figure::Fig3 => entanglement_non_monotone,
    };
    FigureSummary {
        figure: figure.name().into(),
        version: crate::table::SCHEMA_VERSION,
        log_base: log_base.to_string(),
        heating,
        min_squeezing_db: [-d1, -d2],
        min_squeezing_power_au: [p1, p2],
        max_e_n,
        max_e_n_ebits: ebits,
        max_e_n_nats: nats,
        max_e_n_power_au: p_en,
        min_epr_db,
        squeezing_non_monotone,
        entanglement_non_monotone,
        non_monotone,
    }
}

/// Model curves over a pump-power grid, plus sampled points when a
/// `[sampler]` section is present, in one table; and a summary JSON.
pub fn run_reproduce(figure: Figure, cfg: &RunConfig, opts: &RunOptions) -> Result<(SweepTable, FigureSummary)> {
    let heating = resolve_heating(cfg)?.ok_or_else(|| {
        CliError::config(&cfg.source, "[heating]: reproduce needs heating parameters or fit_data")
    })?;
    let powers = match cfg.sweep_values(opts.points) {
        Some(Sweep::Power(p)) => p,
        Some(Sweep::Cooperativity(_)) => {
            return Err(CliError::config(&cfg.source, "[pump]: reproduce sweeps pump power, not cooperativity"))
        }
        None => {
            let p_max = heating.data.iter().map(|d| d.power).fold(f64::NAN, f64::max);
            if !(p_max > 0.0) {
                return Err(CliError::config(
                    &cfg.source,
                    "[pump]: give power_au or power_range_au when heating is not fitted to data",
                ));
            }
            let n = opts.points.unwrap_or(DEFAULT_FIGURE_POINTS);
            linspace(p_max / n as f64, p_max, n)
        }
    };
    let sweep = Sweep::Power(powers);
    let points = sweep_points(cfg, &sweep, Some(&heating))?;
    let mut rows = model_rows(cfg, &points)?;
    if let Some(s) = cfg.sampler {
        let seed = require_seed(cfg, opts)?;
        let mut sample_powers: Vec<f64> = heating.data.iter().map(|d| d.power).collect();
        sample_powers.sort_by(f64::total_cmp);
        sample_powers.dedup();
        if sample_powers.is_empty() {
            sample_powers = sweep.values().to_vec();
        }
        let sample_at: Vec<SweepPoint> = sample_powers.iter().map(|&p| heating.point(p)).collect();
        rows.extend(sample_points(cfg, &s, seed, &sample_at)?.into_iter().map(|p| p.row));
    }
    let table = SweepTable::new("figure", "power_au", cfg.analysis.log_base, rows);
    for p in emit_table(&table, &opts.out_dir, figure.name(), &opts.formats)? {
        info!("wrote {}", p.display());
    }
    let summary = summarize(figure, cfg.analysis.log_base, heating, &table.rows);
    emit_json(&summary, &opts.out_dir.join(format!("{}_summary.json", figure.name())))?;
    Ok((table, summary))
}
