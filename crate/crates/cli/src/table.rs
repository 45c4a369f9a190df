//! Versioned sweep tables. The CSV form opens with a comment line naming the
//! schema, its version and the sweep axis; columns never change within a
//! version and every cell is filled (`NaN` marks an undefined statistic).

use std::io::Write;

use kipa_core::gaussian::LogBase;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Model,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: RowKind,
    pub sweep_value: f64,
    pub cooperativity: f64,
    pub n_i: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub dx1: f64,
    pub dx1_se: f64,
    pub dx2: f64,
    pub dx2_se: f64,
    #[serde(rename = "dx1_dB")]
    pub dx1_db: f64,
    #[serde(rename = "dx2_dB")]
    pub dx2_db: f64,
    pub epr: f64,
    pub epr_se: f64,
    #[serde(rename = "epr_dB")]
    pub epr_db: f64,
    pub e_n: f64,
    pub e_n_se: f64,
}

pub const COLUMNS: [&str; 17] = [
    "kind",
    "sweep_value",
    "cooperativity",
    "n_i",
    "phi1",
    "phi2",
    "dx1",
    "dx1_se",
    "dx2",
    "dx2_se",
    "dx1_dB",
    "dx2_dB",
    "epr",
    "epr_se",
    "epr_dB",
    "e_n",
    "e_n_se",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    /// `sweep-model`, `sweep-sample` or `figure`.
    pub schema: String,
    pub version: u32,
    /// `cooperativity` or `power_au`.
    pub sweep: String,
    pub log_base: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn new(schema: &str, sweep: &str, log_base: LogBase, rows: Vec<SweepRow>) -> Self {
        Self {
            schema: schema.to_string(),
            version: SCHEMA_VERSION,
            sweep: sweep.to_string(),
            log_base: log_base.to_string(),
            rows,
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# kipa {} v{} sweep={} log_base={}",
            self.schema, self.version, self.sweep, self.log_base
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| CliError::io("writing table", e);
        writeln!(w, "{}", self.header_line()).map_err(io)?;
        let mut csv = csv::Writer::from_writer(w);
        for row in &self.rows {
            csv.serialize(row).map_err(kipa_core::Error::from)?;
        }
        if self.rows.is_empty() {
            csv.write_record(COLUMNS).map_err(kipa_core::Error::from)?;
        }
        csv.flush().map_err(io)?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(kipa_core::Error::from)?;
        writeln!(w).map_err(|e| CliError::io("writing table", e))?;
        Ok(())
    }
}
