//! Per-tick flight log and its CSV form.

use std::fmt::Write as _;

use super::mode::FlightMode;
use crate::error::{Error, Result};

pub const TELEMETRY_COLUMNS: [&str; 15] = [
    "time_s", "mode", "pos_x", "pos_y", "pos_z", "sp_x", "sp_y", "sp_z", "vel_x", "vel_y", "vel_z", "m1", "m2",
    "m3", "m4",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryRow {
    /// s
    pub time: f64,
    pub mode: FlightMode,
    pub position: [f64; 3],
    pub setpoint: [f64; 3],
    pub velocity: [f64; 3],
    pub motors: [f64; 4],
}

impl TelemetryRow {
    pub fn position_error(&self) -> f64 {
        (0..3)
            .map(|i| (self.position[i] - self.setpoint[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TelemetryLog {
    pub rows: Vec<TelemetryRow>,
}

impl TelemetryLog {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = TELEMETRY_COLUMNS.join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.time, r.mode.name());
            for v in r.position.iter().chain(&r.setpoint).chain(&r.velocity).chain(&r.motors) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the CSV written by [`TelemetryLog::to_csv`]. Errors name the
    /// offending column.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Schema("empty telemetry file: missing header".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, expected) in TELEMETRY_COLUMNS.iter().enumerate() {
            match cols.get(i) {
                Some(c) if c == expected => {}
                Some(c) => {
                    return Err(Error::Schema(format!("column {}: expected `{expected}`, found `{c}`", i + 1)))
                }
                None => return Err(Error::Schema(format!("missing column `{expected}`"))),
            }
        }
        if cols.len() > TELEMETRY_COLUMNS.len() {
            return Err(Error::Schema(format!("unexpected column `{}`", cols[TELEMETRY_COLUMNS.len()])));
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != TELEMETRY_COLUMNS.len() {
                return Err(Error::Schema(format!(
                    "line {line_no}: expected {} fields, found {}",
                    TELEMETRY_COLUMNS.len(),
                    fields.len()
                )));
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse::<f64>().map_err(|_| {
                    Error::Schema(format!("line {line_no}, column `{}`: not a number: `{}`", TELEMETRY_COLUMNS[i], fields[i]))
                })
            };
            let mode = match fields[1] {
                "disarmed" => FlightMode::Disarmed,
                "position" => FlightMode::PositionMode,
                "neural" => FlightMode::NeuralMode,
                other => {
                    return Err(Error::Schema(format!("line {line_no}, column `mode`: unknown mode `{other}`")))
                }
            };
            let arr3 = |s: usize| -> Result<[f64; 3]> { Ok([num(s)?, num(s + 1)?, num(s + 2)?]) };
            rows.push(TelemetryRow {
                time: num(0)?,
                mode,
                position: arr3(2)?,
                setpoint: arr3(5)?,
                velocity: arr3(8)?,
                motors: [num(11)?, num(12)?, num(13)?, num(14)?],
            });
        }
        if rows.is_empty() {
            return Err(Error::Schema("telemetry has a header but no rows".into()));
        }
        Ok(Self { rows })
    }
}
