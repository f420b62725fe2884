//! Key-value pipeline configuration (TOML) with sections `[vehicle]`,
//! `[cascade]`, `[reward]` and `[ppo]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::cascade::CascadeGains;
use crate::error::{Error, Result};
use crate::training::{PpoConfig, RewardWeights};
use crate::vehicle::{compute_thrust_coefficient, VehicleParams};

/// Sections other than `[vehicle]` fall back to their defaults when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub vehicle: VehicleParams,
    pub cascade: CascadeGains,
    pub reward: RewardWeights,
    pub ppo: PpoConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        self.cascade.validate()?;
        self.ppo.validate()?;
        let r = &self.reward;
        let weights = [
            r.w_pos, r.sigma_pos, r.w_up, r.k_up, r.w_vel, r.w_angvel, r.w_act, r.w_act_diff, r.w_heading, r.crash_penalty,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || r.sigma_pos == 0.0 {
            return Err(Error::Parameter("reward weights must be finite and ≥ 0, sigma_pos > 0".into()));
        }
        Ok(())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<Table>()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn number(table: &Table, key: &str) -> Option<f64> {
    match table.get(key)? {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Parses a pipeline config. `[vehicle]` may give `hover_speed` instead of
/// `k_thrust`; the coefficient is then derived from the hover balance.
pub fn parse_config(mut table: Table) -> Result<PipelineConfig> {
    for key in table.keys() {
        if !["vehicle", "cascade", "reward", "ppo"].contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown section [{key}]")));
        }
    }
    let vehicle = table
        .get_mut("vehicle")
        .and_then(Value::as_table_mut)
        .ok_or_else(|| Error::Config("missing section [vehicle]".into()))?;
    if !vehicle.contains_key("k_thrust") {
        let mass = number(vehicle, "mass").ok_or_else(|| Error::Config("[vehicle] missing key: mass".into()))?;
        let hover = number(vehicle, "hover_speed")
            .ok_or_else(|| Error::Config("[vehicle] missing key: k_thrust or hover_speed".into()))?;
        let g = number(vehicle, "gravity").unwrap_or(9.81);
        vehicle.insert("k_thrust".into(), Value::Float(compute_thrust_coefficient(mass, hover, g)?));
    }
    let config: PipelineConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    parse_config(read_table(path)?).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Result of identifying the thrust coefficient from a hover measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SysId {
    pub mass: f64,
    pub hover_speed: f64,
    pub gravity: f64,
    pub k_thrust: f64,
    pub hover_throttle: f64,
}

impl SysId {
    /// Weight and hover thrust, N. Equal up to rounding.
    pub fn balance(&self) -> (f64, f64) {
        (
            self.mass * self.gravity,
            4.0 * self.k_thrust * self.hover_speed * self.hover_speed,
        )
    }
}

/// Computes `k_thrust` from `[vehicle] mass` and `hover_speed` and writes it,
/// together with the derived `[cascade] hover_throttle`, back into `table`.
/// Applying it twice yields the same table.
pub fn apply_sysid(table: &mut Table) -> Result<SysId> {
    let vehicle = table
        .get_mut("vehicle")
        .and_then(Value::as_table_mut)
        .ok_or_else(|| Error::Config("missing section [vehicle]".into()))?;
    let missing: Vec<&str> = ["mass", "hover_speed"]
        .into_iter()
        .filter(|k| number(vehicle, k).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("[vehicle] missing key(s): {}", missing.join(", "))));
    }
    let mass = number(vehicle, "mass").unwrap_or_default();
    let hover_speed = number(vehicle, "hover_speed").unwrap_or_default();
    let gravity = number(vehicle, "gravity").unwrap_or(9.81);
    let k_thrust = compute_thrust_coefficient(mass, hover_speed, gravity)?;
    let omega_max = number(vehicle, "omega_max").ok_or_else(|| Error::Config("[vehicle] missing key: omega_max".into()))?;
    let hover_throttle = hover_speed / omega_max;
    if !(hover_throttle > 0.0 && hover_throttle < 1.0) {
        return Err(Error::Parameter(format!(
            "hover_speed {hover_speed} must be below omega_max {omega_max}"
        )));
    }
    vehicle.insert("k_thrust".into(), Value::Float(k_thrust));
    let cascade = table
        .entry("cascade")
        .or_insert_with(|| Value::Table(Table::new()))
        .as_table_mut()
        .ok_or_else(|| Error::Config("[cascade] must be a table".into()))?;
    cascade.insert("hover_throttle".into(), Value::Float(hover_throttle));
    Ok(SysId {
        mass,
        hover_speed,
        gravity,
        k_thrust,
        hover_throttle,
    })
}
