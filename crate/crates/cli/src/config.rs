//! Run configuration: a flat JSON object, validated field by field.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use curved_nbody::{Sigma, SpacePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    FindEq,
    Verify,
    Scan,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::FindEq => "find-eq",
            Command::Verify => "verify",
            Command::Scan => "scan",
            Command::Diagnose => "diagnose",
        }
    }

    fn default_format(self) -> Format {
        match self {
            Command::Simulate | Command::Diagnose => Format::Csv,
            _ => Format::Json,
        }
    }

    fn supports(self, format: Format) -> bool {
        format == Format::Json || matches!(self, Command::Simulate | Command::Diagnose)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub sigma: i32,
    pub k: usize,
    pub masses: Vec<f64>,
    pub rates: Vec<f64>,
    pub command: Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<Vec<f64>>>,
    pub t_end: f64,
    /// Integration tolerance for `simulate` and `verify`, solver tolerance
    /// otherwise.
    pub tol: f64,
    pub max_iter: usize,
    pub starts: usize,
    pub seed: u64,
    pub periods: f64,
    pub tol_dyn: f64,
    pub cluster: Vec<usize>,
    pub d_values: Vec<f64>,
    pub match_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub format: Format,
}

/// A rejected configuration, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{field}: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: &str, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

const FIELDS: &[&str] = &[
    "sigma",
    "k",
    "masses",
    "rates",
    "command",
    "positions",
    "velocities",
    "t_end",
    "tol",
    "max_iter",
    "starts",
    "seed",
    "periods",
    "tol_dyn",
    "cluster",
    "d_values",
    "match_tol",
    "output",
    "format",
];

pub const INTEGRATION_TOL: f64 = 1e-9;
pub const SOLVER_TOL: f64 = 1e-10;

/// Values given on the command line; each replaces the file's entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub command: Option<Command>,
    pub output: Option<String>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| ConfigError::new("config", format!("malformed JSON: {e}")))?;
    let Value::Object(mut map) = value else {
        return Err(ConfigError::new("config", "expected a JSON object"));
    };
    if let Some(c) = overrides.command {
        map.insert("command".into(), Value::from(c.name()));
    }
    if let Some(o) = &overrides.output {
        map.insert("output".into(), Value::from(o.clone()));
    }
    if let Some(s) = overrides.seed {
        map.insert("seed".into(), Value::from(s));
    }
    if let Some(f) = overrides.format {
        map.insert(
            "format".into(),
            serde_json::to_value(f).expect("format serializes"),
        );
    }
    from_map(&map)
}

pub fn to_json(config: &RunConfig) -> String {
    serde_json::to_string_pretty(config).expect("config serializes")
}

fn get<T: DeserializeOwned>(
    map: &Map<String, Value>,
    field: &str,
) -> Result<Option<T>, ConfigError> {
    match map.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| ConfigError::new(field, e.to_string())),
    }
}

fn require<T: DeserializeOwned>(map: &Map<String, Value>, field: &str) -> Result<T, ConfigError> {
    get(map, field)?.ok_or_else(|| ConfigError::new(field, "missing required field"))
}

fn check_range(field: &str, x: f64, lo: f64, hi: f64) -> Result<(), ConfigError> {
    if x >= lo && x <= hi {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("{x} outside [{lo:e}, {hi:e}]"),
        ))
    }
}

fn check_positive(field: &str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::new(
            field,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn check_rows(field: &str, rows: &[Vec<f64>], n: usize, k: usize) -> Result<(), ConfigError> {
    if rows.len() != n {
        return Err(ConfigError::new(
            field,
            format!("expected {n} rows, found {}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(ConfigError::new(
                field,
                format!("row {i} has {} entries, expected {k}", row.len()),
            ));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(ConfigError::new(field, format!("row {i} is not finite")));
        }
    }
    Ok(())
}

fn from_map(map: &Map<String, Value>) -> Result<RunConfig, ConfigError> {
    if let Some(key) = map.keys().find(|k| !FIELDS.contains(&k.as_str())) {
        return Err(ConfigError::new(key, "unknown field"));
    }

    let sigma: i32 = require(map, "sigma")?;
    let sigma_kind =
        Sigma::from_sign(sigma).map_err(|_| ConfigError::new("sigma", "must be 1 or -1"))?;
    let k: usize = require(map, "k")?;
    if k < 2 {
        return Err(ConfigError::new(
            "k",
            "ambient dimension must be at least 2",
        ));
    }
    let masses: Vec<f64> = require(map, "masses")?;
    if masses.is_empty() {
        return Err(ConfigError::new("masses", "at least one body is required"));
    }
    if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
        return Err(ConfigError::new(
            "masses",
            format!("masses must be positive, got {m}"),
        ));
    }
    let n = masses.len();
    let rates: Vec<f64> = require(map, "rates")?;
    if rates.len() != k / 2 {
        return Err(ConfigError::new(
            "rates",
            format!("k = {k} needs {} rates, found {}", k / 2, rates.len()),
        ));
    }
    if rates.iter().any(|a| !a.is_finite()) {
        return Err(ConfigError::new("rates", "rates must be finite"));
    }
    let command: Command = require(map, "command")?;
    if command != Command::Simulate && sigma != 1 {
        return Err(ConfigError::new(
            "sigma",
            format!("`{command}` works on the sphere only (sigma = 1)"),
        ));
    }

    let positions: Option<Vec<Vec<f64>>> = get(map, "positions")?;
    if let Some(rows) = &positions {
        check_rows("positions", rows, n, k)?;
        for (i, row) in rows.iter().enumerate() {
            SpacePoint::new(row.clone(), sigma_kind)
                .map_err(|e| ConfigError::new("positions", format!("row {i}: {e}")))?;
        }
    } else if matches!(
        command,
        Command::Simulate | Command::Verify | Command::Diagnose
    ) {
        return Err(ConfigError::new(
            "positions",
            format!("required by `{command}`"),
        ));
    }
    let velocities: Option<Vec<Vec<f64>>> = get(map, "velocities")?;
    if let Some(rows) = &velocities {
        check_rows("velocities", rows, n, k)?;
    }

    let t_end = get(map, "t_end")?.unwrap_or(std::f64::consts::TAU);
    check_positive("t_end", t_end)?;
    let default_tol = match command {
        Command::Simulate | Command::Verify => INTEGRATION_TOL,
        _ => SOLVER_TOL,
    };
    let tol = get(map, "tol")?.unwrap_or(default_tol);
    match command {
        Command::Simulate | Command::Verify => check_range("tol", tol, 1e-13, 1e-3)?,
        _ => check_range("tol", tol, 1e-14, 1e-4)?,
    }
    let max_iter = get(map, "max_iter")?.unwrap_or(200);
    if max_iter == 0 {
        return Err(ConfigError::new("max_iter", "must be at least 1"));
    }
    let starts = get(map, "starts")?.unwrap_or(100);
    if starts == 0 {
        return Err(ConfigError::new("starts", "must be at least 1"));
    }
    let seed = get(map, "seed")?.unwrap_or(0);
    let periods = get(map, "periods")?.unwrap_or(1.0);
    check_positive("periods", periods)?;
    let tol_dyn = get(map, "tol_dyn")?.unwrap_or(1e-6);
    check_positive("tol_dyn", tol_dyn)?;
    let match_tol = get(map, "match_tol")?.unwrap_or(1e-6);
    check_positive("match_tol", match_tol)?;

    let cluster: Vec<usize> = get(map, "cluster")?.unwrap_or_else(|| (0..n.min(2)).collect());
    if command == Command::Diagnose {
        if cluster.len() < 2 || cluster[0] != 0 {
            return Err(ConfigError::new(
                "cluster",
                "needs body 0 first and at least two bodies",
            ));
        }
        if cluster.iter().any(|&j| j >= n) {
            return Err(ConfigError::new(
                "cluster",
                format!("indices must be below {n}"),
            ));
        }
        let mut sorted = cluster.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != cluster.len() {
            return Err(ConfigError::new("cluster", "indices must be distinct"));
        }
    }
    let d_values: Vec<f64> = get(map, "d_values")?.unwrap_or_else(|| vec![1e-1, 1e-2, 1e-3]);
    if d_values.is_empty() || d_values.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(ConfigError::new(
            "d_values",
            "needs at least one positive value",
        ));
    }
    if d_values.windows(2).any(|w| w[1] >= w[0]) {
        return Err(ConfigError::new(
            "d_values",
            "values must be strictly decreasing",
        ));
    }

    let output: Option<String> = get(map, "output")?;
    let format = get(map, "format")?.unwrap_or(command.default_format());
    if !command.supports(format) {
        return Err(ConfigError::new(
            "format",
            format!("`{command}` writes JSON only"),
        ));
    }

    Ok(RunConfig {
        sigma,
        k,
        masses,
        rates,
        command,
        positions,
        velocities,
        t_end,
        tol,
        max_iter,
        starts,
        seed,
        periods,
        tol_dyn,
        cluster,
        d_values,
        match_tol,
        output,
        format,
    })
}
