//! Run configuration: defaults, `key = value` files with `[section]`
//! headers, and command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hierfss::BoundaryCondition;

use crate::CliError;

/// Output format of a result record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Every setting a run can take. All fields have defaults so a record's
/// config echo alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub action: Option<String>,
    pub d: usize,
    /// Component count; real-valued for the profile functions.
    pub n: f64,
    #[serde(rename = "L")]
    pub l: usize,
    /// Number of scales, or the number of sites for walks on `K_N`.
    #[serde(rename = "N")]
    pub big_n: usize,
    pub g: f64,
    pub nu: Option<f64>,
    pub s: f64,
    /// Upper end of an `s` grid; a single point when absent.
    pub s_max: Option<f64>,
    pub points: usize,
    /// Mass of the covariance or resolvent.
    pub a: f64,
    pub z: Option<f64>,
    pub bc: BoundaryCondition,
    pub seed: Option<u64>,
    pub samples: usize,
    pub replicates: usize,
    pub tol: Option<f64>,
    pub jmax: Option<usize>,
    pub moments: Vec<u32>,
    pub nu_lo: f64,
    pub nu_hi: f64,
    pub step: f64,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub threads: Option<usize>,
    pub suite: String,
    pub quick: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: String::new(),
            action: None,
            d: 5,
            n: 1.0,
            l: 2,
            big_n: 4,
            g: 0.1,
            nu: None,
            s: 0.0,
            s_max: None,
            points: 1,
            a: 0.0,
            z: None,
            bc: BoundaryCondition::Periodic,
            seed: None,
            samples: 2000,
            replicates: 4,
            tol: None,
            jmax: None,
            moments: vec![1, 2],
            nu_lo: -0.4,
            nu_hi: -0.22,
            step: 0.01,
            checkpoint: None,
            out: None,
            format: Format::Json,
            threads: None,
            suite: "all".into(),
            quick: false,
        }
    }
}

/// Parses `key = value` text. Keys before any header, or under `[common]`,
/// always apply; keys under `[name]` apply only when `name` is the command.
pub fn parse_config_text(text: &str, command: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut active = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| CliError::Usage(format!("config line {}: unterminated section header", i + 1)))?
                .trim();
            active = name == "common" || name == command;
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        if active {
            out.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(out)
}

/// Reads and parses a config file.
pub fn read_config_file(path: &Path, command: &str) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config_text(&text, command)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| CliError::Usage(format!("bad value `{v}` for `{key}`: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<u32>, CliError> {
    v.split(',').filter(|t| !t.trim().is_empty()).map(|t| parse(key, t.trim())).collect()
}

fn opt_text(v: &str) -> Option<&str> {
    (!v.is_empty() && v != "none").then_some(v)
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "command" => self.command = v.to_string(),
            "action" => self.action = opt_text(v).map(str::to_string),
            "d" => self.d = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "L" => self.l = parse(key, v)?,
            "N" => self.big_n = parse(key, v)?,
            "g" => self.g = parse(key, v)?,
            "nu" => self.nu = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "s" => self.s = parse(key, v)?,
            "s_max" => self.s_max = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "points" => self.points = parse(key, v)?,
            "a" => self.a = parse(key, v)?,
            "z" => self.z = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "bc" => self.bc = parse(key, v)?,
            "seed" => self.seed = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "samples" => self.samples = parse(key, v)?,
            "replicates" => self.replicates = parse(key, v)?,
            "tol" => self.tol = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "jmax" => self.jmax = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "moments" => self.moments = parse_list(key, v)?,
            "nu_lo" => self.nu_lo = parse(key, v)?,
            "nu_hi" => self.nu_hi = parse(key, v)?,
            "step" => self.step = parse(key, v)?,
            "checkpoint" => self.checkpoint = opt_text(v).map(PathBuf::from),
            "out" => self.out = opt_text(v).map(PathBuf::from),
            "format" => {
                self.format = match v {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    other => return Err(CliError::Usage(format!("unknown format `{other}`"))),
                }
            }
            "threads" => self.threads = opt_text(v).map(|v| parse(key, v)).transpose()?,
            "suite" => self.suite = v.to_string(),
            "quick" => self.quick = parse(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every entry of a parsed config file.
    pub fn apply(&mut self, entries: &BTreeMap<String, String>) -> Result<(), CliError> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Serializes to `key = value` text that [`parse_config_text`] reads back.
    pub fn to_config_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in value.as_object().expect("config is an object") {
            let text = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {text}\n"));
        }
        out
    }

    /// Seed, or a domain error naming the stochastic command.
    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Usage(format!("`{}` is stochastic and needs --seed", self.command)))
    }

    /// Component count as an integer.
    pub fn n_components(&self) -> Result<usize, CliError> {
        if self.n >= 1.0 && self.n.fract() == 0.0 {
            Ok(self.n as usize)
        } else {
            Err(CliError::Usage(format!("n = {} must be a positive integer here", self.n)))
        }
    }

    /// The `s` grid: `points` values spaced evenly from `s` to `s_max`.
    pub fn s_grid(&self) -> Vec<f64> {
        match self.s_max {
            Some(hi) if self.points > 1 => (0..self.points)
                .map(|i| self.s + (hi - self.s) * i as f64 / (self.points - 1) as f64)
                .collect(),
            _ => vec![self.s],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_apply_to_their_command() {
        let text = "d = 4\n[saw]\nN = 100\n[exactrg]\nN = 3 # scales\n[common]\ng = 0.5\n";
        let m = parse_config_text(text, "exactrg").unwrap();
        assert_eq!(m["N"], "3");
        assert_eq!(m["d"], "4");
        assert_eq!(m["g"], "0.5");
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig {
            command: "exactrg".into(),
            nu: Some(-0.29242),
            seed: Some(7),
            moments: vec![1, 2, 3],
            g: 0.1 + 0.2,
            ..RunConfig::default()
        };
        c.out = Some("x.json".into());
        let mut back = RunConfig::default();
        back.apply(&parse_config_text(&c.to_config_text(), "exactrg").unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(parse_config_text("d 4", "x").is_err());
        assert!(parse_config_text("[x", "x").is_err());
        assert!(RunConfig::default().set("bogus", "1").is_err());
    }
}
