//! Flat `key = value` configuration with command-line overrides.
//!
//! ```text
//! # comments run to end of line
//! baseline = /var/lib/bacscope/baseline.json
//! captures = mon.pcap, tue.pcap
//! threshold = 0.01
//! connection_threshold = 5/raw:73c3 -> 5/raw:5cce, 0.001
//! ```
//!
//! `captures` and `connection_threshold` accumulate when repeated; every
//! other key keeps its last value.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use bacscope_core::flow::ClassifyConfig;
use bacscope_core::flowmap::MapConfig;
use bacscope_core::scoring::ScoringConfig;
use chrono_tz::Tz;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub captures: Vec<PathBuf>,
    pub cov_dir: Option<PathBuf>,
    pub sensor_meta: Option<PathBuf>,
    pub map: MapConfig,
    pub scoring: ScoringConfig,
    pub timezone: Tz,
    pub baseline: Option<PathBuf>,
    pub anomaly_log: Option<PathBuf>,
    pub trees_dir: Option<PathBuf>,
    pub listen: SocketAddr,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            captures: Vec::new(),
            cov_dir: None,
            sensor_meta: None,
            map: MapConfig::default(),
            scoring: ScoringConfig::default(),
            timezone: Tz::UTC,
            baseline: None,
            anomaly_log: None,
            trees_dir: None,
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        message: e.to_string(),
    })
}

fn parse_connection_threshold(value: &str) -> Result<((String, String), f64), ConfigError> {
    let bad = |message: &str| ConfigError::Value {
        key: "connection_threshold".into(),
        message: message.into(),
    };
    let (pair, q) = value
        .rsplit_once(',')
        .ok_or_else(|| bad("expected `SRC -> DST, THRESHOLD`"))?;
    let (src, dst) = pair
        .split_once("->")
        .ok_or_else(|| bad("expected `SRC -> DST`"))?;
    let q: f64 = parse_num("connection_threshold", q.trim())?;
    Ok(((src.trim().to_string(), dst.trim().to_string()), q))
}

impl AppConfig {
    /// Apply one setting. Relative paths resolve against `base`.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let path = |v: &str| base.join(v);
        match key {
            "captures" | "capture" => self.captures.extend(
                value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(path),
            ),
            "cov_dir" => self.cov_dir = Some(path(value)),
            "sensor_meta" => self.sensor_meta = Some(path(value)),
            "baseline" => self.baseline = Some(path(value)),
            "anomaly_log" => self.anomaly_log = Some(path(value)),
            "trees_dir" => self.trees_dir = Some(path(value)),
            "timezone" => {
                self.timezone =
                    value
                        .parse()
                        .map_err(|e: chrono_tz::ParseError| ConfigError::Value {
                            key: key.into(),
                            message: e.to_string(),
                        })?
            }
            "listen" => self.listen = parse_num(key, value)?,
            "threshold" => self.map.default_threshold = parse_num(key, value)?,
            "connection_threshold" => {
                let (pair, q) = parse_connection_threshold(value)?;
                self.map.connection_thresholds.insert(pair, q);
            }
            "length_sd_mult" => self.map.length_sd_mult = parse_num(key, value)?,
            "min_samples" => self.map.classify.min_samples = parse_num(key, value)?,
            "periodic_ratio" => self.map.classify.periodic_ratio = parse_num(key, value)?,
            "sporadic_low" => self.map.classify.sporadic_low = parse_num(key, value)?,
            "sporadic_high" => self.map.classify.sporadic_high = parse_num(key, value)?,
            "history_days" => self.scoring.history_days = parse_num(key, value)?,
            "window_minutes" => self.scoring.window_minutes = parse_num(key, value)?,
            "sigma_floor" => self.scoring.sigma_floor = parse_num(key, value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            cfg.set(key, value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.map
            .classify
            .validate()
            .map_err(|e| ConfigError::Value {
                key: "classification".into(),
                message: e.to_string(),
            })?;
        let thresholds = std::iter::once(self.map.default_threshold)
            .chain(self.map.connection_thresholds.values().copied());
        for q in thresholds {
            if !(q > 0.0 && q < 1.0) {
                return Err(ConfigError::Value {
                    key: "threshold".into(),
                    message: format!("{q} is outside (0, 1)"),
                });
            }
        }
        if self.map.length_sd_mult.is_nan() || self.map.length_sd_mult <= 0.0 {
            return Err(ConfigError::Value {
                key: "length_sd_mult".into(),
                message: "must be positive".into(),
            });
        }
        if self.scoring.window_minutes <= 0
            || self.scoring.sigma_floor.is_nan()
            || self.scoring.sigma_floor <= 0.0
        {
            return Err(ConfigError::Value {
                key: "scoring".into(),
                message: "window_minutes and sigma_floor must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn classify(&self) -> &ClassifyConfig {
        &self.map.classify
    }
}

/// Settings given on the command line, applied after the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub settings: Vec<String>,
    #[arg(long, global = true)]
    pub baseline: Option<PathBuf>,
    #[arg(long, global = true)]
    pub anomaly_log: Option<PathBuf>,
    #[arg(long, global = true)]
    pub timezone: Option<String>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<AppConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => AppConfig::load(path)?,
            None => AppConfig::default(),
        };
        let here = Path::new("");
        let mut flags: BTreeMap<&str, String> = BTreeMap::new();
        if let Some(p) = &self.baseline {
            flags.insert("baseline", p.display().to_string());
        }
        if let Some(p) = &self.anomaly_log {
            flags.insert("anomaly_log", p.display().to_string());
        }
        if let Some(tz) = &self.timezone {
            flags.insert("timezone", tz.clone());
        }
        if let Some(q) = self.threshold {
            flags.insert("threshold", q.to_string());
        }
        for s in &self.settings {
            let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                message: format!("--set expects KEY=VALUE, got `{s}`"),
            })?;
            cfg.set(k.trim(), v.trim(), here)?;
        }
        for (k, v) in flags {
            cfg.set(k, &v, here)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_repeats_and_relative_paths() {
        let text = "\
# sample
baseline = state/baseline.json  # trailing comment
captures = a.pcap, b.pcap
captures = c.pcap
threshold = 0.05
connection_threshold = 10.0.0.1:47808 -> 10.0.0.2:47808, 0.001
timezone = Europe/Berlin
history_days = 14
";
        let cfg = AppConfig::parse(text, Path::new("/etc/bac")).unwrap();
        assert_eq!(
            cfg.baseline,
            Some(PathBuf::from("/etc/bac/state/baseline.json"))
        );
        assert_eq!(cfg.captures.len(), 3);
        assert_eq!(cfg.map.default_threshold, 0.05);
        assert_eq!(
            cfg.map.connection_thresholds
                [&("10.0.0.1:47808".to_string(), "10.0.0.2:47808".to_string())],
            0.001
        );
        assert_eq!(cfg.timezone, chrono_tz::Europe::Berlin);
        assert_eq!(cfg.scoring.history_days, 14);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(matches!(
            AppConfig::parse("colour = red", Path::new("")),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            AppConfig::parse("threshold 0.1", Path::new("")),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            AppConfig::parse("threshold = lots", Path::new("")),
            Err(ConfigError::Value { .. })
        ));
    }

    #[test]
    fn validation_catches_inverted_sporadic_band() {
        let cfg = AppConfig::parse("sporadic_low = 3\nsporadic_high = 2", Path::new("")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = AppConfig::parse("threshold = 1.5", Path::new("")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bac.conf");
        fs::write(&path, "threshold = 0.05\ntimezone = UTC\n").unwrap();
        let o = Overrides {
            config: Some(path),
            threshold: Some(0.002),
            timezone: Some("Europe/Berlin".into()),
            settings: vec!["history_days=3".into()],
            ..Overrides::default()
        };
        let cfg = o.resolve().unwrap();
        assert_eq!(cfg.map.default_threshold, 0.002);
        assert_eq!(cfg.timezone, chrono_tz::Europe::Berlin);
        assert_eq!(cfg.scoring.history_days, 3);
    }
}
