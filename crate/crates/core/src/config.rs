//! Server configuration: one TOML file plus `PREGCARE_*` environment
//! overrides. Every field has a default, so an empty file is valid.

use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::Weekday;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::care::{CareConfig, WeeklySchedule};
use crate::dispatch::DispatchConfig;
use crate::notify::RetryPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("environment variable {var}: cannot parse {value:?}")]
    Env { var: String, value: String },
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    /// Gateway stub sink file. Relative paths resolve against `data_dir`.
    pub gateway_sink: PathBuf,
    /// Fraction of gateway sends that fail, for testing.
    pub failure_rate: f64,
    /// Artificial latency of each gateway send.
    pub gateway_delay_ms: u64,
    pub gateway_seed: u64,
    /// Shared secret the SMS gateway presents in `X-Gateway-Key`. Ingress is
    /// open when unset.
    pub ingress_key: Option<String>,
    pub dedup_window_secs: u64,
    pub retry_max: u32,
    pub retry_base_ms: u64,
    pub retry_max_ms: u64,
    pub delivery_workers: usize,
    /// Weekday of the advice batch, e.g. "Sat".
    pub weekly_weekday: String,
    pub weekly_hour: u32,
    pub token_ttl_secs: u64,
    pub utc_offset_minutes: i32,
    /// Days the care centers are closed, e.g. ["Fri"].
    pub weekend: Vec<String>,
    /// Template catalog override; the built-in catalog is used when unset.
    pub templates: Option<PathBuf>,
    pub fsync: bool,
    /// Console polling interval, reported through /stats.
    pub poll_interval_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("pregcare-data"),
            gateway_sink: PathBuf::from("gateway_sink.tsv"),
            failure_rate: 0.0,
            gateway_delay_ms: 0,
            gateway_seed: 0,
            ingress_key: None,
            dedup_window_secs: 120,
            retry_max: 3,
            retry_base_ms: 200,
            retry_max_ms: 5_000,
            delivery_workers: 4,
            weekly_weekday: "Sat".into(),
            weekly_hour: 9,
            token_ttl_secs: 8 * 3600,
            utc_offset_minutes: 180,
            weekend: vec!["Sat".into(), "Sun".into()],
            templates: None,
            fsync: true,
            poll_interval_ms: 2_000,
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Env {
        var: var.to_string(),
        value: value.to_string(),
    })
}

fn weekday(field: &'static str, s: &str) -> Result<Weekday, ConfigError> {
    s.parse().map_err(|_| ConfigError::Invalid {
        field,
        reason: format!("{s:?} is not a weekday"),
    })
}

impl ServerConfig {
    /// Reads `path` (when given), applies the process environment and
    /// validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text)?
            }
            None => ServerConfig::default(),
        };
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `PREGCARE_<FIELD>` overrides from `vars`; other variables are
    /// ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (var, value) in vars {
            let Some(key) = var.strip_prefix("PREGCARE_") else {
                continue;
            };
            match key {
                "LISTEN" => self.listen = value,
                "DATA_DIR" => self.data_dir = value.into(),
                "GATEWAY_SINK" => self.gateway_sink = value.into(),
                "FAILURE_RATE" => self.failure_rate = parse_env(&var, &value)?,
                "GATEWAY_DELAY_MS" => self.gateway_delay_ms = parse_env(&var, &value)?,
                "GATEWAY_SEED" => self.gateway_seed = parse_env(&var, &value)?,
                "INGRESS_KEY" => self.ingress_key = Some(value).filter(|v| !v.is_empty()),
                "DEDUP_WINDOW_SECS" => self.dedup_window_secs = parse_env(&var, &value)?,
                "RETRY_MAX" => self.retry_max = parse_env(&var, &value)?,
                "RETRY_BASE_MS" => self.retry_base_ms = parse_env(&var, &value)?,
                "RETRY_MAX_MS" => self.retry_max_ms = parse_env(&var, &value)?,
                "DELIVERY_WORKERS" => self.delivery_workers = parse_env(&var, &value)?,
                "WEEKLY_WEEKDAY" => self.weekly_weekday = value,
                "WEEKLY_HOUR" => self.weekly_hour = parse_env(&var, &value)?,
                "TOKEN_TTL_SECS" => self.token_ttl_secs = parse_env(&var, &value)?,
                "UTC_OFFSET_MINUTES" => self.utc_offset_minutes = parse_env(&var, &value)?,
                "WEEKEND" => {
                    self.weekend = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "TEMPLATES" => self.templates = Some(value.into()),
                "FSYNC" => self.fsync = parse_env(&var, &value)?,
                "POLL_INTERVAL_MS" => self.poll_interval_ms = parse_env(&var, &value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.failure_rate) {
            return Err(ConfigError::Invalid {
                field: "failure_rate",
                reason: "must be within [0, 1]".into(),
            });
        }
        if self.weekly_hour > 23 {
            return Err(ConfigError::Invalid {
                field: "weekly_hour",
                reason: "must be within 0..=23".into(),
            });
        }
        if self.token_ttl_secs == 0 {
            return Err(ConfigError::Invalid {
                field: "token_ttl_secs",
                reason: "must be positive".into(),
            });
        }
        if self.utc_offset_minutes.abs() > 14 * 60 {
            return Err(ConfigError::Invalid {
                field: "utc_offset_minutes",
                reason: "must be within ±14 h".into(),
            });
        }
        weekday("weekly_weekday", &self.weekly_weekday)?;
        let weekend = self.weekend_days()?;
        if weekend.len() >= 7 {
            return Err(ConfigError::Invalid {
                field: "weekend",
                reason: "leaves no business day".into(),
            });
        }
        Ok(())
    }

    fn weekend_days(&self) -> Result<Vec<Weekday>, ConfigError> {
        let mut days = self
            .weekend
            .iter()
            .map(|d| weekday("weekend", d))
            .collect::<Result<Vec<_>, _>>()?;
        days.sort_by_key(|d| d.num_days_from_monday());
        days.dedup();
        Ok(days)
    }

    pub fn sink_path(&self) -> PathBuf {
        self.data_dir.join(&self.gateway_sink)
    }

    pub fn gateway_delay(&self) -> Duration {
        Duration::from_millis(self.gateway_delay_ms)
    }

    pub fn token_ttl(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.token_ttl_secs as i64)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.retry_max,
            base_delay: Duration::from_millis(self.retry_base_ms),
            max_delay: Duration::from_millis(self.retry_max_ms.max(self.retry_base_ms)),
        }
    }

    pub fn dispatch_config(&self) -> DispatchConfig {
        DispatchConfig {
            dedup_window: chrono::Duration::seconds(self.dedup_window_secs as i64),
            ..DispatchConfig::default()
        }
    }

    /// Panics on an unvalidated config.
    pub fn care_config(&self) -> CareConfig {
        CareConfig {
            utc_offset_minutes: self.utc_offset_minutes,
            weekend: self.weekend_days().expect("validated"),
            ..CareConfig::default()
        }
    }

    /// Panics on an unvalidated config.
    pub fn weekly_schedule(&self) -> WeeklySchedule {
        WeeklySchedule {
            weekday: weekday("weekly_weekday", &self.weekly_weekday).expect("validated"),
            hour: self.weekly_hour,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_validate() {
        let cfg = ServerConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.dispatch_config().dedup_window, chrono::Duration::seconds(120));
        assert_eq!(cfg.weekly_schedule().weekday, Weekday::Sat);
        assert_eq!(cfg.care_config().weekend, [Weekday::Sat, Weekday::Sun]);
    }

    #[test]
    fn file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pregcare.toml");
        std::fs::write(
            &path,
            "listen = \"0.0.0.0:9000\"\nfailure_rate = 0.25\nweekend = [\"Fri\"]\nretry_max = 5\n",
        )
        .unwrap();
        let mut cfg: ServerConfig = toml::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.retry_policy().max_retries, 5);
        cfg.apply_env(env(&[
            ("PREGCARE_LISTEN", "127.0.0.1:1"),
            ("PREGCARE_DEDUP_WINDOW_SECS", "30"),
            ("PREGCARE_WEEKEND", "Fri, Sat"),
            ("PREGCARE_INGRESS_KEY", "k"),
            ("HOME", "/root"),
        ]))
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:1");
        assert_eq!(cfg.dedup_window_secs, 30);
        assert_eq!(cfg.care_config().weekend, [Weekday::Fri, Weekday::Sat]);
        assert_eq!(cfg.ingress_key.as_deref(), Some("k"));
        assert_eq!(cfg.failure_rate, 0.25);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut cfg = ServerConfig::default();
        assert!(matches!(
            cfg.apply_env(env(&[("PREGCARE_RETRY_MAX", "many")])),
            Err(ConfigError::Env { .. })
        ));
        cfg.failure_rate = 1.5;
        assert!(cfg.validate().is_err());
        let cfg = ServerConfig {
            weekly_weekday: "Someday".into(),
            ..ServerConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<ServerConfig>("typo = 1").is_err());
    }
}
