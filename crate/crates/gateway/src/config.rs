//! Service configuration file.
//!
//! ```toml
//! version = 1
//! listen = "127.0.0.1:8080"
//! tick_ms = 1000
//! seed = 42
//! ticks = 86400
//! event_log = "events.jsonl"
//! risk_model = "models/risk.json"
//! energy_model = "models/energy.json"
//!
//! [schedule]
//! assess_every = 60
//!
//! [assistant]
//! remote = true
//! endpoint = "http://localhost:9000/complete"
//! ```
//!
//! Relative paths resolve against the directory holding the file. The remote
//! assistant key is read from `SMARTLINE_LLM_KEY` only.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use smartline_core::assistant::{RemoteConfig, DEFAULT_MAX_TOKENS, DEFAULT_TIMEOUT_MS, KEY_ENV};
use smartline_core::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    /// Score every n-th tick.
    pub detect_every: u64,
    pub assess_every: u64,
    pub forecast_every: u64,
    pub forecast_horizon: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            detect_every: 1,
            assess_every: 60,
            forecast_every: 60,
            forecast_horizon: 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssistantSettings {
    pub remote: bool,
    pub endpoint: Option<String>,
    pub max_tokens: u32,
    pub timeout_ms: u64,
}

impl Default for AssistantSettings {
    fn default() -> Self {
        Self {
            remote: false,
            endpoint: None,
            max_tokens: DEFAULT_MAX_TOKENS,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl AssistantSettings {
    pub fn remote_config(&self) -> RemoteConfig {
        RemoteConfig {
            enabled: self.remote,
            endpoint: self.endpoint.clone(),
            api_key: std::env::var(KEY_ENV).ok().filter(|k| !k.is_empty()),
            max_tokens: self.max_tokens,
            timeout_ms: self.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub version: u32,
    pub listen: String,
    /// Wall-clock pause between simulated ticks; 0 runs unpaced.
    pub tick_ms: u64,
    pub seed: u64,
    /// Length of the built-in simulation when no `sim_config` is given.
    pub ticks: u64,
    pub sim_config: Option<PathBuf>,
    /// Feed readings from a CSV file instead of the simulator.
    pub replay_csv: Option<PathBuf>,
    pub event_log: Option<PathBuf>,
    pub risk_model: Option<PathBuf>,
    pub energy_model: Option<PathBuf>,
    pub train_on_start: bool,
    pub contamination: f64,
    pub energy_contamination: f64,
    pub catalog: Option<PathBuf>,
    pub coefficients: Option<PathBuf>,
    pub schedule: Schedule,
    pub assistant: AssistantSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            listen: "127.0.0.1:8080".into(),
            tick_ms: 1000,
            seed: 42,
            ticks: 86_400,
            sim_config: None,
            replay_csv: None,
            event_log: None,
            risk_model: None,
            energy_model: None,
            train_on_start: false,
            contamination: 0.01,
            energy_contamination: 0.005,
            catalog: None,
            coefficients: None,
            schedule: Schedule::default(),
            assistant: AssistantSettings::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Version {
                found: config.version,
                expected: CONFIG_VERSION,
            });
        }
        Ok(config)
    }

    /// Parse and resolve relative paths against the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.sim_config,
            &mut self.replay_csv,
            &mut self.event_log,
            &mut self.risk_model,
            &mut self.energy_model,
            &mut self.catalog,
            &mut self.coefficients,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn listen_addr(&self) -> Result<SocketAddr> {
        self.listen
            .parse()
            .map_err(|e| Error::Config(format!("listen address {:?}: {e}", self.listen)))
    }

    /// Startup checks. Model files are checked separately since
    /// `train_on_start` can stand in for them.
    pub fn validate(&self) -> Result<()> {
        self.listen_addr()?;
        let s = &self.schedule;
        for (name, v) in [
            ("detect_every", s.detect_every),
            ("assess_every", s.assess_every),
            ("forecast_every", s.forecast_every),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("schedule.{name} must be at least 1")));
            }
        }
        if s.forecast_horizon < 1 {
            return Err(Error::Config("schedule.forecast_horizon must be at least 1".into()));
        }
        for (name, q) in [
            ("contamination", self.contamination),
            ("energy_contamination", self.energy_contamination),
        ] {
            if !(q > 0.0 && q < 0.5) {
                return Err(Error::Config(format!("{name} must be in (0, 0.5), got {q}")));
            }
        }
        if self.ticks == 0 && self.sim_config.is_none() && self.replay_csv.is_none() {
            return Err(Error::Config("ticks must be at least 1".into()));
        }
        if self.sim_config.is_some() && self.replay_csv.is_some() {
            return Err(Error::Config("sim_config and replay_csv are mutually exclusive".into()));
        }
        for (name, path) in [
            ("sim_config", &self.sim_config),
            ("replay_csv", &self.replay_csv),
            ("catalog", &self.catalog),
            ("coefficients", &self.coefficients),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name} {} does not exist", p.display())));
                }
            }
        }
        if let Some(dir) = self.event_log.as_ref().and_then(|p| p.parent()) {
            if !dir.as_os_str().is_empty() && !dir.is_dir() {
                return Err(Error::Config(format!(
                    "event log directory {} does not exist",
                    dir.display()
                )));
            }
        }
        if self.assistant.remote && self.assistant.endpoint.is_none() {
            return Err(Error::Config("assistant.remote needs assistant.endpoint".into()));
        }
        Ok(())
    }

    /// Model files must exist unless they will be trained at startup.
    pub fn check_models(&self) -> Result<()> {
        if self.train_on_start {
            return Ok(());
        }
        for (name, path) in [("risk_model", &self.risk_model), ("energy_model", &self.energy_model)] {
            match path {
                None => {
                    return Err(Error::Config(format!(
                        "{name} is not configured; pass --train-on-start to train one"
                    )))
                }
                Some(p) if !p.is_file() => {
                    return Err(Error::Config(format!(
                        "{name} {} does not exist; pass --train-on-start to train one",
                        p.display()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let config = ServiceConfig::from_toml_str("version = 1").unwrap();
        assert_eq!(config, ServiceConfig::default());
        config.validate().unwrap();
        assert_eq!(config.schedule.assess_every, 60);
    }

    #[test]
    fn zero_interval_rejected() {
        let config = ServiceConfig::from_toml_str("version = 1\n[schedule]\nassess_every = 0").unwrap();
        let err = config.validate().unwrap_err().to_string();
        assert!(err.contains("assess_every"), "{err}");
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        assert!(ServiceConfig::from_toml_str("version = 1\nlisten_addr = \"x\"").is_err());
        assert!(matches!(
            ServiceConfig::from_toml_str("version = 3"),
            Err(Error::Version { found: 3, .. })
        ));
    }

    #[test]
    fn missing_paths_rejected() {
        let config = ServiceConfig {
            sim_config: Some("/nonexistent/sim.toml".into()),
            ..ServiceConfig::default()
        };
        assert!(config.validate().is_err());
        let config = ServiceConfig {
            risk_model: Some("/nonexistent/risk.json".into()),
            ..ServiceConfig::default()
        };
        assert!(config.check_models().is_err());
        let config = ServiceConfig {
            train_on_start: true,
            ..config
        };
        config.check_models().unwrap();
    }

    #[test]
    fn relative_paths_resolve_against_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("service.toml");
        std::fs::write(&file, "version = 1\nevent_log = \"events.jsonl\"\n").unwrap();
        let config = ServiceConfig::from_file(&file).unwrap();
        assert_eq!(config.event_log, Some(dir.path().join("events.jsonl")));
    }

    #[test]
    fn key_only_from_env() {
        let settings = AssistantSettings {
            remote: true,
            endpoint: Some("http://localhost:1/complete".into()),
            ..AssistantSettings::default()
        };
        let remote = settings.remote_config();
        assert!(remote.is_active());
        assert_eq!(remote.max_tokens, 100);
    }
}
