// SPDX-License-Identifier: Apache-2.0

//! Service configuration: a TOML file with environment overrides for the
//! storage path (`SMSURVEY_STORAGE`), gateway (`SMSURVEY_GATEWAY`) and
//! simulator seed (`SMSURVEY_SEED`).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::session::EngineConfig;
use crate::time::humantime_duration;
use crate::transport::{NetworkModel, RegionMap, SegmentLimits};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{var}: {message}")]
    Env { var: &'static str, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatewayKind {
    /// The built-in network simulator, driven by the wall clock.
    Simulated,
    /// Append outbound segments to a JSON-lines file.
    Outbox,
}

impl FromStr for GatewayKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simulated" | "sim" => Ok(GatewayKind::Simulated),
            "outbox" => Ok(GatewayKind::Outbox),
            other => Err(format!(
                "unknown gateway {other:?}, expected simulated or outbox"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub delivery_probability: f64,
    pub region_probability: BTreeMap<String, f64>,
    #[serde(with = "humantime_duration")]
    pub latency_min: Duration,
    #[serde(with = "humantime_duration")]
    pub latency_max: Duration,
    #[serde(with = "humantime_duration")]
    pub retry_interval: Duration,
    #[serde(with = "humantime_duration")]
    pub validity_period: Duration,
    /// Phone prefix to region label.
    pub regions: BTreeMap<String, String>,
    pub single_capacity: usize,
    pub part_capacity: usize,
    pub max_parts: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        let model = NetworkModel::default();
        NetworkConfig {
            delivery_probability: model.delivery_probability,
            region_probability: model.region_probability,
            latency_min: model.latency_min,
            latency_max: model.latency_max,
            retry_interval: model.retry_interval,
            validity_period: model.validity_period,
            regions: BTreeMap::new(),
            single_capacity: model.limits.single,
            part_capacity: model.limits.per_part,
            max_parts: model.limits.max_parts,
        }
    }
}

impl NetworkConfig {
    pub fn limits(&self) -> SegmentLimits {
        SegmentLimits {
            single: self.single_capacity,
            per_part: self.part_capacity,
            max_parts: self.max_parts,
        }
    }

    pub fn region_map(&self) -> RegionMap {
        if self.regions.is_empty() {
            return RegionMap::default();
        }
        let mut map = RegionMap::empty();
        for (prefix, region) in &self.regions {
            map.insert(prefix.clone(), region.clone());
        }
        map
    }

    pub fn model(&self) -> NetworkModel {
        NetworkModel {
            delivery_probability: self.delivery_probability,
            region_probability: self.region_probability.clone(),
            latency_min: self.latency_min,
            latency_max: self.latency_max,
            retry_interval: self.retry_interval,
            validity_period: self.validity_period,
            regions: self.region_map(),
            outages: Vec::new(),
            limits: self.limits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// SQLite database path, or `:memory:`.
    pub storage: PathBuf,
    pub gateway: GatewayKind,
    pub outbox: PathBuf,
    pub seed: u64,
    pub listen: SocketAddr,
    #[serde(with = "humantime_duration")]
    pub token_lifetime: Duration,
    /// How often the simulated gateway is stepped while serving.
    #[serde(with = "humantime_duration")]
    pub tick: Duration,
    pub network_threshold: f64,
    pub isolated_threshold: f64,
    pub network: NetworkConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            storage: PathBuf::from("smsurvey.db"),
            gateway: GatewayKind::Simulated,
            outbox: PathBuf::from("outbox.jsonl"),
            seed: 0,
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            token_lifetime: Duration::from_secs(12 * 3600),
            tick: Duration::from_secs(1),
            network_threshold: 0.9,
            isolated_threshold: 0.2,
            network: NetworkConfig::default(),
        }
    }
}

impl Config {
    /// Reads `path` if given, then applies the process environment.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
                Config::from_toml(&text)?
            }
            None => Config::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Config, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        for (key, value) in vars {
            match key.as_str() {
                "SMSURVEY_STORAGE" => self.storage = PathBuf::from(value),
                "SMSURVEY_GATEWAY" => {
                    self.gateway = value.parse().map_err(|message| ConfigError::Env {
                        var: "SMSURVEY_GATEWAY",
                        message,
                    })?
                }
                "SMSURVEY_SEED" => {
                    self.seed = value.trim().parse().map_err(|e: std::num::ParseIntError| {
                        ConfigError::Env {
                            var: "SMSURVEY_SEED",
                            message: e.to_string(),
                        }
                    })?
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.network;
        if !(0.0..=1.0).contains(&n.delivery_probability)
            || n.region_probability
                .values()
                .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(ConfigError::Invalid(
                "delivery probabilities must lie in [0, 1]".into(),
            ));
        }
        if n.single_capacity == 0 || n.part_capacity == 0 || n.max_parts == 0 {
            return Err(ConfigError::Invalid(
                "segment capacities must be positive".into(),
            ));
        }
        if n.latency_min > n.latency_max {
            return Err(ConfigError::Invalid(
                "latency_min exceeds latency_max".into(),
            ));
        }
        if self.isolated_threshold > self.network_threshold {
            return Err(ConfigError::Invalid(
                "isolated_threshold exceeds network_threshold".into(),
            ));
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            regions: self.network.region_map(),
            limits: self.network.limits(),
            network_threshold: self.network_threshold,
            isolated_threshold: self.isolated_threshold,
        }
    }
}
