//! Experiment configuration file: one TOML document with a section per
//! component plus the sweep grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, PhyError, PolicyError, SimError, TopologyError};
use crate::phy::ChannelParams;
use crate::policies::{Policy, PolicyParams};
use crate::sim::RunConfig;
use crate::topology::ScenarioConfig;

/// Grid of cells to simulate. Each cell runs `runs` seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub policies: Vec<Policy>,
    pub s_udp: Vec<u32>,
    pub t_alloc: Vec<u64>,
    pub runs: usize,
    /// Per-run seeds are split off this one.
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { policies: Policy::ALL.to_vec(), s_udp: vec![50, 100, 200, 500], t_alloc: vec![1], runs: 25, master_seed: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    /// MRBA parameters. The `policy` field is ignored; the sweep picks policies.
    pub policy: PolicyParams,
    /// `s_udp`, `t_alloc` and `seed` are ignored; the sweep sets them per run.
    pub run: RunConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    /// Validates every section, naming the offending key as `section.key`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &str, key: &str, reason: String| ConfigError::Invalid { key: format!("{section}.{key}"), reason };
        self.scenario.validate().map_err(|e| match e {
            TopologyError::InvalidScenario { key, reason } => invalid("scenario", key, reason),
            other => invalid("scenario", "?", other.to_string()),
        })?;
        self.channel.validate().map_err(|e| match e {
            PhyError::InvalidParam { key, reason } => invalid("channel", key, reason),
            other => invalid("channel", "?", other.to_string()),
        })?;
        self.policy.validate().map_err(|e| match e {
            PolicyError::InvalidParam { key, reason } => invalid("policy", key, reason),
            other => invalid("policy", "?", other.to_string()),
        })?;
        self.run.validate().map_err(|e| match e {
            SimError::InvalidConfig { key, reason } => invalid("run", key, reason),
            other => invalid("run", "?", other.to_string()),
        })?;
        let sw = &self.sweep;
        if sw.policies.is_empty() {
            return Err(invalid("sweep", "policies", "must list at least one policy".into()));
        }
        if sw.s_udp.is_empty() || sw.s_udp.contains(&0) {
            return Err(invalid("sweep", "s_udp", "must list positive packet sizes".into()));
        }
        if sw.t_alloc.is_empty() || sw.t_alloc.contains(&0) {
            return Err(invalid("sweep", "t_alloc", "must list positive periods".into()));
        }
        if sw.runs == 0 {
            return Err(invalid("sweep", "runs", "must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.sweep.policies = vec![Policy::Ba];
        cfg.channel.bandwidth_mhz = 30.0;
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn sections_override() {
        let cfg = ExperimentConfig::from_toml(
            "[sweep]\npolicies = [\"msr\", \"distr\"]\ns_udp = [200]\nruns = 3\n[policy]\neta = 0.5\n[run]\nt_sim_s = 0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.sweep.policies, vec![Policy::Msr, Policy::Distr]);
        assert_eq!(cfg.sweep.runs, 3);
        assert_eq!(cfg.policy.eta, 0.5);
        assert_eq!(cfg.run.t_sim_s, 0.2);
    }

    fn key_of(text: &str) -> String {
        match ExperimentConfig::from_toml(text).unwrap_err() {
            ConfigError::Invalid { key, .. } => key,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of("[run]\nt_sim_s = -1.0\n"), "run.t_sim_s");
        assert_eq!(key_of("[run]\nt_alloc = 0\n"), "run.t_alloc");
        assert_eq!(key_of("[channel]\nbandwidth_mhz = 0.0\n"), "channel.bandwidth_mhz");
        assert_eq!(key_of("[policy]\nmu_thr = 0.0\n"), "policy.mu_thr");
        assert_eq!(key_of("[sweep]\nruns = 0\n"), "sweep.runs");
        assert_eq!(key_of("[sweep]\nt_alloc = []\n"), "sweep.t_alloc");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[run]\nt_simm = 1.0\n").unwrap_err().to_string();
        assert!(err.contains("t_simm"), "{err}");
        let err = ExperimentConfig::from_toml("[sweep]\npolicies = [\"fifo\"]\n").unwrap_err().to_string();
        assert!(err.contains("fifo"), "{err}");
    }

    #[test]
    fn shipped_evaluation_config_loads() {
        let cfg = ExperimentConfig::from_toml(include_str!("../../../configs/evaluation.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.channel.bandwidth_mhz, 30.0);
        assert_eq!(cfg.sweep.runs, 10);
    }
}
