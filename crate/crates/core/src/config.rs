//! Pipeline configuration (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::{MiningConfig, TrainConfig, DEFAULT_FEATURE_DEGREES};
use crate::error::{Error, Result};
use crate::taper::TaperParams;
use crate::voting::{CarryMode, VoteConfig, ZScoreMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub bandwidth: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { bandwidth: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    pub k: usize,
    /// Radians; 0 selects two grid steps.
    pub max_angle: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { k: 1, max_angle: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub standardize: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingConfig {
    pub l_eval: usize,
    pub zscore_mode: ZScoreMode,
    pub carry: CarryMode,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            l_eval: 15,
            zscore_mode: ZScoreMode::Described,
            carry: CarryMode::Accumulated,
        }
    }
}

impl VotingConfig {
    pub fn vote_config(&self) -> VoteConfig {
        VoteConfig {
            zscore: self.zscore_mode,
            carry: self.carry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub degrees: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            degrees: DEFAULT_FEATURE_DEGREES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub success_radius: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { success_radius: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub projection: ProjectionConfig,
    pub fusion: FusionConfig,
    pub taper: TaperParams,
    pub voting: VotingConfig,
    pub features: FeatureConfig,
    pub training: TrainConfig,
    pub mining: MiningConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    /// Parses TOML. Unknown keys are an error naming the key; missing keys
    /// take their defaults and are logged.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let defaults = toml::Table::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        check_keys(&user, &defaults, "")?;
        for key in missing_keys(&user, &defaults, "") {
            tracing::info!(key = %key.0, value = %key.1, "config key missing, using default");
        }
        let config: Self = toml::Value::Table(user)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.grid.bandwidth;
        let fail = |key: &str, msg: String| Err(Error::Config(format!("`{key}`: {msg}")));
        if b == 0 || b > crate::grid::MAX_BANDWIDTH {
            return fail("grid.bandwidth", format!("{b} outside [1, {}]", crate::grid::MAX_BANDWIDTH));
        }
        if self.voting.l_eval < 2 || self.voting.l_eval > b {
            return fail("voting.l_eval", format!("{} outside [2, {b}]", self.voting.l_eval));
        }
        if self.features.degrees == 0 || self.features.degrees > b {
            return fail("features.degrees", format!("{} outside [1, {b}]", self.features.degrees));
        }
        if self.taper.bandwidth == 0 || self.taper.bandwidth > b {
            return fail("taper.bandwidth", format!("{} outside [1, {b}]", self.taper.bandwidth));
        }
        if self.projection.k == 0 {
            return fail("projection.k", "must be positive".into());
        }
        if !(self.training.learning_rate > 0.0) {
            return fail("training.learning_rate", "must be positive".into());
        }
        if !(self.eval.success_radius > 0.0) {
            return fail("eval.success_radius", "must be positive".into());
        }
        Ok(())
    }
}

fn check_keys(user: &toml::Table, defaults: &toml::Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = format!("{prefix}{k}");
        match defaults.get(k) {
            None => return Err(Error::Config(format!("unknown config key `{path}`"))),
            Some(toml::Value::Table(d)) => match v {
                toml::Value::Table(u) => check_keys(u, d, &format!("{path}."))?,
                _ => return Err(Error::Config(format!("config key `{path}` must be a table"))),
            },
            Some(_) => {}
        }
    }
    Ok(())
}

fn missing_keys(user: &toml::Table, defaults: &toml::Table, prefix: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (k, d) in defaults {
        let path = format!("{prefix}{k}");
        match (d, user.get(k)) {
            (toml::Value::Table(dt), Some(toml::Value::Table(ut))) => out.extend(missing_keys(ut, dt, &format!("{path}."))),
            (toml::Value::Table(dt), None) => out.extend(missing_keys(&toml::Table::new(), dt, &format!("{path}."))),
            (_, None) => out.push((path, d.to_string())),
            _ => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.grid.bandwidth, 100);
        assert_eq!(c.voting.l_eval, 15);
        assert_eq!(c.training.learning_rate, 0.0046);
        assert_eq!(c.training.batch_size, 13);
        assert_eq!(c.training.tau1, 2.0);
        assert_eq!(c.training.tau2, 0.2);
        assert_eq!(c.mining.positive_radius, 5.0);
        assert_eq!((c.mining.negative_min, c.mining.negative_max), (6.0, 20.0));
        assert_eq!(c.mining.min_spacing, 0.10);
        assert_eq!(c.eval.success_radius, 5.0);
        assert!(c.fusion.standardize);
        assert_eq!(c.voting.zscore_mode, ZScoreMode::Described);
    }

    #[test]
    fn empty_and_partial_files() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
        let c = PipelineConfig::from_toml("seed = 4\n[grid]\nbandwidth = 32\n[features]\ndegrees = 16\n[voting]\nzscore_mode = \"literal\"\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.grid.bandwidth, 32);
        assert_eq!(c.voting.zscore_mode, ZScoreMode::Literal);
        assert_eq!(c.voting.l_eval, 15);
        let round = PipelineConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = PipelineConfig::from_toml("[grid]\nbandwith = 32\n").unwrap_err().to_string();
        assert!(e.contains("grid.bandwith"), "{e}");
        let e = PipelineConfig::from_toml("colour = 1\n").unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        let e = PipelineConfig::from_toml("[voting]\nl_eval = 500\n").unwrap_err().to_string();
        assert!(e.contains("voting.l_eval"), "{e}");
    }

    #[test]
    fn missing_keys_listed() {
        let user: toml::Table = "[grid]\nbandwidth = 8\n".parse().unwrap();
        let defaults = toml::Table::try_from(PipelineConfig::default()).unwrap();
        let missing = missing_keys(&user, &defaults, "");
        assert!(missing.iter().any(|(k, _)| k == "voting.l_eval"));
        assert!(!missing.iter().any(|(k, _)| k == "grid.bandwidth"));
    }
}
