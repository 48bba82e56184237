//! Experiment configuration: one versioned TOML file per experiment.
//!
//! ```toml
//! version = 1
//! eval_episodes = 100
//! seeds = [0, 1, 2, 3, 4]
//!
//! [sac]
//! epochs = 60
//! hidden_sizes = [64, 64]
//!
//! [pendulum]
//! friction = 0.1
//!
//! [wrapper]
//! kind = "ext-termination"   # none | inference-tank | ext-termination | ext-state
//! e0 = 12.5
//!
//! [force_field]
//! magnitude = 1.0
//! profile = "velocity-aligned"
//! ```
//!
//! Omitted keys take their defaults. Overrides use dotted keys
//! (`sac.epochs=10`, `wrapper.e0=3.2`) and are applied after the file is read.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::PendulumParams;
use crate::error::{Error, Result};
use crate::passivize::ForceField;
use crate::sac::SacConfig;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_EVAL_EPISODES: usize = 100;

/// Which tank, if any, sits between the agent and the plant.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WrapperSpec {
    #[default]
    None,
    InferenceTank {
        e0: f64,
    },
    ExtTermination {
        e0: f64,
    },
    ExtState {
        e0: f64,
    },
}

impl WrapperSpec {
    pub fn e0(&self) -> Option<f64> {
        match *self {
            WrapperSpec::None => None,
            WrapperSpec::InferenceTank { e0 }
            | WrapperSpec::ExtTermination { e0 }
            | WrapperSpec::ExtState { e0 } => Some(e0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            WrapperSpec::None => "none",
            WrapperSpec::InferenceTank { .. } => "inference-tank",
            WrapperSpec::ExtTermination { .. } => "ext-termination",
            WrapperSpec::ExtState { .. } => "ext-state",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub pendulum: PendulumParams,
    #[serde(default)]
    pub wrapper: WrapperSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_field: Option<ForceField>,
}

fn default_eval_episodes() -> usize {
    DEFAULT_EVAL_EPISODES
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            eval_episodes: DEFAULT_EVAL_EPISODES,
            seeds: default_seeds(),
            sac: SacConfig::default(),
            pendulum: PendulumParams::default(),
            wrapper: WrapperSpec::None,
            force_field: None,
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parse `text`, then apply `key=value` overrides with dotted keys.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
        config.check(Some(text))?;
        if overrides.is_empty() {
            return Ok(config);
        }
        let mut table: toml::Table = text.parse().map_err(|e| toml_error(text, &e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config {
                line: None,
                message: format!("after overrides: {}", e.message()),
            })?;
        config.check(None)?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.check(None)
    }

    fn check(&self, text: Option<&str>) -> Result<()> {
        let fail = |path: &[&str], message: String| Error::Config {
            line: text.and_then(|t| key_line(t, path)),
            message,
        };
        if self.version != CONFIG_VERSION {
            return Err(fail(
                &["version"],
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    self.version
                ),
            ));
        }
        if self.seeds.is_empty() {
            return Err(fail(&["seeds"], "seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(fail(&["seeds"], "seeds must be distinct".into()));
        }
        self.sac
            .validate()
            .map_err(|e| fail(&["sac"], e.to_string()))?;
        self.pendulum
            .validate()
            .map_err(|e| fail(&["pendulum"], e.to_string()))?;
        if self.sac.steps_per_trajectory > crate::env::DEFAULT_EPISODE_STEPS {
            return Err(fail(
                &["sac", "steps_per_trajectory"],
                format!(
                    "steps_per_trajectory exceeds the {}-step episode limit",
                    crate::env::DEFAULT_EPISODE_STEPS
                ),
            ));
        }
        if let Some(e0) = self.wrapper.e0() {
            if !(e0.is_finite() && e0 >= 0.0) {
                return Err(fail(
                    &["wrapper", "e0"],
                    format!("e0 must be finite and >= 0, got {e0}"),
                ));
            }
        }
        if let Some(f) = &self.force_field {
            ForceField::new(f.magnitude, f.profile)
                .map_err(|e| fail(&["force_field", "magnitude"], e.to_string()))?;
        }
        Ok(())
    }

    /// Canonical text of the resolved configuration.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`ExperimentConfig::canonical_toml`].
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.canonical_toml().as_bytes()).into()
    }

    pub fn content_hash_hex(&self) -> String {
        hex::encode(self.content_hash())
    }

    /// Configuration for one seed of the experiment.
    pub fn sac_for_seed(&self, seed: u64) -> SacConfig {
        SacConfig {
            seed,
            ..self.sac.clone()
        }
    }
}

fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    Error::Config {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text.as_bytes()[..offset.min(text.len())]
        .iter()
        .filter(|&&b| b == b'\n')
        .count()
        + 1
}

/// 1-based line where `path` (section keys then a leaf key) is defined.
/// A one-element path names either a top-level key or a section header.
fn key_line(text: &str, path: &[&str]) -> Option<usize> {
    let (section, key) = match path {
        [key] => (None, *key),
        [section, key] => (Some(*section), *key),
        _ => return None,
    };
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            let header = header.trim().to_string();
            if section.is_none() && header == key {
                return Some(i + 1);
            }
            current = Some(header);
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else {
            continue;
        };
        let lhs = lhs.trim();
        let hit = match (section, current.as_deref()) {
            (None, None) => lhs == key,
            (Some(s), Some(c)) => s == c && lhs == key,
            (Some(s), None) => lhs == format!("{s}.{key}"),
            _ => false,
        };
        if hit {
            return Some(i + 1);
        }
    }
    section.and_then(|s| key_line(text, &[s]))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let err = |message: String| Error::Config {
        line: None,
        message,
    };
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| err(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(err(format!("override key {key:?} is malformed")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (leaf, parents) = path.split_last().expect("non-empty path");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| err(format!("override {key:?}: {p} is not a table")))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}
