//! Run configuration files (TOML).
//!
//! ```toml
//! [train]
//! epochs_warmup = 100
//! batch_size = 256
//!
//! [train.encoder]
//! input_shape = [28, 28, 1]
//!
//! [mix]
//! inlier_class = 0
//! p = 0.1
//! ```
//!
//! Every key is optional and defaults to the values in the respective
//! `Default` impls.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mix::MixSpec;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub mix: MixSpec,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.mix.validate()
    }

    /// A copy with one dotted key set from TOML value syntax, e.g.
    /// `("mix.p", "0.2")` or `("train.encoder.conv_channels", "[8, 16]")`.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let bad = |msg: String| Error::Config(format!("{key} = {value}: {msg}"));
        let parsed: toml::Table = toml::from_str(&format!("v = {value}")).map_err(|e| bad(e.to_string()))?;
        let value = parsed["v"].clone();
        let mut root = toml::Table::try_from(self).map_err(|e| bad(e.to_string()))?;
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| bad("empty key".into()))?;
        let mut table = &mut root;
        for part in parts {
            table = table
                .entry(part)
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| bad(format!("{part} is not a section")))?;
        }
        table.insert(last.to_string(), value);
        let cfg: Self = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
