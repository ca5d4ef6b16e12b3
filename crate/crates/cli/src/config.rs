//! JSON pipeline configuration shared by the subcommands.

use anyhow::Context;
use nucleoforge_core::postproc::PostprocConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub gamma: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub num_classes: NumClasses,
    pub postproc: PostprocConfig,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NumClasses(pub u32);

impl Default for NumClasses {
    fn default() -> Self {
        NumClasses(6)
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: PipelineConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn num_classes(&self, flag: Option<u32>) -> anyhow::Result<u32> {
        let c = flag.unwrap_or(self.num_classes.0);
        if c == 0 {
            anyhow::bail!("num_classes must be at least 1");
        }
        Ok(c)
    }
}
