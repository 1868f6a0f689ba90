//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VmsError};
use crate::kernel::{BlockConfig, PipelineSpec};
use crate::perfmodel::{DeviceDescriptor, KernelConfig, SearchSpace};

fn default_device() -> String {
    "paper-fpga".into()
}

fn default_budget() -> f64 {
    1e-2
}

fn default_widths() -> Vec<u32> {
    vec![16, 8]
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_widths")]
    pub widths: Vec<u32>,
    /// Bundled descriptor name or path to a descriptor file.
    #[serde(default = "default_device")]
    pub device: String,
    #[serde(default)]
    pub block: BlockConfig,
    #[serde(default)]
    pub search: SearchSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub pipeline: PipelineSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: default_seed(),
            budget: default_budget(),
            widths: default_widths(),
            device: default_device(),
            block: BlockConfig::default(),
            search: SearchSpace::default(),
            kernel: None,
            pipeline: PipelineSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str, file: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start].bytes().filter(|&b| b == b'\n').count() + 1);
            VmsError::parse(file, line, e.message().to_string())
        })?;
        cfg.pipeline.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = super::read_text(path)?;
        Self::from_toml(&text, &path.display().to_string())
    }
}

/// Resolves a bundled descriptor name, else reads a descriptor file.
pub fn resolve_device(spec: &str) -> Result<DeviceDescriptor> {
    if let Some(d) = DeviceDescriptor::bundled(spec) {
        return Ok(d);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(VmsError::validation(format!(
            "device {spec:?} is neither a bundled descriptor ({}) nor a file",
            DeviceDescriptor::BUNDLED.join(", ")
        )));
    }
    let text = super::read_text(path)?;
    DeviceDescriptor::from_toml(&text).map_err(|e| VmsError::parse(spec, 0, e.to_string()))
}
