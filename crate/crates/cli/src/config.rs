//! TOML configuration file. Every section and key is optional; flags given on
//! the command line take precedence.
//!
//! ```toml
//! [system]            # subword merges, layer width, initial seed
//! num_merges = 1000
//! dims = 64
//! [system.train]      # Adam schedule of the initial training
//! epochs = 20
//! learning_rate = 0.003
//! [aligner]
//! m1_iters = 5
//! m2_iters = 5
//! [al]                # active-learning loop and service queue
//! block_size = 500
//! epsilon = 0.3
//! strategy = "ads"
//! beam = 6
//! lr = 0.0005
//! [service]
//! host = "127.0.0.1"
//! port = 8080
//! ```

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use inmt_al::active::ALConfig;
use inmt_al::aligner::AlignerConfig;
use inmt_al::model::SystemConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub host: String,
    pub port: u16,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub system: SystemConfig,
    pub aligner: AlignerConfig,
    pub al: ALConfig,
    pub service: ServeSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("invalid config {}", p.display()))
            }
        }
    }
}
