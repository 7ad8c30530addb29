//! Declarative run configuration: a single JSON document whose blocks mirror
//! the subcommands, with command-line flags taking precedence field by field.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: String,
    pub seed: Option<u64>,
    pub output_dir: Option<String>,
    pub workers: Option<usize>,
    #[serde(default)]
    pub chi: ChiBlock,
    #[serde(default)]
    pub residual: ResidualBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub mckv: MckvBlock,
    #[serde(default)]
    pub fluct: FluctBlock,
    #[serde(default)]
    pub martingale: MartingaleBlock,
    #[serde(default)]
    pub scaling: ScalingBlock,
    #[serde(default)]
    pub identity: IdentityBlock,
}

fn default_schema() -> String {
    SCHEMA_VERSION.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChiBlock {
    pub alphas: Option<Vec<f64>>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ResidualBlock {
    pub alphas: Option<Vec<f64>>,
    pub n_ladder: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub model: Option<String>,
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub sigma: Option<f64>,
    pub coupling_k: Option<f64>,
    pub method: Option<String>,
    pub record_stride: Option<usize>,
    pub coupled: Option<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MckvBlock {
    pub model: Option<String>,
    pub alpha: Option<f64>,
    pub cells: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub sigma: Option<f64>,
    pub coupling_k: Option<f64>,
    pub initial: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FluctBlock {
    pub model: Option<String>,
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub replicas: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MartingaleBlock {
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub replicas: Option<usize>,
    pub t_end: Option<f64>,
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ScalingBlock {
    pub model: Option<String>,
    pub alpha: Option<f64>,
    pub statistic: Option<String>,
    pub n_ladder: Option<Vec<usize>>,
    pub replicas: Option<usize>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub sigma: Option<f64>,
    pub coupling_k: Option<f64>,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct IdentityBlock {
    pub alpha: Option<f64>,
    pub n: Option<usize>,
    pub pairs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| format!("invalid config: {e}"))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version '{}', expected '{}'",
                cfg.schema_version, SCHEMA_VERSION
            ));
        }
        Ok(cfg)
    }
}
