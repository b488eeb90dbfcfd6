//! Artifact writing. Every artifact starts with a `{version, config_hash, seed}` header.

use std::path::Path;

use serde::Serialize;

use crate::config::config_hash;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Header {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl Header {
    pub fn new<C: Serialize>(config: &C, seed: Option<u64>) -> Self {
        Header {
            version: env!("CARGO_PKG_VERSION"),
            config_hash: config_hash(config),
            seed,
        }
    }
}

/// Command result ready for writing.
pub enum Artifact {
    Json(serde_json::Value),
    /// CSV body whose first line holds the column names.
    Csv(String),
}

fn write(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn emit<C: Serialize>(
    config: &C,
    seed: Option<u64>,
    artifact: &Artifact,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let header = Header::new(config, seed);
    let config = serde_json::to_value(config).expect("configuration serializes");
    match artifact {
        Artifact::Json(result) => {
            let doc = serde_json::json!({ "header": header, "config": config, "result": result });
            let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
            text.push('\n');
            write(out, &text)
        }
        Artifact::Csv(body) => {
            let seed = header.seed.map_or("none".to_string(), |s| s.to_string());
            let text = format!(
                "# version={},config_hash={},seed={}\n# config={}\n{body}",
                header.version, header.config_hash, seed, config
            );
            write(out, &text)
        }
    }
}
