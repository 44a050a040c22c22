use std::path::{Path, PathBuf};

use binlift_client::{DecodeConfig, EndpointConfig};
use binlift_core::datamap::DEFAULT_PROXIMITY_WINDOW;
use binlift_core::{Bitness, OptLevel, PromptOptions};
use binlift_harness::{DatasetConfig, Toolchain};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Everything a run needs besides its input and output paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub toolchain: Toolchain,
    pub endpoint: Option<EndpointConfig>,
    pub decode: DecodeConfig,
    /// Worker threads for dataset building and evaluation.
    pub workers: usize,
    pub prompt: PromptOptions,
    pub proximity_window: u64,
    pub opt_levels: Vec<OptLevel>,
    pub bitnesses: Vec<Bitness>,
    /// Directory of source bundles.
    pub corpus: Option<PathBuf>,
    /// Parent for temporary build directories.
    pub work_root: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            toolchain: Toolchain::default(),
            endpoint: None,
            decode: DecodeConfig::greedy(),
            workers: 4,
            prompt: PromptOptions::default(),
            proximity_window: DEFAULT_PROXIMITY_WINDOW,
            opt_levels: OptLevel::ALL.to_vec(),
            bitnesses: Bitness::ALL.to_vec(),
            corpus: None,
            work_root: None,
        }
    }
}

impl RunConfig {
    /// Parses a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let archive = cfg.endpoint.as_mut().and_then(|e| e.archive.as_mut());
        for p in [cfg.corpus.as_mut(), cfg.work_root.as_mut(), archive].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.workers == 0 {
            return usage("workers must be positive".into());
        }
        if self.prompt.token_budget == 0 {
            return usage("prompt.token_budget must be positive".into());
        }
        let tc = &self.toolchain;
        if tc.build_timeout_secs == 0 || tc.compile_timeout_secs == 0 || tc.run_timeout_secs == 0 {
            return usage("toolchain timeouts must be positive".into());
        }
        if self.opt_levels.is_empty() || self.bitnesses.is_empty() {
            return usage("opt_levels and bitnesses must not be empty".into());
        }
        for (what, path) in [("corpus", &self.corpus), ("work_root", &self.work_root)] {
            if let Some(p) = path {
                if !p.is_dir() {
                    return usage(format!("{what} directory {} does not exist", p.display()));
                }
            }
        }
        if let Some(ep) = &self.endpoint {
            ep.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        self.decode.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Short digest of the settings that shape outputs, embedded in them.
    /// Worker count and input/scratch locations are left out.
    pub fn hash(&self) -> String {
        let shaping = RunConfig { workers: 1, corpus: None, work_root: None, ..self.clone() };
        let json = serde_json::to_string(&shaping).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig {
            toolchain: self.toolchain.clone(),
            opt_levels: self.opt_levels.clone(),
            bitnesses: self.bitnesses.clone(),
            prompt: self.prompt.clone(),
            proximity_window: self.proximity_window,
            workers: self.workers,
            work_root: self.work_root.clone(),
            artifact_dir: None,
        }
    }
}
