//! Builds decompilation datasets from C source bundles and checks candidate
//! decompilations by recompiling and re-running them.

pub mod bundle;
pub mod compile;
pub mod dataset;
pub mod evaluate;
pub mod process;
pub mod rewrite;
pub mod toolchain;

use std::path::{Path, PathBuf};

use binlift_core::BinaryError;
use thiserror::Error;

pub use bundle::{load_bundle_dir, IoExample, NamedBundle, SourceBundle};
pub use compile::{compile_and_strip, CompiledBinary, SidecarSymbol};
pub use dataset::{
    build_dataset, build_sample, curriculum_sort, write_dataset, Dataset, DatasetConfig, Manifest, SampleError,
    SampleRecord, SkipReason,
};
pub use evaluate::{check_candidate, check_recompile, check_reexecute, score_sample, CandidateResult, CheckOutcome};
pub use rewrite::rewrite_for_32bit;
pub use toolchain::Toolchain;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot run `{tool}`: {source}")]
    Tool { tool: String, source: std::io::Error },
    #[error("compilation failed:\n{stderr}")]
    CompileError { stderr: String },
    #[error("strip failed:\n{stderr}")]
    StripError { stderr: String },
    #[error("{what} timed out after {secs}s")]
    Timeout { what: String, secs: u64 },
    #[error("invalid bundle {name}: {reason}")]
    InvalidBundle { name: String, reason: String },
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Binary(#[from] BinaryError),
    #[error("worker pool: {0}")]
    Pool(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}
