use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::process::run_with_timeout;

/// External tools and the time limits applied to them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toolchain {
    pub cc: PathBuf,
    pub strip: PathBuf,
    /// Dataset builds (compile + strip).
    pub build_timeout_secs: u64,
    /// Candidate re-compilation.
    pub compile_timeout_secs: u64,
    /// One run of a compiled candidate.
    pub run_timeout_secs: u64,
    #[serde(skip)]
    version: OnceLock<String>,
}

impl Default for Toolchain {
    fn default() -> Self {
        Self {
            cc: PathBuf::from("gcc"),
            strip: PathBuf::from("strip"),
            build_timeout_secs: 60,
            compile_timeout_secs: 30,
            run_timeout_secs: 10,
            version: OnceLock::new(),
        }
    }
}

impl Toolchain {
    pub fn new(cc: impl Into<PathBuf>, strip: impl Into<PathBuf>) -> Self {
        Self { cc: cc.into(), strip: strip.into(), ..Default::default() }
    }

    pub fn build_timeout(&self) -> Duration {
        Duration::from_secs(self.build_timeout_secs)
    }

    pub fn compile_timeout(&self) -> Duration {
        Duration::from_secs(self.compile_timeout_secs)
    }

    pub fn run_timeout(&self) -> Duration {
        Duration::from_secs(self.run_timeout_secs)
    }

    /// First line of `cc --version`, or `unknown` when it cannot be run.
    pub fn compiler_version(&self) -> &str {
        self.version.get_or_init(|| {
            run_with_timeout(Command::new(&self.cc).arg("--version"), Duration::from_secs(10))
                .ok()
                .filter(|o| o.success())
                .and_then(|o| o.stdout.lines().next().map(str::to_string))
                .unwrap_or_else(|| "unknown".into())
        })
    }

    /// Both tools resolve to something runnable.
    pub fn check(&self) -> Result<(), String> {
        for tool in [&self.cc, &self.strip] {
            if !is_runnable(tool) {
                return Err(format!("tool `{}` not found", tool.display()));
            }
        }
        Ok(())
    }
}

fn is_runnable(tool: &Path) -> bool {
    if tool.components().count() > 1 {
        return tool.is_file();
    }
    std::env::var_os("PATH")
        .map(|paths| std::env::split_paths(&paths).any(|dir| dir.join(tool).is_file()))
        .unwrap_or(false)
}
