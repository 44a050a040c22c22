use std::path::{Path, PathBuf};

use binlift_core::Bitness;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoExample {
    pub args: Vec<String>,
    pub expected_stdout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_return: Option<i32>,
}

/// A C function with what it takes to build and run it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceBundle {
    pub func_name: String,
    /// The function definition (and any globals it owns); the ground truth.
    pub source: String,
    /// Declarations and the `main` driver; compiled in front of `source` or
    /// of a candidate.
    pub scaffold: String,
    pub io_examples: Vec<IoExample>,
    pub bitness: Vec<Bitness>,
    /// Extra compiler flags used for every build of this bundle.
    #[serde(default)]
    pub cflags: Vec<String>,
}

/// Textual count of definitions (a name, a parameter list, then `{`).
pub fn count_definitions(source: &str, name: &str) -> usize {
    let re = Regex::new(&format!(r"\b{}\s*\([^;{{}}]*\)\s*\{{", regex::escape(name))).expect("valid regex");
    re.find_iter(source).count()
}

impl SourceBundle {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::InvalidBundle { name: self.func_name.clone(), reason: m });
        if self.func_name.is_empty() {
            return fail("empty func_name".into());
        }
        let n = count_definitions(&self.source, &self.func_name);
        if n != 1 {
            return fail(format!("source defines `{}` {n} times, expected once", self.func_name));
        }
        if self.bitness.is_empty() {
            return fail("no bitness targets".into());
        }
        if self.io_examples.is_empty() {
            return fail("no io examples".into());
        }
        Ok(())
    }

    pub fn targets(&self, bitness: Bitness) -> bool {
        self.bitness.contains(&bitness)
    }

    /// Translation unit for `body`: the scaffold followed by the body.
    pub fn translation_unit(&self, body: &str) -> String {
        format!("{}\n{}", self.scaffold, body)
    }

    /// sha256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("bundle serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let bundle: SourceBundle = serde_json::from_str(&text)
            .map_err(|e| HarnessError::InvalidBundle { name: path.display().to_string(), reason: e.to_string() })?;
        bundle.validate()?;
        Ok(bundle)
    }
}

/// A bundle with the file stem it was loaded from.
#[derive(Debug, Clone)]
pub struct NamedBundle {
    pub name: String,
    pub path: PathBuf,
    pub bundle: SourceBundle,
}

/// Loads every `*.json` in `dir`, sorted by file name.
pub fn load_bundle_dir(dir: &Path) -> Result<Vec<NamedBundle>, HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let bundle = SourceBundle::load(&path)?;
            let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            Ok(NamedBundle { name, path, bundle })
        })
        .collect()
}
