use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use binlift_core::datamap::{collect_candidate_data, DEFAULT_PROXIMITY_WINDOW};
use binlift_core::prompt::{extract_cfg_json, TEMPLATE_VERSION};
use binlift_core::{
    analyze_function, build_prompt, load_image, resolve_functions, Bitness, FunctionOverride, OptLevel, PromptError,
    PromptOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::NamedBundle;
use crate::compile::{compile_and_strip, sha256_hex};
use crate::rewrite::REWRITE_TABLE_VERSION;
use crate::toolchain::Toolchain;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Bundle file stem.
    pub bundle: String,
    pub func_name: String,
    pub bitness: Bitness,
    pub opt_level: OptLevel,
    pub prompt: String,
    pub ground_truth: String,
    pub cfg_nodenum: usize,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    BoundaryMissing,
    CompileError,
    DecodeError,
    PromptTooLong,
    InvalidPrompt,
    EmptyFunction,
}

impl SkipReason {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipReason::BoundaryMissing => "boundary-missing",
            SkipReason::CompileError => "compile-error",
            SkipReason::DecodeError => "decode-error",
            SkipReason::PromptTooLong => "prompt-too-long",
            SkipReason::InvalidPrompt => "invalid-prompt",
            SkipReason::EmptyFunction => "empty-function",
        }
    }
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("sample skipped ({}): {detail}", reason.as_str())]
    Skipped { reason: SkipReason, detail: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl SampleError {
    fn skip(reason: SkipReason, detail: impl Into<String>) -> Self {
        SampleError::Skipped { reason, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub toolchain: Toolchain,
    pub opt_levels: Vec<OptLevel>,
    pub bitnesses: Vec<Bitness>,
    pub prompt: PromptOptions,
    pub proximity_window: u64,
    pub workers: usize,
    /// Parent for per-job temporary directories; system default when unset.
    pub work_root: Option<PathBuf>,
    /// When set, stripped binaries and symbol sidecars are copied here.
    pub artifact_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            toolchain: Toolchain::default(),
            opt_levels: OptLevel::ALL.to_vec(),
            bitnesses: Bitness::ALL.to_vec(),
            prompt: PromptOptions::default(),
            proximity_window: DEFAULT_PROXIMITY_WINDOW,
            workers: 1,
            work_root: None,
            artifact_dir: None,
        }
    }
}

/// Sample id: truncated sha256 over bundle hash, level, bitness and compiler.
pub fn sample_id(bundle_hash: &str, opt: OptLevel, bitness: Bitness, compiler_version: &str) -> String {
    let key = format!("{bundle_hash}\n{opt}\n{bitness}\n{compiler_version}");
    sha256_hex(key.as_bytes())[..16].to_string()
}

fn temp_dir(config: &DatasetConfig) -> Result<tempfile::TempDir, HarnessError> {
    let mut b = tempfile::Builder::new();
    b.prefix("binlift-");
    match &config.work_root {
        Some(root) => b.tempdir_in(root).map_err(|e| HarnessError::io(root, e)),
        None => b.tempdir().map_err(|e| HarnessError::io(Path::new("<tmp>"), e)),
    }
}

/// Compiles, strips and analyses one (bundle, level, bitness) combination.
pub fn build_sample(
    named: &NamedBundle,
    opt: OptLevel,
    bitness: Bitness,
    config: &DatasetConfig,
) -> Result<SampleRecord, SampleError> {
    let bundle = &named.bundle;
    let dir = temp_dir(config)?;
    let compiled = match compile_and_strip(bundle, opt, bitness, &config.toolchain, dir.path()) {
        Ok(c) => c,
        Err(HarnessError::CompileError { stderr }) => return Err(SampleError::skip(SkipReason::CompileError, stderr)),
        Err(e) => return Err(e.into()),
    };
    if let Some(keep) = &config.artifact_dir {
        for src in [&compiled.path, &compiled.sidecar_path] {
            let dst = keep.join(src.file_name().expect("artifact has a file name"));
            std::fs::copy(src, &dst).map_err(|e| HarnessError::io(&dst, e))?;
        }
    }

    let Some(sym) = compiled.function(&bundle.func_name).cloned() else {
        return Err(SampleError::skip(
            SkipReason::BoundaryMissing,
            format!("`{}` has no symbol in the {opt}/{bitness} build", bundle.func_name),
        ));
    };
    if sym.size == 0 {
        return Err(SampleError::skip(SkipReason::EmptyFunction, format!("`{}` has size 0", sym.name)));
    }
    let image = load_image(&compiled.path).map_err(HarnessError::from)?;
    let ov = FunctionOverride::new(sym.name.clone(), sym.vaddr, Some(sym.vaddr + sym.size));
    let boundary = resolve_functions(&image, std::slice::from_ref(&sym.name), &[ov])
        .map_err(|e| SampleError::skip(SkipReason::BoundaryMissing, e.to_string()))?
        .remove(0);
    let pool = collect_candidate_data(&image);
    let artifacts = analyze_function(&image, &pool, &boundary, std::slice::from_ref(&boundary), config.proximity_window)
        .map_err(|e| SampleError::skip(SkipReason::DecodeError, e.to_string()))?;
    let prompt = build_prompt(&artifacts.listing, &artifacts.cfg_json, &artifacts.table_json, bitness, opt, &config.prompt)
        .map_err(|e| match e {
            PromptError::PromptTooLong { .. } => SampleError::skip(SkipReason::PromptTooLong, e.to_string()),
            PromptError::InvalidInput(_) => SampleError::skip(SkipReason::InvalidPrompt, e.to_string()),
        })?;

    let mut metadata = BTreeMap::new();
    metadata.insert("compiler_version".into(), compiled.compiler_version.clone());
    metadata.insert("cflags".into(), compiled.flags.join(" "));
    metadata.insert("source_sha256".into(), compiled.source_sha256.clone());
    metadata.insert("binary_sha256".into(), compiled.binary_sha256.clone());
    metadata.insert("bundle_sha256".into(), bundle.content_hash());
    metadata.insert("function_start".into(), format!("0x{:X}", boundary.start));
    metadata.insert("function_end".into(), format!("0x{:X}", boundary.end));
    metadata.insert("prompt_template".into(), config.prompt.template_version.clone());
    metadata.insert("rewrite_table".into(), REWRITE_TABLE_VERSION.into());
    metadata.insert("diagnostics".into(), artifacts.diagnostics.len().to_string());

    Ok(SampleRecord {
        id: sample_id(&bundle.content_hash(), opt, bitness, &compiled.compiler_version),
        bundle: named.name.clone(),
        func_name: bundle.func_name.clone(),
        bitness,
        opt_level: opt,
        prompt: prompt.text,
        ground_truth: bundle.source.clone(),
        cfg_nodenum: artifacts.extraction.cfg.nodenum,
        metadata,
    })
}

/// Ascending by block count, then prompt length in characters, then id.
pub fn curriculum_sort(samples: &mut [SampleRecord]) {
    samples.sort_by_cached_key(|s| (s.cfg_nodenum, s.prompt.chars().count(), s.id.clone()));
}

/// The CFG embedded in `record.prompt` parses and agrees with
/// `record.cfg_nodenum`.
pub fn check_record(record: &SampleRecord) -> Result<(), String> {
    let cfg = extract_cfg_json(&record.prompt).ok_or("prompt has no CFG section")?;
    let parsed = binlift_core::cfg::parse_cfg_json(cfg).map_err(|e| format!("embedded CFG: {e}"))?;
    if parsed.nodenum != record.cfg_nodenum {
        return Err(format!("embedded nodenum {} != cfg_nodenum {}", parsed.nodenum, record.cfg_nodenum));
    }
    if record.cfg_nodenum == 0 {
        return Err("cfg_nodenum is 0".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedSample {
    pub bundle: String,
    pub bitness: Bitness,
    pub opt_level: OptLevel,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub bundles: usize,
    pub samples: usize,
    /// Keyed `"<bitness>/<level>"`.
    pub counts: BTreeMap<String, usize>,
    pub skipped: BTreeMap<String, usize>,
    pub skipped_samples: Vec<SkippedSample>,
    pub compiler_version: String,
    pub prompt_template: String,
    pub rewrite_table: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
    pub manifest: Manifest,
}

/// Builds every targeted (bundle, bitness, level) job on a pool of
/// `config.workers` threads and returns curriculum-ordered samples.
pub fn build_dataset(bundles: &[NamedBundle], config: &DatasetConfig) -> Result<Dataset, HarnessError> {
    let mut jobs = Vec::new();
    for nb in bundles {
        for &bitness in &config.bitnesses {
            if !nb.bundle.targets(bitness) {
                continue;
            }
            for &opt in &config.opt_levels {
                jobs.push((nb, bitness, opt));
            }
        }
    }
    if let Some(dir) = &config.artifact_dir {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let results: Vec<_> = pool.install(|| {
        jobs.par_iter().map(|(nb, bitness, opt)| build_sample(nb, *opt, *bitness, config)).collect()
    });

    let mut samples = Vec::new();
    let mut skipped_samples = Vec::new();
    for ((nb, bitness, opt), result) in jobs.iter().zip(results) {
        match result {
            Ok(s) => samples.push(s),
            Err(SampleError::Skipped { reason, detail }) => {
                log::warn!("{} {bitness}/{opt}: skipped ({})", nb.name, reason.as_str());
                skipped_samples.push(SkippedSample { bundle: nb.name.clone(), bitness: *bitness, opt_level: *opt, reason, detail });
            }
            Err(SampleError::Harness(e)) => return Err(e),
        }
    }
    curriculum_sort(&mut samples);

    let mut counts = BTreeMap::new();
    for s in &samples {
        *counts.entry(format!("{}/{}", s.bitness, s.opt_level)).or_insert(0) += 1;
    }
    let mut skipped = BTreeMap::new();
    for s in &skipped_samples {
        *skipped.entry(s.reason.as_str().to_string()).or_insert(0) += 1;
    }
    let manifest = Manifest {
        bundles: bundles.len(),
        samples: samples.len(),
        counts,
        skipped,
        skipped_samples,
        compiler_version: config.toolchain.compiler_version().to_string(),
        prompt_template: if config.prompt.template_version.is_empty() {
            TEMPLATE_VERSION.into()
        } else {
            config.prompt.template_version.clone()
        },
        rewrite_table: REWRITE_TABLE_VERSION.into(),
        config_hash: None,
    };
    Ok(Dataset { samples, manifest })
}

/// Writes `samples.jsonl` and `manifest.json` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let samples_path = dir.join("samples.jsonl");
    let mut jsonl = String::new();
    for s in &dataset.samples {
        jsonl.push_str(&serde_json::to_string(s).expect("record serializes"));
        jsonl.push('\n');
    }
    std::fs::write(&samples_path, jsonl).map_err(|e| HarnessError::io(&samples_path, e))?;
    let manifest_path = dir.join("manifest.json");
    let mut manifest = serde_json::to_string_pretty(&dataset.manifest).expect("manifest serializes");
    manifest.push('\n');
    std::fs::write(&manifest_path, manifest).map_err(|e| HarnessError::io(&manifest_path, e))?;
    Ok((samples_path, manifest_path))
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
