use std::path::{Path, PathBuf};
use std::process::Command;

use binlift_core::{load_image, Bitness, OptLevel, SymbolKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::SourceBundle;
use crate::process::run_with_timeout;
use crate::rewrite::rewrite_for_32bit;
use crate::toolchain::Toolchain;
use crate::HarnessError;

/// One entry of the symbol dump taken before stripping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SidecarSymbol {
    pub name: String,
    pub vaddr: u64,
    pub size: u64,
    pub function: bool,
}

#[derive(Debug, Clone)]
pub struct CompiledBinary {
    pub path: PathBuf,
    pub sidecar_path: PathBuf,
    pub symbols: Vec<SidecarSymbol>,
    pub flags: Vec<String>,
    pub compiler_version: String,
    /// sha256 of the translation unit actually compiled.
    pub source_sha256: String,
    /// sha256 of the stripped binary.
    pub binary_sha256: String,
}

impl CompiledBinary {
    pub fn function(&self, name: &str) -> Option<&SidecarSymbol> {
        self.symbols.iter().find(|s| s.function && s.name == name)
    }
}

/// Source text as compiled for `bitness`.
pub fn prepare_source(text: &str, bitness: Bitness) -> String {
    match bitness {
        Bitness::B32 => rewrite_for_32bit(text).into_owned(),
        Bitness::B64 => text.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Compiles `text` to `workdir/stem`. `opt` is omitted from the command line when
/// `None`.
#[allow(clippy::too_many_arguments)]
pub fn compile_source(
    text: &str,
    bundle: &SourceBundle,
    bitness: Bitness,
    opt: Option<OptLevel>,
    toolchain: &Toolchain,
    timeout: std::time::Duration,
    workdir: &Path,
    stem: &str,
) -> Result<(PathBuf, Vec<String>, String), HarnessError> {
    let src = workdir.join(format!("{stem}.c"));
    let exe = workdir.join(stem);
    let text = prepare_source(text, bitness);
    std::fs::write(&src, &text).map_err(|e| HarnessError::io(&src, e))?;
    let mut flags = vec![bitness.compiler_flag().to_string()];
    if let Some(opt) = opt {
        flags.push(opt.compiler_flag().to_string());
    }
    flags.extend(bundle.cflags.iter().cloned());
    let out = run_with_timeout(
        Command::new(&toolchain.cc).args(&flags).arg(&src).arg("-o").arg(&exe).current_dir(workdir),
        timeout,
    )
    .map_err(|e| HarnessError::Tool { tool: toolchain.cc.display().to_string(), source: e })?;
    if out.timed_out {
        return Err(HarnessError::Timeout { what: "compile".into(), secs: timeout.as_secs() });
    }
    if !out.success() {
        return Err(HarnessError::CompileError { stderr: out.stderr });
    }
    Ok((exe, flags, sha256_hex(text.as_bytes())))
}

/// Builds the bundle's ground truth at `opt`/`bitness` in `workdir`, dumps
/// its symbols to `<exe>.symbols.json`, then strips the executable.
pub fn compile_and_strip(
    bundle: &SourceBundle,
    opt: OptLevel,
    bitness: Bitness,
    toolchain: &Toolchain,
    workdir: &Path,
) -> Result<CompiledBinary, HarnessError> {
    let stem = format!("{}_{}_{}", bundle.func_name, opt, bitness);
    let tu = bundle.translation_unit(&bundle.source);
    let (exe, flags, source_sha256) =
        compile_source(&tu, bundle, bitness, Some(opt), toolchain, toolchain.build_timeout(), workdir, &stem)?;

    let image = load_image(&exe)?;
    let symbols: Vec<SidecarSymbol> = image
        .symbols
        .iter()
        .filter(|s| matches!(s.kind, SymbolKind::Function | SymbolKind::Object))
        .map(|s| SidecarSymbol { name: s.name.clone(), vaddr: s.vaddr, size: s.size, function: s.kind == SymbolKind::Function })
        .collect();
    let sidecar_path = exe.with_extension("symbols.json");
    let sidecar = serde_json::to_vec_pretty(&symbols).expect("symbols serialize");
    std::fs::write(&sidecar_path, sidecar).map_err(|e| HarnessError::io(&sidecar_path, e))?;

    let out = run_with_timeout(Command::new(&toolchain.strip).arg(&exe), toolchain.build_timeout())
        .map_err(|e| HarnessError::Tool { tool: toolchain.strip.display().to_string(), source: e })?;
    if out.timed_out {
        return Err(HarnessError::Timeout { what: "strip".into(), secs: toolchain.build_timeout_secs });
    }
    if !out.success() {
        return Err(HarnessError::StripError { stderr: out.stderr });
    }
    let bytes = std::fs::read(&exe).map_err(|e| HarnessError::io(&exe, e))?;
    Ok(CompiledBinary {
        path: exe,
        sidecar_path,
        symbols,
        flags,
        compiler_version: toolchain.compiler_version().to_string(),
        source_sha256,
        binary_sha256: sha256_hex(&bytes),
    })
}
