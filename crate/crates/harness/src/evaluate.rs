use std::path::PathBuf;
use std::process::Command;

use binlift_core::metrics::{edit_similarity, CandidateProvenance, EvalRecord, MetricError};
use binlift_core::Bitness;
use serde::{Deserialize, Serialize};

use crate::bundle::SourceBundle;
use crate::compile::compile_source;
use crate::dataset::SampleRecord;
use crate::process::run_with_timeout;
use crate::toolchain::Toolchain;
use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub passed: bool,
    pub timed_out: bool,
    /// Compiler diagnostics or the first failing example.
    pub detail: String,
}

impl CheckOutcome {
    fn pass() -> Self {
        Self { passed: true, timed_out: false, detail: String::new() }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Self { passed: false, timed_out: false, detail: detail.into() }
    }

    fn timeout(detail: impl Into<String>) -> Self {
        Self { passed: false, timed_out: true, detail: detail.into() }
    }
}

/// A candidate built against the bundle scaffold; the directory lives as
/// long as this value.
pub struct BuiltCandidate {
    _dir: tempfile::TempDir,
    pub exe: PathBuf,
}

/// Compiles scaffold + candidate with the bundle flags and no `-O`.
pub fn build_candidate(
    candidate: &str,
    bundle: &SourceBundle,
    bitness: Bitness,
    toolchain: &Toolchain,
) -> Result<Result<BuiltCandidate, CheckOutcome>, HarnessError> {
    let dir = tempfile::Builder::new()
        .prefix("binlift-eval-")
        .tempdir()
        .map_err(|e| HarnessError::io(std::path::Path::new("<tmp>"), e))?;
    let tu = bundle.translation_unit(candidate);
    match compile_source(&tu, bundle, bitness, None, toolchain, toolchain.compile_timeout(), dir.path(), "candidate") {
        Ok((exe, _, _)) => Ok(Ok(BuiltCandidate { _dir: dir, exe })),
        Err(HarnessError::CompileError { stderr }) => Ok(Err(CheckOutcome::fail(stderr))),
        Err(HarnessError::Timeout { what, secs }) => Ok(Err(CheckOutcome::timeout(format!("{what} exceeded {secs}s")))),
        Err(e) => Err(e),
    }
}

pub fn check_recompile(
    candidate: &str,
    bundle: &SourceBundle,
    bitness: Bitness,
    toolchain: &Toolchain,
) -> Result<CheckOutcome, HarnessError> {
    Ok(match build_candidate(candidate, bundle, bitness, toolchain)? {
        Ok(_) => CheckOutcome::pass(),
        Err(outcome) => outcome,
    })
}

/// Trailing whitespace of every line and trailing blank lines are ignored.
pub fn outputs_match(actual: &str, expected: &str) -> bool {
    let norm = |s: &str| s.lines().map(str::trim_end).collect::<Vec<_>>().join("\n").trim_end().to_string();
    norm(actual) == norm(expected)
}

/// Runs a built candidate once per IO example.
pub fn run_examples(built: &BuiltCandidate, bundle: &SourceBundle, toolchain: &Toolchain) -> Result<CheckOutcome, HarnessError> {
    for (i, ex) in bundle.io_examples.iter().enumerate() {
        let out = run_with_timeout(Command::new(&built.exe).args(&ex.args), toolchain.run_timeout())
            .map_err(|e| HarnessError::Tool { tool: built.exe.display().to_string(), source: e })?;
        if out.timed_out {
            return Ok(CheckOutcome::timeout(format!("example {i} exceeded {}s", toolchain.run_timeout_secs)));
        }
        let Some(code) = out.code else {
            return Ok(CheckOutcome::fail(format!("example {i} killed by signal {:?}", out.signal)));
        };
        if let Some(want) = ex.expected_return {
            if code != want {
                return Ok(CheckOutcome::fail(format!("example {i}: exit {code}, expected {want}")));
            }
        }
        if !outputs_match(&out.stdout, &ex.expected_stdout) {
            return Ok(CheckOutcome::fail(format!(
                "example {i}: stdout {:?}, expected {:?}",
                out.stdout, ex.expected_stdout
            )));
        }
    }
    Ok(CheckOutcome::pass())
}

pub fn check_reexecute(
    candidate: &str,
    bundle: &SourceBundle,
    bitness: Bitness,
    toolchain: &Toolchain,
) -> Result<CheckOutcome, HarnessError> {
    match build_candidate(candidate, bundle, bitness, toolchain)? {
        Ok(built) => run_examples(&built, bundle, toolchain),
        Err(outcome) => Ok(outcome),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub re_com: bool,
    pub re_exe: bool,
    pub compile: CheckOutcome,
    pub run: Option<CheckOutcome>,
}

/// Re-compilation then, when that succeeds, re-execution. A candidate with
/// no extractable source fails both.
pub fn check_candidate(
    candidate: Option<&str>,
    bundle: &SourceBundle,
    bitness: Bitness,
    toolchain: &Toolchain,
) -> Result<CandidateResult, HarnessError> {
    let Some(source) = candidate else {
        return Ok(CandidateResult {
            re_com: false,
            re_exe: false,
            compile: CheckOutcome::fail("no source extracted"),
            run: None,
        });
    };
    match build_candidate(source, bundle, bitness, toolchain)? {
        Ok(built) => {
            let run = run_examples(&built, bundle, toolchain)?;
            Ok(CandidateResult { re_com: true, re_exe: run.passed, compile: CheckOutcome::pass(), run: Some(run) })
        }
        Err(compile) => Ok(CandidateResult { re_com: false, re_exe: false, compile, run: None }),
    }
}

/// Scores a sample from its candidates' checks: Re-com, Re-exe and ES come
/// from the first candidate, pass@k counts from all of them.
pub fn score_sample(
    sample: &SampleRecord,
    sources: &[Option<String>],
    results: &[CandidateResult],
    provenance: CandidateProvenance,
) -> Result<EvalRecord, MetricError> {
    assert_eq!(sources.len(), results.len(), "one check result per candidate");
    let first = results.first();
    let re_com = first.is_some_and(|r| r.re_com);
    let re_exe = first.is_some_and(|r| r.re_exe);
    let prediction = sources.first().cloned().flatten().unwrap_or_default();
    let es = edit_similarity(&prediction, &sample.ground_truth)?;
    let correct = results.iter().filter(|r| r.re_exe).count() as u64;
    let mut record = EvalRecord::new(sample.id.clone(), sample.bitness, sample.opt_level, re_com, re_exe, es)?
        .with_pass_counts(results.len() as u64, correct)?;
    record.provenance = provenance;
    Ok(record)
}
