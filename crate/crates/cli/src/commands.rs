use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use binlift_client::{Candidate, Client, DecodeConfig, MESSAGE_LAYOUT};
use binlift_core::datamap::collect_candidate_data;
use binlift_core::metrics::CandidateProvenance;
use binlift_core::{
    aggregate, analyze_function, build_prompt, load_image, resolve_functions, Bitness, EvalRecord, EvalReport,
    FunctionArtifacts, FunctionOverride,
};
use binlift_harness::dataset::read_samples;
use binlift_harness::{
    build_dataset, check_candidate, load_bundle_dir, score_sample, write_dataset, NamedBundle, SampleRecord,
    SidecarSymbol,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::{
    failed, Backend, Cli, CliError, Command, DatasetBuildArgs, DatasetCommand, DecompileArgs, EvaluateArgs,
    FunctionArgs, Mode, ReportArgs,
};

/// Model id recorded for the ground-truth backend.
pub const ORACLE_MODEL: &str = "ground-truth-oracle";

/// All candidates produced for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sample_id: String,
    pub backend: String,
    pub model_id: String,
    pub message_layout: String,
    pub decode: DecodeConfig,
    pub config_hash: String,
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub records: usize,
    #[serde(flatten)]
    pub report: EvalReport,
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let dry = cli.dry_run;
    match &cli.command {
        Command::ExtractCfg(f) => {
            config.validate()?;
            let art = analyze(f, &config)?;
            emit(dry, f.out.as_deref(), &format!("{}\n", art.cfg_json))
        }
        Command::ExtractData { function, window } => {
            if let Some(w) = window {
                config.proximity_window = *w;
            }
            config.validate()?;
            let art = analyze(function, &config)?;
            emit(dry, function.out.as_deref(), &format!("{}\n", art.table_json))
        }
        Command::Prompt { function, opt, no_assembly, token_budget } => {
            if let Some(b) = token_budget {
                config.prompt.token_budget = *b;
            }
            if *no_assembly {
                config.prompt.include_assembly = false;
            }
            config.validate()?;
            let art = analyze(function, &config)?;
            let bitness = Bitness::from(load_image(&function.binary).map_err(failed)?.architecture);
            let prompt = build_prompt(&art.listing, &art.cfg_json, &art.table_json, bitness, *opt, &config.prompt)
                .map_err(failed)?;
            emit(dry, function.out.as_deref(), &prompt.text)
        }
        Command::Dataset(DatasetCommand::Build(args)) => dataset_build(args, config, dry),
        Command::Decompile(args) => decompile(args, config, dry),
        Command::Evaluate(args) => evaluate(args, config, dry),
        Command::Report(args) => report(args, &config, dry),
    }
}

/// Writes `text` to `path`, or standard output when there is none.
fn emit(dry: bool, path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match (dry, path) {
        (true, p) => {
            eprintln!("dry run: {} bytes for {}", text.len(), p.map_or("stdout".into(), |p| p.display().to_string()));
            Ok(())
        }
        (false, Some(p)) => write_file(p, text),
        (false, None) => std::io::stdout().write_all(text.as_bytes()).map_err(failed),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| failed(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| failed(format!("{}: {e}", path.display())))
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| failed(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn analyze(f: &FunctionArgs, config: &RunConfig) -> Result<FunctionArtifacts, CliError> {
    let image = load_image(&f.binary).map_err(failed)?;
    let mut overrides = Vec::new();
    if let Some(start) = f.start {
        overrides.push(FunctionOverride::new(&f.func, start, f.end));
    }
    if let Some(path) = &f.symbols {
        let syms: Vec<SidecarSymbol> = serde_json::from_str(
            &std::fs::read_to_string(path).map_err(|e| failed(format!("{}: {e}", path.display())))?,
        )
        .map_err(|e| failed(format!("{}: {e}", path.display())))?;
        let sym = syms
            .iter()
            .find(|s| s.function && s.name == f.func)
            .ok_or_else(|| failed(format!("{} has no function {}", path.display(), f.func)))?;
        overrides.push(FunctionOverride::new(&f.func, sym.vaddr, Some(sym.vaddr + sym.size)));
    }
    let bounds = resolve_functions(&image, std::slice::from_ref(&f.func), &overrides).map_err(failed)?;
    let pool = collect_candidate_data(&image);
    analyze_function(&image, &pool, &bounds[0], &bounds, config.proximity_window).map_err(failed)
}

fn corpus_dir(flag: &Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config.corpus.clone())
        .ok_or_else(|| CliError::Usage("no corpus directory: pass --corpus or set `corpus`".into()))
}

fn dataset_build(args: &DatasetBuildArgs, mut config: RunConfig, dry: bool) -> Result<(), CliError> {
    if let Some(w) = args.workers {
        config.workers = w;
    }
    if !args.opt.is_empty() {
        config.opt_levels = args.opt.clone();
    }
    if !args.bits.is_empty() {
        config.bitnesses = args.bits.clone();
    }
    config.corpus = Some(corpus_dir(&args.corpus, &config)?);
    config.validate()?;
    config.toolchain.check().map_err(CliError::Usage)?;
    let bundles = load_bundle_dir(config.corpus.as_deref().expect("set above")).map_err(failed)?;
    let hash = config.hash();
    if dry {
        let jobs = bundles.len() * config.opt_levels.len() * config.bitnesses.len();
        eprintln!("dry run: {} bundles, up to {jobs} samples into {}", bundles.len(), args.out.display());
        return Ok(());
    }
    let mut ds_config = config.dataset_config();
    if args.keep_binaries {
        ds_config.artifact_dir = Some(args.out.join("bin"));
    }
    let mut dataset = build_dataset(&bundles, &ds_config).map_err(failed)?;
    dataset.manifest.config_hash = Some(hash);
    let (samples, _) = write_dataset(&dataset, &args.out).map_err(failed)?;
    eprintln!(
        "{} samples ({} skipped) -> {}",
        dataset.samples.len(),
        dataset.manifest.skipped_samples.len(),
        samples.display()
    );
    Ok(())
}

fn oracle_candidates(sample: &SampleRecord, n: u32) -> Vec<Candidate> {
    let text = format!("```c\n{}\n```\n", sample.ground_truth.trim_end());
    (0..n)
        .map(|i| Candidate {
            extracted_source: binlift_client::extract_code(&text),
            text: text.clone(),
            model_id: ORACLE_MODEL.into(),
            sample_index: i,
            latency: Default::default(),
        })
        .collect()
}

fn decompile(args: &DecompileArgs, mut config: RunConfig, dry: bool) -> Result<(), CliError> {
    match args.mode {
        Some(Mode::Greedy) => config.decode = DecodeConfig { max_tokens: config.decode.max_tokens, ..DecodeConfig::greedy() },
        Some(Mode::Sampled) => {
            config.decode = DecodeConfig { max_tokens: config.decode.max_tokens, ..DecodeConfig::sampled() }
        }
        None => {}
    }
    if let Some(n) = args.n {
        config.decode.n = n;
    }
    if args.backend == Backend::Endpoint {
        let ep = config.endpoint.get_or_insert_with(Default::default);
        if let Some(m) = &args.model {
            ep.model = m.clone();
        }
        if let Some(u) = &args.url {
            ep.url = u.clone();
        }
        if ep.url.is_empty() {
            return Err(CliError::Usage("endpoint backend needs [endpoint] url or --url".into()));
        }
    }
    config.validate()?;
    let mut samples = read_samples(&args.samples).map_err(failed)?;
    if let Some(limit) = args.limit {
        samples.truncate(limit);
    }
    let hash = config.hash();
    let decode = config.decode.clone();

    if dry {
        if let Some(var) = config.endpoint.as_ref().and_then(|e| e.api_key_env.as_ref()) {
            if args.backend == Backend::Endpoint && std::env::var_os(var).is_none() {
                return Err(CliError::Usage(format!("environment variable {var} is not set")));
            }
        }
        eprintln!("dry run: {} samples x {} candidates into {}", samples.len(), decode.n, args.out.display());
        return Ok(());
    }

    let (backend, results): (&str, Vec<Result<Vec<Candidate>, String>>) = match args.backend {
        Backend::Oracle => ("oracle", samples.iter().map(|s| Ok(oracle_candidates(s, decode.n))).collect()),
        Backend::Endpoint => {
            let client = Client::new(config.endpoint.clone().expect("checked above")).map_err(|e| CliError::Usage(e.to_string()))?;
            let prompts: Vec<&str> = samples.iter().map(|s| s.prompt.as_str()).collect();
            let out = client.generate_batch(&prompts, &decode);
            ("endpoint", out.into_iter().map(|r| r.map_err(|e| e.to_string())).collect())
        }
    };
    let fallback_model = match args.backend {
        Backend::Oracle => ORACLE_MODEL.to_string(),
        Backend::Endpoint => config.endpoint.as_ref().map(|e| e.model.clone()).unwrap_or_default(),
    };
    let mut failures = 0;
    let sets: Vec<CandidateSet> = samples
        .iter()
        .zip(results)
        .map(|(s, r)| {
            let (candidates, error) = match r {
                Ok(c) => (c, None),
                Err(e) => {
                    failures += 1;
                    log::error!("{}: {e}", s.id);
                    (Vec::new(), Some(e))
                }
            };
            CandidateSet {
                sample_id: s.id.clone(),
                backend: backend.into(),
                model_id: candidates.first().map_or(fallback_model.clone(), |c| c.model_id.clone()),
                message_layout: MESSAGE_LAYOUT.into(),
                decode: decode.clone(),
                config_hash: hash.clone(),
                candidates,
                error,
            }
        })
        .collect();
    write_file(&args.out, &jsonl(&sets))?;
    eprintln!("{} candidate sets -> {}", sets.len(), args.out.display());
    if failures > 0 {
        return Err(failed(format!("{failures} of {} samples got no candidates", sets.len())));
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs, mut config: RunConfig, dry: bool) -> Result<(), CliError> {
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.corpus = Some(corpus_dir(&args.corpus, &config)?);
    config.validate()?;
    config.toolchain.check().map_err(CliError::Usage)?;
    let samples = read_samples(&args.samples).map_err(failed)?;
    let sets: Vec<CandidateSet> = read_jsonl(&args.candidates)?;
    let bundles: BTreeMap<String, NamedBundle> = load_bundle_dir(config.corpus.as_deref().expect("set above"))
        .map_err(failed)?
        .into_iter()
        .map(|nb| (nb.name.clone(), nb))
        .collect();
    let by_id: BTreeMap<&str, &CandidateSet> = sets.iter().map(|s| (s.sample_id.as_str(), s)).collect();
    for s in &samples {
        let nb = bundles.get(&s.bundle).ok_or_else(|| failed(format!("bundle {} not in the corpus", s.bundle)))?;
        if s.metadata.get("bundle_sha256").is_some_and(|h| *h != nb.bundle.content_hash()) {
            return Err(failed(format!("bundle {} changed since sample {} was built", s.bundle, s.id)));
        }
        if !by_id.contains_key(s.id.as_str()) {
            log::warn!("{}: no candidate set, scored as empty", s.id);
        }
    }
    let hash = config.hash();
    if dry {
        eprintln!("dry run: {} samples, {} candidate sets", samples.len(), sets.len());
        return Ok(());
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build().map_err(failed)?;
    let tc = &config.toolchain;
    let records: Result<Vec<EvalRecord>, CliError> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let nb = &bundles[&s.bundle];
                let set = by_id.get(s.id.as_str());
                let candidates = set.map_or(&[][..], |c| c.candidates.as_slice());
                let sources: Vec<Option<String>> = candidates.iter().map(|c| c.extracted_source.clone()).collect();
                let results = sources
                    .iter()
                    .map(|src| check_candidate(src.as_deref(), &nb.bundle, s.bitness, tc))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(failed)?;
                let provenance = CandidateProvenance {
                    model_id: set.map(|c| c.model_id.clone()).unwrap_or_default(),
                    sample_index: 0,
                };
                score_sample(s, &sources, &results, provenance).map_err(failed)
            })
            .collect()
    });
    let records = records?;
    write_file(&args.records, &jsonl(&records))?;
    let file = ReportFile { config_hash: hash, records: records.len(), report: aggregate(&records) };
    if let Some(path) = &args.report {
        write_file(path, &report_json(&file))?;
    }
    print!("{}", file.report.to_aligned_csv());
    Ok(())
}

fn report_json(file: &ReportFile) -> String {
    let mut s = serde_json::to_string_pretty(file).expect("report serializes");
    s.push('\n');
    s
}

fn report(args: &ReportArgs, config: &RunConfig, dry: bool) -> Result<(), CliError> {
    config.validate()?;
    let records: Vec<EvalRecord> = read_jsonl(&args.records)?;
    let file = ReportFile { config_hash: config.hash(), records: records.len(), report: aggregate(&records) };
    let csv = file.report.to_aligned_csv();
    if dry {
        eprintln!("dry run: {} records, {} report rows", records.len(), file.report.cells.len());
        return Ok(());
    }
    if let Some(path) = &args.json {
        write_file(path, &report_json(&file))?;
    }
    if let Some(path) = &args.csv {
        write_file(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}
