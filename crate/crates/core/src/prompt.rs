//! Decompilation prompt assembly.
//!
//! A rendered prompt is a sequence of `### <Heading>` sections separated by
//! blank lines. The CFG and data-map sections hold their JSON verbatim on a
//! single line so they can be recovered from stored prompts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::target::{Bitness, OptLevel};

pub const DEFAULT_TOKEN_BUDGET: usize = 4096;
pub const TEMPLATE_VERSION: &str = "binlift-prompt/1";

pub const TASK_HEADING: &str = "### Task";
pub const ASSEMBLY_HEADING: &str = "### Assembly";
pub const CFG_HEADING: &str = "### Control Flow Graph";
pub const DATA_MAP_HEADING: &str = "### Data Mapping";
pub const OUTPUT_HEADING: &str = "### Output";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("prompt needs about {estimate} tokens, budget is {budget}")]
    PromptTooLong { estimate: usize, budget: usize },
    #[error("invalid prompt input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    pub token_budget: usize,
    pub include_assembly: bool,
    pub template_version: String,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            token_budget: DEFAULT_TOKEN_BUDGET,
            include_assembly: true,
            template_version: TEMPLATE_VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompilationPrompt {
    pub preamble: String,
    pub bitness: Bitness,
    pub opt_level: OptLevel,
    /// Empty when the assembly section is switched off.
    pub assembly: String,
    pub cfg_json: String,
    pub data_map_json: String,
    pub directive: String,
    pub template_version: String,
    pub text: String,
    pub token_estimate: usize,
}

impl DecompilationPrompt {
    pub fn render(&self) -> &str {
        &self.text
    }

    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

/// Characters over four, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

fn preamble(bitness: Bitness, opt_level: OptLevel) -> String {
    format!(
        "The sections below describe one function of a stripped {bits}-bit x86 ELF executable \
         compiled by gcc with -{opt}: its assembly, its control flow graph as JSON (nodes are \
         basic blocks labeled by start address, edges are control transfers), and a data mapping \
         table giving the size, count and initial value of the global data and stack slots it uses. \
         Recover the original C source code of the function.",
        bits = bitness.bits(),
        opt = opt_level,
    )
}

const DIRECTIVE: &str = "Answer with exactly one C function definition in a single ```c fenced \
code block. Use the function name and signature implied by the assembly, and do not add a main \
function or any other text.";

fn single_line_json(name: &str, text: &str) -> Result<(), PromptError> {
    serde_json::from_str::<serde_json::Value>(text)
        .map_err(|e| PromptError::InvalidInput(format!("{name} is not JSON: {e}")))?;
    if text.contains('\n') {
        return Err(PromptError::InvalidInput(format!("{name} must be on one line")));
    }
    Ok(())
}

pub fn build_prompt(
    asm: &str,
    cfg_json: &str,
    table_json: &str,
    bitness: Bitness,
    opt_level: OptLevel,
    options: &PromptOptions,
) -> Result<DecompilationPrompt, PromptError> {
    if asm.trim().is_empty() {
        return Err(PromptError::InvalidInput("assembly listing is empty".into()));
    }
    single_line_json("cfg", cfg_json)?;
    single_line_json("data mapping table", table_json)?;

    let preamble = preamble(bitness, opt_level);
    let assembly = if options.include_assembly { asm.trim_end().to_string() } else { String::new() };
    let mut text = format!("{TASK_HEADING}\n{preamble}\n\n");
    if options.include_assembly {
        text.push_str(&format!("{ASSEMBLY_HEADING}\n{assembly}\n\n"));
    }
    text.push_str(&format!("{CFG_HEADING}\n{cfg_json}\n\n"));
    text.push_str(&format!("{DATA_MAP_HEADING}\n{table_json}\n\n"));
    text.push_str(&format!("{OUTPUT_HEADING}\n{DIRECTIVE}\n"));

    let token_estimate = estimate_tokens(&text);
    if token_estimate > options.token_budget {
        return Err(PromptError::PromptTooLong { estimate: token_estimate, budget: options.token_budget });
    }
    Ok(DecompilationPrompt {
        preamble,
        bitness,
        opt_level,
        assembly,
        cfg_json: cfg_json.to_string(),
        data_map_json: table_json.to_string(),
        directive: DIRECTIVE.to_string(),
        template_version: options.template_version.clone(),
        text,
        token_estimate,
    })
}

fn section_line<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let mut lines = prompt.lines();
    lines.find(|l| *l == heading)?;
    lines.next()
}

/// The CFG JSON embedded in a rendered prompt.
pub fn extract_cfg_json(prompt: &str) -> Option<&str> {
    section_line(prompt, CFG_HEADING)
}

/// The data mapping JSON embedded in a rendered prompt.
pub fn extract_data_map_json(prompt: &str) -> Option<&str> {
    section_line(prompt, DATA_MAP_HEADING)
}
