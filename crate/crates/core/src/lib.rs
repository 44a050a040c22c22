//! Binary-side analyses for LLM-assisted decompilation.
//!
//! The pipeline for one function is:
//!
//! 1. [`binary::load_image`] parses an ELF executable and
//!    [`binary::resolve_functions`] finds the function's address range.
//! 2. [`cfg`] decodes the range, segments it into labeled basic blocks and
//!    serializes the control-flow graph.
//! 3. [`datamap`] recovers the data items and stack slots the function
//!    touches and serializes them as a data mapping table.
//! 4. [`prompt`] renders both artifacts into a decompilation prompt.
//!
//! [`metrics`] holds the scoring functions used when evaluating candidate
//! decompilations (edit similarity, pass@k, report aggregation).

pub mod binary;
pub mod cfg;
pub mod datamap;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod target;

mod hexfmt;

pub use binary::{
    load_image, parse_image, resolve_functions, section_bytes, Architecture, BinaryError,
    BinaryImage, BoundarySource, FunctionBoundary, FunctionOverride, Section, SectionFlags,
    Symbol, SymbolKind,
};
pub use cfg::{
    extract_cfg, serialize_cfg, BasicBlock, CfClass, ControlFlowGraph, DecodeError, Diagnostic,
    DiagnosticKind, Instruction, MemoryOperand,
};
pub use datamap::{DataItem, DataMappingTable, DataValue, SizeClass, StackVariable};
pub use metrics::{aggregate, edit_distance, edit_similarity, pass_at_k, EvalRecord, EvalReport, MetricError, PassAtKInput};
pub use pipeline::{analyze_function, FunctionArtifacts};
pub use prompt::{build_prompt, DecompilationPrompt, PromptError, PromptOptions};
pub use target::{Bitness, OptLevel};
