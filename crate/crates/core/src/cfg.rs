//! Control-flow graph extraction.
//!
//! A function range is decoded linearly, split into basic blocks at every
//! control transfer and every in-function branch target, connected with
//! direct-branch and fall-through edges, and finally relabeled so that
//! branch operands name blocks (`loc_473A`) and call operands name callees.
//!
//! Calls end a basic block here, unlike most textbook CFGs. The block after
//! the call is reached by a fall-through edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use iced_x86::{
    Decoder, DecoderOptions, FlowControl, Formatter, FormatterOutput, FormatterTextKind, IntelFormatter,
    MemorySizeOptions, OpKind, Register,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binary::{Architecture, BinaryImage, FunctionBoundary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CfClass {
    Sequential,
    CondJump,
    UncondJump,
    IndirectJump,
    Call,
    Return,
}

impl CfClass {
    pub fn is_jump(self) -> bool {
        matches!(self, CfClass::CondJump | CfClass::UncondJump)
    }
}

/// A memory operand as decoded, with enough structure for data-reference
/// resolution and stack-slot recovery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryOperand {
    /// The bracketed expression as rendered, e.g. `[rip+0x3fa29]`.
    pub text: String,
    pub base: Option<String>,
    pub index: Option<String>,
    pub scale: u32,
    /// Raw signed displacement (for rip-relative operands, relative to the
    /// next instruction).
    pub displacement: i64,
    pub rip_relative: bool,
    /// Access width in bytes, `None` when the instruction does not access
    /// memory through the operand (`lea`) or the width is unknown.
    pub width: Option<u32>,
}

impl MemoryOperand {
    /// The absolute address this operand names statically, if any: the
    /// rip-relative target, or the displacement of a base-less operand.
    pub fn static_address(&self, next_ip: u64, arch: Architecture) -> Option<u64> {
        if self.rip_relative {
            return Some(next_ip.wrapping_add(self.displacement as u64));
        }
        if self.base.is_none() {
            let disp = self.displacement as u64;
            return Some(match arch {
                Architecture::X86 => disp & 0xffff_ffff,
                Architecture::X86_64 => disp,
            });
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub vaddr: u64,
    pub byte_len: u32,
    pub mnemonic: String,
    pub operands: String,
    pub cf_class: CfClass,
    pub static_target: Option<u64>,
    pub memory: Option<MemoryOperand>,
    /// A 32/64-bit immediate operand, kept for absolute data references in
    /// non-PIE code (`push 0x804a020`).
    pub immediate: Option<u64>,
}

impl Instruction {
    pub fn next_addr(&self) -> u64 {
        self.vaddr + u64::from(self.byte_len)
    }

    pub fn text(&self) -> String {
        if self.operands.is_empty() {
            self.mnemonic.clone()
        } else {
            format!("{} {}", self.mnemonic, self.operands)
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn start(&self) -> u64 {
        self.instructions[0].vaddr
    }

    pub fn end(&self) -> u64 {
        self.terminator().next_addr()
    }

    pub fn terminator(&self) -> &Instruction {
        self.instructions.last().expect("basic blocks are nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    IndirectJump,
    TargetOutsideFunction,
    TargetInsideInstruction,
    UnresolvedMemoryOperand,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub address: u64,
    pub kind: DiagnosticKind,
    pub detail: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("empty function range [{start:#x}, {end:#x})")]
    EmptyRange { start: u64, end: u64 },
    #[error("function range [{start:#x}, {end:#x}) is not inside one executable section")]
    OutsideText { start: u64, end: u64 },
    #[error("undecodable bytes at {address:#x} (offset {offset:#x} into the function)")]
    Undecodable { address: u64, offset: u64 },
}

/// Labeled basic blocks plus directed edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlFlowGraph {
    pub function_name: String,
    pub nodenum: usize,
    /// Label to instruction lines, in block address order.
    pub nodes: Vec<(String, Vec<String>)>,
    /// Source/target labels, sorted by source then target address.
    pub edges: Vec<(String, String)>,
}

impl ControlFlowGraph {
    pub fn from_blocks(function_name: &str, blocks: &[BasicBlock], edges: &[(u64, u64)]) -> Self {
        let label_of: BTreeMap<u64, &str> = blocks.iter().map(|b| (b.start(), b.label.as_str())).collect();
        let nodes = blocks
            .iter()
            .map(|b| (b.label.clone(), b.instructions.iter().map(Instruction::text).collect()))
            .collect();
        let edges = edges
            .iter()
            .map(|(s, t)| (label_of[s].to_string(), label_of[t].to_string()))
            .collect();
        Self { function_name: function_name.to_string(), nodenum: blocks.len(), nodes, edges }
    }
}

/// Everything produced for one function.
#[derive(Debug, Clone)]
pub struct CfgExtraction {
    pub boundary: FunctionBoundary,
    /// Decoded instructions before relabeling.
    pub instructions: Vec<Instruction>,
    /// Relabeled blocks.
    pub blocks: Vec<BasicBlock>,
    pub edges: Vec<(u64, u64)>,
    pub cfg: ControlFlowGraph,
    pub diagnostics: Vec<Diagnostic>,
}

impl CfgExtraction {
    /// The relabeled listing with block labels, one instruction per line.
    pub fn listing(&self) -> String {
        let mut out = String::new();
        for block in &self.blocks {
            out.push_str(&block.label);
            out.push_str(":\n");
            for ins in &block.instructions {
                out.push_str("    ");
                out.push_str(&ins.text());
                out.push('\n');
            }
        }
        out
    }
}

/// Decodes, segments, links and relabels one function.
pub fn extract_cfg(
    image: &BinaryImage,
    boundary: &FunctionBoundary,
    known_functions: &[FunctionBoundary],
) -> Result<CfgExtraction, DecodeError> {
    let instructions = decode_function(image, boundary)?;
    let (mut blocks, mut diagnostics) = segment_blocks_with_diagnostics(&instructions, boundary);
    let (edges, edge_diags) = build_edges(&blocks);
    diagnostics.extend(edge_diags);
    relabel_operands(&mut blocks, image, known_functions);
    let cfg = ControlFlowGraph::from_blocks(&boundary.name, &blocks, &edges);
    diagnostics.sort_by_key(|d| d.address);
    Ok(CfgExtraction { boundary: boundary.clone(), instructions, blocks, edges, cfg, diagnostics })
}

fn formatter() -> IntelFormatter {
    let mut f = IntelFormatter::new();
    let o = f.options_mut();
    o.set_hex_prefix("0x");
    o.set_hex_suffix("");
    o.set_uppercase_hex(false);
    o.set_uppercase_mnemonics(false);
    o.set_small_hex_numbers_in_decimal(false);
    o.set_leading_zeros(false);
    o.set_branch_leading_zeros(false);
    o.set_space_after_operand_separator(true);
    o.set_rip_relative_addresses(true);
    o.set_show_branch_size(true);
    o.set_memory_size_options(MemorySizeOptions::Default);
    f
}

struct TextOut(String);

impl FormatterOutput for TextOut {
    fn write(&mut self, text: &str, _kind: FormatterTextKind) {
        self.0.push_str(text);
    }
}

fn register_name(reg: Register) -> Option<String> {
    (reg != Register::None).then(|| format!("{reg:?}").to_lowercase())
}

/// Decodes instructions tiling `[boundary.start, boundary.end)` in address
/// order.
pub fn decode_function(image: &BinaryImage, boundary: &FunctionBoundary) -> Result<Vec<Instruction>, DecodeError> {
    let (start, end) = (boundary.start, boundary.end);
    if end <= start {
        return Err(DecodeError::EmptyRange { start, end });
    }
    let section = image
        .executable_section_containing(start)
        .filter(|s| end <= s.end() && !s.contents.is_empty())
        .ok_or(DecodeError::OutsideText { start, end })?;
    let bytes = &section.contents[(start - section.vaddr) as usize..(end - section.vaddr) as usize];
    decode_bytes(image.architecture, bytes, start)
}

/// Decodes a raw byte run located at `base`.
pub fn decode_bytes(arch: Architecture, bytes: &[u8], base: u64) -> Result<Vec<Instruction>, DecodeError> {
    let mut decoder = Decoder::with_ip(arch.bitness(), bytes, base, DecoderOptions::NONE);
    let mut fmt = formatter();
    let mut out = Vec::new();
    while decoder.can_decode() {
        let ins = decoder.decode();
        if ins.is_invalid() {
            return Err(DecodeError::Undecodable { address: ins.ip(), offset: ins.ip() - base });
        }
        out.push(convert(&ins, &mut fmt));
    }
    Ok(out)
}

/// Decodes an arbitrary range, skipping undecodable bytes one at a time.
/// Used for whole-section scans where data may be interleaved with code.
pub(crate) fn decode_lenient(arch: Architecture, bytes: &[u8], base: u64) -> Vec<Instruction> {
    let mut decoder = Decoder::with_ip(arch.bitness(), bytes, base, DecoderOptions::NONE);
    let mut fmt = formatter();
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        decoder.set_position(pos).expect("position within input");
        decoder.set_ip(base + pos as u64);
        let ins = decoder.decode();
        if ins.is_invalid() {
            pos += 1;
            continue;
        }
        pos += ins.len();
        out.push(convert(&ins, &mut fmt));
    }
    out
}

fn convert(ins: &iced_x86::Instruction, fmt: &mut IntelFormatter) -> Instruction {
    let mut mnemonic = TextOut(String::new());
    fmt.format_mnemonic(ins, &mut mnemonic);
    let mut operands = TextOut(String::new());
    fmt.format_all_operands(ins, &mut operands);
    let operands = operands.0;

    let has_near_branch = (0..ins.op_count())
        .any(|i| matches!(ins.op_kind(i), OpKind::NearBranch16 | OpKind::NearBranch32 | OpKind::NearBranch64));
    let has_operand = ins.op_count() > 0;
    let (cf_class, static_target) = match ins.flow_control() {
        FlowControl::Next
        | FlowControl::Interrupt
        | FlowControl::Exception
        | FlowControl::XbeginXabortXend => (CfClass::Sequential, None),
        FlowControl::UnconditionalBranch if has_near_branch => (CfClass::UncondJump, Some(ins.near_branch_target())),
        FlowControl::UnconditionalBranch | FlowControl::IndirectBranch => (CfClass::IndirectJump, None),
        FlowControl::ConditionalBranch if has_near_branch => (CfClass::CondJump, Some(ins.near_branch_target())),
        FlowControl::ConditionalBranch => (CfClass::Sequential, None),
        FlowControl::Return => (CfClass::Return, None),
        FlowControl::Call if has_near_branch => (CfClass::Call, Some(ins.near_branch_target())),
        // syscall/sysenter resume at the next instruction
        FlowControl::Call if !has_operand => (CfClass::Sequential, None),
        FlowControl::Call | FlowControl::IndirectCall => (CfClass::Call, None),
    };

    let mut memory = None;
    let mut immediate = None;
    for i in 0..ins.op_count() {
        match ins.op_kind(i) {
            OpKind::Memory if memory.is_none() => {
                let text = match (operands.find('['), operands.rfind(']')) {
                    (Some(a), Some(b)) if a < b => operands[a..=b].to_string(),
                    _ => operands.clone(),
                };
                let rip_relative = ins.is_ip_rel_memory_operand();
                let displacement = if rip_relative {
                    ins.memory_displacement64().wrapping_sub(ins.next_ip()) as i64
                } else if ins.code_size() == iced_x86::CodeSize::Code32 {
                    i64::from(ins.memory_displacement32() as i32)
                } else {
                    ins.memory_displacement64() as i64
                };
                let size = ins.memory_size().size();
                memory = Some(MemoryOperand {
                    text,
                    base: if rip_relative { Some("rip".into()) } else { register_name(ins.memory_base()) },
                    index: register_name(ins.memory_index()),
                    scale: ins.memory_index_scale(),
                    displacement,
                    rip_relative,
                    width: (size > 0 && ins.mnemonic() != iced_x86::Mnemonic::Lea).then_some(size as u32),
                });
            }
            OpKind::Immediate32 | OpKind::Immediate64 | OpKind::Immediate32to64 if immediate.is_none() => {
                immediate = Some(ins.immediate(i));
            }
            _ => {}
        }
    }

    Instruction {
        vaddr: ins.ip(),
        byte_len: ins.len() as u32,
        mnemonic: mnemonic.0,
        operands,
        cf_class,
        static_target,
        memory,
        immediate,
    }
}

/// Block label for a block starting at `addr`.
pub fn block_label(addr: u64, entry: u64) -> String {
    if addr == entry {
        "start".to_string()
    } else {
        format!("loc_{addr:X}")
    }
}

/// Splits a decoded function into basic blocks.
///
/// The function range is taken to be `[first instruction, end of last)`.
pub fn segment_blocks(instructions: &[Instruction]) -> Vec<BasicBlock> {
    let Some(first) = instructions.first() else {
        return Vec::new();
    };
    let last = instructions.last().expect("nonempty");
    let range = FunctionBoundary {
        name: String::new(),
        start: first.vaddr,
        end: last.next_addr(),
        source: crate::binary::BoundarySource::UserOverride,
    };
    segment_blocks_with_diagnostics(instructions, &range).0
}

fn segment_blocks_with_diagnostics(
    instructions: &[Instruction],
    boundary: &FunctionBoundary,
) -> (Vec<BasicBlock>, Vec<Diagnostic>) {
    let mut diagnostics = Vec::new();
    let Some(first) = instructions.first() else {
        return (Vec::new(), diagnostics);
    };
    let entry = first.vaddr;
    let starts: BTreeSet<u64> = instructions.iter().map(|i| i.vaddr).collect();

    let mut leaders = BTreeSet::from([entry]);
    for ins in instructions {
        if ins.cf_class != CfClass::Sequential && starts.contains(&ins.next_addr()) {
            leaders.insert(ins.next_addr());
        }
        if let Some(target) = ins.static_target {
            if !boundary.contains(target) {
                if ins.cf_class.is_jump() {
                    diagnostics.push(Diagnostic {
                        address: ins.vaddr,
                        kind: DiagnosticKind::TargetOutsideFunction,
                        detail: format!("branch target {target:#x} lies outside the function"),
                    });
                }
            } else if starts.contains(&target) {
                leaders.insert(target);
            } else {
                diagnostics.push(Diagnostic {
                    address: ins.vaddr,
                    kind: DiagnosticKind::TargetInsideInstruction,
                    detail: format!("target {target:#x} is not an instruction boundary"),
                });
            }
        }
    }

    let mut blocks: Vec<BasicBlock> = Vec::new();
    for ins in instructions {
        if leaders.contains(&ins.vaddr) || blocks.is_empty() {
            blocks.push(BasicBlock { label: block_label(ins.vaddr, entry), instructions: Vec::new() });
        }
        blocks.last_mut().expect("pushed above").instructions.push(ins.clone());
    }
    (blocks, diagnostics)
}

/// Direct-branch and fall-through edges as (source start, target start)
/// address pairs, sorted and deduplicated.
pub fn build_edges(blocks: &[BasicBlock]) -> (Vec<(u64, u64)>, Vec<Diagnostic>) {
    let block_starts: BTreeSet<u64> = blocks.iter().map(BasicBlock::start).collect();
    let mut edges = BTreeSet::new();
    let mut diagnostics = Vec::new();
    for block in blocks {
        let term = block.terminator();
        let src = block.start();
        let fallthrough = Some(term.next_addr()).filter(|a| block_starts.contains(a));
        let target = term.static_target.filter(|a| block_starts.contains(a));
        let succs: Vec<u64> = match term.cf_class {
            CfClass::CondJump => target.into_iter().chain(fallthrough).collect(),
            CfClass::UncondJump => target.into_iter().collect(),
            CfClass::Call | CfClass::Sequential => fallthrough.into_iter().collect(),
            CfClass::Return => Vec::new(),
            CfClass::IndirectJump => {
                diagnostics.push(Diagnostic {
                    address: term.vaddr,
                    kind: DiagnosticKind::IndirectJump,
                    detail: format!("indirect jump `{}` contributes no edges", term.text()),
                });
                Vec::new()
            }
        };
        for dst in succs {
            edges.insert((src, dst));
        }
    }
    (edges.into_iter().collect(), diagnostics)
}

/// Rewrites direct jump targets to block labels and call targets to callee
/// names (`sub_<ADDR>` when no name is known).
pub fn relabel_operands(blocks: &mut [BasicBlock], image: &BinaryImage, known_functions: &[FunctionBoundary]) {
    let labels: BTreeMap<u64, String> = blocks.iter().map(|b| (b.start(), b.label.clone())).collect();
    for block in blocks.iter_mut() {
        for ins in block.instructions.iter_mut() {
            match (ins.cf_class, ins.static_target) {
                (CfClass::CondJump | CfClass::UncondJump, Some(target)) => {
                    if let Some(label) = labels.get(&target) {
                        ins.operands = replace_target(&ins.operands, target, label);
                    }
                }
                (CfClass::Call, Some(target)) => {
                    let name = callee_name(image, known_functions, target);
                    ins.operands = replace_target(&ins.operands, target, &name);
                }
                (CfClass::Call, None) => {
                    let slot = ins
                        .memory
                        .as_ref()
                        .and_then(|m| m.static_address(ins.vaddr + u64::from(ins.byte_len), image.architecture));
                    if let Some(name) = slot.and_then(|s| image.import_for_slot(s)) {
                        ins.operands = name.to_string();
                    }
                }
                _ => {}
            }
        }
    }
}

fn replace_target(operands: &str, target: u64, replacement: &str) -> String {
    let rendered = format!("0x{target:x}");
    match operands.rsplit_once(' ') {
        Some((head, tail)) if tail == rendered => format!("{head} {replacement}"),
        None if operands == rendered => replacement.to_string(),
        _ => operands.to_string(),
    }
}

/// Name for a direct call target.
pub fn callee_name(image: &BinaryImage, known_functions: &[FunctionBoundary], target: u64) -> String {
    if let Some(f) = known_functions.iter().find(|f| f.start == target) {
        return f.name.clone();
    }
    if let Some(sym) = image.function_symbols().find(|s| s.vaddr == target) {
        return sym.name.clone();
    }
    if let Some(name) = plt_stub_import(image, target) {
        return name;
    }
    format!("sub_{target:X}")
}

/// Follows a PLT stub at `addr` to the import bound to its GOT slot.
fn plt_stub_import(image: &BinaryImage, addr: u64) -> Option<String> {
    let sec = image.executable_section_containing(addr)?;
    if !sec.name.starts_with(".plt") {
        return None;
    }
    let off = (addr - sec.vaddr) as usize;
    let bytes = &sec.contents[off..(off + 16).min(sec.contents.len())];
    let got_plt = image.section(".got.plt").or_else(|| image.section(".got")).map(|s| s.vaddr);
    for ins in decode_lenient(image.architecture, bytes, addr).into_iter().take(3) {
        if ins.cf_class != CfClass::IndirectJump {
            continue;
        }
        let mem = ins.memory.as_ref()?;
        let slot = match mem.static_address(ins.next_addr(), image.architecture) {
            Some(a) => a,
            None if mem.base.as_deref() == Some("ebx") && mem.index.is_none() => {
                got_plt?.wrapping_add(mem.displacement as u64) & 0xffff_ffff
            }
            None => return None,
        };
        return image.import_for_slot(slot).map(str::to_string);
    }
    None
}

/// Canonical compact JSON: `{"nodenum":N,"nodes":{...},"edges":[...]}`.
pub fn serialize_cfg(cfg: &ControlFlowGraph) -> String {
    let q = |s: &str| serde_json::to_string(s).expect("string serialization is infallible");
    let mut out = String::with_capacity(256);
    out.push_str("{\"nodenum\":");
    out.push_str(&cfg.nodenum.to_string());
    out.push_str(",\"nodes\":{");
    for (i, (label, lines)) in cfg.nodes.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&q(label));
        out.push_str(":[");
        for (j, line) in lines.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&q(line));
        }
        out.push(']');
    }
    out.push_str("},\"edges\":[");
    for (i, (src, dst)) in cfg.edges.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push('[');
        out.push_str(&q(src));
        out.push(',');
        out.push_str(&q(dst));
        out.push(']');
    }
    out.push_str("]}");
    out
}

/// Minimal parsed form of serialized CFG JSON.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct ParsedCfg {
    pub nodenum: usize,
    pub nodes: BTreeMap<String, Vec<String>>,
    pub edges: Vec<(String, String)>,
}

pub fn parse_cfg_json(text: &str) -> Result<ParsedCfg, serde_json::Error> {
    serde_json::from_str(text)
}

/// Checks the structural invariants of an extraction: blocks partition the
/// function range, edges reference existing blocks, out-degree bounds hold
/// and `nodenum` matches the node count.
pub fn check_invariants(ext: &CfgExtraction) -> Result<(), String> {
    let cfg = &ext.cfg;
    if cfg.nodenum != cfg.nodes.len() || cfg.nodenum != ext.blocks.len() {
        return Err(format!("nodenum {} vs {} nodes", cfg.nodenum, cfg.nodes.len()));
    }
    let mut cursor = ext.boundary.start;
    for block in &ext.blocks {
        if block.instructions.is_empty() {
            return Err(format!("empty block {}", block.label));
        }
        for ins in &block.instructions {
            if ins.vaddr != cursor {
                return Err(format!("gap or overlap at {:#x} (expected {cursor:#x})", ins.vaddr));
            }
            cursor = ins.next_addr();
        }
        for ins in &block.instructions[..block.instructions.len() - 1] {
            if ins.cf_class != CfClass::Sequential {
                return Err(format!("control transfer at {:#x} inside block {}", ins.vaddr, block.label));
            }
        }
    }
    if cursor != ext.boundary.end {
        return Err(format!("blocks end at {cursor:#x}, function ends at {:#x}", ext.boundary.end));
    }
    let labels: BTreeSet<&str> = cfg.nodes.iter().map(|(l, _)| l.as_str()).collect();
    if labels.len() != cfg.nodes.len() {
        return Err("duplicate labels".into());
    }
    for (s, t) in &cfg.edges {
        if !labels.contains(s.as_str()) || !labels.contains(t.as_str()) {
            return Err(format!("edge {s}->{t} names a missing block"));
        }
    }
    for block in &ext.blocks {
        let out = cfg.edges.iter().filter(|(s, _)| *s == block.label).count();
        let limit = match block.terminator().cf_class {
            CfClass::Return | CfClass::IndirectJump => 0,
            CfClass::CondJump => 2,
            _ => 1,
        };
        if out > limit {
            return Err(format!("block {} has out-degree {out} > {limit}", block.label));
        }
    }
    Ok(())
}
