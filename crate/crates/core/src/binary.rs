//! ELF image model: sections, symbols and function boundaries.
//!
//! Only little-endian x86-32 and x86-64 executables are accepted. The image is
//! immutable after [`load_image`] returns and can be shared freely between
//! analyses.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use object::elf;
use object::read::{File as ObjectFile, RelocationFlags, RelocationTarget};
use object::{
    BinaryFormat, Object, ObjectKind, ObjectSection, ObjectSymbol, ObjectSymbolTable, SectionFlags as ObjFlags,
    SectionKind, SymbolKind as ObjSymbolKind,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinaryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed image: {0}")]
    MalformedImage(String),
    #[error("unsupported architecture: {0}")]
    UnsupportedArchitecture(String),
    #[error("function `{0}` not found in symbol table or overrides")]
    FunctionNotFound(String),
    #[error("section `{0}` not found")]
    SectionNotFound(String),
    #[error("invalid function override `{name}`: {reason}")]
    InvalidOverride { name: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "x86-32")]
    X86,
    #[serde(rename = "x86-64")]
    X86_64,
}

impl Architecture {
    pub fn bitness(self) -> u32 {
        match self {
            Architecture::X86 => 32,
            Architecture::X86_64 => 64,
        }
    }

    /// Pointer width in bytes.
    pub fn word_size(self) -> u64 {
        u64::from(self.bitness() / 8)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::X86 => "x86-32",
            Architecture::X86_64 => "x86-64",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionFlags {
    pub alloc: bool,
    pub exec: bool,
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub name: String,
    pub vaddr: u64,
    pub size: u64,
    pub flags: SectionFlags,
    /// Empty when the section occupies no file bytes (`.bss`).
    pub contents: Vec<u8>,
}

impl Section {
    pub fn end(&self) -> u64 {
        self.vaddr + self.size
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.vaddr && addr < self.end()
    }

    /// True when the section has no file-backed bytes.
    pub fn is_uninitialized(&self) -> bool {
        self.contents.is_empty() && self.size > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SymbolKind {
    Function,
    Object,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Symbol {
    pub name: String,
    pub vaddr: u64,
    /// 0 when unknown.
    pub size: u64,
    pub kind: SymbolKind,
}

/// A dynamically linked callee reached through a GOT slot (PLT stub or
/// `call [got]`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportSlot {
    pub slot: u64,
    pub name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySource {
    SymbolTable,
    UserOverride,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionBoundary {
    pub name: String,
    pub start: u64,
    /// Exclusive.
    pub end: u64,
    pub source: BoundarySource,
}

impl FunctionBoundary {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.start && addr < self.end
    }
}

/// A caller-supplied function location, used when the symbol table does not
/// know the function (stripped binaries).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionOverride {
    pub name: String,
    pub start: u64,
    pub end: Option<u64>,
}

impl FunctionOverride {
    pub fn new(name: impl Into<String>, start: u64, end: Option<u64>) -> Self {
        Self { name: name.into(), start, end }
    }
}

#[derive(Debug, Clone)]
pub struct BinaryImage {
    pub architecture: Architecture,
    pub sections: Vec<Section>,
    pub symbols: Vec<Symbol>,
    pub imports: Vec<ImportSlot>,
    /// ELF type `ET_DYN`: code addresses data only through relative operands.
    pub position_independent: bool,
    pub origin_path: PathBuf,
}

impl BinaryImage {
    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// The allocated section whose address range contains `addr`.
    pub fn section_containing(&self, addr: u64) -> Option<&Section> {
        self.sections.iter().find(|s| s.flags.alloc && s.contains(addr))
    }

    pub fn executable_section_containing(&self, addr: u64) -> Option<&Section> {
        self.section_containing(addr).filter(|s| s.flags.exec)
    }

    pub fn function_symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.symbols.iter().filter(|s| s.kind == SymbolKind::Function)
    }

    /// Symbol whose start address is exactly `addr`, preferring functions.
    pub fn symbol_at(&self, addr: u64) -> Option<&Symbol> {
        self.symbols
            .iter()
            .filter(|s| s.vaddr == addr)
            .min_by_key(|s| (s.kind != SymbolKind::Function, s.name.as_str()))
    }

    /// Object symbol whose extent covers `addr`.
    pub fn object_covering(&self, addr: u64) -> Option<&Symbol> {
        self.symbols.iter().find(|s| {
            s.kind == SymbolKind::Object
                && addr >= s.vaddr
                && (addr < s.vaddr + s.size.max(1))
        })
    }

    pub fn import_for_slot(&self, slot: u64) -> Option<&str> {
        self.imports.iter().find(|i| i.slot == slot).map(|i| i.name.as_str())
    }

    /// Reads `len` bytes at a virtual address from file-backed sections.
    pub fn read_bytes(&self, addr: u64, len: usize) -> Option<&[u8]> {
        let sec = self.section_containing(addr)?;
        if sec.contents.is_empty() {
            return None;
        }
        let off = (addr - sec.vaddr) as usize;
        sec.contents.get(off..off.checked_add(len)?)
    }

    /// Checks the structural invariants every loaded image satisfies.
    pub fn validate(&self) -> Result<(), BinaryError> {
        let mut ranges: Vec<(u64, u64, &str)> = self
            .sections
            .iter()
            .filter(|s| s.flags.alloc && s.size > 0)
            .map(|s| (s.vaddr, s.end(), s.name.as_str()))
            .collect();
        ranges.sort();
        for pair in ranges.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(BinaryError::MalformedImage(format!(
                    "sections {} and {} overlap",
                    pair[0].2, pair[1].2
                )));
            }
        }
        for s in &self.sections {
            if !s.contents.is_empty() && s.contents.len() as u64 != s.size {
                return Err(BinaryError::MalformedImage(format!(
                    "section {} has {} content bytes for size {}",
                    s.name,
                    s.contents.len(),
                    s.size
                )));
            }
        }
        for sym in self.function_symbols() {
            if self.executable_section_containing(sym.vaddr).is_none() {
                return Err(BinaryError::MalformedImage(format!(
                    "function symbol {} at {:#x} is outside executable sections",
                    sym.name, sym.vaddr
                )));
            }
        }
        Ok(())
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<BinaryImage, BinaryError> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|source| BinaryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_image(&data, path)
}

/// Parses an in-memory ELF file. `origin` is recorded but never opened.
pub fn parse_image(data: &[u8], origin: impl AsRef<Path>) -> Result<BinaryImage, BinaryError> {
    if data.len() < 4 || &data[..4] != b"\x7fELF" {
        return Err(BinaryError::MalformedImage("missing ELF magic".into()));
    }
    let file = ObjectFile::parse(data).map_err(|e| BinaryError::MalformedImage(e.to_string()))?;
    if file.format() != BinaryFormat::Elf {
        return Err(BinaryError::MalformedImage("not an ELF file".into()));
    }
    if !file.is_little_endian() {
        return Err(BinaryError::UnsupportedArchitecture("big-endian".into()));
    }
    let architecture = match file.architecture() {
        object::Architecture::I386 => Architecture::X86,
        object::Architecture::X86_64 => Architecture::X86_64,
        other => return Err(BinaryError::UnsupportedArchitecture(format!("{other:?}"))),
    };

    let mut sections = Vec::new();
    for sec in file.sections() {
        let name = sec.name().map_err(|e| BinaryError::MalformedImage(e.to_string()))?;
        if name.is_empty() {
            continue;
        }
        let sh_flags = match sec.flags() {
            ObjFlags::Elf { sh_flags } => sh_flags,
            _ => 0,
        };
        let kind = sec.kind();
        let nobits = matches!(kind, SectionKind::UninitializedData | SectionKind::UninitializedTls);
        // A .tbss template occupies no address space of its own; its range
        // aliases whatever follows it.
        let tls_nobits = kind == SectionKind::UninitializedTls;
        let flags = SectionFlags {
            alloc: sh_flags & u64::from(elf::SHF_ALLOC) != 0 && !tls_nobits,
            exec: sh_flags & u64::from(elf::SHF_EXECINSTR) != 0,
            write: sh_flags & u64::from(elf::SHF_WRITE) != 0,
        };
        let contents = if nobits {
            Vec::new()
        } else {
            sec.data()
                .map_err(|e| BinaryError::MalformedImage(format!("{name}: {e}")))?
                .to_vec()
        };
        if !nobits && contents.len() as u64 != sec.size() {
            return Err(BinaryError::MalformedImage(format!("section {name} is truncated")));
        }
        sections.push(Section {
            name: name.to_string(),
            vaddr: sec.address(),
            size: sec.size(),
            flags,
            contents,
        });
    }

    let mut image = BinaryImage {
        architecture,
        symbols: Vec::new(),
        imports: Vec::new(),
        position_independent: file.kind() == ObjectKind::Dynamic,
        sections,
        origin_path: origin.as_ref().to_path_buf(),
    };
    image.symbols = collect_symbols(&file, &image);
    image.imports = collect_imports(&file, architecture);
    image.validate()?;
    Ok(image)
}

fn collect_symbols(file: &ObjectFile<'_>, image: &BinaryImage) -> Vec<Symbol> {
    let mut symbols: Vec<Symbol> = file
        .symbols()
        .filter(|s| s.is_definition() && s.address() != 0)
        .filter_map(|s| {
            let name = s.name().ok()?.to_string();
            if name.is_empty() {
                return None;
            }
            let mut kind = match s.kind() {
                ObjSymbolKind::Text => SymbolKind::Function,
                ObjSymbolKind::Data => SymbolKind::Object,
                _ => SymbolKind::Other,
            };
            if kind == SymbolKind::Function && image.executable_section_containing(s.address()).is_none() {
                kind = SymbolKind::Other;
            }
            Some(Symbol { name, vaddr: s.address(), size: s.size(), kind })
        })
        .collect();
    symbols.sort_by(|a, b| (a.vaddr, &a.name).cmp(&(b.vaddr, &b.name)));
    // Aliases: keep the first function per address (by name order).
    let mut seen_fn = std::collections::HashSet::new();
    symbols.retain(|s| s.kind != SymbolKind::Function || seen_fn.insert(s.vaddr));
    symbols.dedup_by(|a, b| a.vaddr == b.vaddr && a.name == b.name);
    symbols
}

fn collect_imports(file: &ObjectFile<'_>, arch: Architecture) -> Vec<ImportSlot> {
    let (jump_slot, glob_dat) = match arch {
        Architecture::X86_64 => (elf::R_X86_64_JUMP_SLOT, elf::R_X86_64_GLOB_DAT),
        Architecture::X86 => (elf::R_386_JMP_SLOT, elf::R_386_GLOB_DAT),
    };
    let Some(dynsyms) = file.dynamic_symbol_table() else {
        return Vec::new();
    };
    let Some(relocs) = file.dynamic_relocations() else {
        return Vec::new();
    };
    let mut out: BTreeMap<u64, String> = BTreeMap::new();
    for (offset, reloc) in relocs {
        let RelocationFlags::Elf { r_type } = reloc.flags() else {
            continue;
        };
        if r_type != jump_slot && r_type != glob_dat {
            continue;
        }
        let RelocationTarget::Symbol(idx) = reloc.target() else {
            continue;
        };
        if let Some(name) = dynsyms.symbol_by_index(idx).ok().and_then(|s| s.name().ok().map(str::to_string)) {
            if !name.is_empty() {
                out.insert(offset, name);
            }
        }
    }
    out.into_iter().map(|(slot, name)| ImportSlot { slot, name }).collect()
}

/// Resolves boundaries for the requested function names; an empty request
/// returns every known function (symbol table plus overrides).
///
/// Symbol-table entries win over overrides. A missing end address is
/// inferred as the next known function start in the same section, else the
/// section end. The result is sorted by start address.
pub fn resolve_functions(
    image: &BinaryImage,
    requested: &[String],
    overrides: &[FunctionOverride],
) -> Result<Vec<FunctionBoundary>, BinaryError> {
    for ov in overrides {
        if image.executable_section_containing(ov.start).is_none() {
            return Err(BinaryError::InvalidOverride {
                name: ov.name.clone(),
                reason: format!("start {:#x} is not in an executable section", ov.start),
            });
        }
        if let Some(end) = ov.end {
            if end <= ov.start {
                return Err(BinaryError::InvalidOverride {
                    name: ov.name.clone(),
                    reason: format!("end {end:#x} does not follow start {:#x}", ov.start),
                });
            }
        }
    }

    // Every known function start, used for end inference.
    let mut starts: Vec<u64> = image
        .function_symbols()
        .map(|s| s.vaddr)
        .chain(overrides.iter().map(|o| o.start))
        .collect();
    starts.sort_unstable();
    starts.dedup();

    let infer_end = |start: u64| -> u64 {
        // Caller checked that `start` is in an executable section.
        let sec = image.executable_section_containing(start).expect("start in exec section");
        starts
            .iter()
            .copied()
            .find(|&s| s > start && s < sec.end())
            .unwrap_or(sec.end())
    };

    let from_symbol = |sym: &Symbol| -> FunctionBoundary {
        let sec_end = image
            .executable_section_containing(sym.vaddr)
            .map(Section::end)
            .unwrap_or(sym.vaddr + sym.size);
        let end = if sym.size > 0 {
            (sym.vaddr + sym.size).min(sec_end)
        } else {
            infer_end(sym.vaddr)
        };
        FunctionBoundary { name: sym.name.clone(), start: sym.vaddr, end, source: BoundarySource::SymbolTable }
    };
    let from_override = |ov: &FunctionOverride| -> FunctionBoundary {
        let sec_end = image
            .executable_section_containing(ov.start)
            .map(Section::end)
            .expect("validated above");
        let end = ov.end.map(|e| e.min(sec_end)).unwrap_or_else(|| infer_end(ov.start));
        FunctionBoundary { name: ov.name.clone(), start: ov.start, end, source: BoundarySource::UserOverride }
    };

    let mut out: Vec<FunctionBoundary> = Vec::new();
    if requested.is_empty() {
        let mut names = std::collections::HashSet::new();
        for sym in image.function_symbols() {
            if names.insert(sym.name.clone()) {
                out.push(from_symbol(sym));
            }
        }
        for ov in overrides {
            if names.insert(ov.name.clone()) {
                out.push(from_override(ov));
            }
        }
    } else {
        for name in requested {
            if let Some(sym) = image.function_symbols().find(|s| &s.name == name) {
                out.push(from_symbol(sym));
            } else if let Some(ov) = overrides.iter().find(|o| &o.name == name) {
                out.push(from_override(ov));
            } else {
                return Err(BinaryError::FunctionNotFound(name.clone()));
            }
        }
    }
    out.sort_by(|a, b| (a.start, &a.name).cmp(&(b.start, &b.name)));
    out.dedup_by(|a, b| a.start == b.start);
    // Clip so ranges never overlap.
    for i in 1..out.len() {
        let next = out[i].start;
        if out[i - 1].end > next {
            out[i - 1].end = next;
        }
    }
    Ok(out)
}

/// Raw view of a section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionView {
    pub base: u64,
    pub bytes: Vec<u8>,
    /// Set for NOBITS sections; `bytes` is then an all-zero logical view.
    pub uninitialized: bool,
}

pub fn section_bytes(image: &BinaryImage, name: &str) -> Result<SectionView, BinaryError> {
    let sec = image.section(name).ok_or_else(|| BinaryError::SectionNotFound(name.to_string()))?;
    if sec.is_uninitialized() {
        Ok(SectionView { base: sec.vaddr, bytes: vec![0; sec.size as usize], uninitialized: true })
    } else {
        Ok(SectionView { base: sec.vaddr, bytes: sec.contents.clone(), uninitialized: false })
    }
}
