//! Data mapping table recovery.
//!
//! The candidate pool is the full extent of the data sections. It is carved
//! into items at *anchors*: addresses referenced anywhere in the program's
//! code, plus NUL-terminated strings. Unreferenced bytes between anchors are
//! tiled with units sized like the preceding anchor, so that the elements of
//! an array whose first element alone is referenced still show up as
//! separate items that proximity expansion can pull in.
//!
//! Rendering follows `size:count,value`, e.g. `dword:1,?` for one
//! uninitialized `.bss` dword.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::binary::{Architecture, BinaryImage};
use crate::cfg::{decode_lenient, Diagnostic, DiagnosticKind, Instruction};
use crate::hexfmt;

pub const DEFAULT_PROXIMITY_WINDOW: u64 = 64;
pub const MIN_STRING_LEN: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Byte,
    Word,
    Dword,
    Qword,
}

impl SizeClass {
    pub fn bytes(self) -> u64 {
        match self {
            SizeClass::Byte => 1,
            SizeClass::Word => 2,
            SizeClass::Dword => 4,
            SizeClass::Qword => 8,
        }
    }

    /// Maps an access width in bytes. Vector and x87 accesses wider than
    /// eight bytes are reported as qword.
    pub fn from_width(width: u32) -> SizeClass {
        match width {
            0 | 1 | 3 => SizeClass::Byte,
            2 => SizeClass::Word,
            4..=7 => SizeClass::Dword,
            _ => SizeClass::Qword,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeClass::Byte => "byte",
            SizeClass::Word => "word",
            SizeClass::Dword => "dword",
            SizeClass::Qword => "qword",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "lowercase")]
pub enum DataValue {
    Hex(String),
    String(String),
    Uninitialized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataItem {
    pub section: String,
    pub vaddr: u64,
    pub size_class: SizeClass,
    pub count: u64,
    pub value: DataValue,
    pub label: String,
}

impl DataItem {
    pub fn byte_len(&self) -> u64 {
        self.count * self.size_class.bytes()
    }

    pub fn end(&self) -> u64 {
        self.vaddr + self.byte_len()
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.vaddr && addr < self.end()
    }

    /// `size:count,value` as it appears in the serialized table.
    pub fn render(&self) -> String {
        let value = match &self.value {
            DataValue::Hex(h) => h.clone(),
            DataValue::String(s) => serde_json::to_string(s).expect("string serialization is infallible"),
            DataValue::Uninitialized => "?".to_string(),
        };
        format!("{}:{},{}", self.size_class.name(), self.count, value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackVariable {
    pub frame_offset: i64,
    pub size_class: SizeClass,
    pub label: String,
    /// Set when the same offset is accessed with more than one width.
    pub conflicting: bool,
}

/// One operand occurrence mapped to a table label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    /// Address of the instruction holding the operand.
    pub address: u64,
    pub operand: String,
    /// Resolution context, e.g. `rip=0x4729`.
    pub context: Option<String>,
    /// Intermediate `section:address` step, absent for stack slots.
    pub location: Option<String>,
    pub label: String,
}

impl Substitution {
    /// `[rip+0x3fa29](rip=0x4729) -> .bss:0x44152 -> counter`
    pub fn chain(&self) -> String {
        let mut out = self.operand.clone();
        if let Some(ctx) = &self.context {
            out.push_str(&format!("({ctx})"));
        }
        if let Some(loc) = &self.location {
            out.push_str(" -> ");
            out.push_str(loc);
            if *loc == self.label {
                return out;
            }
        }
        out.push_str(" -> ");
        out.push_str(&self.label);
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataMappingTable {
    /// Per-section items in address order; sections in image order.
    pub items: Vec<(String, Vec<DataItem>)>,
    pub temp_vars: Vec<StackVariable>,
    pub substitutions: Vec<Substitution>,
}

impl DataMappingTable {
    pub fn is_empty(&self) -> bool {
        self.items.iter().all(|(_, v)| v.is_empty()) && self.temp_vars.is_empty()
    }

    pub fn all_items(&self) -> impl Iterator<Item = &DataItem> {
        self.items.iter().flat_map(|(_, v)| v.iter())
    }

    pub fn item_at(&self, addr: u64) -> Option<&DataItem> {
        self.all_items().find(|i| i.contains(addr))
    }

    /// Labels that substitutions may point at.
    pub fn labels(&self) -> BTreeSet<&str> {
        self.all_items()
            .map(|i| i.label.as_str())
            .chain(self.temp_vars.iter().map(|v| v.label.as_str()))
            .collect()
    }

    /// Operand chains, one per line, for annotating listings.
    pub fn substitution_lines(&self) -> Vec<String> {
        self.substitutions.iter().map(Substitution::chain).collect()
    }
}

/// Section names that contribute to the candidate pool.
pub fn is_data_section(name: &str) -> bool {
    name.starts_with(".rodata") || name.starts_with(".data") || name.starts_with(".bss")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRegion {
    pub section: String,
    pub base: u64,
    pub size: u64,
    /// Empty for uninitialized regions.
    pub bytes: Vec<u8>,
    pub uninitialized: bool,
}

impl PoolRegion {
    pub fn end(&self) -> u64 {
        self.base + self.size
    }

    pub fn contains(&self, addr: u64) -> bool {
        addr >= self.base && addr < self.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Anchor {
    /// Referenced with the given width (bytes), or without one. `array` is
    /// set when some reference indexes from the address or only takes it.
    Access { width: Option<u32>, array: bool },
    /// NUL-terminated string; length excludes the terminator.
    Str(usize),
}

/// Candidate data items for an image.
#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    pub regions: Vec<PoolRegion>,
    anchors: BTreeMap<u64, Anchor>,
    symbols: BTreeMap<u64, String>,
}

impl CandidatePool {
    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn region_containing(&self, addr: u64) -> Option<&PoolRegion> {
        self.regions.iter().find(|r| r.contains(addr))
    }

    fn record_access(&mut self, addr: u64, width: Option<u32>, array: bool) {
        match self.anchors.get_mut(&addr) {
            Some(Anchor::Access { width: w, array: a }) => {
                *w = (*w).max(width);
                *a |= array;
            }
            Some(slot @ Anchor::Str(_)) if width.is_some_and(|w| w > 1) => *slot = Anchor::Access { width, array },
            Some(Anchor::Str(_)) => {}
            None => {
                self.anchors.insert(addr, Anchor::Access { width, array });
            }
        }
    }

    /// Whether proximity may pull in the item at `addr`. Anchored items and
    /// initialized bytes always qualify. An unanchored unit of an
    /// uninitialized section has nothing to tell it apart from alignment
    /// padding, so it only qualifies after an array-like reference.
    fn proximity_eligible(&self, region: &PoolRegion, addr: u64) -> bool {
        if !region.uninitialized {
            return true;
        }
        match self.anchors.range(region.base..=addr).next_back() {
            Some((a, _)) if *a == addr => true,
            Some((_, Anchor::Access { array, .. })) => *array,
            _ => false,
        }
    }

    /// Extent of the anchor at `addr`, clamped to the next anchor and the
    /// region end.
    fn anchor_extent(&self, region: &PoolRegion, addr: u64, anchor: Anchor) -> (SizeClass, u64) {
        let limit = self
            .anchors
            .range(addr + 1..)
            .next()
            .map(|(a, _)| *a)
            .unwrap_or(u64::MAX)
            .min(region.end());
        match anchor {
            Anchor::Str(len) => (SizeClass::Byte, (len as u64 + 1).min(limit - addr)),
            Anchor::Access { width, .. } => {
                let class = SizeClass::from_width(width.unwrap_or(4));
                if addr + class.bytes() <= limit {
                    (class, 1)
                } else {
                    (SizeClass::Byte, 1)
                }
            }
        }
    }

    fn make_item(&self, region: &PoolRegion, vaddr: u64, size_class: SizeClass, count: u64, string: bool) -> DataItem {
        let len = (size_class.bytes() * count) as usize;
        let value = if region.uninitialized {
            DataValue::Uninitialized
        } else {
            let off = (vaddr - region.base) as usize;
            let raw = &region.bytes[off..off + len];
            if string {
                DataValue::String(String::from_utf8_lossy(&raw[..len - 1]).into_owned())
            } else {
                let mut v: u64 = 0;
                for (i, b) in raw.iter().enumerate().take(8) {
                    v |= u64::from(*b) << (8 * i);
                }
                DataValue::Hex(hexfmt::addr(v))
            }
        };
        let location = format!("{}:{}", region.section, hexfmt::addr(vaddr));
        let label = self.symbols.get(&vaddr).cloned().unwrap_or(location);
        DataItem { section: region.section.clone(), vaddr, size_class, count, value, label }
    }

    /// Items (anchored or gap units) overlapping `[lo, hi)` within the region
    /// containing `lo`'s side of the range, in address order.
    fn items_in(&self, region: &PoolRegion, lo: u64, hi: u64) -> Vec<DataItem> {
        let lo = lo.max(region.base);
        let hi = hi.min(region.end());
        if lo >= hi {
            return Vec::new();
        }
        let mut out = Vec::new();
        // Start from the last anchor at or before `lo` in this region.
        let mut cursor = self
            .anchors
            .range(region.base..=lo)
            .next_back()
            .map(|(a, _)| *a)
            .unwrap_or(region.base);
        let mut unit = None;
        while cursor < hi {
            if let Some(&anchor) = self.anchors.get(&cursor) {
                let (class, count) = self.anchor_extent(region, cursor, anchor);
                let is_str = matches!(anchor, Anchor::Str(_)) && count > 1;
                let item = self.make_item(region, cursor, class, count, is_str);
                unit = (!is_str).then_some(class);
                cursor = item.end();
                if item.end() > lo {
                    out.push(item);
                }
                continue;
            }
            let gap_end = self
                .anchors
                .range(cursor..)
                .next()
                .map(|(a, _)| *a)
                .unwrap_or(u64::MAX)
                .min(region.end());
            // Uniform tiling with the preceding anchor's size, skipping
            // straight to `lo`.
            if let Some(class) = unit {
                let w = class.bytes();
                if cursor + w <= gap_end && cursor < lo {
                    let skip = ((lo - cursor) / w).min((gap_end - cursor) / w);
                    cursor += skip * w;
                }
                if cursor + w <= gap_end {
                    let item = self.make_item(region, cursor, class, 1, false);
                    cursor = item.end();
                    if item.end() > lo {
                        out.push(item);
                    }
                    continue;
                }
            }
            if cursor.is_multiple_of(4) && cursor + 4 <= gap_end && cursor < lo {
                let skip = ((lo - cursor) / 4).min((gap_end - cursor) / 4);
                cursor += skip * 4;
                if cursor >= gap_end {
                    continue;
                }
            }
            let class = natural_unit(cursor, gap_end);
            let item = self.make_item(region, cursor, class, 1, false);
            cursor = item.end();
            if item.end() > lo {
                out.push(item);
            }
            unit = None;
        }
        out
    }

    /// The pool item covering `addr`.
    pub fn item_at(&self, addr: u64) -> Option<DataItem> {
        let region = self.region_containing(addr)?;
        self.items_in(region, addr, addr + 1).into_iter().find(|i| i.contains(addr))
    }
}

fn natural_unit(addr: u64, limit: u64) -> SizeClass {
    for class in [SizeClass::Dword, SizeClass::Word] {
        let w = class.bytes();
        if addr.is_multiple_of(w) && addr + w <= limit {
            return class;
        }
    }
    SizeClass::Byte
}

fn is_printable(b: u8) -> bool {
    (0x20..0x7f).contains(&b) || matches!(b, b'\t' | b'\n' | b'\r')
}

/// The NUL-terminated run of at least two printable ASCII bytes starting at
/// `offset`, without the terminator.
pub fn detect_string(bytes: &[u8], offset: usize) -> Option<String> {
    let tail = bytes.get(offset..)?;
    let len = tail.iter().position(|b| !is_printable(*b))?;
    if len < MIN_STRING_LEN || tail[len] != 0 {
        return None;
    }
    Some(String::from_utf8(tail[..len].to_vec()).expect("printable ASCII is UTF-8"))
}

/// Builds the candidate pool: every `.rodata*`, `.data*` and `.bss*`
/// section, anchored at all code references in the image and at detected
/// strings.
pub fn collect_candidate_data(image: &BinaryImage) -> CandidatePool {
    let mut pool = CandidatePool::default();
    for sec in &image.sections {
        if !sec.flags.alloc || sec.size == 0 || !is_data_section(&sec.name) {
            continue;
        }
        pool.regions.push(PoolRegion {
            section: sec.name.clone(),
            base: sec.vaddr,
            size: sec.size,
            bytes: sec.contents.clone(),
            uninitialized: sec.is_uninitialized(),
        });
    }
    if pool.regions.is_empty() {
        return pool;
    }
    for sym in &image.symbols {
        if sym.kind == crate::binary::SymbolKind::Object && pool.region_containing(sym.vaddr).is_some() {
            pool.symbols.entry(sym.vaddr).or_insert_with(|| sym.name.clone());
        }
    }

    for sec in image.sections.iter().filter(|s| s.flags.exec && !s.contents.is_empty()) {
        for ins in decode_lenient(image.architecture, &sec.contents, sec.vaddr) {
            if let Some(r) = data_reference(&ins, image, &pool) {
                pool.record_access(r.address, r.width, r.array);
            }
        }
    }

    let mut strings = Vec::new();
    for region in pool.regions.iter().filter(|r| !r.uninitialized) {
        let mut off = 0usize;
        while off < region.bytes.len() {
            let at_boundary = off == 0 || region.bytes[off - 1] == 0;
            if at_boundary {
                if let Some(s) = detect_string(&region.bytes, off) {
                    strings.push((region.base + off as u64, s.len()));
                    off += s.len() + 1;
                    continue;
                }
            }
            off += 1;
        }
    }
    // Byte-wide and width-less references that land on a string keep the
    // string reading; wider accesses win.
    for (addr, len) in strings {
        match pool.anchors.get(&addr) {
            Some(Anchor::Access { width: Some(w), .. }) if *w > 1 => {}
            _ => {
                pool.anchors.insert(addr, Anchor::Str(len));
            }
        }
    }
    pool
}

struct OperandRef {
    address: u64,
    width: Option<u32>,
    /// `rip=...` for rip-relative forms.
    context: Option<String>,
    /// Indexed from the address, or the address is only taken.
    array: bool,
}

/// How an operand names data.
fn data_reference(ins: &Instruction, image: &BinaryImage, pool: &CandidatePool) -> Option<OperandRef> {
    if let Some(mem) = &ins.memory {
        if let Some(address) = mem.static_address(ins.next_addr(), image.architecture) {
            let context = mem.rip_relative.then(|| format!("rip={}", hexfmt::addr(ins.next_addr())));
            return Some(OperandRef { address, width: mem.width, context, array: mem.width.is_none() });
        }
        // Absolute table base plus a register: `[rax+0x404040]`.
        if !image.position_independent && !mem.rip_relative {
            let disp = truncate(mem.displacement as u64, image.architecture);
            if disp >= 0x1000 && pool.region_containing(disp).is_some() {
                return Some(OperandRef { address: disp, width: mem.width, context: None, array: true });
            }
        }
    }
    if !image.position_independent {
        if let Some(imm) = ins.immediate {
            let imm = truncate(imm, image.architecture);
            if imm >= 0x1000 && pool.region_containing(imm).is_some() {
                return Some(OperandRef { address: imm, width: None, context: None, array: true });
            }
        }
    }
    None
}

fn truncate(v: u64, arch: Architecture) -> u64 {
    match arch {
        Architecture::X86 => v & 0xffff_ffff,
        Architecture::X86_64 => v,
    }
}

/// A data reference found in the function's instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataReference {
    pub instruction: u64,
    pub operand: String,
    pub context: Option<String>,
    pub address: u64,
}

/// Pool items referenced by a function, keyed by item address.
#[derive(Debug, Clone, Default)]
pub struct ReferencedSet {
    pub items: BTreeMap<u64, RetainedItem>,
    pub references: Vec<DataReference>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetainedItem {
    pub item: DataItem,
    /// False for items added by proximity.
    pub referenced: bool,
}

impl ReferencedSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Resolves the function's memory operands to absolute addresses and keeps
/// the pool items containing them.
pub fn cross_reference(instructions: &[Instruction], pool: &CandidatePool, image: &BinaryImage) -> ReferencedSet {
    let mut set = ReferencedSet::default();
    for ins in instructions {
        let Some(OperandRef { address: addr, context, .. }) = data_reference(ins, image, pool) else {
            continue;
        };
        let Some(item) = pool.item_at(addr) else {
            if ins.memory.as_ref().is_some_and(|m| m.rip_relative || m.base.is_none())
                && image.executable_section_containing(addr).is_none()
            {
                set.diagnostics.push(Diagnostic {
                    address: ins.vaddr,
                    kind: DiagnosticKind::UnresolvedMemoryOperand,
                    detail: format!("operand resolves to {addr:#x}, outside the data sections"),
                });
            }
            continue;
        };
        let operand = match &ins.memory {
            Some(m) => m.text.clone(),
            None => format!("0x{addr:x}"),
        };
        set.references.push(DataReference { instruction: ins.vaddr, operand, context, address: addr });
        set.items
            .entry(item.vaddr)
            .and_modify(|r| r.referenced = true)
            .or_insert(RetainedItem { item, referenced: true });
    }
    set
}

/// Adds pool items within `window` bytes of a referenced item in the same
/// section. Only directly referenced items seed the expansion, so the
/// operation is idempotent.
pub fn proximity_expand(set: &ReferencedSet, pool: &CandidatePool, window: u64) -> ReferencedSet {
    let mut out = set.clone();
    if window == 0 {
        return out;
    }
    for retained in set.items.values().filter(|r| r.referenced) {
        let item = &retained.item;
        let Some(region) = pool.region_containing(item.vaddr) else {
            continue;
        };
        let lo = item.vaddr.saturating_sub(window);
        let hi = item.end().saturating_add(window);
        for neighbor in pool.items_in(region, lo, hi) {
            // Whole item must lie within the window.
            if neighbor.vaddr < lo || neighbor.end() > hi || !pool.proximity_eligible(region, neighbor.vaddr) {
                continue;
            }
            out.items
                .entry(neighbor.vaddr)
                .or_insert(RetainedItem { item: neighbor, referenced: false });
        }
    }
    out
}

fn is_frame_register(reg: &str) -> bool {
    matches!(reg, "rbp" | "rsp" | "ebp" | "esp")
}

/// Stack slots accessed through the frame or stack pointer, one entry per
/// distinct (offset, width). Width-less accesses (`lea`) are not recorded.
pub fn extract_stack_vars(instructions: &[Instruction]) -> Vec<StackVariable> {
    let mut seen: BTreeSet<(i64, SizeClass)> = BTreeSet::new();
    for ins in instructions {
        let Some(mem) = &ins.memory else { continue };
        let (Some(base), None, Some(width)) = (&mem.base, &mem.index, mem.width) else {
            continue;
        };
        if !is_frame_register(base) || mem.displacement == 0 {
            continue;
        }
        seen.insert((mem.displacement, SizeClass::from_width(width)));
    }
    let mut per_offset: BTreeMap<i64, usize> = BTreeMap::new();
    for (off, _) in &seen {
        *per_offset.entry(*off).or_default() += 1;
    }
    seen.into_iter()
        .map(|(frame_offset, size_class)| StackVariable {
            frame_offset,
            size_class,
            label: stack_label(frame_offset),
            conflicting: per_offset[&frame_offset] > 1,
        })
        .collect()
}

fn stack_label(offset: i64) -> String {
    if offset < 0 {
        format!("var_{:X}", offset.unsigned_abs())
    } else {
        format!("arg_{offset:X}")
    }
}

/// Assembles the table: items grouped per section with uninitialized runs
/// merged, stack variables, and one substitution per resolved operand.
pub fn build_table(
    referenced: &ReferencedSet,
    stack_vars: &[StackVariable],
    instructions: &[Instruction],
    image: &BinaryImage,
) -> DataMappingTable {
    let mut per_section: Vec<(String, Vec<DataItem>)> = Vec::new();
    let order: Vec<&str> = image.sections.iter().map(|s| s.name.as_str()).collect();
    let mut grouped: BTreeMap<usize, Vec<DataItem>> = BTreeMap::new();
    for r in referenced.items.values() {
        let idx = order.iter().position(|n| *n == r.item.section).unwrap_or(usize::MAX);
        grouped.entry(idx).or_default().push(r.item.clone());
    }
    for (_, mut items) in grouped {
        items.sort_by_key(|i| i.vaddr);
        let section = items[0].section.clone();
        let mut merged: Vec<DataItem> = Vec::with_capacity(items.len());
        for item in items {
            if let Some(prev) = merged.last_mut() {
                let mergeable = section.starts_with(".bss")
                    && prev.value == DataValue::Uninitialized
                    && item.value == DataValue::Uninitialized
                    && prev.size_class == item.size_class
                    && prev.end() == item.vaddr;
                if mergeable {
                    prev.count += item.count;
                    continue;
                }
            }
            merged.push(item);
        }
        per_section.push((section, merged));
    }

    let mut table = DataMappingTable { items: per_section, temp_vars: stack_vars.to_vec(), substitutions: Vec::new() };

    for r in &referenced.references {
        let Some(item) = table.item_at(r.address) else { continue };
        table.substitutions.push(Substitution {
            address: r.instruction,
            operand: r.operand.clone(),
            context: r.context.clone(),
            location: Some(format!("{}:{}", item.section, hexfmt::addr(r.address))),
            label: item.label.clone(),
        });
    }
    for ins in instructions {
        let Some(mem) = &ins.memory else { continue };
        let (Some(base), None) = (&mem.base, &mem.index) else { continue };
        if !is_frame_register(base) {
            continue;
        }
        if let Some(var) = table.temp_vars.iter().find(|v| v.frame_offset == mem.displacement) {
            table.substitutions.push(Substitution {
                address: ins.vaddr,
                operand: mem.text.clone(),
                context: None,
                location: None,
                label: var.label.clone(),
            });
        }
    }
    table.substitutions.sort_by(|a, b| (a.address, &a.operand).cmp(&(b.address, &b.operand)));
    table
}

/// Canonical compact JSON: one object per populated section, then
/// `"temp vars"`; an empty table renders as `{}`.
pub fn serialize_table(table: &DataMappingTable) -> String {
    let q = |s: &str| serde_json::to_string(s).expect("string serialization is infallible");
    let mut parts: Vec<String> = Vec::new();
    for (section, items) in &table.items {
        if items.is_empty() {
            continue;
        }
        let body: Vec<String> = items
            .iter()
            .map(|i| format!("{}:{}", q(&hexfmt::addr(i.vaddr)), q(&i.render())))
            .collect();
        parts.push(format!("{}:{{{}}}", q(section), body.join(",")));
    }
    if !table.temp_vars.is_empty() {
        // Widest width per offset.
        let mut widest: BTreeMap<i64, SizeClass> = BTreeMap::new();
        for v in &table.temp_vars {
            let e = widest.entry(v.frame_offset).or_insert(v.size_class);
            *e = (*e).max(v.size_class);
        }
        let body: Vec<String> = widest
            .iter()
            .map(|(off, class)| format!("{}:{}", q(&hexfmt::signed(*off)), q(class.name())))
            .collect();
        parts.push(format!("{}:{{{}}}", q("temp vars"), body.join(",")));
    }
    format!("{{{}}}", parts.join(","))
}

/// Full data-map pipeline for one function.
pub fn build_data_map(
    image: &BinaryImage,
    pool: &CandidatePool,
    instructions: &[Instruction],
    window: u64,
) -> (DataMappingTable, Vec<Diagnostic>) {
    let referenced = cross_reference(instructions, pool, image);
    let expanded = proximity_expand(&referenced, pool, window);
    let stack = extract_stack_vars(instructions);
    let table = build_table(&expanded, &stack, instructions, image);
    (table, expanded.diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binary::{Section, SectionFlags};
    use crate::cfg::{decode_bytes, CfClass, MemoryOperand};

    fn data_sec(name: &str, vaddr: u64, contents: Vec<u8>, size: u64) -> Section {
        Section {
            name: name.into(),
            vaddr,
            size,
            flags: SectionFlags { alloc: true, exec: false, write: name != ".rodata" },
            contents,
        }
    }

    fn image_with(text: Vec<u8>, sections: Vec<Section>, arch: Architecture) -> BinaryImage {
        let mut all = vec![Section {
            name: ".text".into(),
            vaddr: 0x4700,
            size: text.len() as u64,
            flags: SectionFlags { alloc: true, exec: true, write: false },
            contents: text,
        }];
        all.extend(sections);
        BinaryImage {
            architecture: arch,
            sections: all,
            symbols: vec![],
            imports: vec![],
            position_independent: arch == Architecture::X86_64,
            origin_path: "mem".into(),
        }
    }

    fn mem_ins(vaddr: u64, base: &str, disp: i64, width: Option<u32>) -> Instruction {
        Instruction {
            vaddr,
            byte_len: 3,
            mnemonic: "mov".into(),
            operands: String::new(),
            cf_class: CfClass::Sequential,
            static_target: None,
            memory: Some(MemoryOperand {
                text: if disp < 0 { format!("[{base}-0x{:x}]", -disp) } else { format!("[{base}+0x{disp:x}]") },
                base: Some(base.into()),
                index: None,
                scale: 1,
                displacement: disp,
                rip_relative: false,
                width,
            }),
            immediate: None,
        }
    }

    #[test]
    fn string_detection_rules() {
        assert_eq!(detect_string(&[0x00], 0), None);
        assert_eq!(detect_string(b"hi\0", 0).as_deref(), Some("hi"));
        assert_eq!(detect_string(b"h\0", 0), None);
        assert_eq!(detect_string(b"hi", 0), None, "unterminated");
        assert_eq!(detect_string(b"hi\x01\0", 0), None);
        let lit = b"xxNot enough money to buy this item!\0";
        assert_eq!(detect_string(lit, 2).as_deref(), Some("Not enough money to buy this item!"));
    }

    #[test]
    fn rip_relative_reference_resolves_into_bss() {
        // mov eax, [rip+0x3fa29] at 0x4723; next ip 0x4729 -> 0x44152
        let mut text = vec![0x90; 0x23];
        text.extend_from_slice(&[0x8b, 0x05, 0x29, 0xfa, 0x03, 0x00, 0xc3]);
        let img = image_with(text, vec![data_sec(".bss", 0x44150, vec![], 0x10)], Architecture::X86_64);
        let pool = collect_candidate_data(&img);
        let sec = img.section(".text").unwrap();
        let ins = decode_bytes(img.architecture, &sec.contents, sec.vaddr).unwrap();
        let set = cross_reference(&ins, &pool, &img);
        assert_eq!(set.references[0].address, 0x44152);
        assert_eq!(set.references[0].context.as_deref(), Some("rip=0x4729"));
        let table = build_table(&set, &[], &ins, &img);
        assert_eq!(table.substitutions[0].chain(), "[rip+0x3fa29](rip=0x4729) -> .bss:0x44152");
        assert_eq!(serialize_table(&table), r#"{".bss":{"0x44152":"dword:1,?"}}"#);
    }

    #[test]
    fn register_only_function_has_no_references() {
        let text = vec![0x89, 0xf8, 0x01, 0xf0, 0xc3]; // mov eax, edi; add eax, esi; ret
        let img = image_with(text, vec![data_sec(".data", 0x6000, vec![1, 0, 0, 0], 4)], Architecture::X86_64);
        let pool = collect_candidate_data(&img);
        let sec = img.section(".text").unwrap();
        let ins = decode_bytes(img.architecture, &sec.contents, sec.vaddr).unwrap();
        assert!(cross_reference(&ins, &pool, &img).is_empty());
        assert!(extract_stack_vars(&ins).is_empty());
    }

    #[test]
    fn no_data_sections_means_empty_pool() {
        let img = image_with(vec![0xc3], vec![], Architecture::X86_64);
        assert!(collect_candidate_data(&img).is_empty());
    }

    #[test]
    fn bss_runs_merge_and_render_with_count() {
        // four dword loads from consecutive .bss addresses (32-bit absolute)
        let mut text = Vec::new();
        for i in 0..4u32 {
            text.push(0xa1);
            text.extend_from_slice(&(0x804a020 + 4 * i).to_le_bytes());
        }
        text.push(0xc3);
        let img = image_with(text, vec![data_sec(".bss", 0x804a020, vec![], 16)], Architecture::X86);
        let pool = collect_candidate_data(&img);
        let sec = img.section(".text").unwrap();
        let ins = decode_bytes(img.architecture, &sec.contents, sec.vaddr).unwrap();
        let set = cross_reference(&ins, &pool, &img);
        assert_eq!(set.len(), 4);
        let table = build_table(&set, &[], &ins, &img);
        assert_eq!(serialize_table(&table), r#"{".bss":{"0x804A020":"dword:4,?"}}"#);
        let labels = table.labels();
        assert!(table.substitutions.iter().all(|s| labels.contains(s.label.as_str())));
    }

    #[test]
    fn proximity_pulls_array_neighbours_only_within_section() {
        // float arr[3] = {1,2,3} in .rodata, only arr[0] is loaded; a .data
        // dword sits right after but in another section.
        let mut ro = Vec::new();
        for f in [1.0f32, 2.0, 3.0] {
            ro.extend_from_slice(&f.to_bits().to_le_bytes());
        }
        // movss xmm0, dword ptr [0x5000]
        let text = vec![0xf3, 0x0f, 0x10, 0x05, 0x00, 0x50, 0x00, 0x00, 0xc3];
        let img = image_with(
            text,
            vec![data_sec(".rodata", 0x5000, ro, 12), data_sec(".data", 0x500c, vec![7, 0, 0, 0], 4)],
            Architecture::X86,
        );
        let pool = collect_candidate_data(&img);
        let sec = img.section(".text").unwrap();
        let ins = decode_bytes(img.architecture, &sec.contents, sec.vaddr).unwrap();
        let set = cross_reference(&ins, &pool, &img);
        assert_eq!(set.len(), 1);
        assert_eq!(proximity_expand(&set, &pool, 0).items, set.items);
        let grown = proximity_expand(&set, &pool, 64);
        let addrs: Vec<u64> = grown.items.keys().copied().collect();
        assert_eq!(addrs, vec![0x5000, 0x5004, 0x5008]);
        assert!(grown.items.values().all(|r| r.item.size_class == SizeClass::Dword));
        let again = proximity_expand(&grown, &pool, 64);
        assert_eq!(again.items, grown.items);
    }

    #[test]
    fn string_items_render_quoted() {
        let ro = b"hello, world\0".to_vec();
        // lea-like immediate reference in non-PIE 32-bit code: push 0x5000
        let text = vec![0x68, 0x00, 0x50, 0x00, 0x00, 0xc3];
        let img = image_with(text, vec![data_sec(".rodata", 0x5000, ro, 13)], Architecture::X86);
        let pool = collect_candidate_data(&img);
        let sec = img.section(".text").unwrap();
        let ins = decode_bytes(img.architecture, &sec.contents, sec.vaddr).unwrap();
        let set = cross_reference(&ins, &pool, &img);
        let item = &set.items[&0x5000].item;
        assert_eq!(item.value, DataValue::String("hello, world".into()));
        let table = build_table(&set, &[], &ins, &img);
        assert_eq!(serialize_table(&table), r#"{".rodata":{"0x5000":"byte:13,\"hello, world\""}}"#);
    }

    #[test]
    fn stack_slots_and_conflicts() {
        let ins = vec![
            mem_ins(0x10, "rbp", -4, Some(4)),
            mem_ins(0x13, "rbp", -4, Some(4)),
            mem_ins(0x16, "rbp", -8, Some(8)),
            mem_ins(0x19, "rbp", -8, Some(1)),
            mem_ins(0x1c, "rbp", -0x10, None),
        ];
        let vars = extract_stack_vars(&ins);
        assert_eq!(vars.len(), 3);
        assert_eq!(vars[2].frame_offset, -4);
        assert_eq!(vars[2].size_class, SizeClass::Dword);
        assert_eq!(vars[2].label, "var_4");
        assert!(!vars[2].conflicting);
        assert!(vars[0].conflicting && vars[1].conflicting);
        let table = DataMappingTable { temp_vars: vars, ..Default::default() };
        assert_eq!(serialize_table(&table), r#"{"temp vars":{"-0x8":"qword","-0x4":"dword"}}"#);
    }

    #[test]
    fn empty_table_serializes_to_braces() {
        assert_eq!(serialize_table(&DataMappingTable::default()), "{}");
    }
}
