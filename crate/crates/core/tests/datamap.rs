mod common;

use binlift_core::datamap::{collect_candidate_data, serialize_table, DEFAULT_PROXIMITY_WINDOW};
use binlift_core::{
    analyze_function, load_image, resolve_functions, DataValue, FunctionArtifacts, FunctionOverride, SizeClass,
};
use common::{build, nm_symbol, stripped, Built};

const HELLO: &str = r#"
const char msg[] = "hello, world";

const char *get_msg(void)
{
    return msg;
}
int main(void) { return get_msg()[0]; }
"#;

const COUNTER: &str = r#"
int counter;

int bump(void)
{
    counter = counter + 1;
    return counter;
}
int main(void) { return bump(); }
"#;

/// Analyses `name` in the stripped build, using the unstripped symbol dump
/// for its boundary.
fn analyze_stripped(b: &Built, name: &str) -> FunctionArtifacts {
    let (addr, size) = nm_symbol(&b.exe, name).unwrap();
    let image = load_image(stripped(b)).unwrap();
    let bounds =
        resolve_functions(&image, &[name.into()], &[FunctionOverride::new(name, addr, Some(addr + size))]).unwrap();
    let pool = collect_candidate_data(&image);
    analyze_function(&image, &pool, &bounds[0], &bounds, DEFAULT_PROXIMITY_WINDOW).unwrap()
}

#[test]
fn string_literal_recovered_exactly() {
    for bits in [32, 64] {
        for opt in ["-O0", "-O2"] {
            let b = build(HELLO, bits, opt);
            let (addr, _) = nm_symbol(&b.exe, "msg").unwrap();
            let art = analyze_stripped(&b, "get_msg");
            let item = art.table.item_at(addr).unwrap_or_else(|| panic!("{bits}{opt}: no item at msg\n{}", art.table_json));
            assert_eq!(item.section, ".rodata");
            assert_eq!(item.vaddr, addr);
            assert_eq!(item.value, DataValue::String("hello, world".into()));
            assert_eq!(item.render(), "byte:13,\"hello, world\"");
            assert!(art.table_json.contains(&format!("\"0x{addr:X}\":\"byte:13,\\\"hello, world\\\"\"")));
        }
    }
}

#[test]
fn uninitialized_dword_renders_exactly() {
    for bits in [32, 64] {
        let b = build(COUNTER, bits, "-O0");
        let (addr, size) = nm_symbol(&b.exe, "counter").unwrap();
        assert_eq!(size, 4);
        let art = analyze_stripped(&b, "bump");
        let item = art.table.item_at(addr).unwrap();
        assert_eq!((item.section.as_str(), item.size_class, item.count), (".bss", SizeClass::Dword, 1), "{bits}: {}\n{}", art.table_json, art.listing);
        assert_eq!(item.render(), "dword:1,?");
        assert_eq!(art.table_json, format!("{{\".bss\":{{\"0x{addr:X}\":\"dword:1,?\"}}}}"));
    }
}

#[test]
fn rip_relative_access_resolves_to_symbol_address() {
    for opt in ["-O0", "-O1", "-O2"] {
        let b = build(COUNTER, 64, opt);
        let (addr, _) = nm_symbol(&b.exe, "counter").unwrap();
        let art = analyze_stripped(&b, "bump");
        let rip: Vec<_> = art.table.substitutions.iter().filter(|s| s.operand.contains("rip")).collect();
        assert!(!rip.is_empty(), "{opt}: no rip-relative operand\n{}", art.listing);
        for s in rip {
            assert_eq!(s.location.as_deref(), Some(format!(".bss:0x{addr:X}").as_str()), "{opt}");
            let ins = art.extraction.instructions.iter().find(|i| i.vaddr == s.address).unwrap();
            assert_eq!(s.context.as_deref(), Some(format!("rip=0x{:X}", ins.next_addr()).as_str()));
            assert!(s.chain().starts_with("[rip+"));
        }
    }
}

#[test]
fn symbol_names_label_items_when_present() {
    let b = build(COUNTER, 64, "-O0");
    let image = load_image(&b.exe).unwrap();
    let bounds = resolve_functions(&image, &["bump".into()], &[]).unwrap();
    let pool = collect_candidate_data(&image);
    let art = analyze_function(&image, &pool, &bounds[0], &bounds, DEFAULT_PROXIMITY_WINDOW).unwrap();
    assert!(art.table.substitutions.iter().all(|s| s.label == "counter"));
    assert!(art.listing.contains("-> counter"));
}

#[test]
fn stack_slots_at_o0() {
    let src = r#"
int frame(int a)
{
    int x = a * 2;
    long long y = x + 1;
    char c = (char)y;
    return x + (int)y + c;
}
int main(void) { return frame(1); }
"#;
    for bits in [32, 64] {
        let b = build(src, bits, "-O0");
        let art = analyze_stripped(&b, "frame");
        let sizes: Vec<SizeClass> = art.table.temp_vars.iter().filter(|v| v.frame_offset < 0).map(|v| v.size_class).collect();
        // A 32-bit frame holds `long long` as two dword halves.
        let wanted: &[SizeClass] =
            if bits == 64 { &[SizeClass::Dword, SizeClass::Qword, SizeClass::Byte] } else { &[SizeClass::Dword, SizeClass::Byte] };
        for &want in wanted {
            assert!(sizes.contains(&want), "{bits}: {:?} missing from {}", want, art.table_json);
        }
        assert!(art.table_json.contains("\"temp vars\":{"));
    }
}

#[test]
fn table_is_stable_and_proximity_idempotent() {
    let b = build(HELLO, 64, "-O2");
    let a = analyze_stripped(&b, "get_msg");
    let c = analyze_stripped(&b, "get_msg");
    assert_eq!(a.table_json, c.table_json);
    assert_eq!(serialize_table(&a.table), a.table_json);
}
