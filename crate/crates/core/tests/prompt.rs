mod common;

use binlift_core::datamap::{collect_candidate_data, DEFAULT_PROXIMITY_WINDOW};
use binlift_core::prompt::{extract_cfg_json, extract_data_map_json, TEMPLATE_VERSION};
use binlift_core::{
    analyze_function, build_prompt, load_image, resolve_functions, serialize_cfg, Bitness, OptLevel, PromptError,
    PromptOptions,
};
use common::build;
use proptest::prelude::*;

const TOY: &str = r#"
const char tag[] = "neg";
int sign(int x)
{
    if (x < 0)
        return tag[-x & 1];
    return 0;
}
int main(void) { return sign(-1); }
"#;

#[test]
fn embedded_sections_match_serializers_byte_for_byte() {
    for (bits, bitness) in [(32, Bitness::B32), (64, Bitness::B64)] {
        let b = build(TOY, bits, "-O0");
        let image = load_image(&b.exe).unwrap();
        let bounds = resolve_functions(&image, &["sign".into()], &[]).unwrap();
        let pool = collect_candidate_data(&image);
        let art = analyze_function(&image, &pool, &bounds[0], &bounds, DEFAULT_PROXIMITY_WINDOW).unwrap();
        let opts = PromptOptions::default();
        let p = build_prompt(&art.listing, &art.cfg_json, &art.table_json, bitness, OptLevel::O0, &opts).unwrap();
        assert_eq!(extract_cfg_json(&p.text), Some(serialize_cfg(&art.extraction.cfg).as_str()));
        assert_eq!(extract_data_map_json(&p.text), Some(art.table_json.as_str()));
        assert!(art.table_json.contains(r#"byte:4,\"neg\""#), "{bits}: {}\n{}", art.table_json, art.listing);
        assert_eq!(p.template_version, TEMPLATE_VERSION);

        let again = build_prompt(&art.listing, &art.cfg_json, &art.table_json, bitness, OptLevel::O0, &opts).unwrap();
        assert_eq!(p, again);

        let bare = PromptOptions { include_assembly: false, ..opts };
        let q = build_prompt(&art.listing, &art.cfg_json, &art.table_json, bitness, OptLevel::O0, &bare).unwrap();
        assert!(!q.text.contains("### Assembly") && q.text.len() < p.text.len());
        assert_eq!(extract_cfg_json(&q.text), extract_cfg_json(&p.text));
    }
}

#[test]
fn over_budget_is_rejected() {
    let opts = PromptOptions { token_budget: 10, ..Default::default() };
    let err = build_prompt("0x1000: ret", "{}", "{}", Bitness::B64, OptLevel::O1, &opts).unwrap_err();
    assert!(matches!(err, PromptError::PromptTooLong { budget: 10, .. }));
}

#[test]
fn malformed_inputs_are_rejected() {
    let o = PromptOptions::default();
    for (asm, cfg, map) in [("", "{}", "{}"), ("ret", "{", "{}"), ("ret", "{}", "{\n}")] {
        assert!(matches!(build_prompt(asm, cfg, map, Bitness::B32, OptLevel::O0, &o), Err(PromptError::InvalidInput(_))));
    }
}

fn json_object() -> impl Strategy<Value = String> {
    prop::collection::btree_map("[a-z0-9x]{1,8}", "[ -~]{0,12}", 0..6).prop_map(|m| serde_json::to_string(&m).unwrap())
}

proptest! {
    #[test]
    fn embedded_json_round_trips(cfg in json_object(), map in json_object(), asm in "0x[0-9a-f]{1,4}: [a-z ,]{0,30}") {
        let p = build_prompt(&asm, &cfg, &map, Bitness::B64, OptLevel::O3, &PromptOptions::default()).unwrap();
        prop_assert_eq!(extract_cfg_json(&p.text), Some(cfg.as_str()));
        prop_assert_eq!(extract_data_map_json(&p.text), Some(map.as_str()));
        prop_assert_eq!(p.token_estimate, p.text.chars().count().div_ceil(4));
    }
}
