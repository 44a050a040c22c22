//! Source fixes applied before compiling a bundle with `-m32`.

use std::borrow::Cow;
use std::sync::OnceLock;

use regex::Regex;

/// Bumped whenever [`PATTERNS`] changes; recorded in sample metadata.
pub const REWRITE_TABLE_VERSION: &str = "1";

/// (pattern, replacement) pairs for typedefs that bake in LP64 widths.
const PATTERNS: &[(&str, &str)] = &[
    (r"typedef\s+(?:unsigned\s+long|long\s+unsigned)(?:\s+int)?\s+size_t\s*;", "typedef unsigned int size_t;"),
    (r"typedef\s+(?:signed\s+)?long(?:\s+int)?\s+ssize_t\s*;", "typedef int ssize_t;"),
    (r"typedef\s+(?:signed\s+)?long(?:\s+int)?\s+ptrdiff_t\s*;", "typedef int ptrdiff_t;"),
    (r"typedef\s+(?:signed\s+)?long(?:\s+int)?\s+intptr_t\s*;", "typedef int intptr_t;"),
    (r"typedef\s+(?:unsigned\s+long|long\s+unsigned)(?:\s+int)?\s+uintptr_t\s*;", "typedef unsigned int uintptr_t;"),
    (r"typedef\s+(?:signed\s+)?long(?:\s+int)?\s+int64_t\s*;", "typedef long long int64_t;"),
    (r"typedef\s+(?:unsigned\s+long|long\s+unsigned)(?:\s+int)?\s+uint64_t\s*;", "typedef unsigned long long uint64_t;"),
];

fn compiled() -> &'static [(Regex, &'static str)] {
    static TABLE: OnceLock<Vec<(Regex, &'static str)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        PATTERNS
            .iter()
            .map(|(p, r)| (Regex::new(p).expect("rewrite pattern compiles"), *r))
            .collect()
    })
}

/// Applies the fixed rewrite table. Returns the input unchanged (borrowed)
/// when nothing matches.
pub fn rewrite_for_32bit(source: &str) -> Cow<'_, str> {
    let mut out = Cow::Borrowed(source);
    for (re, replacement) in compiled() {
        if re.is_match(&out) {
            out = Cow::Owned(re.replace_all(&out, *replacement).into_owned());
        }
    }
    out
}
