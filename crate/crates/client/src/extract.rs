//! Pulls C source out of a free-form completion.

const FENCE: &str = "```";

/// Words that may open a top-level C declaration.
const LEADERS: &[&str] = &[
    "int", "char", "void", "long", "short", "unsigned", "signed", "float", "double", "static", "const", "extern",
    "inline", "struct", "union", "enum", "typedef", "_Bool", "bool", "size_t", "ssize_t",
];

/// Source code from `completion`: the body of the first fenced block, or
/// failing that the stretch from the first line opening with a C type or
/// keyword to the last brace that closes its outermost block.
pub fn extract_code(completion: &str) -> Option<String> {
    if let Some(open) = completion.find(FENCE) {
        let after = &completion[open + FENCE.len()..];
        // The rest of the opening line is the info string.
        let body = after.find('\n').map_or("", |nl| &after[nl + 1..]);
        let body = body.find(FENCE).map_or(body, |close| &body[..close]);
        let body = body.trim_end();
        return (!body.trim().is_empty()).then(|| body.trim_start_matches('\n').to_string());
    }
    braced_region(completion)
}

fn opens_declaration(line: &str) -> bool {
    let first = line.trim_start().split(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).next().unwrap_or("");
    LEADERS.contains(&first) || first.starts_with("uint") || (first.starts_with("int") && first.ends_with("_t"))
}

fn braced_region(text: &str) -> Option<String> {
    let mut offset = 0;
    let start = text.split_inclusive('\n').find_map(|line| {
        let at = offset;
        offset += line.len();
        opens_declaration(line).then_some(at)
    })?;
    let end = last_balanced_close(&text[start..])?;
    Some(text[start..start + end].to_string())
}

/// Byte offset just past the final `}` that brings nesting back to zero,
/// ignoring braces inside literals and comments.
fn last_balanced_close(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let (mut depth, mut last, mut i) = (0usize, None, 0);
    while i < bytes.len() {
        match bytes[i] {
            b'"' | b'\'' => {
                let quote = bytes[i];
                i += 1;
                while i < bytes.len() && bytes[i] != quote && bytes[i] != b'\n' {
                    i += if bytes[i] == b'\\' { 2 } else { 1 };
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                i = text[i + 2..].find("*/").map_or(bytes.len(), |e| i + 2 + e + 1);
            }
            b'{' => depth += 1,
            b'}' => {
                if depth == 0 {
                    break;
                }
                depth -= 1;
                if depth == 0 {
                    last = Some(i + 1);
                }
            }
            _ => {}
        }
        i += 1;
    }
    last
}
