/// `0x` followed by uppercase hex digits, as used for addresses in labels and table keys.
pub(crate) fn addr(value: u64) -> String {
    format!("0x{value:X}")
}

/// Signed offset rendered as `-0x4` / `0x10`.
pub(crate) fn signed(value: i64) -> String {
    if value < 0 {
        format!("-0x{:x}", value.unsigned_abs())
    } else {
        format!("0x{value:x}")
    }
}
