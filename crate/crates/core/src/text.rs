//! Unicode-scalar-value offsets.
//!
//! Every offset in the wire formats counts `char`s, never bytes or UTF-16
//! units.

/// Number of Unicode scalar values in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte index of the `idx`-th scalar value. `idx == char_len(s)` maps to
/// `s.len()`.
pub fn char_to_byte(s: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (byte, _) in s.char_indices() {
        if seen == idx {
            return Some(byte);
        }
        seen += 1;
    }
    (seen == idx).then_some(s.len())
}

/// Substring over the scalar-value range `[start, end)`.
pub fn slice_chars(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = char_to_byte(s, start)?;
    let b1 = b0 + char_to_byte(&s[b0..], end - start)?;
    Some(&s[b0..b1])
}

/// Scalar-value offset of a byte index that lies on a char boundary.
pub fn byte_to_char(s: &str, byte: usize) -> usize {
    s[..byte].chars().count()
}
