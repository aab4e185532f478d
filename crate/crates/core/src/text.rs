//! Small string helpers shared by tools and the server.

pub const TRUNCATION_MARKER: &str = "\n...[truncated]";

/// Longest prefix of `s` that fits in `max_bytes` and ends on a char boundary.
pub fn truncate_utf8(s: &str, max_bytes: usize) -> &str {
    if s.len() <= max_bytes {
        return s;
    }
    let mut end = max_bytes;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Caps `s` at `cap` bytes in total, marker included, when it is too long.
pub fn cap_with_marker(s: &str, cap: usize) -> String {
    if s.len() <= cap {
        return s.to_owned();
    }
    if cap < TRUNCATION_MARKER.len() {
        return truncate_utf8(s, cap).to_owned();
    }
    let mut out = truncate_utf8(s, cap - TRUNCATION_MARKER.len()).to_owned();
    out.push_str(TRUNCATION_MARKER);
    out
}

/// Text between the last `open` tag and the `close` tag that ends `s`.
pub fn between_last(s: &str, open: &str, close: &str) -> Option<String> {
    let body = s.strip_suffix(close)?;
    let start = body.rfind(open)? + open.len();
    Some(body[start..].to_owned())
}
