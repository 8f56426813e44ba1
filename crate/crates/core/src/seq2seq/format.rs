//! Character-level source formatting and word-level targets.

pub const NORM_OPEN: &str = "<norm>";
pub const NORM_CLOSE: &str = "</norm>";

/// Up to `window` words on each side of `tokens[index]`, the target wrapped in
/// [`NORM_OPEN`]/[`NORM_CLOSE`], as one symbol per character. Words are
/// separated by a single `" "` symbol; the markers are single symbols.
///
/// Panics if `index` is out of bounds.
pub fn format_input<S: AsRef<str>>(tokens: &[S], index: usize, window: usize) -> Vec<String> {
    assert!(
        index < tokens.len(),
        "target index {index} out of bounds for {} tokens",
        tokens.len()
    );
    let start = index.saturating_sub(window);
    let end = (index + window + 1).min(tokens.len());
    let mut out: Vec<String> = Vec::new();
    for (i, tok) in tokens.iter().enumerate().take(end).skip(start) {
        if !out.is_empty() {
            out.push(" ".into());
        }
        if i == index {
            out.push(NORM_OPEN.into());
            out.push(" ".into());
            out.extend(tok.as_ref().chars().map(String::from));
            out.push(" ".into());
            out.push(NORM_CLOSE.into());
        } else {
            out.extend(tok.as_ref().chars().map(String::from));
        }
    }
    out
}

/// The original target token: the characters strictly between the markers,
/// minus the single spaces that pad them.
pub fn target_of(symbols: &[String]) -> Option<String> {
    let open = symbols.iter().position(|s| s == NORM_OPEN)?;
    let close = symbols.iter().rposition(|s| s == NORM_CLOSE)?;
    if close < open + 2 {
        return None;
    }
    Some(symbols[open + 2..close - 1].concat())
}

/// Output words of an after-field.
pub fn output_words(after: &str) -> Vec<&str> {
    after.split_whitespace().collect()
}
