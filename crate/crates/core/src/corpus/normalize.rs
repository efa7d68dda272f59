use crate::text::collapse_whitespace;

/// Canonical "user does not care" value.
pub const DONTCARE: &str = "dontcare";

/// Literal used for absent slots in prompts, targets and generator outputs.
pub const NONE_VALUE: &str = "none";

/// Lowercase, trim and collapse whitespace. Returns `None` for values that
/// mean "absent" (`none`, `not mentioned`, empty); the caller drops the entry.
pub fn normalize_value(raw: &str) -> Option<String> {
    let v = collapse_whitespace(&raw.to_lowercase());
    match v.as_str() {
        "" | NONE_VALUE | "not mentioned" => None,
        "dont care" | "do not care" | "don't care" | DONTCARE => Some(DONTCARE.to_string()),
        _ => Some(v),
    }
}
