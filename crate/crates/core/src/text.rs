//! Prefix markers shared by example rendering, retrieval queries and model
//! prompts, plus the block splitter used to parse them back.
//!
//! Every piece of free text that ends up between markers is kept *clean*:
//! trimmed, with whitespace runs collapsed to a single space, and containing no
//! whitespace-delimited token equal to a marker. Under that invariant a
//! rendered string splits back into its parts byte-exactly.

use std::fmt;

use crate::error::{Error, Result};

/// Rendered in place of an empty system utterance (dialogue openings).
pub const EMPTY_SYSTEM: &str = "none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Marker {
    Example,
    Context,
    System,
    User,
    Slot,
    Value,
}

impl Marker {
    pub const ALL: [Marker; 6] = [
        Marker::Example,
        Marker::Context,
        Marker::System,
        Marker::User,
        Marker::Slot,
        Marker::Value,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Marker::Example => "[example]",
            Marker::Context => "[context]",
            Marker::System => "[system]",
            Marker::User => "[user]",
            Marker::Slot => "[slot]",
            Marker::Value => "[value]",
        }
    }

    pub fn from_token(token: &str) -> Option<Marker> {
        Marker::ALL.into_iter().find(|m| m.token() == token)
    }
}

impl fmt::Display for Marker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Trim and collapse internal whitespace runs to one space.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn contains_marker(s: &str) -> bool {
    s.split_whitespace().any(|t| Marker::from_token(t).is_some())
}

/// One `marker content` segment of a rendered string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block<'a> {
    pub marker: Marker,
    pub content: &'a str,
}

/// Split a rendered string into marker blocks. The string must start with a
/// marker; content is the text between one marker and the next, without the
/// single separating spaces.
pub fn split_blocks(s: &str) -> Result<Vec<Block<'_>>> {
    let mut blocks: Vec<Block<'_>> = Vec::new();
    let mut current: Option<(Marker, usize)> = None;
    let mut pos = 0usize;
    for token in s.split(' ') {
        let start = pos;
        pos += token.len() + 1;
        if let Some(marker) = Marker::from_token(token) {
            if let Some((m, content_start)) = current.take() {
                blocks.push(Block {
                    marker: m,
                    content: slice_content(s, content_start, start),
                });
            }
            current = Some((marker, (start + token.len() + 1).min(s.len())));
        } else if current.is_none() {
            return Err(Error::Prompt(format!(
                "expected a marker at the start, found {token:?}"
            )));
        }
    }
    if let Some((m, content_start)) = current {
        blocks.push(Block {
            marker: m,
            content: slice_content(s, content_start, s.len() + 1),
        });
    }
    Ok(blocks)
}

// `end` points one past the space that precedes the next marker.
fn slice_content(s: &str, start: usize, end: usize) -> &str {
    let end = end.saturating_sub(1).min(s.len());
    if start >= end {
        ""
    } else {
        &s[start..end]
    }
}

/// `[system] <sys> [user] <user>`, with the empty system sentinel applied.
pub fn render_turn(system: &str, user: &str) -> String {
    let system = if system.is_empty() { EMPTY_SYSTEM } else { system };
    format!(
        "{} {} {} {}",
        Marker::System,
        system,
        Marker::User,
        user
    )
}

/// Inverse of the sentinel rule in [`render_turn`].
pub fn system_from_rendered(s: &str) -> String {
    if s == EMPTY_SYSTEM {
        String::new()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_whitespace() {
        assert_eq!(collapse_whitespace("  a \t b\n\nc "), "a b c");
        assert_eq!(collapse_whitespace("   "), "");
    }

    #[test]
    fn marker_detection_is_token_based() {
        assert!(contains_marker("hello [user] there"));
        assert!(!contains_marker("hello[user]there"));
        assert!(!contains_marker("[users]"));
    }

    #[test]
    fn splits_blocks() {
        let blocks = split_blocks("[system] hi there [user] ok [slot] hotel-area").unwrap();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0].marker, Marker::System);
        assert_eq!(blocks[0].content, "hi there");
        assert_eq!(blocks[1].content, "ok");
        assert_eq!(blocks[2].marker, Marker::Slot);
        assert_eq!(blocks[2].content, "hotel-area");
    }

    #[test]
    fn empty_content_between_markers() {
        let blocks = split_blocks("[context] [system] a [user] b").unwrap();
        assert_eq!(blocks[0].marker, Marker::Context);
        assert_eq!(blocks[0].content, "");
        assert_eq!(blocks[1].content, "a");
    }

    #[test]
    fn trailing_marker_has_empty_content() {
        let blocks = split_blocks("[slot]").unwrap();
        assert_eq!(blocks, vec![Block { marker: Marker::Slot, content: "" }]);
    }

    #[test]
    fn rejects_leading_text() {
        assert!(split_blocks("hello [user] x").is_err());
    }

    #[test]
    fn empty_system_sentinel() {
        assert_eq!(render_turn("", "hi"), "[system] none [user] hi");
        assert_eq!(system_from_rendered("none"), "");
    }
}
