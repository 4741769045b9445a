use std::fmt;

use serde::{Deserialize, Serialize};

/// Token classes seen by the control-language monitor.
///
/// Five sentinels open, separate and close control blocks. Everything else in
/// the stream is [`TokenKind::Text`]; [`TokenKind::Eos`] ends generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Call,
    Intr,
    Trap,
    End,
    Head,
    Text,
    Eos,
}

impl TokenKind {
    pub const ALL: [TokenKind; 7] = [
        TokenKind::Call,
        TokenKind::Intr,
        TokenKind::Trap,
        TokenKind::End,
        TokenKind::Head,
        TokenKind::Text,
        TokenKind::Eos,
    ];

    pub const SENTINELS: [TokenKind; 5] = [
        TokenKind::Call,
        TokenKind::Intr,
        TokenKind::Trap,
        TokenKind::End,
        TokenKind::Head,
    ];

    /// Fixed surface form of a sentinel, `None` for `Text` and `Eos`.
    pub fn surface(self) -> Option<&'static str> {
        match self {
            TokenKind::Call => Some("[CALL]"),
            TokenKind::Intr => Some("[INTR]"),
            TokenKind::Trap => Some("[TRAP]"),
            TokenKind::End => Some("[END]"),
            TokenKind::Head => Some("[HEAD]"),
            TokenKind::Text | TokenKind::Eos => None,
        }
    }

    pub fn is_sentinel(self) -> bool {
        self.surface().is_some()
    }

    /// Opens a control block.
    pub fn is_opener(self) -> bool {
        matches!(self, TokenKind::Call | TokenKind::Intr | TokenKind::Trap)
    }

    pub(crate) fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.surface() {
            Some(s) => f.write_str(s),
            None if *self == TokenKind::Text => f.write_str("text"),
            None => f.write_str("[EOS]"),
        }
    }
}

/// A single token: its class plus the text it carries (empty for sentinels).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub text: String,
}

impl Token {
    pub fn sentinel(kind: TokenKind) -> Self {
        debug_assert!(kind != TokenKind::Text);
        Token { kind, text: String::new() }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Token { kind: TokenKind::Text, text: text.into() }
    }

    pub fn eos() -> Self {
        Token::sentinel(TokenKind::Eos)
    }

    /// Surface rendering used when writing a token stream back out as text.
    pub fn surface(&self) -> &str {
        match self.kind.surface() {
            Some(s) => s,
            None if self.kind == TokenKind::Text => &self.text,
            None => "",
        }
    }
}

/// Which side produced a token. Only the system may open interrupt blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Model,
    System,
}

/// The set of token classes permitted at a parser state.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DecodeMask {
    bits: u8,
}

impl DecodeMask {
    pub const fn empty() -> Self {
        DecodeMask { bits: 0 }
    }

    pub fn of(kinds: &[TokenKind]) -> Self {
        kinds.iter().fold(Self::empty(), |m, k| m.with(*k))
    }

    pub fn with(self, kind: TokenKind) -> Self {
        DecodeMask { bits: self.bits | kind.bit() }
    }

    pub fn contains(&self, kind: TokenKind) -> bool {
        self.bits & kind.bit() != 0
    }

    pub fn iter(&self) -> impl Iterator<Item = TokenKind> + '_ {
        TokenKind::ALL.into_iter().filter(|k| self.contains(*k))
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }
}

impl fmt::Debug for DecodeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Identifiers follow variable naming rules: a letter or underscore, then
/// letters, digits or underscores.
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers() {
        for ok in ["job1", "_x", "A_9", "search_nearby"] {
            assert!(is_identifier(ok), "{ok}");
        }
        for bad in ["", "1job", "job-1", "a b", "é", "x.y"] {
            assert!(!is_identifier(bad), "{bad}");
        }
    }

    #[test]
    fn five_sentinels() {
        let forms: Vec<_> = TokenKind::ALL.iter().filter_map(|k| k.surface()).collect();
        assert_eq!(forms, ["[CALL]", "[INTR]", "[TRAP]", "[END]", "[HEAD]"]);
    }

    #[test]
    fn mask_set_ops() {
        let m = DecodeMask::of(&[TokenKind::Text, TokenKind::End]);
        assert_eq!(m.len(), 2);
        assert!(m.contains(TokenKind::End));
        assert!(!m.contains(TokenKind::Head));
        assert_eq!(m.iter().collect::<Vec<_>>(), vec![TokenKind::End, TokenKind::Text]);
    }
}
