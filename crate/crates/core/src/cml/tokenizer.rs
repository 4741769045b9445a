//! Splits raw text into sentinel and text tokens.
//!
//! Text from a streaming endpoint arrives in arbitrary chunks, so a sentinel
//! such as `[HEAD]` may be split across two deltas. [`StreamTokenizer`] holds
//! back any suffix that could still grow into a sentinel.

use super::token::{Token, TokenKind};

const SENTINELS: [TokenKind; 5] = TokenKind::SENTINELS;

#[derive(Debug, Default, Clone)]
pub struct StreamTokenizer {
    pending: String,
}

impl StreamTokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a chunk and returns every token that is now unambiguous.
    pub fn push(&mut self, chunk: &str) -> Vec<Token> {
        self.pending.push_str(chunk);
        let mut out = Vec::new();
        let mut text_start = 0;
        let mut i = 0;
        let bytes = self.pending.as_bytes();
        let mut hold_from = None;
        while i < bytes.len() {
            if bytes[i] != b'[' {
                i += 1;
                continue;
            }
            let rest = &self.pending[i..];
            if let Some(kind) = SENTINELS.iter().copied().find(|k| rest.starts_with(k.surface().unwrap())) {
                push_text(&mut out, &self.pending[text_start..i]);
                out.push(Token::sentinel(kind));
                i += kind.surface().unwrap().len();
                text_start = i;
            } else if SENTINELS.iter().any(|k| k.surface().unwrap().starts_with(rest)) {
                // could still become a sentinel once more text arrives
                hold_from = Some(i);
                break;
            } else {
                i += 1;
            }
        }
        let cut = hold_from.unwrap_or(self.pending.len());
        push_text(&mut out, &self.pending[text_start..cut]);
        self.pending.drain(..cut);
        out
    }

    /// Flushes held-back text at end of stream.
    pub fn finish(&mut self) -> Vec<Token> {
        let mut out = Vec::new();
        push_text(&mut out, &self.pending);
        self.pending.clear();
        out
    }
}

fn push_text(out: &mut Vec<Token>, text: &str) {
    if !text.is_empty() {
        out.push(Token::text(text));
    }
}

/// Tokenizes a complete text.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut t = StreamTokenizer::new();
    let mut out = t.push(text);
    out.extend(t.finish());
    out
}
