//! Control markup for asynchronous calls.
//!
//! Three block shapes travel through the token stream:
//!
//! ```text
//! [CALL] job1 [HEAD] put(x) [END]     function call with id
//! [CALL] f() [END]                    anonymous function call
//! [INTR] job1 [HEAD] 42 [END]         interrupt, injected by the system only
//! [TRAP][END]                         trap: pause until the next interrupt
//! ```
//!
//! The parser is an FSM over [`TokenKind`]. [`decode_mask`] exposes the
//! classes a model may sample at each state, which is what a constrained
//! decoder applies at every step. A state other than
//! [`ParserState::Outside`] is a critical section: interrupts wait until the
//! block closes.

mod parser;
mod token;
mod tokenizer;

pub use parser::{
    decode_mask, render, serialize, validate_unique_ids, CmlBlock, Fed, Parser, ParserState, StateKind,
};
pub use token::{is_identifier, DecodeMask, Origin, Token, TokenKind};
pub use tokenizer::{tokenize, StreamTokenizer};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CmlError {
    #[error("syntax violation: {token} not permitted in state {state}")]
    SyntaxViolation { token: TokenKind, state: StateKind },
    #[error("invalid identifier {0:?}")]
    IdentifierInvalid(String),
    #[error("function call body is empty")]
    EmptyBody,
    #[error("payload {0:?} contains a reserved sentinel")]
    ReservedSentinel(String),
    #[error("payload {0:?} has leading or trailing whitespace")]
    UntrimmedPayload(String),
    #[error("duplicate call identifier {0:?}")]
    DuplicateId(String),
}

/// Parses a complete text stream from the model's side, treating `[INTR]`
/// as system-injected. Returns every completed block in order.
pub fn parse_text(text: &str) -> Result<Vec<CmlBlock>, CmlError> {
    let mut parser = Parser::new();
    let mut blocks = Vec::new();
    for tok in tokenize(text) {
        let origin = if tok.kind == TokenKind::Intr { Origin::System } else { Origin::Model };
        if let Some(b) = parser.feed(&tok, origin)? {
            blocks.push(b);
        }
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_text_mixed_stream() {
        let text = "I'll look. [CALL] s [HEAD] search_nearby(\"florist\") [END] [CALL] p [HEAD] put(msg) [END]\
                    [TRAP][END][INTR] s [HEAD] [\"Rose Co\"] [END] ok [CALL] text(x) [END]";
        // a value containing brackets that are not sentinels
        let blocks = parse_text(text).unwrap();
        assert_eq!(blocks.len(), 5);
        assert_eq!(blocks[0], CmlBlock::call(Some("s"), "search_nearby(\"florist\")"));
        assert_eq!(blocks[2], CmlBlock::Trap);
        assert_eq!(blocks[3], CmlBlock::interrupt("s", "[\"Rose Co\"]"));
        assert_eq!(blocks[4], CmlBlock::call(None, "text(x)"));
    }

    #[test]
    fn parse_text_reports_violation() {
        assert!(matches!(parse_text("[END]"), Err(CmlError::SyntaxViolation { .. })));
    }

    pub(crate) fn arb_ident() -> impl Strategy<Value = String> {
        "[A-Za-z_][A-Za-z0-9_]{0,7}"
    }

    pub(crate) fn arb_payload() -> impl Strategy<Value = String> {
        "[a-z0-9(),.=\" +\\[\\]]{0,12}".prop_map(|s| s.trim().to_owned())
    }

    prop_compose! {
        pub(crate) fn arb_block()(
            pick in 0..4u8,
            id in arb_ident(),
            body in arb_payload().prop_filter("nonempty", |b| !b.is_empty()),
            value in arb_payload(),
        ) -> CmlBlock {
            match pick {
                0 => CmlBlock::call(None, body),
                1 => CmlBlock::call(Some(&id), body),
                2 => CmlBlock::interrupt(id, value),
                _ => CmlBlock::Trap,
            }
        }
    }

    proptest! {
        #[test]
        fn token_round_trip(block in arb_block()) {
            prop_assume!(block.validate().is_ok());
            let toks = serialize(&block).unwrap();
            let mut st = ParserState::Outside;
            let mut got = None;
            for t in &toks {
                let fed = st.feed(t, Origin::System).unwrap();
                st = fed.state;
                if fed.block.is_some() { got = fed.block; }
            }
            prop_assert_eq!(st, ParserState::Outside);
            prop_assert_eq!(got, Some(block));
        }

        #[test]
        fn text_round_trip(block in arb_block()) {
            prop_assume!(block.validate().is_ok());
            let text = render(&serialize(&block).unwrap());
            prop_assert_eq!(parse_text(&text).unwrap(), vec![block]);
        }
    }
}
