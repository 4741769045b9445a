use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::token::{is_identifier, DecodeMask, Origin, Token, TokenKind};
use super::CmlError;

/// A completed control block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CmlBlock {
    FunctionCall {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        body: String,
    },
    Interrupt {
        id: String,
        value: String,
    },
    Trap,
}

impl CmlBlock {
    pub fn call(id: Option<&str>, body: impl Into<String>) -> Self {
        CmlBlock::FunctionCall { id: id.map(str::to_owned), body: body.into() }
    }

    pub fn interrupt(id: impl Into<String>, value: impl Into<String>) -> Self {
        CmlBlock::Interrupt { id: id.into(), value: value.into() }
    }

    pub fn id(&self) -> Option<&str> {
        match self {
            CmlBlock::FunctionCall { id, .. } => id.as_deref(),
            CmlBlock::Interrupt { id, .. } => Some(id),
            CmlBlock::Trap => None,
        }
    }

    /// Checks the block invariants that make its canonical encoding unambiguous.
    pub fn validate(&self) -> Result<(), CmlError> {
        match self {
            CmlBlock::FunctionCall { id, body } => {
                if let Some(id) = id {
                    check_identifier(id)?;
                }
                check_payload(body)?;
                if body.is_empty() {
                    return Err(CmlError::EmptyBody);
                }
                Ok(())
            }
            CmlBlock::Interrupt { id, value } => {
                check_identifier(id)?;
                check_payload(value)
            }
            CmlBlock::Trap => Ok(()),
        }
    }
}

fn check_identifier(id: &str) -> Result<(), CmlError> {
    if is_identifier(id) {
        Ok(())
    } else {
        Err(CmlError::IdentifierInvalid(id.to_owned()))
    }
}

fn check_payload(text: &str) -> Result<(), CmlError> {
    if text.trim() != text {
        return Err(CmlError::UntrimmedPayload(text.to_owned()));
    }
    if TokenKind::SENTINELS
        .iter()
        .filter_map(|k| k.surface())
        .any(|s| text.contains(s))
    {
        return Err(CmlError::ReservedSentinel(text.to_owned()));
    }
    Ok(())
}

/// Parser position inside the control-block grammar.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ParserState {
    #[default]
    Outside,
    /// After `[CALL]`: collected text becomes the id on `[HEAD]` or the body on `[END]`.
    CallCollect { text: String },
    CallBody { id: String, body: String },
    IntrExpectId { text: String },
    IntrExpectValue { id: String, value: String },
    TrapExpectEnd,
}

/// Payload-free view of [`ParserState`] for diagnostics and masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Outside,
    CallCollect,
    CallBody,
    IntrExpectId,
    IntrExpectValue,
    TrapExpectEnd,
}

impl StateKind {
    pub const ALL: [StateKind; 6] = [
        StateKind::Outside,
        StateKind::CallCollect,
        StateKind::CallBody,
        StateKind::IntrExpectId,
        StateKind::IntrExpectValue,
        StateKind::TrapExpectEnd,
    ];
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StateKind::Outside => "outside",
            StateKind::CallCollect => "call-collect",
            StateKind::CallBody => "call-body",
            StateKind::IntrExpectId => "intr-expect-id",
            StateKind::IntrExpectValue => "intr-expect-value",
            StateKind::TrapExpectEnd => "trap-expect-end",
        };
        f.write_str(s)
    }
}

/// Result of one successful transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fed {
    pub state: ParserState,
    pub block: Option<CmlBlock>,
    /// True while the successor state is inside a block.
    pub critical: bool,
}

impl ParserState {
    pub fn kind(&self) -> StateKind {
        match self {
            ParserState::Outside => StateKind::Outside,
            ParserState::CallCollect { .. } => StateKind::CallCollect,
            ParserState::CallBody { .. } => StateKind::CallBody,
            ParserState::IntrExpectId { .. } => StateKind::IntrExpectId,
            ParserState::IntrExpectValue { .. } => StateKind::IntrExpectValue,
            ParserState::TrapExpectEnd => StateKind::TrapExpectEnd,
        }
    }

    pub fn is_critical(&self) -> bool {
        !matches!(self, ParserState::Outside)
    }

    /// Tokens a model may sample next.
    pub fn decode_mask(&self) -> DecodeMask {
        decode_mask(self.kind())
    }

    /// Advances the FSM by one token.
    pub fn feed(self, token: &Token, origin: Origin) -> Result<Fed, CmlError> {
        let kind = token.kind;
        let injected_intr = kind == TokenKind::Intr
            && origin == Origin::System
            && matches!(self, ParserState::Outside);
        if !injected_intr && !self.decode_mask().contains(kind) {
            return Err(CmlError::SyntaxViolation { token: kind, state: self.kind() });
        }

        use ParserState::*;
        let (state, block) = match (self, kind) {
            (Outside, TokenKind::Call) => (CallCollect { text: String::new() }, None),
            (Outside, TokenKind::Intr) => (IntrExpectId { text: String::new() }, None),
            (Outside, TokenKind::Trap) => (TrapExpectEnd, None),
            (Outside, TokenKind::Text | TokenKind::Eos) => (Outside, None),

            (CallCollect { mut text }, TokenKind::Text) => {
                text.push_str(&token.text);
                (CallCollect { text }, None)
            }
            (CallCollect { text }, TokenKind::Head) => {
                let id = text.trim();
                check_identifier(id)?;
                (CallBody { id: id.to_owned(), body: String::new() }, None)
            }
            (CallCollect { text }, TokenKind::End) => {
                let body = non_empty_body(&text)?;
                (Outside, Some(CmlBlock::FunctionCall { id: None, body }))
            }

            (CallBody { id, mut body }, TokenKind::Text) => {
                body.push_str(&token.text);
                (CallBody { id, body }, None)
            }
            (CallBody { id, body }, TokenKind::End) => {
                let body = non_empty_body(&body)?;
                (Outside, Some(CmlBlock::FunctionCall { id: Some(id), body }))
            }

            (IntrExpectId { mut text }, TokenKind::Text) => {
                text.push_str(&token.text);
                (IntrExpectId { text }, None)
            }
            (IntrExpectId { text }, TokenKind::Head) => {
                let id = text.trim();
                check_identifier(id)?;
                (IntrExpectValue { id: id.to_owned(), value: String::new() }, None)
            }

            (IntrExpectValue { id, mut value }, TokenKind::Text) => {
                value.push_str(&token.text);
                (IntrExpectValue { id, value }, None)
            }
            (IntrExpectValue { id, value }, TokenKind::End) => {
                let value = value.trim().to_owned();
                (Outside, Some(CmlBlock::Interrupt { id, value }))
            }

            (TrapExpectEnd, TokenKind::End) => (Outside, Some(CmlBlock::Trap)),

            (state, kind) => {
                unreachable!("mask admitted {kind} in {}", state.kind())
            }
        };
        let critical = state.is_critical();
        Ok(Fed { state, block, critical })
    }
}

fn non_empty_body(text: &str) -> Result<String, CmlError> {
    let body = text.trim();
    if body.is_empty() {
        Err(CmlError::EmptyBody)
    } else {
        Ok(body.to_owned())
    }
}

/// Allowed token classes per parser state.
///
/// `Intr` never appears: interrupts are opened by the system, which bypasses
/// the mask (see [`ParserState::feed`]).
pub fn decode_mask(state: StateKind) -> DecodeMask {
    use TokenKind::*;
    match state {
        StateKind::Outside => DecodeMask::of(&[Text, Call, Trap, Eos]),
        StateKind::CallCollect => DecodeMask::of(&[Text, Head, End]),
        StateKind::CallBody => DecodeMask::of(&[Text, End]),
        StateKind::IntrExpectId => DecodeMask::of(&[Text, Head]),
        StateKind::IntrExpectValue => DecodeMask::of(&[Text, End]),
        StateKind::TrapExpectEnd => DecodeMask::of(&[End]),
    }
}

/// Canonical token sequence for a block.
pub fn serialize(block: &CmlBlock) -> Result<Vec<Token>, CmlError> {
    block.validate()?;
    let mut out = Vec::with_capacity(5);
    match block {
        CmlBlock::FunctionCall { id, body } => {
            out.push(Token::sentinel(TokenKind::Call));
            if let Some(id) = id {
                out.push(Token::text(id.clone()));
                out.push(Token::sentinel(TokenKind::Head));
            }
            out.push(Token::text(body.clone()));
        }
        CmlBlock::Interrupt { id, value } => {
            out.push(Token::sentinel(TokenKind::Intr));
            out.push(Token::text(id.clone()));
            out.push(Token::sentinel(TokenKind::Head));
            if !value.is_empty() {
                out.push(Token::text(value.clone()));
            }
        }
        CmlBlock::Trap => out.push(Token::sentinel(TokenKind::Trap)),
    }
    out.push(Token::sentinel(TokenKind::End));
    Ok(out)
}

/// Renders tokens in canonical text form: text segments are padded with one
/// space on each side, sentinels are written verbatim.
pub fn render(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        match t.kind {
            TokenKind::Text => {
                out.push(' ');
                out.push_str(&t.text);
                out.push(' ');
            }
            TokenKind::Eos => {}
            _ => out.push_str(t.surface()),
        }
    }
    out
}

impl fmt::Display for CmlBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serialize(self) {
            Ok(tokens) => f.write_str(&render(&tokens)),
            Err(_) => write!(f, "{self:?}"),
        }
    }
}

/// Checks that no two function calls in a session share an identifier.
/// Interrupts reuse their call's id and are not counted.
pub fn validate_unique_ids<'a, I>(blocks: I) -> Result<(), CmlError>
where
    I: IntoIterator<Item = &'a CmlBlock>,
{
    let mut seen = HashSet::new();
    for block in blocks {
        if let CmlBlock::FunctionCall { id: Some(id), .. } = block {
            if !seen.insert(id.as_str()) {
                return Err(CmlError::DuplicateId(id.clone()));
            }
        }
    }
    Ok(())
}

/// Stateful parser for one stream: wraps the FSM and enforces session-wide
/// call-id uniqueness.
#[derive(Debug, Clone, Default)]
pub struct Parser {
    state: ParserState,
    call_ids: HashSet<String>,
}

impl Parser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn state(&self) -> &ParserState {
        &self.state
    }

    pub fn is_critical(&self) -> bool {
        self.state.is_critical()
    }

    pub fn decode_mask(&self) -> DecodeMask {
        self.state.decode_mask()
    }

    /// Feeds one token. On error the parser state is left unchanged.
    pub fn feed(&mut self, token: &Token, origin: Origin) -> Result<Option<CmlBlock>, CmlError> {
        let fed = self.state.clone().feed(token, origin)?;
        if let Some(CmlBlock::FunctionCall { id: Some(id), .. }) = &fed.block {
            if self.call_ids.contains(id) {
                return Err(CmlError::DuplicateId(id.clone()));
            }
            self.call_ids.insert(id.clone());
        }
        self.state = fed.state;
        Ok(fed.block)
    }

    /// Feeds a whole sequence, collecting completed blocks.
    pub fn feed_all<'a, I>(&mut self, tokens: I, origin: Origin) -> Result<Vec<CmlBlock>, CmlError>
    where
        I: IntoIterator<Item = &'a Token>,
    {
        let mut blocks = Vec::new();
        for t in tokens {
            if let Some(b) = self.feed(t, origin)? {
                blocks.push(b);
            }
        }
        Ok(blocks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TokenKind::*;

    fn s(kind: TokenKind) -> Token {
        Token::sentinel(kind)
    }

    fn run(tokens: &[Token]) -> Result<(ParserState, Vec<(Option<CmlBlock>, bool)>), CmlError> {
        let mut state = ParserState::Outside;
        let mut out = Vec::new();
        for t in tokens {
            let fed = state.feed(t, Origin::Model)?;
            out.push((fed.block, fed.critical));
            state = fed.state;
        }
        Ok((state, out))
    }

    #[test]
    fn trap_block() {
        let (state, steps) = run(&[s(Trap), s(End)]).unwrap();
        assert_eq!(state, ParserState::Outside);
        assert_eq!(steps[0], (None, true));
        assert_eq!(steps[1], (Some(CmlBlock::Trap), false));
    }

    #[test]
    fn anonymous_call() {
        let (_, steps) = run(&[s(Call), Token::text("f()"), s(End)]).unwrap();
        assert_eq!(steps[2].0, Some(CmlBlock::call(None, "f()")));
    }

    #[test]
    fn call_with_id() {
        let toks = [s(Call), Token::text(" job1 "), s(Head), Token::text(" put(x) "), s(End)];
        let (state, steps) = run(&toks).unwrap();
        assert_eq!(state, ParserState::Outside);
        assert_eq!(steps[4].0, Some(CmlBlock::call(Some("job1"), "put(x)")));
        assert!(steps[..4].iter().all(|(b, c)| b.is_none() && *c));
    }

    #[test]
    fn body_split_across_text_tokens() {
        let toks = [s(Call), Token::text("a"), s(Head), Token::text("g(1,"), Token::text(" 2)"), s(End)];
        let (_, steps) = run(&toks).unwrap();
        assert_eq!(steps[5].0, Some(CmlBlock::call(Some("a"), "g(1, 2)")));
    }

    #[test]
    fn rejects_head_and_end_outside() {
        for k in [Head, End] {
            let err = ParserState::Outside.feed(&s(k), Origin::Model).unwrap_err();
            assert_eq!(err, CmlError::SyntaxViolation { token: k, state: StateKind::Outside });
        }
    }

    #[test]
    fn rejects_nested_openers() {
        for prefix in [vec![s(Call)], vec![s(Call), Token::text("a"), s(Head)], vec![s(Trap)]] {
            for opener in [Call, Intr, Trap] {
                let mut toks = prefix.clone();
                toks.push(s(opener));
                assert!(matches!(run(&toks), Err(CmlError::SyntaxViolation { .. })));
            }
        }
        // system-injected interrupts cannot nest either
        let st = ParserState::CallCollect { text: String::new() };
        assert!(st.feed(&s(Intr), Origin::System).is_err());
    }

    #[test]
    fn model_cannot_open_interrupt() {
        let err = ParserState::Outside.feed(&s(Intr), Origin::Model).unwrap_err();
        assert_eq!(err, CmlError::SyntaxViolation { token: Intr, state: StateKind::Outside });
        assert!(ParserState::Outside.feed(&s(Intr), Origin::System).is_ok());
    }

    #[test]
    fn bad_identifier_at_head() {
        let err = run(&[s(Call), Token::text("1bad"), s(Head)]).unwrap_err();
        assert_eq!(err, CmlError::IdentifierInvalid("1bad".into()));
    }

    #[test]
    fn interrupt_requires_head() {
        let mut st = ParserState::Outside.feed(&s(Intr), Origin::System).unwrap().state;
        st = st.feed(&Token::text("job1"), Origin::System).unwrap().state;
        assert!(matches!(
            st.feed(&s(End), Origin::System),
            Err(CmlError::SyntaxViolation { token: End, state: StateKind::IntrExpectId })
        ));
    }

    #[test]
    fn empty_call_body_rejected() {
        assert_eq!(run(&[s(Call), Token::text("  "), s(End)]).unwrap_err(), CmlError::EmptyBody);
    }

    #[test]
    fn masks() {
        assert_eq!(decode_mask(StateKind::Outside), DecodeMask::of(&[Text, Call, Trap, Eos]));
        assert_eq!(decode_mask(StateKind::TrapExpectEnd), DecodeMask::of(&[End]));
        assert_eq!(decode_mask(StateKind::CallCollect), DecodeMask::of(&[Text, Head, End]));
        assert_eq!(decode_mask(StateKind::CallBody), DecodeMask::of(&[Text, End]));
    }

    /// Enumerates every token class from a representative CallBody state and
    /// keeps the ones the transition function accepts.
    #[test]
    fn call_body_mask_matches_enumerated_transitions() {
        let st = ParserState::CallBody { id: "a".into(), body: "f()".into() };
        let accepted: Vec<_> = TokenKind::ALL
            .into_iter()
            .filter(|k| {
                let tok = if *k == Text { Token::text("x") } else { s(*k) };
                st.clone().feed(&tok, Origin::Model).is_ok()
            })
            .collect();
        assert_eq!(DecodeMask::of(&accepted), DecodeMask::of(&[Text, End]));
    }

    #[test]
    fn serialize_forms() {
        let intr = CmlBlock::interrupt("job1", "42");
        assert_eq!(render(&serialize(&intr).unwrap()), "[INTR] job1 [HEAD] 42 [END]");
        assert_eq!(render(&serialize(&CmlBlock::Trap).unwrap()), "[TRAP][END]");
        assert_eq!(render(&serialize(&CmlBlock::call(None, "x+1")).unwrap()), "[CALL] x+1 [END]");
        assert_eq!(CmlBlock::call(Some("job1"), "f()").to_string(), "[CALL] job1 [HEAD] f() [END]");
    }

    #[test]
    fn serialize_rejects_bad_id() {
        let err = serialize(&CmlBlock::call(Some("9x"), "f()")).unwrap_err();
        assert_eq!(err, CmlError::IdentifierInvalid("9x".into()));
        assert!(serialize(&CmlBlock::interrupt("a b", "v")).is_err());
    }

    #[test]
    fn unique_ids() {
        let c = |id: &str| CmlBlock::call(Some(id), "f()");
        assert_eq!(validate_unique_ids(&[c("job1"), c("job2")]), Ok(()));
        assert_eq!(
            validate_unique_ids(&[c("job1"), c("job1")]),
            Err(CmlError::DuplicateId("job1".into()))
        );
        let seq = [c("job1"), CmlBlock::interrupt("job1", "ok"), c("job1")];
        assert_eq!(validate_unique_ids(&seq), Err(CmlError::DuplicateId("job1".into())));
        let seq = [c("job1"), CmlBlock::interrupt("job1", "ok"), c("job2")];
        assert_eq!(validate_unique_ids(&seq), Ok(()));
    }

    #[test]
    fn session_parser_rejects_duplicate_call_ids() {
        let mut p = Parser::new();
        let call = serialize(&CmlBlock::call(Some("job1"), "f()")).unwrap();
        p.feed_all(&call, Origin::Model).unwrap();
        let intr = serialize(&CmlBlock::interrupt("job1", "1")).unwrap();
        p.feed_all(&intr, Origin::System).unwrap();
        assert_eq!(p.feed_all(&call, Origin::Model), Err(CmlError::DuplicateId("job1".into())));
    }
}
