use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::RuntimeError;
use crate::cml::{tokenize, CmlBlock, Origin, Parser, Token, TokenKind};
use crate::taskmodel::{lpt_pick, TaskGraph};
use crate::Ms;

/// A token plus the generation time it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulled {
    pub token: Token,
    pub cost_ms: Ms,
}

/// Where the decode loop gets tokens from: a script, an emulated model or a
/// streaming endpoint.
pub trait TokenSource {
    /// Next token. [`TokenKind::Eos`] means the source has nothing to say
    /// until something is injected.
    fn next_token(&mut self) -> Result<Pulled, RuntimeError>;
    /// Appends system tokens to the context the source conditions on.
    fn inject(&mut self, tokens: &[Token]) -> Result<(), RuntimeError>;
    /// Starts a fresh session over the full `context`.
    fn restart(&mut self, context: &[Token]) -> Result<(), RuntimeError>;
    fn pause(&mut self) {}
    fn resume(&mut self) {}
}

/// Replays fixed model output, one token per `tpot_ms`, ignoring what is
/// injected.
#[derive(Debug, Clone)]
pub struct ScriptSource {
    tokens: VecDeque<Token>,
    tpot_ms: Ms,
    injected: Vec<Token>,
}

impl ScriptSource {
    pub fn new(tokens: Vec<Token>, tpot_ms: Ms) -> Self {
        ScriptSource { tokens: tokens.into(), tpot_ms, injected: Vec::new() }
    }

    pub fn from_text(text: &str, tpot_ms: Ms) -> Self {
        Self::new(tokenize(text).into_iter().filter(|t| t.kind != TokenKind::Eos).collect(), tpot_ms)
    }

    /// Everything injected so far, in order.
    pub fn injected(&self) -> &[Token] {
        &self.injected
    }
}

impl TokenSource for ScriptSource {
    fn next_token(&mut self) -> Result<Pulled, RuntimeError> {
        Ok(match self.tokens.pop_front() {
            Some(token) => Pulled { token, cost_ms: self.tpot_ms },
            None => Pulled { token: Token::eos(), cost_ms: 0.0 },
        })
    }

    fn inject(&mut self, tokens: &[Token]) -> Result<(), RuntimeError> {
        self.injected.extend_from_slice(tokens);
        Ok(())
    }

    fn restart(&mut self, _context: &[Token]) -> Result<(), RuntimeError> {
        Ok(())
    }
}

/// Interrupt ids starting with this announce a new user task.
pub const USER_PREFIX: &str = "user_";

/// Id of the interrupt announcing task `k`.
pub fn user_task_id(k: usize) -> String {
    format!("{USER_PREFIX}{k}")
}

/// How an emulated model picks among ready calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextCall {
    Lpt,
    Random { seed: u64 },
}

/// Emulated model that works through task graphs the way a fine-tuned
/// model is meant to: it calls ready functions in LPT order, emits a trap
/// when everything left is blocked, and stops when nothing is left to call.
///
/// It conditions only on its context. Results and user tasks are learned
/// from interrupt blocks, and `restart` rebuilds all state from the context
/// it is given.
#[derive(Debug, Clone)]
pub struct PolicySource {
    tasks: Vec<TaskGraph>,
    union: TaskGraph,
    task_of: HashMap<String, usize>,
    tpot_ms: Ms,
    next_call: NextCall,
    rng: ChaCha8Rng,
    parser: Parser,
    arrived: BTreeSet<usize>,
    emitted: HashSet<String>,
    done: HashSet<String>,
    trapped: bool,
    out: VecDeque<Token>,
}

impl PolicySource {
    pub fn new(graph: TaskGraph, next_call: NextCall) -> Self {
        Self::with_tasks(vec![graph], next_call).expect("a single graph is always a valid task list")
    }

    /// Task 0 is known from the prompt; task `k` becomes visible when an
    /// interrupt with id [`user_task_id`]`(k)` arrives. Token cost is the
    /// first task's `tpot_ms`.
    pub fn with_tasks(tasks: Vec<TaskGraph>, next_call: NextCall) -> Result<Self, RuntimeError> {
        let first = tasks.first().ok_or_else(|| RuntimeError::Source("no tasks".into()))?;
        let tpot_ms = first.tpot_ms();
        let union = TaskGraph::union(&tasks).map_err(|e| RuntimeError::Source(e.to_string()))?;
        if let Some(id) = union.ids().find(|id| id.starts_with(USER_PREFIX)) {
            return Err(RuntimeError::Source(format!("call id {id:?} uses the reserved {USER_PREFIX} prefix")));
        }
        let task_of = tasks
            .iter()
            .enumerate()
            .flat_map(|(k, g)| g.ids().map(move |id| (id.to_owned(), k)).collect::<Vec<_>>())
            .collect();
        let seed = match next_call {
            NextCall::Random { seed } => seed,
            NextCall::Lpt => 0,
        };
        Ok(PolicySource {
            tasks,
            union,
            task_of,
            tpot_ms,
            next_call,
            rng: ChaCha8Rng::seed_from_u64(seed),
            parser: Parser::new(),
            arrived: BTreeSet::from([0]),
            emitted: HashSet::new(),
            done: HashSet::new(),
            trapped: false,
            out: VecDeque::new(),
        })
    }

    pub fn with_tpot(mut self, tpot_ms: Ms) -> Self {
        self.tpot_ms = tpot_ms;
        self
    }

    pub fn tasks(&self) -> &[TaskGraph] {
        &self.tasks
    }

    fn observe(&mut self, token: &Token, origin: Origin) -> Result<(), RuntimeError> {
        match self.parser.feed(token, origin)? {
            Some(CmlBlock::FunctionCall { id: Some(id), .. }) => {
                self.emitted.insert(id);
            }
            Some(CmlBlock::Interrupt { id, .. }) => {
                self.trapped = false;
                match id.strip_prefix(USER_PREFIX).and_then(|k| k.parse::<usize>().ok()) {
                    Some(k) if k < self.tasks.len() => {
                        self.arrived.insert(k);
                    }
                    _ => {
                        self.done.insert(id);
                    }
                }
            }
            Some(CmlBlock::Trap) => self.trapped = true,
            _ => {}
        }
        Ok(())
    }

    fn visible(&self, id: &str) -> bool {
        self.arrived.contains(&self.task_of[id])
    }

    fn plan(&mut self) {
        let mut ready: Vec<&str> = self
            .union
            .nodes()
            .iter()
            .filter(|n| {
                self.visible(&n.id)
                    && !self.emitted.contains(&n.id)
                    && n.deps.iter().all(|d| self.done.contains(d))
            })
            .map(|n| n.id.as_str())
            .collect();
        ready.sort_unstable();
        let pick = match self.next_call {
            NextCall::Lpt => lpt_pick(&self.union, &ready),
            NextCall::Random { .. } => ready.choose(&mut self.rng).copied(),
        };
        if let Some(id) = pick {
            let node = self.union.node(id).expect("ready ids come from the graph");
            self.out.push_back(Token::sentinel(TokenKind::Call));
            self.out.push_back(Token::text(id));
            self.out.push_back(Token::sentinel(TokenKind::Head));
            for chunk in split_body(&node.call_body(), node.body_tokens as usize) {
                self.out.push_back(Token::text(chunk));
            }
            self.out.push_back(Token::sentinel(TokenKind::End));
            return;
        }
        let blocked = self.union.ids().any(|id| self.visible(id) && !self.emitted.contains(id));
        if blocked && !self.trapped {
            self.out.push_back(Token::sentinel(TokenKind::Trap));
            self.out.push_back(Token::sentinel(TokenKind::End));
        }
    }
}

impl TokenSource for PolicySource {
    fn next_token(&mut self) -> Result<Pulled, RuntimeError> {
        if self.out.is_empty() && self.parser.state().kind() == crate::cml::StateKind::Outside {
            self.plan();
        }
        match self.out.pop_front() {
            Some(token) => {
                self.observe(&token, Origin::Model)?;
                Ok(Pulled { token, cost_ms: self.tpot_ms })
            }
            None => Ok(Pulled { token: Token::eos(), cost_ms: 0.0 }),
        }
    }

    fn inject(&mut self, tokens: &[Token]) -> Result<(), RuntimeError> {
        for t in tokens {
            self.observe(t, Origin::System)?;
        }
        Ok(())
    }

    fn restart(&mut self, context: &[Token]) -> Result<(), RuntimeError> {
        self.parser = Parser::new();
        self.arrived = BTreeSet::from([0]);
        self.emitted.clear();
        self.done.clear();
        self.trapped = false;
        self.out.clear();
        for t in context {
            let origin = if t.kind == TokenKind::Intr { Origin::System } else { Origin::Model };
            self.observe(t, origin)?;
        }
        Ok(())
    }
}

/// Splits `body` into exactly `n` pieces of near-equal length. Pieces past
/// the end of a short body are empty.
pub fn split_body(body: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = body.chars().collect();
    let n = n.max(1);
    (0..n)
        .map(|i| {
            let (lo, hi) = (i * chars.len() / n, (i + 1) * chars.len() / n);
            chars[lo..hi].iter().collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface(tokens: &[Token]) -> String {
        tokens.iter().map(Token::surface).collect()
    }
    use crate::taskmodel::CallNode;

    fn drain(src: &mut dyn TokenSource) -> Vec<Token> {
        let mut out = Vec::new();
        loop {
            let t = src.next_token().unwrap().token;
            if t.kind == TokenKind::Eos {
                return out;
            }
            out.push(t);
        }
    }

    fn chain() -> TaskGraph {
        TaskGraph::new(
            1.0,
            vec![CallNode::new("a", "fa", 3, 100.0, &[]), CallNode::new("b", "fb", 2, 10.0, &["a"])],
        )
        .unwrap()
    }

    #[test]
    fn split_body_sizes() {
        assert_eq!(split_body("abcdef", 3), ["ab", "cd", "ef"]);
        assert_eq!(split_body("ab", 4), ["", "a", "", "b"]);
        assert_eq!(split_body("abc", 1), ["abc"]);
        assert_eq!(split_body("abcdefg", 3).concat(), "abcdefg");
    }

    #[test]
    fn script_replays_and_records_injections() {
        let mut s = ScriptSource::from_text("[CALL] f() [END]", 2.0);
        let first = s.next_token().unwrap();
        assert_eq!((first.token.kind, first.cost_ms), (TokenKind::Call, 2.0));
        s.inject(&[Token::text("x")]).unwrap();
        assert_eq!(drain(&mut s).len(), 2);
        assert_eq!(s.injected(), &[Token::text("x")]);
    }

    #[test]
    fn policy_source_chain_traps_then_continues() {
        let mut src = PolicySource::new(chain(), NextCall::Lpt);
        let out = drain(&mut src);
        assert_eq!(surface(&out), "[CALL]a[HEAD]fa()[END][TRAP][END]");
        // trapped: nothing more until an interrupt
        assert!(drain(&mut src).is_empty());
        src.inject(&crate::cml::serialize(&CmlBlock::interrupt("a", "fa ok")).unwrap()).unwrap();
        let out = drain(&mut src);
        assert_eq!(surface(&out), "[CALL]b[HEAD]fb()[END]");
    }

    #[test]
    fn restart_rebuilds_state_from_context() {
        let mut live = PolicySource::new(chain(), NextCall::Lpt);
        let mut context = drain(&mut live);
        context.extend(crate::cml::serialize(&CmlBlock::interrupt("a", "fa ok")).unwrap());
        let mut fresh = PolicySource::new(chain(), NextCall::Lpt);
        fresh.restart(&context).unwrap();
        live.inject(&context[context.len() - 5..]).unwrap();
        assert_eq!(drain(&mut fresh), drain(&mut live));
    }

    #[test]
    fn user_tasks_unlock_on_interrupt() {
        let t0 = TaskGraph::new(1.0, vec![CallNode::new("a", "fa", 1, 5.0, &[])]).unwrap();
        let t1 = TaskGraph::new(1.0, vec![CallNode::new("b", "fb", 1, 5.0, &[])]).unwrap();
        let mut src = PolicySource::with_tasks(vec![t0, t1], NextCall::Lpt).unwrap();
        assert_eq!(drain(&mut src).len(), 5);
        src.inject(&crate::cml::serialize(&CmlBlock::interrupt(user_task_id(1), "new task: fb")).unwrap()).unwrap();
        let out = drain(&mut src);
        assert_eq!(out[1], Token::text("b"));
    }

    #[test]
    fn reserved_prefix_rejected() {
        let g = TaskGraph::new(1.0, vec![CallNode::new("user_1", "f", 1, 5.0, &[])]).unwrap();
        assert!(PolicySource::with_tasks(vec![g], NextCall::Lpt).is_err());
    }
}
