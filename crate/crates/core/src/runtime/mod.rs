//! Session loop for asynchronous function calling.
//!
//! A [`Session`] pulls tokens from a [`TokenSource`], feeds them through the
//! control-markup FSM, dispatches completed calls to an [`Executor`] and
//! injects finished results from the [`InterruptQueue`] whenever the stream
//! is outside a block. Traps pause the source until the next interrupt,
//! with a KV-cache decision from [`handle_trap`].
//!
//! ```
//! use asyncall::corpus;
//! use asyncall::runtime::{run_graph, Mode, NextCall, SessionConfig};
//!
//! let (_, pasta) = corpus::builtin().into_iter().find(|(id, _)| id == "mixed_pasta").unwrap();
//! let t = run_graph(&pasta, NextCall::Lpt, &SessionConfig::default()).unwrap();
//! assert!(t.makespan_ms() > 0.0);
//! assert_eq!(SessionConfig::default().mode, Mode::Full);
//! ```

mod clock;
mod executor;
mod http;
mod queue;
mod source;
pub mod stub;
mod trap;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{Clock, VirtualClock, WallClock};
pub use executor::{
    outcome_value, CallRequest, Executor, Function, Job, JobHandle, JobStatus, Registry, StubFunction,
    ThreadExecutor, VirtualExecutor,
};
pub use http::{parse_sse_line, EndpointConfig, HttpSource, SseEvent};
pub use queue::{InterruptQueue, QueuedInterrupt};
pub use source::{split_body, user_task_id, NextCall, PolicySource, Pulled, ScriptSource, TokenSource, USER_PREFIX};
pub use trap::{handle_trap, TrapCostModel, TrapDecision};

use crate::cml::{serialize, CmlBlock, CmlError, Origin, Parser, Token, TokenKind};
use crate::taskmodel::TaskGraph;
use crate::Ms;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Cml(#[from] CmlError),
    #[error("trap with no pending jobs would wait forever")]
    NoPendingJobs,
    #[error("token source: {0}")]
    Source(String),
    #[error("endpoint: {0}")]
    Endpoint(String),
    #[error("session exceeded {0} steps")]
    StepLimit(usize),
}

/// A failed session with everything recorded up to the failure.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct SessionFailure {
    pub error: RuntimeError,
    pub transcript: Transcript,
}

/// `Full` keeps the source's state across interrupts; `Naive` restarts it
/// over the whole context after every injection, paying TTFT each time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    Naive,
}

/// An interrupt delivered at a fixed time, e.g. a user adding a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledInterrupt {
    pub at_ms: Ms,
    pub id: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: Mode,
    /// Charged at session start and, in naive mode, at every restart.
    pub ttft_ms: Ms,
    pub trap_costs: TrapCostModel,
    /// Prompt length counted into the context size for trap decisions.
    pub prompt_tokens: u64,
    #[serde(default)]
    pub scheduled: Vec<ScheduledInterrupt>,
    pub max_steps: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            mode: Mode::Full,
            ttft_ms: 0.0,
            trap_costs: TrapCostModel::default(),
            prompt_tokens: 0,
            scheduled: Vec::new(),
            max_steps: 1_000_000,
        }
    }
}

/// Outcome of one decode step.
#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    TokenEmitted(Token),
    CallDetected(CmlBlock),
    TrapDetected,
    InterruptInjected(usize),
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    SessionStart,
    Token {
        token: TokenKind,
        #[serde(default, skip_serializing_if = "String::is_empty")]
        text: String,
        origin: Origin,
    },
    Call {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        body: String,
    },
    Dispatch {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        estimate_ms: Option<Ms>,
    },
    Trap,
    TrapDecision {
        decision: TrapDecision,
        context_tokens: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expected_wait_ms: Option<Ms>,
        swap_ms: Ms,
        recompute_ms: Ms,
    },
    Interrupt {
        id: String,
        value: String,
    },
    Restart,
    Error {
        message: String,
    },
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub t_ms: Ms,
    #[serde(flatten)]
    pub record: Record,
}

/// Timestamped log of a session, written as JSON Lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<Entry>,
}

/// Problems found by [`Transcript::audit`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("transcript does not re-parse: {0}")]
    Parse(CmlError),
    #[error("call {0:?} has {1} interrupts")]
    Unpaired(String, usize),
    #[error("interrupt {0:?} has no matching call")]
    Orphan(String),
}

/// Counts from a clean audit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Audit {
    pub calls: usize,
    pub interrupts: usize,
    pub traps: usize,
}

impl Transcript {
    fn push(&mut self, t_ms: Ms, record: Record) {
        self.entries.push(Entry { t_ms, record });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Transcript { entries })
    }

    /// Every token in stream order with its origin.
    pub fn tokens(&self) -> impl Iterator<Item = (Token, Origin)> + '_ {
        self.entries.iter().filter_map(|e| match &e.record {
            Record::Token { token, text, origin } => Some((Token { kind: *token, text: text.clone() }, *origin)),
            _ => None,
        })
    }

    pub fn makespan_ms(&self) -> Ms {
        self.entries.iter().rev().find(|e| e.record == Record::SessionEnd).map_or(0.0, |e| e.t_ms)
    }

    pub fn count(&self, pred: impl Fn(&Record) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.record)).count()
    }

    /// Re-parses the token stream from scratch and checks that every
    /// id-bearing call has exactly one interrupt and every interrupt other
    /// than a user task has a call.
    pub fn audit(&self) -> Result<Audit, AuditError> {
        let mut parser = Parser::new();
        let mut blocks = Vec::new();
        for (tok, origin) in self.tokens() {
            if let Some(b) = parser.feed(&tok, origin).map_err(AuditError::Parse)? {
                blocks.push(b);
            }
        }
        let mut answers: BTreeMap<String, usize> = BTreeMap::new();
        let mut audit = Audit::default();
        for b in &blocks {
            match b {
                CmlBlock::FunctionCall { id, .. } => {
                    audit.calls += 1;
                    if let Some(id) = id {
                        answers.insert(id.clone(), 0);
                    }
                }
                CmlBlock::Interrupt { id, .. } => {
                    audit.interrupts += 1;
                    if id.starts_with(USER_PREFIX) {
                        continue;
                    }
                    match answers.get_mut(id) {
                        Some(n) => *n += 1,
                        None => return Err(AuditError::Orphan(id.clone())),
                    }
                }
                CmlBlock::Trap => audit.traps += 1,
            }
        }
        if let Some((id, n)) = answers.into_iter().find(|(_, n)| *n != 1) {
            return Err(AuditError::Unpaired(id, n));
        }
        Ok(audit)
    }
}

/// Injects every queued interrupt, FIFO, as one batch, unless `critical`.
/// Returns what was injected.
pub fn drain_interrupts(
    queue: &InterruptQueue,
    critical: bool,
    source: &mut dyn TokenSource,
) -> Result<Vec<QueuedInterrupt>, RuntimeError> {
    if critical {
        return Ok(Vec::new());
    }
    let entries = queue.drain();
    if entries.is_empty() {
        return Ok(entries);
    }
    let mut tokens = Vec::new();
    for e in &entries {
        tokens.extend(serialize(&CmlBlock::interrupt(e.id.clone(), sanitize_value(&e.value)))?);
    }
    source.inject(&tokens)?;
    Ok(entries)
}

/// Makes a result safe to carry as an interrupt payload: sentinels are
/// defanged and the text trimmed.
pub fn sanitize_value(value: &str) -> String {
    let mut v = value.to_owned();
    for kind in TokenKind::SENTINELS {
        let s = kind.surface().expect("sentinels have a surface");
        v = v.replace(s, &s.replace('[', "(").replace(']', ")"));
    }
    v.trim().to_owned()
}

/// One running session. Borrow its parts, call [`Session::step`] until
/// [`SessionEvent::SessionEnd`], then take the transcript.
pub struct Session<'a> {
    source: &'a mut dyn TokenSource,
    executor: &'a mut dyn Executor,
    clock: &'a mut dyn Clock,
    registry: &'a Registry,
    config: SessionConfig,
    queue: InterruptQueue,
    parser: Parser,
    context: Vec<Token>,
    jobs: HashMap<String, JobHandle>,
    waiting: bool,
    trapped: bool,
    ended: bool,
    started: bool,
    transcript: Transcript,
}

impl<'a> Session<'a> {
    pub fn new(
        source: &'a mut dyn TokenSource,
        executor: &'a mut dyn Executor,
        clock: &'a mut dyn Clock,
        registry: &'a Registry,
        config: SessionConfig,
    ) -> Self {
        Session {
            source,
            executor,
            clock,
            registry,
            config,
            queue: InterruptQueue::new(),
            parser: Parser::new(),
            context: Vec::new(),
            jobs: HashMap::new(),
            waiting: false,
            trapped: false,
            ended: false,
            started: false,
            transcript: Transcript::default(),
        }
    }

    /// Handle for pushing interrupts from outside the loop.
    pub fn queue(&self) -> InterruptQueue {
        self.queue.clone()
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobHandle> {
        self.jobs.values()
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn into_transcript(self) -> Transcript {
        self.transcript
    }

    fn record(&mut self, record: Record) {
        let t = self.clock.now_ms();
        self.transcript.push(t, record);
    }

    fn start(&mut self) {
        self.started = true;
        for s in std::mem::take(&mut self.config.scheduled) {
            let entry = QueuedInterrupt { id: s.id, value: s.value, enqueued_at_ms: s.at_ms };
            self.executor.schedule(s.at_ms, entry, &self.queue);
        }
        self.clock.spend(self.config.ttft_ms);
        self.record(Record::SessionStart);
    }

    /// Runs one decode step and reports its single event.
    pub fn step(&mut self) -> Result<SessionEvent, RuntimeError> {
        if !self.started {
            self.start();
        }
        if self.ended {
            return Ok(SessionEvent::SessionEnd);
        }
        self.executor.poll(self.clock, &self.queue);
        if self.waiting && self.queue.is_empty() {
            self.executor.wait(self.clock, &self.queue);
        }
        if !self.parser.is_critical() && !self.queue.is_empty() {
            return self.inject();
        }
        if self.waiting {
            if self.trapped {
                return Err(RuntimeError::NoPendingJobs);
            }
            return Ok(self.end());
        }

        let pulled = self.source.next_token()?;
        self.clock.spend(pulled.cost_ms);
        let token = pulled.token;
        if token.kind == TokenKind::Eos {
            if self.parser.is_critical() {
                return Err(CmlError::SyntaxViolation { token: TokenKind::Eos, state: self.parser.state().kind() }.into());
            }
            if self.executor.outstanding() == 0 {
                return Ok(self.end());
            }
            self.waiting = true;
            return Ok(SessionEvent::TokenEmitted(token));
        }
        let block = self.parser.feed(&token, Origin::Model)?;
        self.record(Record::Token { token: token.kind, text: token.text.clone(), origin: Origin::Model });
        self.context.push(token.clone());
        match block {
            Some(CmlBlock::FunctionCall { id, body }) => {
                self.dispatch(id.as_deref(), &body);
                Ok(SessionEvent::CallDetected(CmlBlock::FunctionCall { id, body }))
            }
            Some(CmlBlock::Trap) => {
                self.trap()?;
                Ok(SessionEvent::TrapDetected)
            }
            Some(b @ CmlBlock::Interrupt { .. }) => unreachable!("model-origin interrupt {b:?} passed the mask"),
            None => Ok(SessionEvent::TokenEmitted(token)),
        }
    }

    fn end(&mut self) -> SessionEvent {
        self.ended = true;
        self.record(Record::SessionEnd);
        SessionEvent::SessionEnd
    }

    fn inject(&mut self) -> Result<SessionEvent, RuntimeError> {
        let entries = drain_interrupts(&self.queue, false, self.source)?;
        for e in &entries {
            let value = sanitize_value(&e.value);
            for tok in serialize(&CmlBlock::interrupt(e.id.clone(), value.clone()))? {
                self.parser.feed(&tok, Origin::System)?;
                self.record(Record::Token { token: tok.kind, text: tok.text.clone(), origin: Origin::System });
                self.context.push(tok);
            }
            self.record(Record::Interrupt { id: e.id.clone(), value: value.clone() });
            if let Some(job) = self.jobs.get_mut(&e.id) {
                job.status = match e.value.strip_prefix("error: ") {
                    Some(err) => JobStatus::Failed(err.to_owned()),
                    None => JobStatus::Done(value),
                };
            }
        }
        self.waiting = false;
        if self.trapped {
            self.trapped = false;
            self.source.resume();
        }
        if self.config.mode == Mode::Naive {
            self.record(Record::Restart);
            self.clock.spend(self.config.ttft_ms);
            self.source.restart(&self.context)?;
        }
        Ok(SessionEvent::InterruptInjected(entries.len()))
    }

    fn dispatch(&mut self, id: Option<&str>, body: &str) {
        let call = CallRequest::parse(id, body);
        self.record(Record::Call { id: call.id.clone(), body: call.body.clone() });
        let Some(function) = self.registry.get(&call.name) else {
            if let Some(id) = &call.id {
                let value = format!("error: unknown function {:?}", call.name);
                self.queue.push(QueuedInterrupt { id: id.clone(), value, enqueued_at_ms: self.clock.now_ms() });
            }
            return;
        };
        let estimate_ms = function.estimate_ms(&call);
        self.record(Record::Dispatch { id: call.id.clone(), name: call.name.clone(), estimate_ms });
        if let Some(id) = &call.id {
            self.jobs.insert(
                id.clone(),
                JobHandle {
                    id: id.clone(),
                    call_body: call.body.clone(),
                    dispatched_at_ms: self.clock.now_ms(),
                    estimate_ms,
                    status: JobStatus::Running,
                },
            );
        }
        self.executor.dispatch(Job { call, function }, self.clock, &self.queue);
    }

    fn trap(&mut self) -> Result<(), RuntimeError> {
        self.record(Record::Trap);
        if self.executor.outstanding() == 0 && self.queue.is_empty() {
            self.record(Record::Error { message: RuntimeError::NoPendingJobs.to_string() });
            return Err(RuntimeError::NoPendingJobs);
        }
        let now = self.clock.now_ms();
        let expected_wait_ms = if !self.queue.is_empty() {
            Some(0.0)
        } else {
            self.jobs
                .values()
                .filter(|j| j.status == JobStatus::Running)
                .filter_map(|j| j.estimate_ms.map(|e| (j.dispatched_at_ms + e - now).max(0.0)))
                .min_by(f64::total_cmp)
        };
        let n = self.config.prompt_tokens + self.context.len() as u64;
        let model = self.config.trap_costs;
        let decision = match expected_wait_ms {
            Some(w) => handle_trap(n, w, &model),
            None => TrapDecision::Retain,
        };
        self.record(Record::TrapDecision {
            decision,
            context_tokens: n,
            expected_wait_ms,
            swap_ms: model.swap_ms(n),
            recompute_ms: model.recompute_ms(n),
        });
        self.source.pause();
        self.trapped = true;
        self.waiting = true;
        Ok(())
    }

    /// Steps until the session ends.
    pub fn run(mut self) -> Result<Transcript, SessionFailure> {
        for _ in 0..self.config.max_steps {
            match self.step() {
                Ok(SessionEvent::SessionEnd) => return Ok(self.transcript),
                Ok(_) => {}
                Err(error) => {
                    if !matches!(self.transcript.entries.last().map(|e| &e.record), Some(Record::Error { .. })) {
                        self.record(Record::Error { message: error.to_string() });
                    }
                    return Err(SessionFailure { error, transcript: self.transcript });
                }
            }
        }
        let error = RuntimeError::StepLimit(self.config.max_steps);
        self.record(Record::Error { message: error.to_string() });
        Err(SessionFailure { error, transcript: self.transcript })
    }
}

/// Runs a session to completion.
pub fn run_session(
    source: &mut dyn TokenSource,
    executor: &mut dyn Executor,
    clock: &mut dyn Clock,
    registry: &Registry,
    config: SessionConfig,
) -> Result<Transcript, SessionFailure> {
    Session::new(source, executor, clock, registry, config).run()
}

/// Emulated model over `graph` with stub functions in virtual time.
pub fn run_graph(graph: &TaskGraph, next_call: NextCall, config: &SessionConfig) -> Result<Transcript, SessionFailure> {
    let mut source = PolicySource::new(graph.clone(), next_call);
    let registry = Registry::stubs([graph], false);
    run_session(&mut source, &mut VirtualExecutor::new(), &mut VirtualClock::new(), &registry, config.clone())
}
