//! Virtual-time discrete-event simulation of the calling policies.
//!
//! Time is kept in integer ticks of 0.01 ms. Events that fall on the same
//! tick are ordered completion < injection < emission, then by insertion.
//!
//! * `Sync`: generate one call, wait for it, repeat.
//! * `SyncParallel`: generate every ready call as one bundle, run the bundle
//!   concurrently, wait for all of it.
//! * `AsyncLpt` / `AsyncRandom`: generate ready calls back to back, picking
//!   by LPT or uniformly; completions are injected between blocks; a trap is
//!   emitted when nothing is ready but calls remain.
//! * `AsyncNaive`: `AsyncLpt` on a stateless API, so every injection restarts
//!   the session and pays the TTFT again.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taskmodel::{with_random_exec, GraphError, TaskGraph};
use crate::Ms;

pub type Tick = i64;
pub const TICKS_PER_MS: Tick = 100;

pub fn to_ticks(ms: Ms) -> Tick {
    (ms * TICKS_PER_MS as f64).round() as Tick
}

pub fn to_ms(t: Tick) -> Ms {
    t as f64 / TICKS_PER_MS as f64
}

/// Tokens in the control wrapper of a call with id: `[CALL] id [HEAD] … [END]`.
pub const CALL_WRAPPER_TOKENS: u32 = 4;
/// Tokens in a trap: `[TRAP][END]`.
pub const TRAP_TOKENS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph has no calls")]
    EmptyGraph,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("arrival schedule must be nonempty with ascending times")]
    BadSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Sync,
    SyncParallel,
    AsyncLpt,
    AsyncRandom,
    AsyncNaive,
}

impl Policy {
    pub const ALL: [Policy; 5] =
        [Policy::Sync, Policy::SyncParallel, Policy::AsyncLpt, Policy::AsyncRandom, Policy::AsyncNaive];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Sync => "sync",
            Policy::SyncParallel => "sync-parallel",
            Policy::AsyncLpt => "async-lpt",
            Policy::AsyncRandom => "async-random",
            Policy::AsyncNaive => "async-naive",
        }
    }

    pub fn is_async(self) -> bool {
        matches!(self, Policy::AsyncLpt | Policy::AsyncRandom | Policy::AsyncNaive)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}; expected one of sync, sync-parallel, async-lpt, async-random, async-naive"))
    }
}

/// Token cost of an interrupt block: `fixed` sentinel/id tokens plus one
/// token per `chars_per_token` characters of value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptTokens {
    pub fixed: u32,
    pub chars_per_token: u32,
}

impl Default for InterruptTokens {
    fn default() -> Self {
        InterruptTokens { fixed: 4, chars_per_token: 4 }
    }
}

impl InterruptTokens {
    pub fn value_tokens(&self, value_len: usize) -> u32 {
        (value_len as u32).div_ceil(self.chars_per_token.max(1))
    }

    pub fn block_tokens(&self, value_len: usize) -> u32 {
        self.fixed + self.value_tokens(value_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: Policy,
    /// Overrides the graph's TPOT when set.
    pub tpot_ms: Option<Ms>,
    /// Charged at every session start, and at every restart under `AsyncNaive`.
    pub ttft_ms: Ms,
    pub seed: u64,
    pub interrupt_tokens: InterruptTokens,
    /// Charge generation time for call wrappers and traps. Off by default so
    /// that every policy generates the same number of timed tokens.
    pub charge_control_tokens: bool,
    /// Actual execution time is the estimate times this factor; policies only
    /// see the estimate.
    pub exec_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: Policy::AsyncLpt,
            tpot_ms: None,
            ttft_ms: 0.0,
            seed: 0,
            interrupt_tokens: InterruptTokens::default(),
            charge_control_tokens: false,
            exec_scale: 1.0,
        }
    }
}

impl SimConfig {
    pub fn with_policy(&self, policy: Policy) -> Self {
        SimConfig { policy, ..self.clone() }
    }

    fn validate(&self) -> Result<(), SimError> {
        if let Some(t) = self.tpot_ms {
            if !(t > 0.0) {
                return Err(SimError::InvalidConfig(format!("tpot_ms must be positive, got {t}")));
            }
        }
        if !(self.ttft_ms >= 0.0) {
            return Err(SimError::InvalidConfig(format!("ttft_ms must be non-negative, got {}", self.ttft_ms)));
        }
        if !(self.exec_scale > 0.0) {
            return Err(SimError::InvalidConfig("exec_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimEventKind {
    SessionStart,
    Arrival,
    CallGenerated,
    Complete,
    Inject,
    Trap,
    Restart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub t_ms: Ms,
    pub kind: SimEventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenCounts {
    pub generated: u64,
    pub injected: u64,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.generated + self.injected
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControlCounts {
    /// Call blocks wrapped in control tokens.
    pub calls: u32,
    /// Interrupt blocks injected (results and user tasks).
    pub interrupts: u32,
    pub traps: u32,
    pub restarts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: Policy,
    pub seed: u64,
    pub makespan_ms: Ms,
    pub sync_makespan_ms: Ms,
    pub speedup_vs_sync: f64,
    pub tokens: TokenCounts,
    pub tokens_total: u64,
    /// Extra context tokens compared with the `Sync` run of the same input.
    pub token_overhead: i64,
    pub control: ControlCounts,
    pub event_log: Vec<SimEvent>,
}

/// One task and when it enters the session.
#[derive(Debug, Clone)]
pub struct Arrival {
    pub at_ms: Ms,
    pub graph: TaskGraph,
}

struct Outcome {
    makespan: Tick,
    tokens: TokenCounts,
    control: ControlCounts,
    log: Vec<SimEvent>,
}

/// Simulates one graph under `config.policy`, plus a `Sync` baseline for the
/// speedup and token-overhead figures.
pub fn simulate(graph: &TaskGraph, config: &SimConfig) -> Result<SimReport, SimError> {
    simulate_arrivals(&[Arrival { at_ms: 0.0, graph: graph.clone() }], config)
}

/// Simulates tasks arriving over time. The first task is the session's
/// prompt; later ones reach a running async session as user interrupts, or
/// queue as sequential prompts under the sync policies. Makespan runs from
/// the first arrival to the last completion.
pub fn simulate_arrivals(schedule: &[Arrival], config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1].at_ms < w[0].at_ms) {
        return Err(SimError::BadSchedule);
    }
    if schedule.iter().any(|a| a.graph.is_empty()) {
        return Err(SimError::EmptyGraph);
    }
    let tasks = prepare(schedule, config)?;
    let run = |policy: Policy| -> Outcome {
        let mut cfg = config.clone();
        cfg.policy = policy;
        match policy {
            Policy::Sync | Policy::SyncParallel => run_sync(&tasks, &cfg),
            _ => AsyncSim::new(&tasks, &cfg).run(),
        }
    };
    let out = run(config.policy);
    let baseline = if config.policy == Policy::Sync {
        Outcome { makespan: out.makespan, tokens: out.tokens, control: out.control, log: Vec::new() }
    } else {
        run(Policy::Sync)
    };
    Ok(SimReport {
        policy: config.policy,
        seed: config.seed,
        makespan_ms: to_ms(out.makespan),
        sync_makespan_ms: to_ms(baseline.makespan),
        speedup_vs_sync: baseline.makespan as f64 / out.makespan as f64,
        tokens: out.tokens,
        tokens_total: out.tokens.total(),
        token_overhead: out.tokens.total() as i64 - baseline.tokens.total() as i64,
        control: out.control,
        event_log: out.log,
    })
}

struct Task {
    arrival: Tick,
    graph: TaskGraph,
    /// User-interrupt text announcing the task.
    description: String,
}

struct Tasks {
    list: Vec<Task>,
    /// Union of all task graphs, ids prefixed per task when there are several.
    union: TaskGraph,
    /// Position of each id in `union`.
    index: HashMap<String, usize>,
    /// Task of each union node, by position.
    task_of: Vec<usize>,
    /// Dependencies of each union node, by position.
    deps: Vec<Vec<usize>>,
    tpot: Tick,
    ttft: Tick,
}

fn prepare(schedule: &[Arrival], config: &SimConfig) -> Result<Tasks, SimError> {
    let tpot_ms = config.tpot_ms.unwrap_or_else(|| schedule[0].graph.tpot_ms());
    let multi = schedule.len() > 1;
    let mut list = Vec::with_capacity(schedule.len());
    for (k, a) in schedule.iter().enumerate() {
        let graph = if multi { a.graph.prefixed(&format!("t{k}_")) } else { a.graph.clone() };
        let graph = if graph.tpot_ms() == tpot_ms { graph } else { graph.with_tpot(tpot_ms)? };
        let names: Vec<&str> = graph.nodes().iter().map(|n| n.name.as_str()).collect();
        let description = format!("new task: {}", names.join(", "));
        list.push(Task { arrival: to_ticks(a.at_ms - schedule[0].at_ms), graph, description });
    }
    let union = match list.as_slice() {
        [only] => only.graph.clone(),
        _ => TaskGraph::union(&list.iter().map(|t| t.graph.clone()).collect::<Vec<_>>())?,
    };
    let index: HashMap<String, usize> = union.ids().enumerate().map(|(i, id)| (id.to_owned(), i)).collect();
    let task_of = list.iter().enumerate().flat_map(|(k, t)| std::iter::repeat_n(k, t.graph.len())).collect();
    let deps = union.nodes().iter().map(|n| n.deps.iter().map(|d| index[d]).collect()).collect();
    Ok(Tasks { list, union, index, task_of, deps, tpot: to_ticks(tpot_ms), ttft: to_ticks(config.ttft_ms) })
}

/// Result text a simulated function returns.
pub fn result_value(name: &str) -> String {
    format!("{name} ok")
}

fn exec_ticks(graph: &TaskGraph, id: &str, cfg: &SimConfig) -> Tick {
    to_ticks(graph.node(id).unwrap().exec_ms * cfg.exec_scale)
}

fn gen_ticks(tasks: &Tasks, id: &str) -> Tick {
    tasks.union.node(id).unwrap().body_tokens as Tick * tasks.tpot
}

fn ev(t: Tick, kind: SimEventKind, id: Option<&str>, count: Option<u32>) -> SimEvent {
    SimEvent { t_ms: to_ms(t), kind, id: id.map(str::to_owned), count }
}

fn run_sync(tasks: &Tasks, cfg: &SimConfig) -> Outcome {
    let itok = cfg.interrupt_tokens;
    let mut now: Tick = 0;
    let mut tokens = TokenCounts::default();
    let mut log = Vec::new();
    let mut offset = 0;
    for (k, task) in tasks.list.iter().enumerate() {
        if k > 0 {
            tokens.injected += itok.value_tokens(task.description.len()) as u64;
        }
        now = now.max(task.arrival) + tasks.ttft;
        log.push(ev(now, SimEventKind::SessionStart, None, None));
        let base = offset;
        offset += task.graph.len();
        let nodes = &tasks.union.nodes()[base..offset];
        let mut called = vec![false; nodes.len()];
        loop {
            let mut ready: Vec<usize> = (0..nodes.len())
                .filter(|&i| !called[i] && tasks.deps[base + i].iter().all(|&d| called[d - base]))
                .collect();
            if ready.is_empty() {
                break;
            }
            ready.sort_by(|&a, &c| nodes[c].exec_ms.total_cmp(&nodes[a].exec_ms).then(nodes[a].id.cmp(&nodes[c].id)));
            if cfg.policy == Policy::Sync {
                ready.truncate(1);
            }
            let bundle = ready;
            for &i in &bundle {
                now += nodes[i].body_tokens as Tick * tasks.tpot;
                tokens.generated += nodes[i].body_tokens as u64;
                log.push(ev(now, SimEventKind::CallGenerated, Some(&nodes[i].id), None));
                called[i] = true;
            }
            let start = now;
            for &i in &bundle {
                let done = start + to_ticks(nodes[i].exec_ms * cfg.exec_scale);
                log.push(ev(done, SimEventKind::Complete, Some(&nodes[i].id), None));
                now = now.max(done);
                tokens.injected += itok.value_tokens(result_value(&nodes[i].name).len()) as u64;
            }
            log.push(ev(now, SimEventKind::Inject, None, Some(bundle.len() as u32)));
        }
    }
    Outcome { makespan: now, tokens, control: ControlCounts::default(), log }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // variant order is the same-tick priority
    Complete(String),
    Arrival(usize),
    ModelFree,
}

impl Event {
    fn priority(&self) -> u8 {
        match self {
            Event::Complete(_) => 0,
            Event::Arrival(_) => 1,
            Event::ModelFree => 2,
        }
    }
}

enum Activity {
    Starting,
    /// Idle model woken by a completion or arrival; runs after every other
    /// event at the same tick so simultaneous results inject together.
    Waking,
    Generating(String),
    Trapping,
    Restarting,
}

enum Pending {
    Result(String),
    Arrival(usize),
}

struct AsyncSim<'a> {
    tasks: &'a Tasks,
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<(Tick, u8, u64, Event)>>,
    seq: u64,
    now: Tick,
    activity: Option<Activity>,
    interrupts: VecDeque<Pending>,
    arrived: Vec<bool>,
    model_done: Vec<bool>,
    dispatched: Vec<bool>,
    trapped: bool,
    tokens: TokenCounts,
    control: ControlCounts,
    log: Vec<SimEvent>,
}

impl<'a> AsyncSim<'a> {
    fn new(tasks: &'a Tasks, cfg: &'a SimConfig) -> Self {
        AsyncSim {
            tasks,
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            activity: None,
            interrupts: VecDeque::new(),
            arrived: vec![false; tasks.list.len()],
            model_done: vec![false; tasks.union.len()],
            dispatched: vec![false; tasks.union.len()],
            trapped: false,
            tokens: TokenCounts::default(),
            control: ControlCounts::default(),
            log: Vec::new(),
        }
    }

    fn schedule(&mut self, at: Tick, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse((at, event.priority(), self.seq, event)));
    }

    fn run(mut self) -> Outcome {
        self.arrived[0] = true;
        for (k, t) in self.tasks.list.iter().enumerate().skip(1) {
            self.schedule(t.arrival, Event::Arrival(k));
        }
        self.activity = Some(Activity::Starting);
        self.schedule(self.tasks.ttft, Event::ModelFree);
        let mut makespan = 0;
        while let Some(Reverse((t, _, _, event))) = self.queue.pop() {
            self.now = t;
            makespan = makespan.max(t);
            match event {
                Event::Complete(id) => {
                    self.log.push(ev(t, SimEventKind::Complete, Some(&id), None));
                    self.interrupts.push_back(Pending::Result(id));
                    self.wake();
                }
                Event::Arrival(k) => {
                    self.log.push(ev(t, SimEventKind::Arrival, None, Some(k as u32)));
                    self.interrupts.push_back(Pending::Arrival(k));
                    self.wake();
                }
                Event::ModelFree => {
                    match self.activity.take() {
                        Some(Activity::Starting) => {
                            self.log.push(ev(t, SimEventKind::SessionStart, None, None));
                        }
                        Some(Activity::Generating(id)) => {
                            self.log.push(ev(t, SimEventKind::CallGenerated, Some(&id), None));
                            let done = t + exec_ticks(&self.tasks.union, &id, self.cfg);
                            self.schedule(done, Event::Complete(id));
                        }
                        Some(Activity::Trapping | Activity::Restarting | Activity::Waking) | None => {}
                    }
                    self.model_step();
                }
            }
        }
        Outcome { makespan, tokens: self.tokens, control: self.control, log: self.log }
    }

    fn wake(&mut self) {
        if self.activity.is_none() {
            self.activity = Some(Activity::Waking);
            self.schedule(self.now, Event::ModelFree);
        }
    }

    /// The model is between blocks at `self.now`: inject queued interrupts,
    /// then emit the next call, a trap, or go idle.
    fn model_step(&mut self) {
        let now = self.now;
        let itok = self.cfg.interrupt_tokens;
        if !self.interrupts.is_empty() {
            let count = self.interrupts.len() as u32;
            for p in self.interrupts.drain(..) {
                let len = match p {
                    Pending::Result(id) => {
                        let len = result_value(&self.tasks.union.node(&id).unwrap().name).len();
                        self.model_done[self.tasks.index[&id]] = true;
                        len
                    }
                    Pending::Arrival(k) => {
                        self.arrived[k] = true;
                        self.tasks.list[k].description.len()
                    }
                };
                self.tokens.injected += itok.block_tokens(len) as u64;
            }
            self.control.interrupts += count;
            self.trapped = false;
            self.log.push(ev(now, SimEventKind::Inject, None, Some(count)));
            if self.cfg.policy == Policy::AsyncNaive {
                self.control.restarts += 1;
                self.log.push(ev(now, SimEventKind::Restart, None, None));
                self.activity = Some(Activity::Restarting);
                self.schedule(now + self.tasks.ttft, Event::ModelFree);
                return;
            }
        }

        let graph = &self.tasks.union;
        let nodes = graph.nodes();
        let mut ready: Vec<usize> = (0..nodes.len())
            .filter(|&i| {
                self.arrived[self.tasks.task_of[i]]
                    && !self.dispatched[i]
                    && self.tasks.deps[i].iter().all(|&d| self.model_done[d])
            })
            .collect();
        // LPT: largest estimate first, ties to the smallest id.
        let pick = match self.cfg.policy {
            Policy::AsyncRandom => {
                ready.sort_unstable_by(|&a, &b| nodes[a].id.cmp(&nodes[b].id));
                ready.choose(&mut self.rng).map(|&i| nodes[i].id.as_str())
            }
            _ => ready
                .iter()
                .copied()
                .min_by(|&a, &b| nodes[b].exec_ms.total_cmp(&nodes[a].exec_ms).then_with(|| nodes[a].id.cmp(&nodes[b].id)))
                .map(|i| nodes[i].id.as_str()),
        };
        let tpot = self.tasks.tpot;
        if let Some(id) = pick {
            let id = id.to_owned();
            let node = graph.node(&id).unwrap();
            let mut dur = gen_ticks(self.tasks, &id);
            if self.cfg.charge_control_tokens {
                dur += CALL_WRAPPER_TOKENS as Tick * tpot;
            }
            self.tokens.generated += (node.body_tokens + CALL_WRAPPER_TOKENS) as u64;
            self.control.calls += 1;
            self.dispatched[self.tasks.index[&id]] = true;
            self.activity = Some(Activity::Generating(id));
            self.schedule(now + dur, Event::ModelFree);
            return;
        }
        let pending = (0..graph.len()).any(|i| self.arrived[self.tasks.task_of[i]] && !self.dispatched[i]);
        if pending && !self.trapped {
            self.trapped = true;
            self.control.traps += 1;
            self.tokens.generated += TRAP_TOKENS as u64;
            self.log.push(ev(now, SimEventKind::Trap, None, None));
            if self.cfg.charge_control_tokens {
                self.activity = Some(Activity::Trapping);
                self.schedule(now + TRAP_TOKENS as Tick * tpot, Event::ModelFree);
            }
        }
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub graph_id: String,
    pub policy: Policy,
    pub seed: u64,
    pub makespan_ms: Ms,
    pub tokens_total: u64,
    pub speedup_vs_sync: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub graph_id: String,
    pub policy: Policy,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub base: SimConfig,
    /// When set, execution estimates are redrawn from `uniform(lo, hi)` per
    /// (graph, seed); every policy sees the same draw.
    pub exec_range: Option<(Ms, Ms)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<SweepFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub runs: usize,
    pub p10_ms: Ms,
    pub p50_ms: Ms,
    pub p90_ms: Ms,
    pub mean_ms: Ms,
    pub mean_speedup_vs_sync: f64,
}

/// The graph a sweep run simulates: `graph` with redrawn estimates when
/// `exec_range` is set.
pub fn sweep_instance(graph: &TaskGraph, spec: &SweepSpec, seed: u64) -> TaskGraph {
    match spec.exec_range {
        Some((lo, hi)) => with_random_exec(graph, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed)),
        None => graph.clone(),
    }
}

/// Runs every (graph, seed, policy) combination. Runs are independent and
/// evaluated in parallel; output order is deterministic.
pub fn sweep(corpus: &[(String, TaskGraph)], spec: &SweepSpec) -> SweepTable {
    let jobs: Vec<(&String, &TaskGraph, u64)> = corpus
        .iter()
        .flat_map(|(id, g)| spec.seeds.iter().map(move |&s| (id, g, s)))
        .collect();
    let results: Vec<Vec<Result<SweepRow, SweepFailure>>> = jobs
        .par_iter()
        .map(|&(id, g, seed)| {
            let instance = sweep_instance(g, spec, seed);
            spec.policies
                .iter()
                .map(|&policy| {
                    let cfg = SimConfig { policy, seed, ..spec.base.clone() };
                    simulate(&instance, &cfg)
                        .map(|r| SweepRow {
                            graph_id: id.clone(),
                            policy,
                            seed,
                            makespan_ms: r.makespan_ms,
                            tokens_total: r.tokens_total,
                            speedup_vs_sync: r.speedup_vs_sync,
                        })
                        .map_err(|e| SweepFailure { graph_id: id.clone(), policy, seed, error: e.to_string() })
                })
                .collect()
        })
        .collect();
    let mut table = SweepTable::default();
    for r in results.into_iter().flatten() {
        match r {
            Ok(row) => table.rows.push(row),
            Err(f) => table.failures.push(f),
        }
    }
    table
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(["graph_id", "policy", "seed", "makespan_ms", "tokens_total", "speedup_vs_sync"])
                .expect("in-memory write");
        }
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Per-policy P10/P50/P90 makespans (nearest rank).
    pub fn summary(&self) -> Vec<PolicySummary> {
        let mut out = Vec::new();
        for policy in Policy::ALL {
            let rows: Vec<&SweepRow> = self.rows.iter().filter(|r| r.policy == policy).collect();
            if rows.is_empty() {
                continue;
            }
            let mut ms: Vec<Ms> = rows.iter().map(|r| r.makespan_ms).collect();
            ms.sort_by(f64::total_cmp);
            let n = rows.len();
            out.push(PolicySummary {
                policy,
                runs: n,
                p10_ms: percentile(&ms, 10.0),
                p50_ms: percentile(&ms, 50.0),
                p90_ms: percentile(&ms, 90.0),
                mean_ms: ms.iter().sum::<Ms>() / n as f64,
                mean_speedup_vs_sync: rows.iter().map(|r| r.speedup_vs_sync).sum::<f64>() / n as f64,
            });
        }
        out
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{latency_async_lpt, latency_sync, latency_sync_parallel, IndependentSet};
    use crate::taskmodel::CallNode;

    fn independent(g_tokens: &[u32], execs: &[f64], tpot: f64) -> TaskGraph {
        let nodes = g_tokens
            .iter()
            .zip(execs)
            .enumerate()
            .map(|(i, (&b, &e))| CallNode::new(&format!("c{i}"), &format!("f{i}"), b, e, &[]))
            .collect();
        TaskGraph::new(tpot, nodes).unwrap()
    }

    fn run(g: &TaskGraph, policy: Policy) -> SimReport {
        simulate(g, &SimConfig { policy, ..Default::default() }).unwrap()
    }

    #[test]
    fn three_call_hand_example() {
        // Σ G = 30 (10 each), E = {50, 40, 10}
        let g = independent(&[10, 10, 10], &[50.0, 40.0, 10.0], 1.0);
        assert_eq!(run(&g, Policy::Sync).makespan_ms, 130.0);
        assert_eq!(run(&g, Policy::SyncParallel).makespan_ms, 80.0);
        let a = run(&g, Policy::AsyncLpt);
        assert_eq!(a.makespan_ms, 60.0);
        assert_eq!(a.sync_makespan_ms, 130.0);
        assert!((a.speedup_vs_sync - 130.0 / 60.0).abs() < 1e-12);
        let set = IndependentSet::from_pairs(&[(10.0, 50.0), (10.0, 40.0), (10.0, 10.0)]).unwrap();
        assert_eq!(a.makespan_ms, latency_async_lpt(&set));
        assert_eq!(run(&g, Policy::Sync).makespan_ms, latency_sync(&set));
        assert_eq!(run(&g, Policy::SyncParallel).makespan_ms, latency_sync_parallel(&set));
    }

    #[test]
    fn chain_traps_once_per_wait() {
        let g = TaskGraph::new(
            1.0,
            vec![CallNode::new("a", "fa", 10, 100.0, &[]), CallNode::new("b", "fb", 10, 50.0, &["a"])],
        )
        .unwrap();
        let r = run(&g, Policy::AsyncLpt);
        assert_eq!(r.control.traps, 1);
        assert_eq!(r.control.calls, 2);
        // a: gen 10, exec to 110; b: gen to 120, exec to 170
        assert_eq!(r.makespan_ms, 170.0);
        assert_eq!(run(&g, Policy::Sync).makespan_ms, 170.0);
    }

    #[test]
    fn naive_pays_ttft_per_injection() {
        let g = TaskGraph::new(
            1.0,
            vec![CallNode::new("a", "fa", 10, 100.0, &[]), CallNode::new("b", "fb", 10, 50.0, &["a"])],
        )
        .unwrap();
        let cfg = SimConfig { policy: Policy::AsyncNaive, ttft_ms: 30.0, ..Default::default() };
        let r = simulate(&g, &cfg).unwrap();
        // start 30; a generated 40, done 140; restart to 170; b generated 180, done 230; restart to 260
        assert_eq!(r.control.restarts, 2);
        assert_eq!(r.makespan_ms, 260.0);
        let lpt = simulate(&g, &SimConfig { policy: Policy::AsyncLpt, ttft_ms: 30.0, ..Default::default() }).unwrap();
        assert_eq!(lpt.makespan_ms, 200.0);
    }

    #[test]
    fn overhead_is_control_tokens() {
        let g = crate::corpus::builtin()[6].1.clone();
        for policy in [Policy::AsyncLpt, Policy::AsyncRandom, Policy::AsyncNaive] {
            let r = run(&g, policy);
            let c = r.control;
            let expected = CALL_WRAPPER_TOKENS * c.calls + 4 * c.interrupts + TRAP_TOKENS * c.traps;
            assert_eq!(r.token_overhead, expected as i64, "{policy}");
        }
        assert_eq!(run(&g, Policy::SyncParallel).token_overhead, 0);
    }

    #[test]
    fn same_seed_same_report() {
        let g = crate::corpus::builtin()[8].1.clone();
        let cfg = SimConfig { policy: Policy::AsyncRandom, seed: 17, ..Default::default() };
        assert_eq!(simulate(&g, &cfg).unwrap(), simulate(&g, &cfg).unwrap());
    }

    #[test]
    fn single_arrival_equals_simulate() {
        let g = crate::corpus::builtin()[5].1.clone();
        for policy in Policy::ALL {
            let cfg = SimConfig { policy, ttft_ms: 20.0, ..Default::default() };
            let a = simulate_arrivals(&[Arrival { at_ms: 0.0, graph: g.clone() }], &cfg).unwrap();
            assert_eq!(a, simulate(&g, &cfg).unwrap());
        }
    }

    #[test]
    fn arrival_during_call_block_waits_for_block_end() {
        // first task: one long call generated over [0, 100); second arrives at 30
        let first = TaskGraph::new(1.0, vec![CallNode::new("a", "fa", 100, 10.0, &[])]).unwrap();
        let second = TaskGraph::new(1.0, vec![CallNode::new("b", "fb", 5, 10.0, &[])]).unwrap();
        let sched = [Arrival { at_ms: 0.0, graph: first }, Arrival { at_ms: 30.0, graph: second }];
        let r = simulate_arrivals(&sched, &SimConfig::default()).unwrap();
        let arrival = r.event_log.iter().find(|e| e.kind == SimEventKind::Arrival).unwrap();
        let block_end = r.event_log.iter().find(|e| e.kind == SimEventKind::CallGenerated).unwrap();
        let inject = r.event_log.iter().find(|e| e.kind == SimEventKind::Inject).unwrap();
        assert_eq!(arrival.t_ms, 30.0);
        assert_eq!(block_end.t_ms, 100.0);
        assert!(inject.t_ms >= block_end.t_ms);
    }

    #[test]
    fn bad_inputs() {
        let g = independent(&[1], &[1.0], 1.0);
        let bad = SimConfig { tpot_ms: Some(0.0), ..Default::default() };
        assert!(matches!(simulate(&g, &bad), Err(SimError::InvalidConfig(_))));
        assert_eq!(simulate_arrivals(&[], &SimConfig::default()), Err(SimError::BadSchedule));
        let empty = TaskGraph::new(1.0, vec![]).unwrap();
        assert_eq!(simulate(&empty, &SimConfig::default()), Err(SimError::EmptyGraph));
    }

    #[test]
    fn empty_sweep() {
        let spec = SweepSpec { policies: Policy::ALL.to_vec(), seeds: vec![1], base: SimConfig::default(), exec_range: None };
        let t = sweep(&[], &spec);
        assert!(t.rows.is_empty() && t.failures.is_empty());
        assert_eq!(t.to_csv().trim(), "graph_id,policy,seed,makespan_ms,tokens_total,speedup_vs_sync");
        assert!(t.summary().is_empty());
    }

    #[test]
    fn sweep_csv_and_summary() {
        let corpus: Vec<(String, TaskGraph)> = crate::corpus::builtin().into_iter().take(2).collect();
        let spec = SweepSpec {
            policies: vec![Policy::Sync, Policy::AsyncLpt],
            seeds: vec![1, 2, 3],
            base: SimConfig::default(),
            exec_range: Some((30.0, 500.0)),
        };
        let t = sweep(&corpus, &spec);
        assert_eq!(t.rows.len(), 12);
        let csv = t.to_csv();
        assert!(csv.starts_with("graph_id,policy,seed,makespan_ms,tokens_total,speedup_vs_sync\n"));
        assert_eq!(csv.lines().count(), 13);
        let s = t.summary();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|p| p.p10_ms <= p.p50_ms && p.p50_ms <= p.p90_ms));
        assert_eq!(s[0].mean_speedup_vs_sync, 1.0);
    }

    #[test]
    fn percentiles() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&d, 10.0), 1.0);
        assert_eq!(percentile(&d, 50.0), 5.0);
        assert_eq!(percentile(&d, 90.0), 9.0);
    }
}
