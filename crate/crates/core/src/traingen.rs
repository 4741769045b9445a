//! Fine-tuning traces from task graphs.
//!
//! A sample pairs a prompt (task description plus call definitions with
//! estimated execution times) with the ideal markup exchange for it: LPT
//! call order, a trap whenever everything left is blocked, and interrupts
//! at the virtual times results arrive. The exchange is produced by running
//! the real session loop over an emulated model in virtual time, then
//! checked by an independent replay ([`validate_sample`]).
//!
//! Targets are split into spans by role so a trainer can mask system text
//! (interrupts) out of the loss.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::cml::{tokenize, CmlBlock, CmlError, Origin, Parser, TokenKind};
use crate::runtime::{
    run_session, user_task_id, NextCall, PolicySource, Record, Registry, ScheduledInterrupt, SessionConfig,
    VirtualClock, VirtualExecutor, USER_PREFIX,
};
use crate::taskmodel::{topological_check, GraphError, TaskGraph};
use crate::Ms;

pub const EXEC_RANGE_MS: (Ms, Ms) = (1.0, 1000.0);
pub const TPOT_RANGE_MS: (Ms, Ms) = (5.0, 30.0);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraingenError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("session failed: {0}")]
    Session(String),
    #[error("seed {0} appears more than once")]
    DuplicateSeed(u64),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("sample {graph_id}/{seed} is invalid: {problem}")]
    Invalid { graph_id: String, seed: u64, problem: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Model,
    System,
}

/// A run of target text produced by one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTask {
    pub at_ms: Ms,
    pub id: String,
    pub calls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub graph_id: String,
    pub seed: u64,
    pub tpot_ms: Ms,
    pub exec_assignments: BTreeMap<String, Ms>,
    /// Tasks announced by user interrupts after the prompt.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub user_tasks: Vec<UserTask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSample {
    pub prompt: String,
    pub target: Vec<Span>,
    pub meta: SampleMeta,
}

impl TrainSample {
    /// The target as one markup string.
    pub fn target_text(&self) -> String {
        self.target.iter().map(|s| s.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Split the graph into its independent tasks; all but the first
    /// arrive later as user interrupts.
    pub user_interrupts: bool,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn round_ms(x: Ms) -> Ms {
    (x * 100.0).round() / 100.0
}

/// Replaces every execution estimate with a seeded draw from
/// `uniform(1, 1000)` ms, rounded to 0.01 ms.
pub fn assign_random_costs(graph: &TaskGraph, seed: u64) -> TaskGraph {
    let mut rng = stream_rng(seed, 0);
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| {
            let mut n = n.clone();
            n.exec_ms = round_ms(rng.gen_range(EXEC_RANGE_MS.0..=EXEC_RANGE_MS.1));
            n
        })
        .collect();
    graph.with_nodes(nodes).expect("only estimates changed")
}

/// Seeded token time from `uniform(5, 30)` ms, rounded to 0.01 ms.
pub fn sample_tpot(seed: u64) -> Ms {
    round_ms(stream_rng(seed, 1).gen_range(TPOT_RANGE_MS.0..=TPOT_RANGE_MS.1))
}

/// Prompt text: an instruction plus a JSON list of the calls visible at the
/// start, each with its function, parameters, estimate and dependencies.
pub fn prompt_for(graph: &TaskGraph, visible: &BTreeSet<String>) -> String {
    let calls: Vec<_> = graph
        .nodes()
        .iter()
        .filter(|n| visible.contains(&n.id))
        .map(|n| {
            json!({
                "id": n.id,
                "name": n.name,
                "parameters": n.args.clone().unwrap_or_default(),
                "est_exec_ms": n.exec_ms,
                "depends_on": n.deps,
            })
        })
        .collect();
    format!(
        "Complete the task with asynchronous function calls. Call ready functions with the longest \
         estimated execution time first, and emit a trap when every remaining call waits on a result.\n\
         Calls:\n{}",
        serde_json::to_string_pretty(&calls).expect("json values serialize")
    )
}

/// Produces the ideal exchange for `graph` at `tpot_ms`. `seed` is recorded
/// and picks user-task arrival times when those are enabled.
pub fn generate_trace(graph: &TaskGraph, tpot_ms: Ms, seed: u64) -> Result<TrainSample, TraingenError> {
    generate_trace_with(graph, "graph", tpot_ms, seed, TraceOptions::default())
}

pub fn generate_trace_with(
    graph: &TaskGraph,
    graph_id: &str,
    tpot_ms: Ms,
    seed: u64,
    options: TraceOptions,
) -> Result<TrainSample, TraingenError> {
    topological_check(graph)?;
    let graph = graph.with_tpot(tpot_ms)?;
    let tasks = if options.user_interrupts { graph.components() } else { vec![graph.clone()] };

    let mut rng = stream_rng(seed, 2);
    let horizon: Ms = graph.nodes().iter().map(|n| (n.body_tokens + 4) as Ms * tpot_ms).sum();
    let mut arrivals: Vec<Ms> = (1..tasks.len()).map(|_| round_ms(rng.gen_range(0.0..horizon))).collect();
    arrivals.sort_by(f64::total_cmp);
    let user_tasks: Vec<UserTask> = arrivals
        .iter()
        .enumerate()
        .map(|(i, &at_ms)| UserTask {
            at_ms,
            id: user_task_id(i + 1),
            calls: tasks[i + 1].ids().map(str::to_owned).collect(),
        })
        .collect();
    let scheduled = user_tasks
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let names: Vec<&str> = tasks[i + 1].nodes().iter().map(|n| n.name.as_str()).collect();
            ScheduledInterrupt { at_ms: u.at_ms, id: u.id.clone(), value: format!("new task: {}", names.join(", ")) }
        })
        .collect();

    let visible: BTreeSet<String> = tasks[0].ids().map(str::to_owned).collect();
    let prompt = prompt_for(&graph, &visible);
    let registry = Registry::stubs([&graph], false);
    let mut source = PolicySource::with_tasks(tasks, NextCall::Lpt)
        .map_err(|e| TraingenError::Session(e.to_string()))?
        .with_tpot(tpot_ms);
    let config = SessionConfig { scheduled, ..Default::default() };
    let transcript =
        run_session(&mut source, &mut VirtualExecutor::new(), &mut VirtualClock::new(), &registry, config)
            .map_err(|f| TraingenError::Session(f.error.to_string()))?;

    let mut target: Vec<Span> = Vec::new();
    let mut push = |role: Role, text: String| match target.last_mut() {
        Some(last) if last.role == role => last.text.push_str(&text),
        _ => target.push(Span { role, text }),
    };
    for e in &transcript.entries {
        match &e.record {
            Record::Call { id, body } => push(Role::Model, CmlBlock::call(id.as_deref(), body.clone()).to_string()),
            Record::Trap => push(Role::Model, CmlBlock::Trap.to_string()),
            Record::Interrupt { id, value } => {
                push(Role::System, CmlBlock::interrupt(id.clone(), value.clone()).to_string())
            }
            _ => {}
        }
    }
    let exec_assignments = graph.nodes().iter().map(|n| (n.id.clone(), n.exec_ms)).collect();
    Ok(TrainSample {
        prompt,
        target,
        meta: SampleMeta { graph_id: graph_id.to_owned(), seed, tpot_ms, exec_assignments, user_tasks },
    })
}

/// Sample `k` of a dataset: corpus graph `k mod len` with costs and token
/// time drawn from `seed`.
pub fn sample_for(
    id: &str,
    graph: &TaskGraph,
    seed: u64,
    options: TraceOptions,
) -> Result<TrainSample, TraingenError> {
    let costed = assign_random_costs(graph, seed);
    generate_trace_with(&costed, id, sample_tpot(seed), seed, options)
}

/// Builds one validated sample per seed, cycling through the corpus.
pub fn generate_samples(
    corpus: &[(String, TaskGraph)],
    seeds: &[u64],
    options: TraceOptions,
) -> Result<Vec<TrainSample>, TraingenError> {
    Ok(generate_counted(corpus, seeds, options)?.into_iter().map(|(s, _)| s).collect())
}

fn generate_counted(
    corpus: &[(String, TaskGraph)],
    seeds: &[u64],
    options: TraceOptions,
) -> Result<Vec<(TrainSample, ReplayCounts)>, TraingenError> {
    if corpus.is_empty() && !seeds.is_empty() {
        return Err(TraingenError::EmptyCorpus);
    }
    let mut seen = HashSet::with_capacity(seeds.len());
    if let Some(&dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(TraingenError::DuplicateSeed(dup));
    }
    seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| {
            let (id, graph) = &corpus[k % corpus.len()];
            let sample = sample_for(id, graph, seed, options)?;
            let costed = assign_random_costs(graph, seed);
            let counts = validate_sample(&sample, &costed).map_err(|problem| TraingenError::Invalid {
                graph_id: id.clone(),
                seed,
                problem: problem.to_string(),
            })?;
            Ok((sample, counts))
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub calls: usize,
    pub interrupts: usize,
    pub traps: usize,
    pub per_graph: BTreeMap<String, usize>,
}

/// Writes one JSON object per line: `{prompt, target, meta}`.
pub fn emit_dataset(
    corpus: &[(String, TaskGraph)],
    seeds: &[u64],
    options: TraceOptions,
    out: &Path,
) -> Result<DatasetStats, TraingenError> {
    let samples = generate_counted(corpus, seeds, options)?;
    let io = |e: std::io::Error| TraingenError::Io { path: out.display().to_string(), message: e.to_string() };
    let mut file = std::io::BufWriter::new(fs::File::create(out).map_err(io)?);
    let mut stats = DatasetStats::default();
    for (s, c) in &samples {
        serde_json::to_writer(&mut file, s).map_err(|e| io(e.into()))?;
        file.write_all(b"\n").map_err(io)?;
        stats.samples += 1;
        stats.calls += c.calls;
        stats.interrupts += c.interrupts;
        stats.traps += c.traps;
        *stats.per_graph.entry(s.meta.graph_id.clone()).or_default() += 1;
    }
    file.flush().map_err(io)?;
    Ok(stats)
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainSample>, TraingenError> {
    let text = fs::read_to_string(path)
        .map_err(|e| TraingenError::Io { path: path.display().to_string(), message: e.to_string() })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| TraingenError::Io { path: path.display().to_string(), message: e.to_string() })
        })
        .collect()
}

/// Why a sample fails validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SampleProblem {
    #[error("target does not parse: {0}")]
    Parse(CmlError),
    #[error("{0} block appears in a {1:?} span")]
    WrongRole(&'static str, Role),
    #[error("call {id:?} is not ready")]
    NotReady { id: String },
    #[error("call {id:?} breaks LPT order; {better:?} has a longer estimate")]
    NotLpt { id: String, better: String },
    #[error("trap while {0:?} was ready")]
    TrapWithReadyCall(String),
    #[error("trap with nothing left to call")]
    TrapWithNothingPending,
    #[error("second trap without an interrupt in between")]
    RepeatedTrap,
    #[error("expected {expected} at a decision point, found {found}")]
    MissedDecision { expected: String, found: String },
    #[error("interrupt {0:?} does not answer exactly one earlier call")]
    Unpaired(String),
    #[error("calls never made: {0:?}")]
    Incomplete(Vec<String>),
    #[error("unknown call id {0:?}")]
    UnknownCall(String),
    #[error("trap count {found} differs from {expected} blocked decision points")]
    TrapCount { expected: usize, found: usize },
}

/// Counts from a replay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayCounts {
    pub calls: usize,
    pub interrupts: usize,
    pub traps: usize,
}

/// Checks a sample against `graph` (with the sample's cost assignment):
/// the target parses, calls and interrupts pair up, every call is an LPT
/// choice among the calls ready at that point, and traps occur exactly at
/// the points where everything left was blocked.
pub fn validate_sample(sample: &TrainSample, graph: &TaskGraph) -> Result<ReplayCounts, SampleProblem> {
    replay(sample, graph)
}

enum Expect {
    Call(String),
    Trap,
    Nothing,
}

fn replay(sample: &TrainSample, graph: &TaskGraph) -> Result<ReplayCounts, SampleProblem> {
    let exec = &sample.meta.exec_assignments;
    let deps: BTreeMap<&str, Vec<&str>> =
        graph.nodes().iter().map(|n| (n.id.as_str(), n.deps.iter().map(String::as_str).collect())).collect();
    if let Some(id) = deps.keys().find(|id| !exec.contains_key(**id)) {
        return Err(SampleProblem::UnknownCall(id.to_string()));
    }
    let late: BTreeMap<&str, &str> = sample
        .meta
        .user_tasks
        .iter()
        .flat_map(|u| u.calls.iter().map(move |c| (c.as_str(), u.id.as_str())))
        .collect();
    let mut announced: HashSet<&str> = HashSet::new();
    let mut called: BTreeSet<String> = BTreeSet::new();
    let mut answered: HashSet<String> = HashSet::new();
    let mut trapped = false;
    let mut counts = ReplayCounts::default();
    let mut blocked_points = 0usize;

    let visible = |id: &str, announced: &HashSet<&str>| late.get(id).is_none_or(|u| announced.contains(u));
    let decide = |called: &BTreeSet<String>, answered: &HashSet<String>, announced: &HashSet<&str>, trapped: bool| {
        let mut best: Option<(&str, Ms)> = None;
        let mut pending = false;
        for (&id, ds) in &deps {
            if !visible(id, announced) || called.contains(id) {
                continue;
            }
            pending = true;
            if ds.iter().all(|d| answered.contains(*d)) {
                let e = exec[id];
                if best.is_none_or(|(_, b)| e > b) {
                    best = Some((id, e));
                }
            }
        }
        match best {
            Some((id, _)) => Expect::Call(id.to_owned()),
            None if pending && !trapped => Expect::Trap,
            None => Expect::Nothing,
        }
    };

    // a blocked point only obliges a trap if the model speaks next
    let mut parser = Parser::new();
    let mut expect = decide(&called, &answered, &announced, trapped);
    for span in &sample.target {
        for tok in tokenize(&span.text) {
            if tok.kind == TokenKind::Eos {
                continue;
            }
            let origin = if tok.kind == TokenKind::Intr { Origin::System } else { Origin::Model };
            let Some(block) = parser.feed(&tok, origin).map_err(SampleProblem::Parse)? else { continue };
            if !matches!(block, CmlBlock::Interrupt { .. }) && matches!(expect, Expect::Trap) {
                blocked_points += 1;
            }
            match &block {
                CmlBlock::FunctionCall { id, .. } => {
                    if span.role != Role::Model {
                        return Err(SampleProblem::WrongRole("call", span.role));
                    }
                    let id = id.clone().unwrap_or_default();
                    if !exec.contains_key(&id) {
                        return Err(SampleProblem::UnknownCall(id));
                    }
                    let ready = visible(&id, &announced)
                        && !called.contains(&id)
                        && deps[id.as_str()].iter().all(|d| answered.contains(*d));
                    if !ready {
                        return Err(SampleProblem::NotReady { id });
                    }
                    if let Expect::Call(best) = &expect {
                        if exec[best] > exec[&id] {
                            return Err(SampleProblem::NotLpt { id, better: best.clone() });
                        }
                    }
                    called.insert(id);
                    counts.calls += 1;
                }
                CmlBlock::Trap => {
                    if span.role != Role::Model {
                        return Err(SampleProblem::WrongRole("trap", span.role));
                    }
                    match &expect {
                        Expect::Call(id) => return Err(SampleProblem::TrapWithReadyCall(id.clone())),
                        Expect::Nothing if trapped => return Err(SampleProblem::RepeatedTrap),
                        Expect::Nothing => return Err(SampleProblem::TrapWithNothingPending),
                        Expect::Trap => {}
                    }
                    trapped = true;
                    counts.traps += 1;
                }
                CmlBlock::Interrupt { id, .. } => {
                    if span.role != Role::System {
                        return Err(SampleProblem::WrongRole("interrupt", span.role));
                    }
                    counts.interrupts += 1;
                    if id.starts_with(USER_PREFIX) {
                        let known = sample.meta.user_tasks.iter().find(|u| &u.id == id);
                        match known {
                            Some(u) if announced.insert(u.id.as_str()) => {}
                            _ => return Err(SampleProblem::Unpaired(id.clone())),
                        }
                    } else if !called.contains(id) || !answered.insert(id.clone()) {
                        return Err(SampleProblem::Unpaired(id.clone()));
                    }
                    trapped = false;
                }
            }
            expect = decide(&called, &answered, &announced, trapped);
        }
    }
    if let Some(problem) = unmet(&expect) {
        return Err(problem);
    }
    let missing: Vec<String> = deps.keys().filter(|id| !called.contains(**id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() {
        return Err(SampleProblem::Incomplete(missing));
    }
    if let Some(id) = called.iter().find(|id| !answered.contains(*id)) {
        return Err(SampleProblem::Unpaired(id.clone()));
    }
    if counts.traps != blocked_points {
        return Err(SampleProblem::TrapCount { expected: blocked_points, found: counts.traps });
    }
    Ok(counts)
}

/// A model span ended while the model still owed a call or a trap.
fn unmet(expect: &Expect) -> Option<SampleProblem> {
    match expect {
        Expect::Call(id) => Some(SampleProblem::MissedDecision { expected: format!("call {id}"), found: "silence".into() }),
        Expect::Trap => Some(SampleProblem::MissedDecision { expected: "trap".into(), found: "silence".into() }),
        Expect::Nothing => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cml::parse_text;
    use crate::corpus;
    use crate::taskmodel::CallNode;

    fn blocks(s: &TrainSample) -> Vec<CmlBlock> {
        parse_text(&s.target_text()).unwrap()
    }

    #[test]
    fn chain_trace() {
        let g = TaskGraph::new(
            5.0,
            vec![CallNode::new("a", "fa", 3, 100.0, &[]), CallNode::new("b", "fb", 3, 50.0, &["a"])],
        )
        .unwrap();
        let s = generate_trace(&g, 10.0, 1).unwrap();
        assert_eq!(
            blocks(&s),
            vec![
                CmlBlock::call(Some("a"), "fa()"),
                CmlBlock::Trap,
                CmlBlock::interrupt("a", "fa ok"),
                CmlBlock::call(Some("b"), "fb()"),
                CmlBlock::interrupt("b", "fb ok"),
            ]
        );
        let roles: Vec<Role> = s.target.iter().map(|sp| sp.role).collect();
        assert_eq!(roles, [Role::Model, Role::System, Role::Model, Role::System]);
        assert_eq!(validate_sample(&s, &g).unwrap().traps, 1);
        validate_sample(&s, &g).unwrap();
    }

    #[test]
    fn independent_pair_in_lpt_order() {
        let g = TaskGraph::new(
            5.0,
            vec![CallNode::new("short", "f", 3, 10.0, &[]), CallNode::new("long", "f", 3, 90.0, &[])],
        )
        .unwrap();
        let b = blocks(&generate_trace(&g, 5.0, 0).unwrap());
        assert_eq!(b[0].id(), Some("long"));
        assert_eq!(b[1].id(), Some("short"));
    }

    #[test]
    fn pasta_mixes_last() {
        let (_, g) = corpus::builtin().into_iter().find(|(id, _)| id == "mixed_pasta").unwrap();
        let s = generate_trace(&g, 5.0, 3).unwrap();
        let b = blocks(&s);
        let pos = |f: &dyn Fn(&CmlBlock) -> bool| b.iter().position(f).unwrap();
        let mix = pos(&|x| matches!(x, CmlBlock::FunctionCall { id: Some(id), .. } if id == "mix_everything"));
        for dep in ["put_pasta_noodles", "stir_fry"] {
            assert!(pos(&|x| matches!(x, CmlBlock::Interrupt { id, .. } if id == dep)) < mix);
        }
    }

    #[test]
    fn costs_in_range_and_seeded() {
        let (_, g) = corpus::builtin().swap_remove(4);
        let a = assign_random_costs(&g, 42);
        assert_eq!(a, assign_random_costs(&g, 42));
        assert!(a.nodes().iter().all(|n| (1.0..=1000.0).contains(&n.exec_ms)));
        let differs = (0..100u64)
            .filter(|s| assign_random_costs(&g, 2 * s) != assign_random_costs(&g, 2 * s + 1))
            .count();
        assert_eq!(differs, 100);
        let t = sample_tpot(42);
        assert!((5.0..=30.0).contains(&t));
    }

    #[test]
    fn validator_catches_tampering() {
        let g = TaskGraph::new(
            5.0,
            vec![CallNode::new("short", "f", 3, 10.0, &[]), CallNode::new("long", "f", 3, 90.0, &[])],
        )
        .unwrap();
        let s = generate_trace(&g, 5.0, 0).unwrap();
        let mut swapped = s.clone();
        swapped.meta.exec_assignments.insert("short".into(), 500.0);
        assert!(matches!(validate_sample(&swapped, &g), Err(SampleProblem::NotLpt { .. })));

        let chain = TaskGraph::new(
            5.0,
            vec![CallNode::new("a", "fa", 3, 100.0, &[]), CallNode::new("b", "fb", 3, 50.0, &["a"])],
        )
        .unwrap();
        let mut s = generate_trace(&chain, 5.0, 0).unwrap();
        // cut at the first blocked point, trap removed
        s.target.truncate(1);
        s.target[0].text = s.target[0].text.replace("[TRAP][END]", "");
        assert!(matches!(validate_sample(&s, &chain), Err(SampleProblem::MissedDecision { .. })));
    }

    #[test]
    fn user_interrupt_augmentation() {
        let (id, g) = corpus::builtin().swap_remove(4);
        let s = sample_for(&id, &g, 9, TraceOptions { user_interrupts: true }).unwrap();
        let late = 2;
        assert_eq!(s.meta.user_tasks.len(), late);
        let b = blocks(&s);
        assert_eq!(b.iter().filter(|x| x.id().is_some_and(|i| i.starts_with(USER_PREFIX))).count(), late);
        // the prompt only lists the first task
        for late in &s.meta.user_tasks[0].calls {
            assert!(!s.prompt.contains(&format!("\"id\": \"{late}\"")));
        }
        validate_sample(&s, &assign_random_costs(&g, 9)).unwrap();
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let corpus = corpus::builtin();
        assert_eq!(generate_samples(&corpus, &[1, 2, 1], TraceOptions::default()), Err(TraingenError::DuplicateSeed(1)));
    }

    #[test]
    fn empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let stats = emit_dataset(&corpus::builtin(), &[], TraceOptions::default(), &path).unwrap();
        assert_eq!(stats, DatasetStats::default());
        assert_eq!(fs::read_to_string(&path).unwrap(), "");
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let corpus = corpus::builtin();
        let seeds: Vec<u64> = (0..120).collect();
        let stats = emit_dataset(&corpus, &seeds, TraceOptions::default(), &path).unwrap();
        assert_eq!(stats.samples, 120);
        assert_eq!(stats.per_graph.len(), 12);
        assert!(stats.per_graph.values().all(|&n| n == 10));
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 120);
        for (k, s) in back.iter().enumerate() {
            let (_, g) = &corpus[k % 12];
            validate_sample(s, &assign_random_costs(g, s.meta.seed)).unwrap();
        }
    }

    #[test]
    fn bad_path_reports_it() {
        let err = emit_dataset(&corpus::builtin(), &[1], TraceOptions::default(), Path::new("/nonexistent/x.jsonl"))
            .unwrap_err();
        assert!(matches!(err, TraingenError::Io { ref path, .. } if path.contains("nonexistent")));
    }
}
