//! Function-call task graphs and the longest-processing-time-first policy.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use petgraph::algo::{tarjan_scc, toposort};
use petgraph::graphmap::DiGraphMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cml::{is_identifier, tokenize, TokenKind};
use crate::Ms;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("malformed graph JSON at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("node {id:?}: {reason}")]
    InvalidNode { id: String, reason: String },
    #[error("duplicate node id {0:?}")]
    DuplicateId(String),
    #[error("node {node:?} depends on unknown node {dep:?}")]
    UnknownDependency { node: String, dep: String },
    #[error("dependency cycle through {0:?}")]
    CycleFound(Vec<String>),
    #[error("invalid session state: {0}")]
    InvalidState(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
}

/// One function call in a task graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallNode {
    pub id: String,
    pub name: String,
    /// Tokens needed to generate the serialized call.
    pub body_tokens: u32,
    /// Estimated execution time.
    pub exec_ms: Ms,
    #[serde(default)]
    pub deps: Vec<String>,
    /// Argument text placed between the call's parentheses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub args: Option<String>,
}

impl CallNode {
    pub fn new(id: &str, name: &str, body_tokens: u32, exec_ms: Ms, deps: &[&str]) -> Self {
        CallNode {
            id: id.to_owned(),
            name: name.to_owned(),
            body_tokens,
            exec_ms,
            deps: deps.iter().map(|d| d.to_string()).collect(),
            args: None,
        }
    }

    /// Executable call text, e.g. `boil_water()`.
    pub fn call_body(&self) -> String {
        format!("{}({})", self.name, self.args.as_deref().unwrap_or(""))
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    tpot_ms: Ms,
    tasks: Vec<CallNode>,
}

/// A validated DAG of calls. Node order is the declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    tpot_ms: Ms,
    nodes: Vec<CallNode>,
    index: HashMap<String, usize>,
}

impl TaskGraph {
    pub fn new(tpot_ms: Ms, nodes: Vec<CallNode>) -> Result<Self, GraphError> {
        if !(tpot_ms > 0.0 && tpot_ms.is_finite()) {
            return Err(GraphError::Invalid(format!("tpot_ms must be positive, got {tpot_ms}")));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !is_identifier(&n.id) {
                return Err(invalid(&n.id, "id is not a valid identifier"));
            }
            if !is_identifier(&n.name) {
                return Err(invalid(&n.id, "name is not a valid identifier"));
            }
            if n.args.as_deref().is_some_and(|a| tokenize(a).iter().any(|t| t.kind != TokenKind::Text)) {
                return Err(invalid(&n.id, "args contain a reserved sentinel"));
            }
            if n.body_tokens == 0 {
                return Err(invalid(&n.id, "body_tokens must be at least 1"));
            }
            if !(n.exec_ms > 0.0 && n.exec_ms.is_finite()) {
                return Err(invalid(&n.id, "exec_ms must be positive"));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateId(n.id.clone()));
            }
        }
        for n in &nodes {
            for d in &n.deps {
                if d == &n.id {
                    return Err(invalid(&n.id, "node depends on itself"));
                }
                if !index.contains_key(d) {
                    return Err(GraphError::UnknownDependency { node: n.id.clone(), dep: d.clone() });
                }
            }
        }
        let g = TaskGraph { tpot_ms, nodes, index };
        topological_check(&g)?;
        Ok(g)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        TaskGraph::new(file.tpot_ms, file.tasks)
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GraphError::Invalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile { tpot_ms: self.tpot_ms, tasks: self.nodes.clone() };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    pub fn tpot_ms(&self) -> Ms {
        self.tpot_ms
    }

    pub fn nodes(&self) -> &[CallNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&CallNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|n| n.id.as_str())
    }

    /// Generation latency G(f) of a node: body tokens times TPOT.
    pub fn gen_ms(&self, id: &str) -> Option<Ms> {
        self.node(id).map(|n| n.body_tokens as Ms * self.tpot_ms)
    }

    /// True when no node has dependencies.
    pub fn is_independent(&self) -> bool {
        self.nodes.iter().all(|n| n.deps.is_empty())
    }

    pub fn with_tpot(&self, tpot_ms: Ms) -> Result<Self, GraphError> {
        TaskGraph::new(tpot_ms, self.nodes.clone())
    }

    pub fn with_nodes(&self, nodes: Vec<CallNode>) -> Result<Self, GraphError> {
        TaskGraph::new(self.tpot_ms, nodes)
    }

    /// Copy with every id and dependency prefixed, for merging graphs.
    pub fn prefixed(&self, prefix: &str) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|n| CallNode {
                id: format!("{prefix}{}", n.id),
                deps: n.deps.iter().map(|d| format!("{prefix}{d}")).collect(),
                ..n.clone()
            })
            .collect();
        TaskGraph::new(self.tpot_ms, nodes).expect("prefixing preserves validity")
    }

    /// Weakly connected components, each in declaration order.
    pub fn components(&self) -> Vec<TaskGraph> {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn root(p: &mut Vec<usize>, mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for (i, n) in self.nodes.iter().enumerate() {
            for d in &n.deps {
                let (a, b) = (root(&mut parent, i), root(&mut parent, self.index[d]));
                parent[a] = b;
            }
        }
        let mut groups: Vec<(usize, Vec<CallNode>)> = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let r = root(&mut parent, i);
            match groups.iter_mut().find(|(g, _)| *g == r) {
                Some((_, v)) => v.push(n.clone()),
                None => groups.push((r, vec![n.clone()])),
            }
        }
        groups
            .into_iter()
            .map(|(_, nodes)| TaskGraph::new(self.tpot_ms, nodes).expect("component of a valid graph"))
            .collect()
    }

    /// Merges graphs with disjoint ids into one.
    pub fn union(graphs: &[TaskGraph]) -> Result<TaskGraph, GraphError> {
        let tpot = graphs.first().map(|g| g.tpot_ms).unwrap_or(1.0);
        TaskGraph::new(tpot, graphs.iter().flat_map(|g| g.nodes.iter().cloned()).collect())
    }
}

fn invalid(id: &str, reason: &str) -> GraphError {
    GraphError::InvalidNode { id: id.to_owned(), reason: reason.to_owned() }
}

/// Returns a topological order, or the nodes of one dependency cycle.
pub fn topological_check(graph: &TaskGraph) -> Result<Vec<String>, GraphError> {
    let mut g = DiGraphMap::<usize, ()>::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        g.add_node(i);
        for d in &n.deps {
            if let Some(&j) = graph.index.get(d) {
                g.add_edge(j, i, ());
            }
        }
    }
    match toposort(&g, None) {
        Ok(order) => Ok(order.into_iter().map(|i| graph.nodes[i].id.clone()).collect()),
        Err(_) => {
            let cycle = tarjan_scc(&g)
                .into_iter()
                .find(|scc| scc.len() > 1 || g.contains_edge(scc[0], scc[0]))
                .expect("toposort failed, so a cycle exists");
            let mut ids: Vec<String> = cycle.into_iter().map(|i| graph.nodes[i].id.clone()).collect();
            ids.sort();
            Err(GraphError::CycleFound(ids))
        }
    }
}

/// Cycle check over raw nodes, before a [`TaskGraph`] can be built.
pub fn check_nodes_acyclic(nodes: &[CallNode]) -> Result<Vec<String>, GraphError> {
    let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
    topological_check(&TaskGraph { tpot_ms: 1.0, nodes: nodes.to_vec(), index })
}

/// Where each node of a graph stands during a session.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SessionState {
    pub completed: BTreeSet<String>,
    pub in_flight: BTreeSet<String>,
    pub pending: BTreeSet<String>,
}

impl SessionState {
    /// Everything pending.
    pub fn initial(graph: &TaskGraph) -> Self {
        SessionState { pending: graph.ids().map(str::to_owned).collect(), ..Default::default() }
    }

    /// Moves a pending node in flight.
    pub fn dispatch(&mut self, id: &str) -> bool {
        self.pending.remove(id) && self.in_flight.insert(id.to_owned())
    }

    /// Moves an in-flight node to completed.
    pub fn complete(&mut self, id: &str) -> bool {
        self.in_flight.remove(id) && self.completed.insert(id.to_owned())
    }

    pub fn is_done(&self) -> bool {
        self.pending.is_empty() && self.in_flight.is_empty()
    }

    fn check_partition(&self, graph: &TaskGraph) -> Result<(), GraphError> {
        let total = self.completed.len() + self.in_flight.len() + self.pending.len();
        if total != graph.len() {
            return Err(GraphError::InvalidState(format!(
                "{total} ids tracked for a graph of {} nodes",
                graph.len()
            )));
        }
        for id in graph.ids() {
            let hits = [&self.completed, &self.in_flight, &self.pending]
                .iter()
                .filter(|s| s.contains(id))
                .count();
            if hits != 1 {
                return Err(GraphError::InvalidState(format!("node {id:?} appears in {hits} sets")));
            }
        }
        Ok(())
    }
}

/// Pending nodes whose dependencies have all completed, in id order.
pub fn ready_set<'g>(graph: &'g TaskGraph, state: &SessionState) -> Result<Vec<&'g str>, GraphError> {
    state.check_partition(graph)?;
    Ok(ready_unchecked(graph, state))
}

fn ready_unchecked<'g>(graph: &'g TaskGraph, state: &SessionState) -> Vec<&'g str> {
    let mut ready: Vec<&str> = graph
        .nodes
        .iter()
        .filter(|n| state.pending.contains(&n.id) && n.deps.iter().all(|d| state.completed.contains(d)))
        .map(|n| n.id.as_str())
        .collect();
    ready.sort_unstable();
    ready
}

/// Picks the ready node with the largest estimated execution time; ties go to
/// the lexicographically smallest id.
pub fn lpt_next<'g>(graph: &'g TaskGraph, state: &SessionState) -> Result<Option<&'g str>, GraphError> {
    let ready = ready_set(graph, state)?;
    Ok(lpt_pick(graph, &ready))
}

pub(crate) fn lpt_pick<'g>(graph: &'g TaskGraph, ready: &[&'g str]) -> Option<&'g str> {
    ready.iter().copied().min_by(|a, b| {
        let (ea, eb) = (graph.node(a).unwrap().exec_ms, graph.node(b).unwrap().exec_ms);
        eb.total_cmp(&ea).then_with(|| a.cmp(b))
    })
}

/// Uniformly random ready node, the baseline the LPT policy is compared to.
pub fn random_next<'g, R: Rng + ?Sized>(
    graph: &'g TaskGraph,
    state: &SessionState,
    rng: &mut R,
) -> Result<Option<&'g str>, GraphError> {
    let ready = ready_set(graph, state)?;
    Ok(ready.choose(rng).copied())
}

/// A trap is needed when nothing is callable, calls remain, and the model has
/// nothing else to say.
pub fn should_trap(graph: &TaskGraph, state: &SessionState, has_other_tokens: bool) -> Result<bool, GraphError> {
    let ready = ready_set(graph, state)?;
    Ok(ready.is_empty() && !state.pending.is_empty() && !has_other_tokens)
}

/// Copy of `graph` with every execution estimate drawn from `uniform(lo, hi)`.
pub fn with_random_exec<R: Rng + ?Sized>(graph: &TaskGraph, lo: Ms, hi: Ms, rng: &mut R) -> TaskGraph {
    let nodes = graph
        .nodes()
        .iter()
        .map(|n| CallNode { exec_ms: rng.gen_range(lo..=hi), ..n.clone() })
        .collect();
    graph.with_nodes(nodes).expect("only estimates changed")
}

/// Random DAG: nodes are created in a shuffled order and each may depend on
/// earlier ones with probability `edge_prob`.
pub fn random_dag<R: Rng + ?Sized>(n: usize, edge_prob: f64, tpot_ms: Ms, rng: &mut R) -> TaskGraph {
    let mut ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    ids.shuffle(rng);
    let mut nodes = Vec::with_capacity(n);
    for (pos, id) in ids.iter().enumerate() {
        let deps = ids[..pos].iter().filter(|_| rng.gen_bool(edge_prob)).cloned().collect();
        nodes.push(CallNode {
            id: id.clone(),
            name: format!("fn_{id}"),
            body_tokens: rng.gen_range(5..40),
            exec_ms: rng.gen_range(1.0..1000.0),
            deps,
            args: None,
        });
    }
    TaskGraph::new(tpot_ms, nodes).expect("construction order guarantees acyclicity")
}
