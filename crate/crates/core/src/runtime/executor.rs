use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::clock::Clock;
use super::queue::{InterruptQueue, QueuedInterrupt};
use crate::sim::{result_value, to_ms, to_ticks, Tick};
use crate::taskmodel::TaskGraph;
use crate::Ms;

/// A parsed call body `name(args)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallRequest {
    pub id: Option<String>,
    pub body: String,
    pub name: String,
    pub args: String,
}

impl CallRequest {
    /// Splits a body on its leading identifier. Text after the name that is
    /// not a parenthesized list is kept whole as `args`.
    pub fn parse(id: Option<&str>, body: &str) -> Self {
        let body = body.trim();
        let end = body.find(|c: char| !(c.is_ascii_alphanumeric() || c == '_' || c == '.')).unwrap_or(body.len());
        let name = body[..end].to_owned();
        let rest = body[end..].trim();
        let args = rest
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .unwrap_or(rest)
            .trim()
            .to_owned();
        CallRequest { id: id.map(str::to_owned), body: body.to_owned(), name, args }
    }
}

/// Something a call can be dispatched to.
pub trait Function: Send + Sync {
    /// Expected execution time, if known ahead of time.
    fn estimate_ms(&self, call: &CallRequest) -> Option<Ms>;
    /// Runs the call. `Err` text is delivered as an error interrupt.
    fn invoke(&self, call: &CallRequest) -> Result<String, String>;
}

/// Stand-in with per-id execution estimates. Returns `"{name} ok"`; in
/// real-time mode `invoke` sleeps for the estimate.
#[derive(Debug, Clone)]
pub struct StubFunction {
    pub name: String,
    pub default_ms: Ms,
    pub per_id_ms: HashMap<String, Ms>,
    pub realtime: bool,
}

impl StubFunction {
    pub fn new(name: &str, default_ms: Ms) -> Self {
        StubFunction { name: name.to_owned(), default_ms, per_id_ms: HashMap::new(), realtime: false }
    }

    fn exec_ms(&self, call: &CallRequest) -> Ms {
        call.id.as_ref().and_then(|id| self.per_id_ms.get(id)).copied().unwrap_or(self.default_ms)
    }
}

impl Function for StubFunction {
    fn estimate_ms(&self, call: &CallRequest) -> Option<Ms> {
        Some(self.exec_ms(call))
    }

    fn invoke(&self, call: &CallRequest) -> Result<String, String> {
        if self.realtime {
            thread::sleep(Duration::from_secs_f64(self.exec_ms(call) / 1000.0));
        }
        Ok(result_value(&self.name))
    }
}

/// Function table keyed by name.
#[derive(Clone, Default)]
pub struct Registry {
    functions: BTreeMap<String, Arc<dyn Function>>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.functions.keys()).finish()
    }
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, function: Arc<dyn Function>) {
        self.functions.insert(name.to_owned(), function);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Function>> {
        self.functions.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.functions.keys().map(String::as_str)
    }

    /// Stubs for every function named in `graphs`, with each node's
    /// `exec_ms` as the estimate for its id.
    pub fn stubs<'g>(graphs: impl IntoIterator<Item = &'g TaskGraph>, realtime: bool) -> Self {
        let mut stubs: BTreeMap<String, StubFunction> = BTreeMap::new();
        for g in graphs {
            for n in g.nodes() {
                let s = stubs.entry(n.name.clone()).or_insert_with(|| StubFunction::new(&n.name, n.exec_ms));
                s.realtime = realtime;
                s.per_id_ms.insert(n.id.clone(), n.exec_ms);
            }
        }
        let mut reg = Registry::new();
        for (name, s) in stubs {
            reg.register(&name, Arc::new(s));
        }
        reg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done(String),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobHandle {
    pub id: String,
    pub call_body: String,
    pub dispatched_at_ms: Ms,
    pub estimate_ms: Option<Ms>,
    pub status: JobStatus,
}

/// Work handed to an executor.
#[derive(Clone)]
pub struct Job {
    pub call: CallRequest,
    pub function: Arc<dyn Function>,
}

/// Formats a function's outcome as interrupt text.
pub fn outcome_value(outcome: Result<String, String>) -> String {
    match outcome {
        Ok(v) => v,
        Err(e) => format!("error: {e}"),
    }
}

/// Runs jobs concurrently and pushes their results to the interrupt queue.
/// Anonymous jobs run but enqueue nothing.
pub trait Executor {
    fn dispatch(&mut self, job: Job, clock: &dyn Clock, queue: &InterruptQueue);
    /// Delivers `entry` at `at_ms` regardless of any job (user interrupts).
    fn schedule(&mut self, at_ms: Ms, entry: QueuedInterrupt, queue: &InterruptQueue);
    /// Moves results that are due into the queue.
    fn poll(&mut self, clock: &dyn Clock, queue: &InterruptQueue);
    /// Blocks until the queue is non-empty. Returns false if nothing is
    /// outstanding, so nothing will ever arrive.
    fn wait(&mut self, clock: &mut dyn Clock, queue: &InterruptQueue) -> bool;
    /// Jobs and scheduled deliveries not yet in the queue.
    fn outstanding(&self) -> usize;
}

/// Executes in virtual time: a job finishes exactly its estimate after
/// dispatch. Same-tick results are delivered in dispatch order.
#[derive(Default)]
pub struct VirtualExecutor {
    heap: BinaryHeap<Reverse<(Tick, u64)>>,
    pending: HashMap<u64, Option<QueuedInterrupt>>,
    seq: u64,
}

impl VirtualExecutor {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, at: Tick, entry: Option<QueuedInterrupt>) {
        self.seq += 1;
        self.heap.push(Reverse((at, self.seq)));
        self.pending.insert(self.seq, entry);
    }
}

impl Executor for VirtualExecutor {
    fn dispatch(&mut self, job: Job, clock: &dyn Clock, _queue: &InterruptQueue) {
        let exec = job.function.estimate_ms(&job.call).unwrap_or(0.0);
        let done = to_ticks(clock.now_ms()) + to_ticks(exec);
        let value = outcome_value(job.function.invoke(&job.call));
        let entry = job.call.id.map(|id| QueuedInterrupt { id, value, enqueued_at_ms: to_ms(done) });
        self.push(done, entry);
    }

    fn schedule(&mut self, at_ms: Ms, entry: QueuedInterrupt, _queue: &InterruptQueue) {
        self.push(to_ticks(at_ms), Some(entry));
    }

    fn poll(&mut self, clock: &dyn Clock, queue: &InterruptQueue) {
        let now = to_ticks(clock.now_ms());
        while let Some(&Reverse((t, seq))) = self.heap.peek() {
            if t > now {
                break;
            }
            self.heap.pop();
            if let Some(Some(entry)) = self.pending.remove(&seq) {
                queue.push(entry);
            }
        }
    }

    fn wait(&mut self, clock: &mut dyn Clock, queue: &InterruptQueue) -> bool {
        while queue.is_empty() {
            let Some(&Reverse((t, _))) = self.heap.peek() else {
                return false;
            };
            clock.advance_to(to_ms(t));
            self.poll(clock, queue);
        }
        true
    }

    fn outstanding(&self) -> usize {
        self.heap.len()
    }
}

/// Runs each job on its own worker thread, or on a bounded pool when
/// `max_workers` is set.
pub struct ThreadExecutor {
    live: Arc<AtomicUsize>,
    pool: Option<rayon::ThreadPool>,
}

impl ThreadExecutor {
    pub fn new(max_workers: Option<usize>) -> Self {
        let pool = max_workers.map(|n| {
            rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build().expect("worker pool")
        });
        ThreadExecutor { live: Arc::new(AtomicUsize::new(0)), pool }
    }

    fn spawn(&self, work: impl FnOnce() + Send + 'static) {
        self.live.fetch_add(1, Ordering::SeqCst);
        let live = Arc::clone(&self.live);
        let task = move || {
            work();
            live.fetch_sub(1, Ordering::SeqCst);
        };
        match &self.pool {
            Some(p) => p.spawn(task),
            None => {
                thread::spawn(task);
            }
        }
    }
}

impl Executor for ThreadExecutor {
    fn dispatch(&mut self, job: Job, clock: &dyn Clock, queue: &InterruptQueue) {
        let queue = queue.clone();
        let start = clock.now_ms();
        let started = std::time::Instant::now();
        self.spawn(move || {
            let value = outcome_value(job.function.invoke(&job.call));
            if let Some(id) = job.call.id {
                let at = start + started.elapsed().as_secs_f64() * 1000.0;
                queue.push(QueuedInterrupt { id, value, enqueued_at_ms: at });
            }
        });
    }

    fn schedule(&mut self, at_ms: Ms, entry: QueuedInterrupt, queue: &InterruptQueue) {
        let queue = queue.clone();
        let started = std::time::Instant::now();
        // `at_ms` is relative to session start, which is when scheduling happens
        self.spawn(move || {
            let delay = (at_ms / 1000.0 - started.elapsed().as_secs_f64()).max(0.0);
            thread::sleep(Duration::from_secs_f64(delay));
            queue.push(entry);
        });
    }

    fn poll(&mut self, _clock: &dyn Clock, _queue: &InterruptQueue) {}

    fn wait(&mut self, _clock: &mut dyn Clock, queue: &InterruptQueue) -> bool {
        loop {
            if !queue.is_empty() {
                return true;
            }
            if self.outstanding() == 0 {
                return !queue.is_empty();
            }
            queue.wait_timeout(Duration::from_millis(20));
        }
    }

    fn outstanding(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::clock::{VirtualClock, WallClock};

    fn job(id: &str, name: &str, reg: &Registry) -> Job {
        let call = CallRequest::parse(Some(id), &format!("{name}()"));
        Job { function: reg.get(&call.name).unwrap(), call }
    }

    fn two_stubs(realtime: bool) -> Registry {
        let mut reg = Registry::new();
        reg.register("slow", Arc::new(StubFunction { realtime, ..StubFunction::new("slow", 50.0) }));
        reg.register("fast", Arc::new(StubFunction { realtime, ..StubFunction::new("fast", 10.0) }));
        reg
    }

    #[test]
    fn parse_call_request() {
        let c = CallRequest::parse(Some("j"), " search_nearby(\"florist\") ");
        assert_eq!(c.name, "search_nearby");
        assert_eq!(c.args, "\"florist\"");
        let c = CallRequest::parse(None, "text msg to bob");
        assert_eq!((c.name.as_str(), c.args.as_str()), ("text", "msg to bob"));
    }

    #[test]
    fn virtual_completion_order_follows_exec_time() {
        let reg = two_stubs(false);
        let (mut ex, q, mut clock) = (VirtualExecutor::new(), InterruptQueue::new(), VirtualClock::new());
        ex.dispatch(job("a", "slow", &reg), &clock, &q);
        ex.dispatch(job("b", "fast", &reg), &clock, &q);
        assert_eq!(ex.outstanding(), 2);
        assert!(ex.wait(&mut clock, &q));
        assert_eq!(clock.now_ms(), 10.0);
        assert_eq!(q.drain()[0].id, "b");
        assert!(ex.wait(&mut clock, &q));
        assert_eq!(clock.now_ms(), 50.0);
        assert_eq!(q.drain()[0].value, "slow ok");
        assert!(!ex.wait(&mut clock, &q));
    }

    #[test]
    fn threaded_completion_order_follows_exec_time() {
        let reg = two_stubs(true);
        let (mut ex, q, mut clock) = (ThreadExecutor::new(None), InterruptQueue::new(), WallClock::new());
        ex.dispatch(job("a", "slow", &reg), &clock, &q);
        ex.dispatch(job("b", "fast", &reg), &clock, &q);
        let mut order = Vec::new();
        while order.len() < 2 {
            assert!(ex.wait(&mut clock, &q));
            order.extend(q.drain().into_iter().map(|e| e.id));
        }
        assert_eq!(order, ["b", "a"]);
        assert!(!ex.wait(&mut clock, &q));
    }

    #[test]
    fn anonymous_jobs_enqueue_nothing() {
        let reg = two_stubs(false);
        let (mut ex, q, mut clock) = (VirtualExecutor::new(), InterruptQueue::new(), VirtualClock::new());
        let call = CallRequest::parse(None, "fast()");
        ex.dispatch(Job { function: reg.get("fast").unwrap(), call }, &clock, &q);
        assert!(!ex.wait(&mut clock, &q));
        assert_eq!(ex.outstanding(), 0);
    }
}
