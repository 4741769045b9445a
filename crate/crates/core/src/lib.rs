//! Runtime, simulator and latency analytics for asynchronous LLM function
//! calling.
//!
//! * [`cml`] parses and serializes the control markup (calls, interrupts,
//!   traps) and produces per-step decode masks.
//! * [`taskmodel`] holds function-call DAGs and the LPT next-call policy.
//! * [`analytics`] has closed-form latencies for independent call sets and
//!   checkers for their ordering, speedup and optimality properties. It is
//!   generic over the scalar type; see the aliases below.
//! * [`runtime`] drives a token source, dispatches calls to workers and
//!   injects interrupts outside critical sections.
//! * [`sim`] is a virtual-time discrete-event simulator over the policies.
//! * [`traingen`] produces fine-tuning traces from task graphs.

pub mod analytics;
pub mod cml;
pub mod corpus;
pub mod runtime;
pub mod sim;
pub mod taskmodel;
pub mod traingen;

/// Milliseconds as a float, the unit of every user-facing latency.
pub type Ms = f64;

/// Independent call set with `f64` millisecond costs.
pub type IndependentSetF64 = analytics::IndependentSet<f64>;
/// Independent call set with `f32` millisecond costs.
pub type IndependentSetF32 = analytics::IndependentSet<f32>;
/// Independent call set in integer simulator ticks, compared exactly.
pub type IndependentSetTicks = analytics::IndependentSet<i64>;
pub type LatencyTripleF64 = analytics::LatencyTriple<f64>;
pub type LatencyTripleTicks = analytics::LatencyTriple<i64>;
