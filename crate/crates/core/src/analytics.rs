//! Closed-form latencies for sets of independent calls.
//!
//! Each call `f` costs `G(f)` to generate and `E(f)` to execute.
//!
//! * sequential synchronous: `Σ G + Σ E`
//! * synchronous with a parallel executor: `Σ G + max E`
//! * asynchronous, generating in decreasing-`E` order:
//!   `max_i (Σ_{j≤i} G(f_j) + E(f_i))`
//!
//! Everything here is generic over [`Scalar`], so the same code runs on
//! `f32`/`f64` milliseconds, exact integer ticks, or rationals.

use std::fmt::Debug;

use itertools::Itertools;
use num_traits::{Float, Num};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Numeric type the latency formulas are written over.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync {}

impl<T: Num + Copy + PartialOrd + Debug + Send + Sync> Scalar for T {}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("invalid independent set: {0}")]
    InvalidSet(String),
    #[error("degenerate configuration: {clipped_fraction:.4} of sampled execution times were clipped")]
    DegenerateConfig { clipped_fraction: f64 },
    #[error("exhaustive search over {n} calls exceeds the bound of {max}")]
    TooLarge { n: usize, max: usize },
}

/// Generation and execution cost of one call.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CallCost<T> {
    pub gen: T,
    pub exec: T,
}

/// A nonempty set of mutually independent calls with positive costs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndependentSet<T> {
    items: Vec<CallCost<T>>,
}

impl<T: Scalar> IndependentSet<T> {
    pub fn new(items: Vec<CallCost<T>>) -> Result<Self, AnalyticsError> {
        if items.is_empty() {
            return Err(AnalyticsError::InvalidSet("set is empty".into()));
        }
        if let Some((i, c)) = items.iter().find_position(|c| !(c.gen > T::zero() && c.exec > T::zero())) {
            return Err(AnalyticsError::InvalidSet(format!("item {i} has non-positive cost {c:?}")));
        }
        Ok(IndependentSet { items })
    }

    /// Builds a set from `(G, E)` pairs.
    pub fn from_pairs(pairs: &[(T, T)]) -> Result<Self, AnalyticsError> {
        Self::new(pairs.iter().map(|&(gen, exec)| CallCost { gen, exec }).collect())
    }

    pub fn items(&self) -> &[CallCost<T>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn total_gen(&self) -> T {
        self.items.iter().fold(T::zero(), |acc, c| acc + c.gen)
    }

    fn max_exec(&self) -> T {
        self.items.iter().map(|c| c.exec).fold(self.items[0].exec, max)
    }

    /// Indices in generation order: decreasing `E`, ties by position.
    pub fn lpt_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by(|&a, &b| {
            self.items[b]
                .exec
                .partial_cmp(&self.items[a].exec)
                .expect("costs are comparable")
                .then(a.cmp(&b))
        });
        order
    }

    /// Latest completion time when calls are generated back to back in
    /// `order` and each starts executing as soon as it is generated.
    pub fn makespan_of_order(&self, order: &[usize]) -> T {
        let mut elapsed = T::zero();
        let mut latest = T::zero();
        for &i in order {
            elapsed = elapsed + self.items[i].gen;
            latest = max(latest, elapsed + self.items[i].exec);
        }
        latest
    }
}

fn max<T: PartialOrd>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

/// Sequential synchronous calling: `Σ G + Σ E`.
pub fn latency_sync<T: Scalar>(set: &IndependentSet<T>) -> T {
    set.items.iter().fold(T::zero(), |acc, c| acc + c.gen + c.exec)
}

/// Synchronous calling with a parallel executor: `Σ G + max E`.
pub fn latency_sync_parallel<T: Scalar>(set: &IndependentSet<T>) -> T {
    set.total_gen() + set.max_exec()
}

/// Asynchronous calling with LPT generation order.
pub fn latency_async_lpt<T: Scalar>(set: &IndependentSet<T>) -> T {
    set.makespan_of_order(&set.lpt_order())
}

/// The predecessor-set form `max_f (E(f) + Σ_{g: E(g) ≥ E(f)} G(g))`.
///
/// With tied execution times the per-call terms count every tied call as a
/// predecessor, but the maximum is unchanged: the last tied call in the
/// sequential order has the same `E` and already pays the whole tied prefix.
/// So this equals [`latency_async_lpt`] on every input.
pub fn latency_async_pred_set<T: Scalar>(set: &IndependentSet<T>) -> T {
    set.items
        .iter()
        .map(|f| {
            let preds = set
                .items
                .iter()
                .filter(|g| f.exec <= g.exec)
                .fold(T::zero(), |acc, g| acc + g.gen);
            f.exec + preds
        })
        .fold(T::zero(), max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyTriple<T> {
    pub l_sync: T,
    pub l_sync_parallel: T,
    pub l_async: T,
}

pub fn latency_triple<T: Scalar>(set: &IndependentSet<T>) -> LatencyTriple<T> {
    LatencyTriple {
        l_sync: latency_sync(set),
        l_sync_parallel: latency_sync_parallel(set),
        l_async: latency_async_lpt(set),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport<T> {
    pub holds: bool,
    /// Single-call set: all three latencies coincide and the strict part is vacuous.
    pub degenerate: bool,
    pub triple: LatencyTriple<T>,
}

/// Checks `async ≤ sync-parallel < sync`.
pub fn check_dominance<T: Scalar>(set: &IndependentSet<T>) -> DominanceReport<T> {
    let triple = latency_triple(set);
    let degenerate = set.len() == 1;
    let ordered = triple.l_async <= triple.l_sync_parallel;
    let strict = if degenerate {
        triple.l_sync_parallel == triple.l_sync && triple.l_async == triple.l_sync
    } else {
        triple.l_sync_parallel < triple.l_sync
    };
    DominanceReport { holds: ordered && strict, degenerate, triple }
}

/// Order-statistics speedup estimate for a set of calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupEstimate<T> {
    pub mean_e: T,
    pub mean_g: T,
    pub sigma_e: T,
    pub n: usize,
    /// `1 + mean_e / mean_g`
    pub predicted_ratio: T,
    /// Expected maximum of `n` normal samples: `mean_e + sigma_e·sqrt(2 ln n)`.
    pub max_e_approx: T,
}

impl<T: Float + Scalar> SpeedupEstimate<T> {
    pub fn of(set: &IndependentSet<T>) -> Self {
        let n = T::from(set.len()).unwrap();
        let mean_g = set.total_gen() / n;
        let mean_e = set.items.iter().fold(T::zero(), |a, c| a + c.exec) / n;
        let var = set.items.iter().fold(T::zero(), |a, c| a + (c.exec - mean_e).powi(2)) / n;
        let sigma_e = var.sqrt();
        let two = T::one() + T::one();
        SpeedupEstimate {
            mean_e,
            mean_g,
            sigma_e,
            n: set.len(),
            predicted_ratio: T::one() + mean_e / mean_g,
            max_e_approx: mean_e + sigma_e * (two * n.ln()).sqrt(),
        }
    }
}

/// Below this many calls the speedup approximation is not expected to hold.
pub const ASYMPTOTIC_MIN_N: usize = 1000;

/// Execution times sampled below this floor are clipped to it.
pub const EXEC_FLOOR_MS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpeedupRatioConfig {
    pub n: usize,
    pub e_mean: f64,
    pub e_sigma: f64,
    pub g_mean: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRatioReport {
    pub config: SpeedupRatioConfig,
    pub measured_ratio: f64,
    pub predicted_ratio: f64,
    pub rel_error: f64,
    pub below_asymptotic_regime: bool,
    pub clipped_fraction: f64,
}

/// Monte-Carlo check of the `1 + E̅/G̅` speedup approximation.
///
/// Each trial samples `n` execution times from `Normal(e_mean, e_sigma)`
/// (clipped at [`EXEC_FLOOR_MS`]) with every generation time fixed at
/// `g_mean`, and measures `latency_sync / latency_async_lpt`. Trials use
/// independent seeds derived from `seed` and run in parallel.
pub fn check_speedup_ratio(cfg: SpeedupRatioConfig) -> Result<SpeedupRatioReport, AnalyticsError> {
    if cfg.n == 0 || cfg.trials == 0 {
        return Err(AnalyticsError::InvalidSet("n and trials must be positive".into()));
    }
    if !(cfg.g_mean > 0.0 && cfg.e_mean > 0.0 && cfg.e_sigma >= 0.0) {
        return Err(AnalyticsError::InvalidSet("means must be positive and sigma non-negative".into()));
    }
    let normal = Normal::new(cfg.e_mean, cfg.e_sigma)
        .map_err(|e| AnalyticsError::InvalidSet(e.to_string()))?;
    let per_trial: Vec<(f64, f64, usize)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
            let mut clipped = 0;
            let items: Vec<CallCost<f64>> = (0..cfg.n)
                .map(|_| {
                    let mut e = normal.sample(&mut rng);
                    if e < EXEC_FLOOR_MS {
                        e = EXEC_FLOOR_MS;
                        clipped += 1;
                    }
                    CallCost { gen: cfg.g_mean, exec: e }
                })
                .collect();
            let set = IndependentSet::new(items).expect("positive by construction");
            let est = SpeedupEstimate::of(&set);
            (latency_sync(&set) / latency_async_lpt(&set), est.predicted_ratio, clipped)
        })
        .collect();
    let trials = cfg.trials as f64;
    let clipped: usize = per_trial.iter().map(|t| t.2).sum();
    let clipped_fraction = clipped as f64 / (cfg.n * cfg.trials) as f64;
    if clipped_fraction > 0.01 {
        return Err(AnalyticsError::DegenerateConfig { clipped_fraction });
    }
    let measured_ratio = per_trial.iter().map(|t| t.0).sum::<f64>() / trials;
    let predicted_ratio = per_trial.iter().map(|t| t.1).sum::<f64>() / trials;
    Ok(SpeedupRatioReport {
        config: cfg,
        measured_ratio,
        predicted_ratio,
        rel_error: (measured_ratio - predicted_ratio).abs() / predicted_ratio,
        below_asymptotic_regime: cfg.n < ASYMPTOTIC_MIN_N,
        clipped_fraction,
    })
}

/// How [`check_lpt_optimal`] searches generation orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderSearch {
    /// All `n!` orders; refused above `max_n` calls.
    Exhaustive { max_n: usize },
    /// Uniformly random orders.
    Sampled { samples: usize, seed: u64 },
}

impl Default for OrderSearch {
    fn default() -> Self {
        OrderSearch::Exhaustive { max_n: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LptOptimalReport<T> {
    pub lpt_latency: T,
    pub best_latency: T,
    /// An order achieving `best_latency`; strictly better than LPT only if the
    /// property fails.
    pub witness_order: Vec<usize>,
    pub orders_evaluated: usize,
    pub holds: bool,
}

/// Searches generation orders for one that beats the LPT order.
pub fn check_lpt_optimal<T: Scalar>(
    set: &IndependentSet<T>,
    search: OrderSearch,
) -> Result<LptOptimalReport<T>, AnalyticsError> {
    let lpt_order = set.lpt_order();
    let lpt_latency = set.makespan_of_order(&lpt_order);
    let mut best = (lpt_latency, lpt_order);
    let mut evaluated = 0usize;
    let mut consider = |order: Vec<usize>, best: &mut (T, Vec<usize>)| {
        evaluated += 1;
        let m = set.makespan_of_order(&order);
        if m < best.0 {
            *best = (m, order);
        }
    };
    match search {
        OrderSearch::Exhaustive { max_n } => {
            if set.len() > max_n {
                return Err(AnalyticsError::TooLarge { n: set.len(), max: max_n });
            }
            for order in (0..set.len()).permutations(set.len()) {
                consider(order, &mut best);
            }
        }
        OrderSearch::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order: Vec<usize> = (0..set.len()).collect();
            for _ in 0..samples {
                order.shuffle(&mut rng);
                consider(order.clone(), &mut best);
            }
        }
    }
    Ok(LptOptimalReport {
        lpt_latency,
        holds: !(best.0 < lpt_latency),
        best_latency: best.0,
        witness_order: best.1,
        orders_evaluated: evaluated,
    })
}

/// An adjacent pair that violates decreasing-`E` order but whose exchange
/// would increase the makespan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwapViolation<T> {
    pub position: usize,
    pub before: T,
    pub after: T,
}

/// For every adjacent pair in `order` with `E` increasing, checks that
/// exchanging the pair does not increase the makespan.
pub fn check_adjacent_swaps<T: Scalar>(set: &IndependentSet<T>, order: &[usize]) -> Result<usize, SwapViolation<T>> {
    let before = set.makespan_of_order(order);
    let mut checked = 0;
    let mut swapped = order.to_vec();
    for i in 0..order.len().saturating_sub(1) {
        if set.items[order[i]].exec < set.items[order[i + 1]].exec {
            swapped.swap(i, i + 1);
            let after = set.makespan_of_order(&swapped);
            swapped.swap(i, i + 1);
            checked += 1;
            if after > before {
                return Err(SwapViolation { position: i, before, after });
            }
        }
    }
    Ok(checked)
}

/// Which property a [`VerifyReport`] covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// `async ≤ sync-parallel < sync` on independent sets.
    Dominance,
    /// Measured speedup against `1 + E̅/G̅`.
    SpeedupRatio,
    /// No generation order beats LPT.
    LptOptimal,
}

impl Property {
    pub const ALL: [Property; 3] = [Property::Dominance, Property::SpeedupRatio, Property::LptOptimal];

    pub fn name(self) -> &'static str {
        match self {
            Property::Dominance => "dominance",
            Property::SpeedupRatio => "speedup_ratio",
            Property::LptOptimal => "lpt_optimal",
        }
    }
}

impl std::str::FromStr for Property {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.replace('-', "_");
        Property::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| format!("unknown property {s:?}; expected dominance, speedup-ratio or lpt-optimal"))
    }
}

/// Outcome of a seeded multi-instance check. `worst_case` holds the first
/// failing instance when `holds` is false, else the tightest one seen.
/// Latencies inside it are in ticks of 0.01 ms; sets are in ms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub theorem: Property,
    pub trials: usize,
    pub holds: bool,
    pub worst_case: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_error: Option<f64>,
}

/// Random set with `n` drawn from `n_range` and both costs from
/// `uniform(lo, hi)` ms, rounded to 0.01 ms.
pub fn random_set<R: rand::Rng + ?Sized>(
    rng: &mut R,
    n_range: std::ops::RangeInclusive<usize>,
    lo: f64,
    hi: f64,
) -> IndependentSet<f64> {
    let n = rng.gen_range(n_range);
    let mut draw = || ((rng.gen_range(lo..=hi) * 100.0).round() / 100.0).max(0.01);
    let items = (0..n).map(|_| CallCost { gen: draw(), exec: draw() }).collect();
    IndependentSet::new(items).expect("positive by construction")
}

/// The same set in integer hundredths of a millisecond, so comparisons are exact.
pub fn to_ticks(set: &IndependentSet<f64>) -> IndependentSet<i64> {
    let t = |x: f64| ((x * 100.0).round() as i64).max(1);
    IndependentSet { items: set.items.iter().map(|c| CallCost { gen: t(c.gen), exec: t(c.exec) }).collect() }
}

fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64))
}

/// Dominance over `trials` random sets with costs from `uniform(1, 1000)`.
pub fn verify_dominance(trials: usize, n_range: std::ops::RangeInclusive<usize>, seed: u64) -> VerifyReport {
    let results: Vec<(IndependentSet<f64>, DominanceReport<i64>)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let set = random_set(&mut trial_rng(seed, t), n_range.clone(), 1.0, 1000.0);
            let r = check_dominance(&to_ticks(&set));
            (set, r)
        })
        .collect();
    let margin = |r: &DominanceReport<i64>| r.triple.l_sync_parallel - r.triple.l_async;
    let failing = results.iter().find(|(_, r)| !r.holds);
    let worst = failing.or_else(|| results.iter().min_by_key(|(_, r)| margin(r)));
    VerifyReport {
        theorem: Property::Dominance,
        trials,
        holds: failing.is_none(),
        worst_case: worst.map_or(serde_json::Value::Null, |(set, r)| serde_json::json!({"set": set, "report": r})),
        rel_error: None,
    }
}

/// LPT optimality by exhaustive search over `trials` random sets, plus the
/// adjacent-swap check on a random order of each set.
pub fn verify_lpt_optimal(trials: usize, n_range: std::ops::RangeInclusive<usize>, seed: u64) -> VerifyReport {
    let max_n = *n_range.end();
    let results: Vec<serde_json::Value> = (0..trials)
        .into_par_iter()
        .filter_map(|t| {
            let mut rng = trial_rng(seed, t);
            let set = random_set(&mut rng, n_range.clone(), 1.0, 1000.0);
            let ticks = to_ticks(&set);
            let r = check_lpt_optimal(&ticks, OrderSearch::Exhaustive { max_n: max_n.max(1) }).expect("within bound");
            let mut order: Vec<usize> = (0..set.len()).collect();
            order.shuffle(&mut rng);
            let swaps = check_adjacent_swaps(&ticks, &order);
            (!r.holds || swaps.is_err()).then(|| {
                serde_json::json!({"set": set, "report": r, "order": order, "swap_violation": swaps.err()})
            })
        })
        .collect();
    VerifyReport {
        theorem: Property::LptOptimal,
        trials,
        holds: results.is_empty(),
        worst_case: results.into_iter().next().unwrap_or(serde_json::Value::Null),
        rel_error: None,
    }
}

/// Speedup ratio at each `E̅/G̅` in `ratios` (with `G̅ = e_mean / ratio`);
/// holds when every relative error is within `tolerance`.
pub fn verify_speedup_ratio(
    base: SpeedupRatioConfig,
    ratios: &[f64],
    tolerance: f64,
) -> Result<VerifyReport, AnalyticsError> {
    let mut reports = Vec::with_capacity(ratios.len());
    for &r in ratios {
        if !(r > 0.0) {
            return Err(AnalyticsError::InvalidSet(format!("ratio must be positive, got {r}")));
        }
        reports.push(check_speedup_ratio(SpeedupRatioConfig { g_mean: base.e_mean / r, ..base })?);
    }
    let worst = reports.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    Ok(VerifyReport {
        theorem: Property::SpeedupRatio,
        trials: base.trials,
        holds: reports.iter().all(|r| r.rel_error <= tolerance),
        rel_error: worst.map(|r| r.rel_error),
        worst_case: serde_json::to_value(worst).expect("report serializes"),
    })
}
