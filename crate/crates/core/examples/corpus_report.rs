//! Prints per-graph speedups for the built-in corpus.
//!
//! cargo run --release -p asyncall --example corpus_report

use asyncall::corpus::{builtin, Category};
use asyncall::sim::{simulate, simulate_arrivals, sweep_instance, Arrival, Policy, SimConfig, SweepSpec};

const SEEDS: u64 = 50;

fn main() {
    let spec = SweepSpec {
        policies: vec![],
        seeds: vec![],
        base: SimConfig { tpot_ms: Some(5.0), ..Default::default() },
        exec_range: Some((30.0, 500.0)),
    };
    println!("{:<20} {:>8} {:>10} {:>10} {:>10}", "graph", "async", "naive310", "naive59", "arrivals");
    for (id, g) in builtin() {
        let (mut sp, mut hi, mut lo, mut arr) = (0.0, 0, 0, 0.0);
        for seed in 0..SEEDS {
            let inst = sweep_instance(&g, &spec, seed);
            let cfg = |policy, ttft| SimConfig { policy, ttft_ms: ttft, seed, ..spec.base.clone() };
            sp += simulate(&inst, &cfg(Policy::AsyncLpt, 0.0)).unwrap().speedup_vs_sync;
            for (ttft, count, naive_slower) in [(310.0, &mut hi, true), (59.0, &mut lo, false)] {
                let naive = simulate(&inst, &cfg(Policy::AsyncNaive, ttft)).unwrap().makespan_ms;
                let par = simulate(&inst, &cfg(Policy::SyncParallel, ttft)).unwrap().makespan_ms;
                if (naive > par) == naive_slower {
                    *count += 1;
                }
            }
            if Category::of(&id) == Some(Category::MultiStep) {
                let sched: Vec<Arrival> = inst
                    .components()
                    .into_iter()
                    .enumerate()
                    .map(|(k, graph)| Arrival { at_ms: 200.0 * k as f64, graph })
                    .collect();
                arr += simulate_arrivals(&sched, &cfg(Policy::AsyncLpt, 0.0)).unwrap().speedup_vs_sync;
            }
        }
        let n = SEEDS as f64;
        println!("{id:<20} {:>8.2} {:>10} {:>10} {:>10.2}", sp / n, hi, lo, arr / n);
    }
}
