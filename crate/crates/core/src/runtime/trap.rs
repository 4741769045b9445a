use serde::{Deserialize, Serialize};

use crate::Ms;

/// KV-cache cost model for a paused context of `n` tokens:
/// `swap(n) = s·n`, `recompute(n) = a·n² + b·n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapCostModel {
    pub swap_ms_per_token: f64,
    pub recompute_quad_ms_per_token2: f64,
    pub recompute_lin_ms_per_token: f64,
}

impl TrapCostModel {
    /// Profile for a small (1B-class) model.
    pub const SMALL: TrapCostModel =
        TrapCostModel { swap_ms_per_token: 0.4, recompute_quad_ms_per_token2: 3.3e-4, recompute_lin_ms_per_token: 0.05 };
    /// Profile for a larger (3B-class) model.
    pub const LARGE: TrapCostModel =
        TrapCostModel { swap_ms_per_token: 0.3, recompute_quad_ms_per_token2: 1.5e-3, recompute_lin_ms_per_token: 0.1 };

    pub fn profile(name: &str) -> Option<TrapCostModel> {
        match name {
            "small" => Some(Self::SMALL),
            "large" => Some(Self::LARGE),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let c = [self.swap_ms_per_token, self.recompute_quad_ms_per_token2, self.recompute_lin_ms_per_token];
        if c.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(format!("trap cost coefficients must be positive: {self:?}"))
        }
    }

    pub fn swap_ms(&self, n: u64) -> Ms {
        self.swap_ms_per_token * n as f64
    }

    pub fn recompute_ms(&self, n: u64) -> Ms {
        let n = n as f64;
        self.recompute_quad_ms_per_token2 * n * n + self.recompute_lin_ms_per_token * n
    }

    /// Context length where swap and recompute cost the same, `(s − b)/a`.
    /// Recompute is cheaper below it. Zero when swap is never more expensive.
    pub fn crossover_tokens(&self) -> f64 {
        ((self.swap_ms_per_token - self.recompute_lin_ms_per_token) / self.recompute_quad_ms_per_token2).max(0.0)
    }
}

impl Default for TrapCostModel {
    fn default() -> Self {
        Self::SMALL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapDecision {
    Retain,
    Swap,
    Recompute,
}

/// KV-cache strategy for a trap: keep the cache if releasing it costs more
/// than the expected wait, otherwise take the cheaper of recompute and swap.
pub fn handle_trap(context_tokens: u64, expected_wait_ms: Ms, model: &TrapCostModel) -> TrapDecision {
    let swap = model.swap_ms(context_tokens);
    let recompute = model.recompute_ms(context_tokens);
    if swap.min(recompute) > expected_wait_ms {
        TrapDecision::Retain
    } else if recompute <= swap {
        TrapDecision::Recompute
    } else {
        TrapDecision::Swap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profiles_at_300_tokens() {
        assert_eq!(handle_trap(300, 100.0, &TrapCostModel::SMALL), TrapDecision::Recompute);
        assert_eq!(handle_trap(300, 100.0, &TrapCostModel::LARGE), TrapDecision::Swap);
        assert!((TrapCostModel::SMALL.recompute_ms(300) - 44.7).abs() < 1e-9);
        assert!((TrapCostModel::LARGE.swap_ms(300) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn zero_wait_retains() {
        for n in 1..2000 {
            assert_eq!(handle_trap(n, 0.0, &TrapCostModel::SMALL), TrapDecision::Retain);
        }
    }

    #[test]
    fn crossover() {
        let m = TrapCostModel::SMALL;
        let x = m.crossover_tokens();
        assert!((x - 0.35 / 3.3e-4).abs() < 1e-9);
        let n = x.floor() as u64;
        assert!(m.recompute_ms(n) <= m.swap_ms(n));
        assert!(m.recompute_ms(n + 1) > m.swap_ms(n + 1));
    }

    proptest! {
        #[test]
        fn retain_region_is_a_down_set(n in 0u64..5000, w1 in 0.0f64..5000.0, w2 in 0.0f64..5000.0) {
            let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
            let m = TrapCostModel::LARGE;
            if handle_trap(n, hi, &m) == TrapDecision::Retain {
                prop_assert_eq!(handle_trap(n, lo, &m), TrapDecision::Retain);
            }
        }
    }
}
