//! Selection hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer layer index assigned by the extractor. Treated as an opaque key.
pub type LayerId = u32;

/// Number of top FFN neurons a compact record retains per layer.
pub const RAW_TOP_NEURONS: usize = 64;

/// Values within this distance of an integer count as that integer when
/// rounding set sizes such as `ceil(rho * N)`.
pub const COUNT_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Target coreset size. When unset, `floor(budget_fraction * N)`.
    pub budget_m: Option<usize>,
    pub budget_fraction: f64,
    /// Eligibility keep ratio on raw multimodal gain.
    pub rho: f64,
    /// Shortlist expansion factor relative to the budget.
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Temperature of the bucket quality mass.
    pub tau: f64,
    /// Maximum fraction of the budget any one bucket may receive.
    pub gamma: f64,
    pub k_per_layer: Vec<usize>,
    pub layers: Vec<LayerId>,
    /// Percentiles used to clip raw scores before min-max scaling.
    pub clip_percentiles: (f64, f64),
    pub allow_global_backfill: bool,
    /// Unused by selection; carried so synthetic runs are reproducible from
    /// the manifest header.
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            budget_m: None,
            budget_fraction: 0.2,
            rho: 0.6,
            eta: 2.0,
            alpha: 0.5,
            beta: 0.5,
            tau: 0.2,
            gamma: 0.05,
            k_per_layer: vec![1, 1, 2, 3],
            layers: vec![8, 12, 16, 20],
            clip_percentiles: (1.0, 99.0),
            allow_global_backfill: false,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.budget_m == Some(0) {
            return bad("budget_m must be positive".into());
        }
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return bad(format!("budget_fraction {} not in (0, 1]", self.budget_fraction));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho {} not in (0, 1]", self.rho));
        }
        if !(self.eta >= 1.0 && self.eta.is_finite()) {
            return bad(format!("eta {} must be >= 1", self.eta));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha + self.beta > 0.0) {
            return bad("alpha and beta must be >= 0 with a positive sum".into());
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return bad("alpha and beta must be finite".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} not in (0, 1]", self.gamma));
        }
        if self.layers.is_empty() {
            return bad("layers must be nonempty".into());
        }
        if self.layers.len() != self.k_per_layer.len() {
            return bad(format!(
                "{} layers but {} k_per_layer entries",
                self.layers.len(),
                self.k_per_layer.len()
            ));
        }
        if self.k_per_layer.iter().any(|&k| k == 0 || k > RAW_TOP_NEURONS) {
            return bad(format!("k_per_layer entries must be in 1..={RAW_TOP_NEURONS}"));
        }
        let mut sorted = self.layers.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.layers.len() {
            return bad("layers must be unique".into());
        }
        let (lo, hi) = self.clip_percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return bad(format!("clip_percentiles ({lo}, {hi}) must satisfy 0 <= low < high <= 100"));
        }
        Ok(())
    }

    /// The budget `M` for a population of `n` samples.
    pub fn resolve_budget(&self, n: usize) -> usize {
        match self.budget_m {
            Some(m) => m,
            None => floor_count(self.budget_fraction * n as f64),
        }
    }

    /// `(layer, k)` pairs in configuration order.
    pub fn layer_k(&self) -> impl Iterator<Item = (LayerId, usize)> + '_ {
        self.layers.iter().copied().zip(self.k_per_layer.iter().copied())
    }
}

/// `ceil(x)` for a nonnegative set-size expression, snapping values that are
/// an integer up to rounding noise (e.g. `0.6 * 10`).
pub fn ceil_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= COUNT_SNAP * r.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// `floor(x)` with the same integer snapping as [`ceil_count`].
pub fn floor_count(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= COUNT_SNAP * r.abs().max(1.0) {
        r as usize
    } else {
        x.floor() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SelectionConfig::default().validate().unwrap();
    }

    #[test]
    fn snapping() {
        assert_eq!(ceil_count(0.6 * 10.0), 6);
        assert_eq!(ceil_count(0.05 * 133_059.0), 6653);
        assert_eq!(ceil_count(2.0 * 30.0), 60);
        assert_eq!(ceil_count(0.1 * 3.0), 1);
        assert_eq!(floor_count(0.2 * 665_298.0), 133_059);
        assert_eq!(floor_count(0.7 * 10.0), 7);
    }

    #[test]
    fn rejects_bad_knobs() {
        let d = SelectionConfig::default;
        assert!(SelectionConfig { rho: 0.0, ..d() }.validate().is_err());
        assert!(SelectionConfig { alpha: 0.0, beta: 0.0, ..d() }.validate().is_err());
        let mut c = SelectionConfig::default();
        c.k_per_layer.pop();
        assert!(c.validate().is_err());
        assert!(SelectionConfig { clip_percentiles: (50.0, 50.0), ..d() }.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<SelectionConfig>(r#"{"rho":0.5,"bogus":1}"#);
        assert!(err.is_err());
        let c: SelectionConfig = serde_json::from_str(r#"{"rho":0.5}"#).unwrap();
        assert_eq!(c.rho, 0.5);
        assert_eq!(c.eta, 2.0);
    }
}
