//! API cost tracking with an optional hard cap.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use super::ProviderError;

/// Prices in currency units per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

impl ModelPrice {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 / 1000.0 * self.input_per_1k
            + completion_tokens as f64 / 1000.0 * self.output_per_1k
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CostTable {
    prices: HashMap<String, ModelPrice>,
}

impl CostTable {
    pub fn new() -> Self {
        CostTable::default()
    }

    pub fn with_price(mut self, model: impl Into<String>, input_per_1k: f64, output_per_1k: f64) -> Self {
        self.insert(model, ModelPrice { input_per_1k, output_per_1k })
            .expect("negative price");
        self
    }

    pub fn insert(&mut self, model: impl Into<String>, price: ModelPrice) -> Result<(), ProviderError> {
        let model = model.into();
        if !(price.input_per_1k >= 0.0 && price.output_per_1k >= 0.0) {
            return Err(ProviderError::InvalidRequest(format!(
                "negative or undefined price for model `{model}`"
            )));
        }
        self.prices.insert(model, price);
        Ok(())
    }

    pub fn price(&self, model: &str) -> Option<&ModelPrice> {
        self.prices.get(model)
    }

    /// Parse `{"model": {"input_per_1k": .., "output_per_1k": ..}, ...}`.
    pub fn from_json(raw: &str) -> Result<Self, ProviderError> {
        let parsed: HashMap<String, ModelPrice> = serde_json::from_str(raw)
            .map_err(|e| ProviderError::Malformed(format!("cost table: {e}")))?;
        let mut table = CostTable::new();
        for (model, price) in parsed {
            table.insert(model, price)?;
        }
        Ok(table)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Unavailable(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&raw)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("budget exceeded: charge {attempted:.6} on top of {spent:.6} would pass the cap {cap:.6}")]
pub struct BudgetExceeded {
    pub spent: f64,
    pub attempted: f64,
    pub cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub amount: f64,
    pub total: f64,
}

#[derive(Debug, Default)]
struct Ledger {
    total: f64,
    accepted: usize,
    /// Set once a charge has been refused; later calls are blocked.
    exhausted: Option<BudgetExceeded>,
    unpriced: BTreeSet<String>,
}

/// Shared running total of API spend.
#[derive(Debug)]
pub struct BudgetTracker {
    table: CostTable,
    cap: Option<f64>,
    ledger: Mutex<Ledger>,
}

impl BudgetTracker {
    pub fn new(table: CostTable, cap: Option<f64>) -> Self {
        BudgetTracker {
            table,
            cap,
            ledger: Mutex::new(Ledger::default()),
        }
    }

    pub fn unlimited(table: CostTable) -> Self {
        BudgetTracker::new(table, None)
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn total(&self) -> f64 {
        self.ledger.lock().unwrap().total
    }

    pub fn accepted_charges(&self) -> usize {
        self.ledger.lock().unwrap().accepted
    }

    pub fn unpriced_models(&self) -> Vec<String> {
        self.ledger.lock().unwrap().unpriced.iter().cloned().collect()
    }

    /// Errors once a previous charge has been refused.
    pub fn ensure_open(&self) -> Result<(), BudgetExceeded> {
        match &self.ledger.lock().unwrap().exhausted {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    /// Price the usage and add it to the total, unless that would pass the cap.
    pub fn charge(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> Result<Charge, BudgetExceeded> {
        let mut ledger = self.ledger.lock().unwrap();
        let amount = match self.table.price(model) {
            Some(price) => price.cost(prompt_tokens, completion_tokens),
            None => {
                if ledger.unpriced.insert(model.to_string()) {
                    warn!(model, "unpriced model; charging 0");
                }
                0.0
            }
        };
        if let Some(cap) = self.cap {
            if ledger.total + amount > cap {
                let err = BudgetExceeded {
                    spent: ledger.total,
                    attempted: amount,
                    cap,
                };
                ledger.exhausted = Some(err.clone());
                return Err(err);
            }
        }
        ledger.total += amount;
        ledger.accepted += 1;
        Ok(Charge {
            amount,
            total: ledger.total,
        })
    }
}

/// Free-function form of [`BudgetTracker::charge`] returning the running total.
pub fn charge(
    tracker: &BudgetTracker,
    model: &str,
    prompt_tokens: u64,
    completion_tokens: u64,
) -> Result<f64, BudgetExceeded> {
    tracker
        .charge(model, prompt_tokens, completion_tokens)
        .map(|c| c.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> CostTable {
        CostTable::new().with_price("gpt-4o", 0.005, 0.015)
    }

    #[test]
    fn hand_arithmetic() {
        let tracker = BudgetTracker::unlimited(table());
        let c = tracker.charge("gpt-4o", 1000, 2000).unwrap();
        // 1000/1000 * 0.005 + 2000/1000 * 0.015
        assert!((c.amount - 0.035).abs() < 1e-12);
        assert!((tracker.total() - 0.035).abs() < 1e-12);
    }

    #[test]
    fn zero_usage_costs_nothing() {
        let tracker = BudgetTracker::unlimited(table());
        assert_eq!(tracker.charge("gpt-4o", 0, 0).unwrap().amount, 0.0);
    }

    #[test]
    fn cap_refuses_and_blocks() {
        let tracker = BudgetTracker::new(table(), Some(0.01));
        let err = tracker.charge("gpt-4o", 1000, 2000).unwrap_err();
        assert!((err.attempted - 0.035).abs() < 1e-12);
        assert_eq!(tracker.total(), 0.0);
        assert!(tracker.ensure_open().is_err());
    }

    #[test]
    fn unpriced_models_are_free_but_recorded() {
        let tracker = BudgetTracker::new(table(), Some(0.0));
        assert_eq!(charge(&tracker, "mystery", 10_000, 10_000).unwrap(), 0.0);
        assert_eq!(tracker.unpriced_models(), ["mystery"]);
    }

    #[test]
    fn table_rejects_negative_prices() {
        assert!(CostTable::from_json(r#"{"m": {"input_per_1k": -1, "output_per_1k": 0}}"#).is_err());
        let t = CostTable::from_json(r#"{"m": {"input_per_1k": 1, "output_per_1k": 2}}"#).unwrap();
        assert_eq!(t.price("m").unwrap().output_per_1k, 2.0);
    }

    proptest! {
        #[test]
        fn total_is_monotone_and_sums_accepted(
            usages in prop::collection::vec((0u64..5000, 0u64..5000, any::<bool>()), 0..40),
            cap in prop::option::of(0.0f64..1.0),
        ) {
            let tracker = BudgetTracker::new(table(), cap);
            let mut independent = 0.0f64;
            let mut last = 0.0f64;
            for (p, c, priced) in usages {
                let model = if priced { "gpt-4o" } else { "other" };
                if let Ok(charge) = tracker.charge(model, p, c) {
                    independent += charge.amount;
                    let expected = if priced { p as f64 * 0.005 / 1000.0 + c as f64 * 0.015 / 1000.0 } else { 0.0 };
                    prop_assert!((charge.amount - expected).abs() < 1e-12);
                }
                let total = tracker.total();
                prop_assert!(total >= last);
                last = total;
                if let Some(cap) = cap { prop_assert!(total <= cap); }
            }
            prop_assert!((tracker.total() - independent).abs() < 1e-9);
        }
    }
}
