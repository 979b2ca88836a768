//! Run accounting. The identity `drafts_attempted = accepted + Σ rejected`
//! holds at every point; spillover records (verified past the target) are
//! tracked separately and never counted toward the target.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::RejectionCategory;
use crate::sampling::Cell;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub drafts_attempted: u64,
    pub accepted: u64,
    #[serde(default)]
    pub rejected: BTreeMap<String, u64>,
    #[serde(default)]
    pub spillover: u64,
    /// Draws skipped before a draft existed (domain-selection failures).
    #[serde(default)]
    pub sampling_skips: u64,
    #[serde(default)]
    pub per_cell_accepted: BTreeMap<String, u64>,
    #[serde(default)]
    pub wall_time_ms: u64,
    #[serde(default)]
    pub backend_calls: u64,
    #[serde(default)]
    pub backend_errors: u64,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl RunStats {
    pub fn record_accept(&mut self, cell: Cell) {
        self.drafts_attempted += 1;
        self.accepted += 1;
        *self.per_cell_accepted.entry(cell.to_string()).or_insert(0) += 1;
    }

    pub fn record_rejection(&mut self, category: RejectionCategory) {
        self.drafts_attempted += 1;
        *self.rejected.entry(category.as_str().to_string()).or_insert(0) += 1;
    }

    pub fn record_spillover(&mut self) {
        self.spillover += 1;
    }

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn rejected_count(&self, category: RejectionCategory) -> u64 {
        self.rejected.get(category.as_str()).copied().unwrap_or(0)
    }

    pub fn identity_holds(&self) -> bool {
        self.drafts_attempted == self.accepted + self.rejected_total()
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("drafts attempted   {:>10}\n", self.drafts_attempted));
        out.push_str(&format!("accepted           {:>10}\n", self.accepted));
        out.push_str(&format!("rejected           {:>10}\n", self.rejected_total()));
        for category in RejectionCategory::ALL {
            let n = self.rejected_count(category);
            if n > 0 {
                out.push_str(&format!("  {:<17}{:>10}\n", category.as_str(), n));
            }
        }
        out.push_str(&format!("spillover          {:>10}\n", self.spillover));
        if self.sampling_skips > 0 {
            out.push_str(&format!("sampling skips     {:>10}\n", self.sampling_skips));
        }
        if !self.per_cell_accepted.is_empty() {
            out.push_str("accepted per cell\n");
            for (cell, n) in &self.per_cell_accepted {
                out.push_str(&format!("  {:<17}{:>10}\n", cell, n));
            }
        }
        out.push_str(&format!("backend calls      {:>10}\n", self.backend_calls));
        out.push_str(&format!("prompt tokens      {:>10}\n", self.prompt_tokens));
        out.push_str(&format!("completion tokens  {:>10}\n", self.completion_tokens));
        out.push_str(&format!("wall time          {:>8} ms\n", self.wall_time_ms));
        out
    }
}
