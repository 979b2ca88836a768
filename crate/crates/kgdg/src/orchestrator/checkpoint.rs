//! Crash-safe run state. The checkpoint is written after every batch with an
//! atomic rename; output files are append-only, and their recorded byte
//! offsets let a resume truncate away any partially written batch.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::RunError;
use crate::orchestrator::stats::RunStats;
use crate::sampling::{Cell, DomainChoiceCache, SamplerState, TaskId};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileOffsets {
    pub drafts: u64,
    pub verified: u64,
    pub rejected: u64,
    pub spillover: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub accepted_count: u64,
    pub next_draw_ordinal: u64,
    pub consecutive_rejects: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    /// (task, domain, accepted count) triples.
    pub sampler_counts: Vec<(u8, Domain, u64)>,
    /// Cached LLM domain choices, one per task.
    pub domain_choices: Vec<(u8, Domain)>,
    /// Question fingerprints of accepted records, sorted.
    pub dedup_fingerprints: Vec<u64>,
    pub file_offsets: FileOffsets,
    pub stats: RunStats,
}

impl Checkpoint {
    pub fn sampler_state(&self) -> SamplerState {
        SamplerState::from_entries(self.sampler_counts.iter().map(|(task, domain, n)| {
            (
                Cell {
                    task: TaskId::new(*task).expect("checkpoint task id valid"),
                    domain: *domain,
                },
                *n,
            )
        }))
    }

    pub fn set_sampler_state(&mut self, state: &SamplerState) {
        self.sampler_counts = state
            .entries()
            .into_iter()
            .map(|(cell, n)| (cell.task.get(), cell.domain, n))
            .collect();
    }

    pub fn domain_cache(&self, enabled: bool) -> DomainChoiceCache {
        let mut cache = DomainChoiceCache::new(enabled);
        cache.restore(self.domain_choices.iter().map(|(task, domain)| {
            (
                TaskId::new(*task).expect("checkpoint task id valid"),
                *domain,
            )
        }));
        cache
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let tmp = path.with_extension("tmp");
        let body = serde_json::to_vec_pretty(self)
            .map_err(|e| RunError::Config(format!("checkpoint serialization: {e}")))?;
        std::fs::write(&tmp, body).map_err(RunError::io(format!(
            "writing checkpoint {}",
            tmp.display()
        )))?;
        std::fs::rename(&tmp, path).map_err(RunError::io(format!(
            "committing checkpoint {}",
            path.display()
        )))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let raw = std::fs::read_to_string(path)
            .map_err(RunError::io(format!("reading checkpoint {}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| RunError::Config(format!("corrupt checkpoint {}: {e}", path.display())))
    }
}
