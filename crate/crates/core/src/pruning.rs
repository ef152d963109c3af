//! Cheap ranking of candidates before full scoring.

use crate::error::{Error, Result};
use crate::generation::{Candidate, CandidateSet, CandidateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruningConfig {
    pub top_m: usize,
}

impl Default for PruningConfig {
    fn default() -> PruningConfig {
        PruningConfig { top_m: 50 }
    }
}

impl PruningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_m == 0 {
            return Err(Error::Config("top-m must be at least 1".into()));
        }
        Ok(())
    }
}

/// Coverage times non-field coverage.
pub fn assimilation_score(stats: &CandidateStats) -> u128 {
    stats.coverage as u128 * stats.non_field_coverage as u128
}

/// The `top_m` best candidates by assimilation score, ties by canonical string.
pub fn prune(cands: CandidateSet, cfg: &PruningConfig) -> Vec<Candidate> {
    let mut ranked: Vec<(u128, String, Candidate)> = cands
        .into_candidates()
        .into_iter()
        .map(|c| (assimilation_score(&c.stats), c.template.canonical(), c))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(cfg.top_m);
    ranked.into_iter().map(|(_, _, c)| c).collect()
}
