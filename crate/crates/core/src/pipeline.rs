//! Multi-round discovery: generate, prune, score and refine, pick the best
//! template, strip what it explains, repeat on the remainder.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DEFAULT_CHUNK_BYTES, DEFAULT_SAMPLE_BYTES};
use crate::error::{Error, Result};
use crate::generation::{search, GenerationConfig};
use crate::pruning::{prune, PruningConfig};
use crate::refinement::refine;
use crate::scoring::{noise_only_dl, parse_with_template, FieldType, ScoredTemplate};
use crate::template::{CompiledTemplate, StructureTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    pub budget: usize,
    pub chunk_size: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> SamplingConfig {
        SamplingConfig {
            budget: DEFAULT_SAMPLE_BYTES,
            chunk_size: DEFAULT_CHUNK_BYTES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub generation: GenerationConfig,
    pub pruning: PruningConfig,
    pub sampling: SamplingConfig,
    pub max_record_types: usize,
}

impl Default for PipelineConfig {
    fn default() -> PipelineConfig {
        PipelineConfig {
            generation: GenerationConfig::default(),
            pruning: PruningConfig::default(),
            sampling: SamplingConfig::default(),
            max_record_types: 8,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.pruning.validate()?;
        let s = &self.sampling;
        if s.chunk_size == 0 || s.budget < s.chunk_size {
            return Err(Error::Config(format!(
                "sample budget ({}) must be at least the chunk size ({}) and both positive",
                s.budget, s.chunk_size
            )));
        }
        if self.max_record_types == 0 {
            return Err(Error::Config("max record types must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NoStructure,
}

/// One discovered record type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub template: String,
    pub total_dl: u64,
    /// Cost of treating the round's sample as pure noise.
    pub noise_dl: u64,
    pub coverage_pct: f64,
    pub field_types: Vec<FieldType>,
    pub record_count: u64,
    pub noise_bytes: u64,
    pub sampled_bytes: u64,
    pub candidates: usize,
    pub charsets_visited: usize,
    /// Bytes left unexplained after this round, over the whole input.
    pub residual_bytes: u64,
}

/// An array whose arity histogram holds several frequent arities: a sign
/// that distinct fixed-arity record types were merged into one template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDiagnostic {
    pub round: usize,
    pub template: String,
    pub array: usize,
    /// `(arity, instances)` pairs above the coverage threshold share.
    pub arities: Vec<(usize, u64)>,
}

/// Discovery result; also the input of extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionPlan {
    pub status: Status,
    pub max_span: usize,
    pub rounds: Vec<Round>,
    /// Unexplained share of the input bytes after the last round.
    pub residual_noise_fraction: f64,
    #[serde(default)]
    pub diagnostics: Vec<MergeDiagnostic>,
}

impl ExtractionPlan {
    pub fn templates(&self) -> Result<Vec<StructureTemplate>> {
        self.rounds
            .iter()
            .map(|r| StructureTemplate::parse(&r.template))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<ExtractionPlan, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExtractionPlan> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let plan = ExtractionPlan::from_json(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        plan.templates()?;
        Ok(plan)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Best refined template of one sample, if any candidate was generated.
fn best_template(
    corpus: &Corpus,
    cfg: &PipelineConfig,
    round: usize,
) -> Result<Option<(ScoredTemplate, Round)>> {
    let s = &cfg.sampling;
    let view = corpus.sample(s.budget, s.chunk_size, s.seed.wrapping_add(round as u64));
    let cands = search(&view, &cfg.generation)?;
    let (n_cands, visited) = (cands.len(), cands.subsets_visited());
    let top = prune(cands, &cfg.pruning);
    let max_span = cfg.generation.max_span;
    let scored: Vec<ScoredTemplate> = top
        .par_iter()
        .filter_map(|c| refine(&view, &c.template, max_span).ok())
        .collect();
    let best = scored.into_iter().min_by(|a, b| {
        a.total_dl
            .cmp(&b.total_dl)
            .then_with(|| a.template.cmp(&b.template))
    });
    Ok(best.map(|b| {
        let round = Round {
            template: b.template.clone(),
            total_dl: b.total_dl,
            noise_dl: noise_only_dl(&view),
            coverage_pct: b.coverage_pct(),
            field_types: b.field_types.clone(),
            record_count: b.record_count,
            noise_bytes: b.noise_bytes,
            sampled_bytes: view.sampled_len() as u64,
            candidates: n_cands,
            charsets_visited: visited,
            residual_bytes: 0,
        };
        (b, round)
    }))
}

/// Finds up to `max_record_types` templates, one per round.
pub fn discover(corpus: &Corpus, cfg: &PipelineConfig) -> Result<ExtractionPlan> {
    cfg.validate()?;
    let total = corpus.total_len() as f64;
    let max_span = cfg.generation.max_span;
    let mut working = corpus.clone();
    let mut rounds = Vec::new();
    let mut diagnostics = Vec::new();
    let mut residual = corpus.total_len();
    for r in 0..cfg.max_record_types {
        let Some((best, mut round)) = best_template(&working, cfg, r)? else {
            break;
        };
        if best.total_dl >= round.noise_dl || best.coverage_pct() < cfg.generation.alpha {
            break;
        }
        let ct = CompiledTemplate::new(best.structure());
        let full = working.full_view();
        let parse = parse_with_template(&full, &ct, max_span);
        for (array, hist) in parse.arities.iter().enumerate() {
            let instances: u64 = hist.values().sum();
            let frequent: Vec<(usize, u64)> = hist
                .iter()
                .filter(|(_, &c)| c as f64 * 100.0 >= cfg.generation.alpha * instances as f64)
                .map(|(&k, &c)| (k, c))
                .collect();
            if frequent.len() >= 2 {
                diagnostics.push(MergeDiagnostic {
                    round: r,
                    template: best.template.clone(),
                    array,
                    arities: frequent,
                });
            }
        }
        let mut rest = Vec::with_capacity(parse.noise_bytes() as usize);
        for span in &parse.noise {
            rest.extend_from_slice(&full.text()[span.clone()]);
        }
        residual = rest.len();
        round.residual_bytes = residual as u64;
        rounds.push(round);
        match Corpus::from_bytes(rest) {
            Ok(next) => working = next,
            Err(_) => break,
        }
    }
    Ok(ExtractionPlan {
        status: if rounds.is_empty() {
            Status::NoStructure
        } else {
            Status::Ok
        },
        max_span,
        rounds,
        residual_noise_fraction: residual as f64 / total,
        diagnostics,
    })
}
