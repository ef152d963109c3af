//! Candidate structure templates from every short line span of a sample.
//!
//! For a fixed formatting charset each span of `1..=L` lines is turned into a
//! record template, reduced, and binned by canonical string. A bin survives
//! when its spans cover at least `alpha` percent of the sampled bytes. The
//! charset itself is either enumerated exhaustively or grown greedily.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::SampleView;
use crate::error::{Error, Result};
use crate::pruning::assimilation_score;
use crate::template::{extract_record_template, CharSet, ReduceParams, Reducer, StructureTemplate};

/// Largest number of present candidate bytes exhaustive search accepts.
pub const MAX_EXHAUSTIVE_CANDIDATES: usize = 16;
/// Evidence spans kept per bin.
pub const EVIDENCE_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    #[default]
    Greedy,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    /// Coverage threshold in percent of the sampled bytes.
    pub alpha: f64,
    /// Longest record, in lines.
    pub max_span: usize,
    pub search_mode: SearchMode,
    /// Bytes allowed to act as formatting characters.
    pub candidates: CharSet,
    pub reduce: ReduceParams,
}

impl Default for GenerationConfig {
    fn default() -> GenerationConfig {
        GenerationConfig {
            alpha: 10.0,
            max_span: 10,
            search_mode: SearchMode::Greedy,
            candidates: CharSet::default_candidates(),
            reduce: ReduceParams::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 100.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 100], got {}",
                self.alpha
            )));
        }
        if self.max_span == 0 {
            return Err(Error::Config("max span must be at least 1 line".into()));
        }
        if self.candidates.contains(b'\n') {
            return Err(Error::Config(
                "'\\n' cannot be a candidate formatting byte".into(),
            ));
        }
        Ok(())
    }

    /// Smallest coverage, in bytes, that passes the threshold on `len` bytes.
    pub fn min_coverage(&self, len: usize) -> u64 {
        (self.alpha / 100.0 * len as f64).ceil() as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateStats {
    /// Bytes of the spans that reduce to the template. Spans overlapping an
    /// already counted span of the same template are skipped.
    pub coverage: u64,
    /// `coverage` minus the bytes inside field values.
    pub non_field_coverage: u64,
    pub occurrences: u64,
    /// Byte ranges into the view of the first spans seen.
    pub evidence: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub template: StructureTemplate,
    pub stats: CandidateStats,
    /// Charset under which the template reached this coverage.
    pub charset: CharSet,
}

#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    entries: BTreeMap<String, Candidate>,
    subsets_visited: usize,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, canonical: &str) -> Option<&Candidate> {
        self.entries.get(canonical)
    }

    /// Entries in canonical-string order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Candidate)> {
        self.entries.iter()
    }

    pub fn into_candidates(self) -> Vec<Candidate> {
        self.entries.into_values().collect()
    }

    /// Number of charsets that were enumerated to build this set.
    pub fn subsets_visited(&self) -> usize {
        self.subsets_visited
    }

    /// Highest assimilation score of any entry.
    pub fn best_score(&self) -> Option<u128> {
        self.entries
            .values()
            .map(|c| assimilation_score(&c.stats))
            .max()
    }

    /// Union; a template found under several charsets keeps the charset with
    /// the highest coverage, then non-field coverage, then the smaller set.
    pub fn merge(&mut self, other: CandidateSet) {
        self.subsets_visited += other.subsets_visited;
        for (key, cand) in other.entries {
            match self.entries.get_mut(&key) {
                Some(cur) => {
                    let new_rank = (cand.stats.coverage, cand.stats.non_field_coverage);
                    let cur_rank = (cur.stats.coverage, cur.stats.non_field_coverage);
                    if new_rank > cur_rank || (new_rank == cur_rank && cand.charset < cur.charset) {
                        *cur = cand;
                    }
                }
                None => {
                    self.entries.insert(key, cand);
                }
            }
        }
    }
}

/// Candidate bytes that occur somewhere in the view.
pub fn present_candidates(view: &SampleView, candidates: CharSet) -> CharSet {
    let mut seen = CharSet::empty();
    for &b in view.text() {
        seen.insert(b);
    }
    seen.intersection(candidates)
}

/// Writes the record template of one line into `out`, always ending in `\n`,
/// and returns the number of field bytes.
fn extract_into(line: &[u8], charset: CharSet, out: &mut Vec<u8>) -> u64 {
    let ex = extract_record_template(line, charset);
    out.clear();
    out.extend_from_slice(ex.template.as_bytes());
    if out.last() != Some(&b'\n') {
        out.push(b'\n');
    }
    ex.field_bytes as u64
}

/// True when some block of consecutive ids is immediately repeated.
/// Whether `ids` ends with a block repeated twice in a row.
fn ends_in_square(ids: &[u32]) -> bool {
    let k = ids.len();
    (1..=k / 2).any(|p| ids[k - 2 * p..k - p] == ids[k - p..])
}

enum BinRepr {
    /// Concatenation of the reduced lines `at..at + len` of the view.
    Lines { at: u32, len: u32 },
    /// Symbols of a span reduced across line boundaries.
    Symbols(Vec<u32>),
}

struct Bin {
    repr: BinRepr,
    stats: CandidateStats,
    /// End of the last counted span; spans starting before it are skipped.
    last_end: usize,
}

/// All templates reaching the coverage threshold under one charset.
///
/// Each distinct line is reduced once. A span is then the concatenation of
/// its reduced lines, and is reduced again only when its line sequence holds
/// an immediately repeated block, the only way a repetition can cross a line
/// boundary. Spans whose template is a concatenation of shorter records are
/// not counted.
pub fn gen_for_charset(
    view: &SampleView,
    charset: CharSet,
    cfg: &GenerationConfig,
) -> CandidateSet {
    let text = view.text();
    let n = view.line_count();
    let mut reducer = Reducer::new(cfg.reduce);

    // Line -> group of lines sharing one reduced template.
    let mut line_group = Vec::with_capacity(n);
    let mut line_field = Vec::with_capacity(n);
    let mut rt_group: FxHashMap<Vec<u8>, u32> = FxHashMap::default();
    let mut group_ids: FxHashMap<Vec<u32>, u32> = FxHashMap::default();
    let mut groups: Vec<Vec<u32>> = Vec::new();
    let mut rt = Vec::new();
    for i in 0..n {
        let field_bytes = extract_into(&text[view.line_range(i)], charset, &mut rt);
        let g = match rt_group.get(rt.as_slice()) {
            Some(&g) => g,
            None => {
                let reduced = reducer.reduce_symbols(&Reducer::record_symbols(&rt));
                let next = groups.len() as u32;
                let g = *group_ids.entry(reduced.clone()).or_insert_with(|| {
                    groups.push(reduced);
                    next
                });
                rt_group.insert(rt.clone(), g);
                g
            }
        };
        line_group.push(g);
        line_field.push(field_bytes);
    }

    let mut group_count = vec![0u32; groups.len()];
    for &g in &line_group {
        group_count[g as usize] += 1;
    }
    let min_cov = cfg.min_coverage(view.sampled_len()).max(1);

    // Spans are looked up in a trie over group ids: node (parent, group) -> child.
    // A span through a line whose group occurs once can never recur and keeps
    // that line's unique text after reduction, so it only counts when it
    // reaches the threshold alone.
    let mut trie: FxHashMap<u64, u32> = FxHashMap::default();
    let mut node_bin: Vec<u32> = vec![u32::MAX];
    let mut symbol_bins: FxHashMap<Vec<u32>, u32> = FxHashMap::default();
    let mut bins: Vec<Bin> = Vec::new();
    let mut syms = Vec::new();
    let starts = view.line_starts();

    // Bin of a span given its reduced symbols, or `None` when reduction
    // left the concatenated lines unchanged.
    let mut bin_for =
        |reduced: Option<Vec<u32>>, at: usize, len: usize, bins: &mut Vec<Bin>| -> u32 {
            let next = bins.len() as u32;
            let repr = match reduced {
                Some(r) => {
                    if let Some(&b) = symbol_bins.get(&r) {
                        return b;
                    }
                    symbol_bins.insert(r.clone(), next);
                    BinRepr::Symbols(r)
                }
                None => BinRepr::Lines {
                    at: at as u32,
                    len: len as u32,
                },
            };
            bins.push(Bin {
                repr,
                stats: CandidateStats::default(),
                last_end: 0,
            });
            next
        };
    let concat = |key: &[u32], out: &mut Vec<u32>| {
        out.clear();
        for &g in key {
            out.extend_from_slice(&groups[g as usize]);
        }
    };
    // Reduced symbols of trie nodes whose reduction changed something.
    let mut node_syms: Vec<Option<Vec<u32>>> = vec![None];
    // Whether a node's key holds a repeated block of lines.
    let mut node_square = vec![false];

    for chunk in view.chunk_line_ranges() {
        for i in chunk.clone() {
            let start = starts[i];
            let mut field = 0u64;
            let mut node = 0u32;
            let mut unique = false;
            for j in i + 1..=(i + cfg.max_span).min(chunk.end) {
                let g = line_group[j - 1];
                field += line_field[j - 1];
                let end = if j < starts.len() {
                    starts[j]
                } else {
                    text.len()
                };
                unique |= group_count[g as usize] == 1;
                let b = if unique {
                    if ((end - start) as u64) < min_cov {
                        continue;
                    }
                    let key = &line_group[i..j];
                    concat(key, &mut syms);
                    let reduced = reducer.reduce_symbols(&syms);
                    bin_for((reduced != syms).then_some(reduced), i, j - i, &mut bins)
                } else {
                    let edge = (node as u64) << 32 | g as u64;
                    node = match trie.get(&edge) {
                        Some(&child) => child,
                        None => {
                            // A repetition across lines needs a repeated block of lines.
                            let key = &line_group[i..j];
                            let square = node_square[node as usize] || ends_in_square(key);
                            let reduced = if square {
                                let changed = node_syms[node as usize].is_some();
                                match &node_syms[node as usize] {
                                    Some(prev) => syms.clone_from(prev),
                                    None => concat(&key[..key.len() - 1], &mut syms),
                                }
                                let clean = syms.len();
                                syms.extend_from_slice(&groups[g as usize]);
                                let r = reducer.reduce_extending(&syms, clean);
                                (changed || r != syms).then_some(r)
                            } else {
                                None
                            };
                            let child = node_bin.len() as u32;
                            node_syms.push(reduced.clone());
                            node_square.push(square);
                            node_bin.push(bin_for(reduced, i, j - i, &mut bins));
                            trie.insert(edge, child);
                            child
                        }
                    };
                    node_bin[node as usize]
                };
                let bin = &mut bins[b as usize];
                if start < bin.last_end {
                    continue;
                }
                bin.last_end = end;
                let stats = &mut bin.stats;
                let len = (end - start) as u64;
                stats.coverage += len;
                stats.non_field_coverage += len - field;
                stats.occurrences += 1;
                if stats.evidence.len() < EVIDENCE_CAP {
                    stats.evidence.push(start..end);
                }
            }
        }
    }

    let mut entries = BTreeMap::new();
    for bin in bins {
        if bin.stats.coverage < min_cov {
            continue;
        }
        let template = match bin.repr {
            BinRepr::Lines { at, len } => {
                let ids = &line_group[at as usize..(at + len) as usize];
                let syms: Vec<u32> = ids
                    .iter()
                    .flat_map(|&g| groups[g as usize].iter().copied())
                    .collect();
                reducer.to_template(&syms)
            }
            BinRepr::Symbols(syms) => reducer.to_template(&syms),
        };
        if template.is_record_concatenation() {
            continue;
        }
        entries.insert(
            template.canonical(),
            Candidate {
                template,
                stats: bin.stats,
                charset,
            },
        );
    }
    CandidateSet {
        entries,
        subsets_visited: 1,
    }
}

/// Union over every subset of the present candidate bytes, the empty one included.
pub fn exhaustive_search(view: &SampleView, cfg: &GenerationConfig) -> Result<CandidateSet> {
    let present = present_candidates(view, cfg.candidates).to_vec();
    if present.len() > MAX_EXHAUSTIVE_CANDIDATES {
        return Err(Error::TooManyCandidates {
            count: present.len(),
            max: MAX_EXHAUSTIVE_CANDIDATES,
        });
    }
    let sets: Vec<CandidateSet> = (0u32..1 << present.len())
        .into_par_iter()
        .map(|mask| {
            let charset = CharSet::from_bytes(
                &present
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &b)| b)
                    .collect::<Vec<_>>(),
            );
            gen_for_charset(view, charset, cfg)
        })
        .collect();
    let mut out = CandidateSet::default();
    for s in sets {
        out.merge(s);
    }
    Ok(out)
}

/// Grows the charset one byte per round, always taking the byte whose
/// extended charset yields the highest assimilation score (ties to the
/// smaller byte). Returns the union of every set evaluated.
pub fn greedy_search(view: &SampleView, cfg: &GenerationConfig) -> CandidateSet {
    let mut remaining = present_candidates(view, cfg.candidates).to_vec();
    let mut current = CharSet::empty();
    let mut out = gen_for_charset(view, current, cfg);
    while !remaining.is_empty() {
        let round: Vec<(u8, CandidateSet)> = remaining
            .par_iter()
            .map(|&b| (b, gen_for_charset(view, current.with(b), cfg)))
            .collect();
        let best = round
            .iter()
            .filter_map(|(b, set)| set.best_score().map(|s| (s, *b)))
            .max_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)));
        for (_, set) in round {
            out.merge(set);
        }
        match best {
            Some((_, b)) => {
                current.insert(b);
                remaining.retain(|&c| c != b);
            }
            None => break,
        }
    }
    out
}

pub fn search(view: &SampleView, cfg: &GenerationConfig) -> Result<CandidateSet> {
    cfg.validate()?;
    match cfg.search_mode {
        SearchMode::Greedy => Ok(greedy_search(view, cfg)),
        SearchMode::Exhaustive => exhaustive_search(view, cfg),
    }
}
