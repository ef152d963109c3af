//! Local improvements of a scored template: array unfolding and shifting.

use rayon::prelude::*;

use crate::corpus::SampleView;
use crate::error::Result;
use crate::scoring::{Mdl, ParseResult, RegularityScore, ScoredTemplate};
use crate::template::{CompiledTemplate, MatchOutcome, Node, StructureTemplate};

/// Most arities proposed for a full unfolding of one array.
pub const MAX_FULL_ARITIES: usize = 3;
/// Stop proposing arities once this share of instances is covered.
pub const FULL_ARITY_SHARE: f64 = 0.9;
/// Longest fixed prefix a partial unfolding may add.
pub const MAX_PARTIAL_PREFIX: usize = 16;

/// Replaces array `target` (pre-order index) by `f(array)`.
fn rewrite_array(
    st: &StructureTemplate,
    target: usize,
    f: &dyn Fn(&crate::template::Array) -> Vec<Node>,
) -> StructureTemplate {
    fn walk(
        nodes: &[Node],
        next: &mut usize,
        target: usize,
        f: &dyn Fn(&crate::template::Array) -> Vec<Node>,
    ) -> Vec<Node> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            match n {
                Node::Array(a) => {
                    let id = *next;
                    *next += 1;
                    if id == target {
                        out.extend(f(a));
                        // Skip numbering of the replaced subtree.
                        *next += StructureTemplate::new(a.body.clone()).array_count();
                    } else {
                        let body = walk(&a.body, next, target, f);
                        out.push(Node::array(body, a.sep, a.term));
                    }
                }
                other => out.push(other.clone()),
            }
        }
        out
    }
    let mut next = 0;
    StructureTemplate::new(walk(st.items(), &mut next, target, f))
}

/// `U x U x ... U y` with `k` copies of the body.
pub fn full_unfold(st: &StructureTemplate, target: usize, k: usize) -> StructureTemplate {
    assert!(k >= 1);
    rewrite_array(st, target, &|a| {
        let mut out = Vec::new();
        for i in 0..k {
            out.extend(a.body.iter().cloned());
            out.push(Node::Literal(if i + 1 == k { a.term } else { a.sep }));
        }
        out
    })
}

/// `U x` repeated `p` times in front of the array itself.
pub fn partial_unfold(st: &StructureTemplate, target: usize, p: usize) -> StructureTemplate {
    rewrite_array(st, target, &|a| {
        let mut out = Vec::new();
        for _ in 0..p {
            out.extend(a.body.iter().cloned());
            out.push(Node::Literal(a.sep));
        }
        out.push(Node::Array(a.clone()));
        out
    })
}

/// Unfolding proposals derived from the arity histograms of a parse.
pub fn unfold_proposals(st: &StructureTemplate, parse: &ParseResult) -> Vec<StructureTemplate> {
    let mut out = Vec::new();
    for (id, hist) in parse.arities.iter().enumerate() {
        let total: u64 = hist.values().sum();
        if total == 0 {
            continue;
        }
        let mut by_count: Vec<(usize, u64)> = hist.iter().map(|(&k, &c)| (k, c)).collect();
        by_count.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut covered = 0;
        for &(k, c) in by_count.iter().take(MAX_FULL_ARITIES) {
            out.push(full_unfold(st, id, k));
            covered += c;
            if covered as f64 >= FULL_ARITY_SHARE * total as f64 {
                break;
            }
        }
        let min_arity = *hist.keys().next().expect("nonempty histogram");
        for p in 1..min_arity.min(MAX_PARTIAL_PREFIX + 1) {
            out.push(partial_unfold(st, id, p));
        }
    }
    out
}

/// Repeatedly applies the unfolding that lowers the score most, until none does.
pub fn unfold_arrays(
    view: &SampleView,
    st: &StructureTemplate,
    max_lines: usize,
    scorer: &dyn RegularityScore,
) -> Result<(ScoredTemplate, ParseResult)> {
    let mut best = scorer.score(view, st, max_lines)?;
    loop {
        let proposals = unfold_proposals(&best.0.structure(), &best.1);
        let scored: Vec<(ScoredTemplate, ParseResult)> = proposals
            .par_iter()
            .filter_map(|p| scorer.score(view, p, max_lines).ok())
            .collect();
        let winner = scored
            .into_iter()
            .filter(|s| s.0.total_dl < best.0.total_dl)
            .min_by(|a, b| {
                a.0.total_dl
                    .cmp(&b.0.total_dl)
                    .then_with(|| a.0.template.cmp(&b.0.template))
            });
        match winner {
            Some(w) => best = w,
            None => return Ok(best),
        }
    }
}

/// Byte offset of the first record of `ct` in the view.
pub fn first_match(view: &SampleView, ct: &CompiledTemplate, max_lines: usize) -> Option<usize> {
    let text = view.text();
    let starts = view.line_starts();
    let mut caps = Vec::new();
    for lines in view.chunk_line_ranges() {
        if lines.is_empty() {
            continue;
        }
        let base = starts[lines.start];
        let chunk = &text[base..view.line_range(lines.end - 1).end];
        for i in lines {
            caps.clear();
            if let MatchOutcome::Matched { .. } =
                ct.match_at(chunk, starts[i] - base, max_lines, &mut caps)
            {
                return Some(starts[i]);
            }
        }
    }
    None
}

/// The line rotation of `st` that first matches earliest; ties by canonical string.
pub fn shift_structure(
    view: &SampleView,
    st: &StructureTemplate,
    max_lines: usize,
) -> StructureTemplate {
    let rotations = st.line_rotations();
    if rotations.len() == 1 {
        return st.clone();
    }
    rotations
        .into_par_iter()
        .map(|r| {
            let ct = CompiledTemplate::new(r);
            let first = first_match(view, &ct, max_lines).unwrap_or(usize::MAX);
            (first, ct.canonical().to_string(), ct.template().clone())
        })
        .min_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .map(|(_, _, t)| t)
        .expect("at least one rotation")
}

/// Unfolds, then shifts. The shift is kept only if it does not raise the score.
pub fn refine(
    view: &SampleView,
    st: &StructureTemplate,
    max_lines: usize,
) -> Result<ScoredTemplate> {
    refine_with(view, st, max_lines, &Mdl)
}

pub fn refine_with(
    view: &SampleView,
    st: &StructureTemplate,
    max_lines: usize,
    scorer: &dyn RegularityScore,
) -> Result<ScoredTemplate> {
    let (unfolded, _) = unfold_arrays(view, st, max_lines, scorer)?;
    let current = unfolded.structure();
    let shifted = shift_structure(view, &current, max_lines);
    if shifted == current {
        return Ok(unfolded);
    }
    match scorer.score(view, &shifted, max_lines) {
        Ok((s, _)) if s.total_dl <= unfolded.total_dl => Ok(s),
        _ => Ok(unfolded),
    }
}
