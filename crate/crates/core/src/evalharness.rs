//! Synthetic corpora with ground truth, relational rewrite operations, and a
//! verifier deciding whether an extraction can be turned into the truth.
//!
//! A generated corpus interleaves records of planted templates with noise
//! lines. The target table of planted type `t` has one row per record: its
//! `_line_start` and one `field_{k}` column per leaf. Leaves inside arrays
//! hold the concatenation of their values over all elements.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::{field_column, root_table_name, RelationalOutput, Table};
use crate::template::{Cap, CharSet, CompiledTemplate, MatchOutcome, Node, StructureTemplate};

const ALNUM: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
const DEFAULT_NOISE_ALPHABET: &str =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ._-/";
/// Regeneration passes before giving up on an ambiguous corpus.
const MAX_REJECTION_PASSES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueGen {
    Int { min: i64, max: i64 },
    Real { min: f64, max: f64, exp: u32 },
    Enum { values: Vec<String> },
    String { min_len: usize, max_len: usize },
}

impl Default for ValueGen {
    fn default() -> ValueGen {
        ValueGen::String {
            min_len: 1,
            max_len: 8,
        }
    }
}

impl ValueGen {
    fn validate(&self, charset: &CharSet) -> Result<()> {
        let clash = |s: &str| s.bytes().find(|&b| charset.contains(b));
        match self {
            ValueGen::Int { min, max } => {
                if min > max {
                    return Err(synth("int range is empty"));
                }
                if *min < 0 && charset.contains(b'-') {
                    return Err(synth("negative ints would contain the template's '-'"));
                }
            }
            ValueGen::Real { min, max, exp } => {
                if min.partial_cmp(max).is_none_or(|o| o.is_gt()) || *exp == 0 || *exp > 9 {
                    return Err(synth("real needs min <= max and 1..=9 decimals"));
                }
                if charset.contains(b'.') || (*min < 0.0 && charset.contains(b'-')) {
                    return Err(synth("real values would contain template bytes"));
                }
            }
            ValueGen::Enum { values } => {
                if values.is_empty() {
                    return Err(synth("enum vocabulary is empty"));
                }
                for v in values {
                    if v.is_empty() {
                        return Err(synth("enum values must be nonempty"));
                    }
                    if let Some(b) = clash(v).or_else(|| v.bytes().find(|&b| b == b'\n')) {
                        return Err(synth(&format!(
                            "enum value {v:?} contains template byte {:?}",
                            b as char
                        )));
                    }
                }
            }
            ValueGen::String { min_len, max_len } => {
                if *min_len == 0 || min_len > max_len {
                    return Err(synth("string lengths must satisfy 1 <= min_len <= max_len"));
                }
            }
        }
        Ok(())
    }

    fn sample(&self, rng: &mut ChaCha8Rng, alphabet: &[u8]) -> String {
        match self {
            ValueGen::Int { min, max } => rng.gen_range(*min..=*max).to_string(),
            ValueGen::Real { min, max, exp } => {
                let v = if min == max {
                    *min
                } else {
                    rng.gen_range(*min..=*max)
                };
                format!("{v:.*}", *exp as usize)
            }
            ValueGen::Enum { values } => values.choose(rng).expect("nonempty").clone(),
            ValueGen::String { min_len, max_len } => {
                let n = rng.gen_range(*min_len..=*max_len);
                (0..n)
                    .map(|_| *alphabet.choose(rng).expect("alphabet") as char)
                    .collect()
            }
        }
    }
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTemplate {
    pub template: String,
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Per leaf, in pre-order; missing entries use short random strings.
    #[serde(default)]
    pub fields: Vec<ValueGen>,
    /// Inclusive arity range per array, in pre-order; missing entries use 1..=5.
    #[serde(default)]
    pub arity: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub templates: Vec<PlantedTemplate>,
    /// Share of blocks that are noise lines.
    #[serde(default)]
    pub noise_fraction: f64,
    pub record_count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise_alphabet: Option<String>,
    /// Inclusive length range of noise lines.
    #[serde(default = "default_noise_len")]
    pub noise_len: (usize, usize),
}

fn default_noise_len() -> (usize, usize) {
    (10, 80)
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<SynthSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.templates.is_empty() {
            return Err(synth("no templates"));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(synth("noise_fraction must be in [0, 1)"));
        }
        let (lo, hi) = self.noise_len;
        if lo == 0 || lo > hi {
            return Err(synth("noise lengths must satisfy 1 <= min <= max"));
        }
        if self
            .noise_alphabet
            .as_deref()
            .is_some_and(|a| a.is_empty() || a.contains('\n'))
        {
            return Err(synth("noise alphabet must be nonempty and newline-free"));
        }
        for p in &self.templates {
            let st = StructureTemplate::parse(&p.template)?;
            st.check_ll1()?;
            if !(p.weight > 0.0 && p.weight.is_finite()) {
                return Err(synth("template weights must be positive"));
            }
            if st.field_count() == 0 {
                return Err(synth(&format!("template {} has no fields", p.template)));
            }
            if !p.template.ends_with("\\n") {
                return Err(synth(&format!(
                    "template {} must end with a newline",
                    p.template
                )));
            }
            let charset = st.literal_bytes();
            if p.fields.len() > st.field_count() {
                return Err(synth(&format!(
                    "template {} has more generators than fields",
                    p.template
                )));
            }
            for g in &p.fields {
                g.validate(&charset)?;
            }
            if p.arity.len() > st.array_count() {
                return Err(synth(&format!(
                    "template {} has more arity ranges than arrays",
                    p.template
                )));
            }
            if p.arity.iter().any(|&(lo, hi)| lo == 0 || lo > hi) {
                return Err(synth("arity ranges must satisfy 1 <= min <= max"));
            }
            if value_alphabet(&charset).is_empty() {
                return Err(synth("template uses every alphanumeric byte"));
            }
        }
        Ok(())
    }
}

fn synth(msg: &str) -> Error {
    Error::Synth(msg.to_string())
}

fn value_alphabet(charset: &CharSet) -> Vec<u8> {
    ALNUM
        .iter()
        .copied()
        .filter(|&b| !charset.contains(b))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    #[serde(rename = "type")]
    pub ty: usize,
    pub line_start: usize,
    pub line_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Per line: `(type, record index)` or `None` for noise.
    pub labels: Vec<Option<(usize, usize)>>,
    pub records: Vec<TruthRecord>,
    /// Planted templates, canonical.
    pub templates: Vec<String>,
    /// One table per planted type, named `type_{t}`.
    pub tables: Vec<Table>,
}

impl GroundTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<GroundTruth> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn noise_blocks(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub text: Vec<u8>,
    pub truth: GroundTruth,
}

struct Planted {
    st: StructureTemplate,
    ct: CompiledTemplate,
    gens: Vec<ValueGen>,
    arity: Vec<(usize, usize)>,
    alphabet: Vec<u8>,
}

enum Block {
    Record {
        ty: usize,
        text: Vec<u8>,
        cells: Vec<String>,
    },
    Noise(Vec<u8>),
}

impl Block {
    fn text(&self) -> &[u8] {
        match self {
            Block::Record { text, .. } | Block::Noise(text) => text,
        }
    }
}

impl Planted {
    fn render(&self, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<String>) {
        let mut text = Vec::new();
        let mut cells = vec![String::new(); self.gens.len()];
        let mut leaf = 0;
        let mut array = 0;
        self.render_nodes(
            self.st.items(),
            rng,
            &mut text,
            &mut cells,
            &mut leaf,
            &mut array,
        );
        (text, cells)
    }

    fn render_nodes(
        &self,
        nodes: &[Node],
        rng: &mut ChaCha8Rng,
        text: &mut Vec<u8>,
        cells: &mut [String],
        leaf: &mut usize,
        array: &mut usize,
    ) {
        for n in nodes {
            match n {
                Node::Field => {
                    let v = self.gens[*leaf].sample(rng, &self.alphabet);
                    text.extend_from_slice(v.as_bytes());
                    cells[*leaf].push_str(&v);
                    *leaf += 1;
                }
                Node::Literal(b) => text.push(*b),
                Node::Array(a) => {
                    let (lo, hi) = self.arity[*array];
                    *array += 1;
                    let k = rng.gen_range(lo..=hi);
                    let (leaf0, array0) = (*leaf, *array);
                    for i in 0..k {
                        if i > 0 {
                            text.push(a.sep);
                        }
                        *leaf = leaf0;
                        *array = array0;
                        self.render_nodes(&a.body, rng, text, cells, leaf, array);
                    }
                    text.push(a.term);
                }
            }
        }
    }
}

fn noise_line(rng: &mut ChaCha8Rng, alphabet: &[u8], len: (usize, usize)) -> Vec<u8> {
    let n = rng.gen_range(len.0..=len.1);
    let mut line: Vec<u8> = (0..n)
        .map(|_| *alphabet.choose(rng).expect("alphabet"))
        .collect();
    line.push(b'\n');
    line
}

/// Builds a corpus and its ground truth. Deterministic for a fixed spec.
pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let planted: Vec<Planted> = spec
        .templates
        .iter()
        .map(|p| {
            let st = StructureTemplate::parse(&p.template).expect("validated");
            let mut gens = p.fields.clone();
            gens.resize(st.field_count(), ValueGen::default());
            let mut arity = p.arity.clone();
            arity.resize(st.array_count(), (1, 5));
            let alphabet = value_alphabet(&st.literal_bytes());
            Planted {
                ct: CompiledTemplate::new(st.clone()),
                st,
                gens,
                arity,
                alphabet,
            }
        })
        .collect();
    let noise_alphabet: Vec<u8> = spec
        .noise_alphabet
        .as_deref()
        .unwrap_or(DEFAULT_NOISE_ALPHABET)
        .bytes()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.noise_fraction;
    let n_noise = (spec.record_count as f64 * f / (1.0 - f)).round() as usize;
    let weights = WeightedIndex::new(spec.templates.iter().map(|p| p.weight))
        .map_err(|e| synth(&e.to_string()))?;

    let mut kinds: Vec<Option<usize>> = (0..spec.record_count)
        .map(|_| Some(weights.sample(&mut rng)))
        .collect();
    kinds.extend(std::iter::repeat_n(None, n_noise));
    kinds.shuffle(&mut rng);
    let make = |kind: Option<usize>, rng: &mut ChaCha8Rng| match kind {
        Some(ty) => {
            let (text, cells) = planted[ty].render(rng);
            Block::Record { ty, text, cells }
        }
        None => Block::Noise(noise_line(rng, &noise_alphabet, spec.noise_len)),
    };
    let mut blocks: Vec<Block> = kinds.iter().map(|&k| make(k, &mut rng)).collect();

    // Regenerate blocks whose start is matched by a template other than
    // their own, until every line start is unambiguous.
    let max_lines = planted
        .iter()
        .map(|p| p.st.line_count())
        .max()
        .unwrap_or(1)
        .max(1);
    let mut caps: Vec<Cap> = Vec::new();
    for pass in 0.. {
        let mut text = Vec::new();
        let mut offsets = Vec::with_capacity(blocks.len());
        for b in &blocks {
            offsets.push(text.len());
            text.extend_from_slice(b.text());
        }
        let mut bad = Vec::new();
        for (i, b) in blocks.iter().enumerate() {
            let own = match b {
                Block::Record { ty, .. } => Some(*ty),
                Block::Noise(_) => None,
            };
            let limit = match b {
                Block::Record { ty, .. } => planted[*ty].st.line_count().max(max_lines),
                Block::Noise(_) => max_lines,
            };
            let ambiguous = planted.iter().enumerate().any(|(t, p)| {
                caps.clear();
                let m = p.ct.match_at(&text, offsets[i], limit * 4, &mut caps);
                match m {
                    MatchOutcome::Matched { end, .. } => {
                        Some(t) != own || end != offsets[i] + b.text().len()
                    }
                    _ => Some(t) == own,
                }
            });
            if ambiguous {
                bad.push(i);
            }
        }
        if bad.is_empty() {
            let truth = build_truth(&planted, &blocks);
            return Ok(Synthetic { text, truth });
        }
        if pass == MAX_REJECTION_PASSES {
            return Err(synth(&format!(
                "could not make {} blocks unambiguous; field values or noise overlap the templates",
                bad.len()
            )));
        }
        for i in bad {
            blocks[i] = make(kinds[i], &mut rng);
        }
    }
    unreachable!()
}

fn build_truth(planted: &[Planted], blocks: &[Block]) -> GroundTruth {
    let mut tables: Vec<Table> = planted
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let mut cols = vec!["_line_start".to_string()];
            cols.extend((0..p.gens.len()).map(field_column));
            Table::new(format!("type_{t}"), cols)
        })
        .collect();
    let mut labels = Vec::new();
    let mut records = Vec::new();
    for b in blocks {
        let line = labels.len();
        match b {
            Block::Record { ty, text, cells } => {
                let n = text.iter().filter(|&&c| c == b'\n').count();
                let id = records.len();
                labels.extend(std::iter::repeat_n(Some((*ty, id)), n));
                records.push(TruthRecord {
                    ty: *ty,
                    line_start: line,
                    line_end: line + n,
                });
                let mut row = vec![line.to_string()];
                row.extend(cells.iter().cloned());
                tables[*ty].rows.push(row);
            }
            Block::Noise(_) => labels.push(None),
        }
    }
    GroundTruth {
        labels,
        records,
        templates: planted.iter().map(|p| p.st.canonical()).collect(),
        tables,
    }
}

/// The six table rewrites. New columns are named by `into`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RelOp {
    Concat {
        table: String,
        c1: String,
        c2: String,
        into: String,
    },
    GroupConcat {
        parent: String,
        child: String,
        fk: String,
        column: String,
        into: String,
    },
    Trim {
        table: String,
        column: String,
        prefix: usize,
        suffix: usize,
    },
    Append {
        table: String,
        column: String,
        prefix: String,
        suffix: String,
    },
    DeleteCol {
        table: String,
        column: String,
    },
    DeleteTable {
        table: String,
    },
}

impl RelOp {
    fn name(&self) -> &'static str {
        match self {
            RelOp::Concat { .. } => "concat",
            RelOp::GroupConcat { .. } => "group_concat",
            RelOp::Trim { .. } => "trim",
            RelOp::Append { .. } => "append",
            RelOp::DeleteCol { .. } => "delete_col",
            RelOp::DeleteTable { .. } => "delete_table",
        }
    }
}

pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<RelOp>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn find_table<'a>(
    tables: &'a mut [Table],
    name: &str,
) -> std::result::Result<&'a mut Table, String> {
    tables
        .iter_mut()
        .find(|t| t.name == name)
        .ok_or_else(|| format!("no table {name:?}"))
}

fn find_col(t: &Table, name: &str) -> std::result::Result<usize, String> {
    t.column(name)
        .ok_or_else(|| format!("no column {name:?} in {:?}", t.name))
}

fn new_col(t: &Table, name: &str) -> std::result::Result<(), String> {
    match t.column(name) {
        Some(_) => Err(format!("column {name:?} already exists in {:?}", t.name)),
        None => Ok(()),
    }
}

fn apply_one(out: &mut RelationalOutput, op: &RelOp) -> std::result::Result<(), String> {
    match op {
        RelOp::Concat {
            table,
            c1,
            c2,
            into,
        } => {
            let t = find_table(&mut out.tables, table)?;
            let (a, b) = (find_col(t, c1)?, find_col(t, c2)?);
            new_col(t, into)?;
            for row in &mut t.rows {
                let v = format!("{}{}", row[a], row[b]);
                row.push(v);
            }
            t.columns.push(into.clone());
        }
        RelOp::GroupConcat {
            parent,
            child,
            fk,
            column,
            into,
        } => {
            let c = out
                .tables
                .iter()
                .find(|t| &t.name == child)
                .ok_or_else(|| format!("no table {child:?}"))?;
            let (fk_i, col_i) = (find_col(c, fk)?, find_col(c, column)?);
            let mut joined: HashMap<String, String> = HashMap::new();
            for row in &c.rows {
                joined
                    .entry(row[fk_i].clone())
                    .or_default()
                    .push_str(&row[col_i]);
            }
            let p = find_table(&mut out.tables, parent)?;
            let id = find_col(p, "_id")?;
            new_col(p, into)?;
            for row in &mut p.rows {
                let v = joined.get(&row[id]).cloned().unwrap_or_default();
                row.push(v);
            }
            p.columns.push(into.clone());
        }
        RelOp::Trim {
            table,
            column,
            prefix,
            suffix,
        } => {
            let t = find_table(&mut out.tables, table)?;
            let c = find_col(t, column)?;
            for row in &mut t.rows {
                let chars: Vec<char> = row[c].chars().collect();
                let end = chars.len().saturating_sub(*suffix);
                row[c] = chars[(*prefix).min(end)..end].iter().collect();
            }
        }
        RelOp::Append {
            table,
            column,
            prefix,
            suffix,
        } => {
            let t = find_table(&mut out.tables, table)?;
            let c = find_col(t, column)?;
            for row in &mut t.rows {
                row[c] = format!("{prefix}{}{suffix}", row[c]);
            }
        }
        RelOp::DeleteCol { table, column } => {
            let t = find_table(&mut out.tables, table)?;
            let c = find_col(t, column)?;
            t.columns.remove(c);
            for row in &mut t.rows {
                row.remove(c);
            }
        }
        RelOp::DeleteTable { table } => {
            find_table(&mut out.tables, table)?;
            out.tables.retain(|t| &t.name != table);
            out.foreign_keys
                .retain(|fk| &fk.child != table && &fk.parent != table);
        }
    }
    Ok(())
}

/// Applies `script` in order; the first invalid op aborts with its index.
pub fn apply_ops(tables: &RelationalOutput, script: &[RelOp]) -> Result<RelationalOutput> {
    let mut out = tables.clone();
    for (index, op) in script.iter().enumerate() {
        apply_one(&mut out, op).map_err(|reason| Error::RelOp {
            index,
            op: op.name().into(),
            reason,
        })?;
    }
    Ok(out)
}

/// Extracted record spans by root table index: `(line_start, line_end)`.
fn extracted_spans(out: &RelationalOutput) -> Vec<Vec<(usize, usize)>> {
    (0..out.templates.len())
        .map(|r| {
            let Some(t) = out.table(&root_table_name(r)) else {
                return Vec::new();
            };
            let (s, e) = (t.column("_line_start"), t.column("_line_end"));
            let (Some(s), Some(e)) = (s, e) else {
                return Vec::new();
            };
            t.rows
                .iter()
                .filter_map(|row| Some((row[s].parse().ok()?, row[e].parse().ok()?)))
                .collect()
        })
        .collect()
}

/// Maps each planted type to the extracted record type holding exactly its
/// records, if record boundaries and types agree with the truth.
pub fn match_types(
    out: &RelationalOutput,
    truth: &GroundTruth,
) -> std::result::Result<Vec<usize>, Vec<String>> {
    let mut diff = Vec::new();
    let truth_span: BTreeMap<(usize, usize), usize> = truth
        .records
        .iter()
        .map(|r| ((r.line_start, r.line_end), r.ty))
        .collect();
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    // extracted type -> planted type
    let mut type_of: Vec<Option<usize>> = Vec::new();
    for (r, spans) in extracted_spans(out).into_iter().enumerate() {
        let mut ty = None;
        for span in spans {
            match truth_span.get(&span) {
                None => diff.push(format!(
                    "record_{r} row at lines {}..{} is not a true record",
                    span.0, span.1
                )),
                Some(&t) => {
                    if *ty.get_or_insert(t) != t {
                        diff.push(format!(
                            "record_{r} mixes planted types {} and {t}",
                            ty.unwrap()
                        ));
                    }
                }
            }
            seen.insert(span, r);
        }
        type_of.push(ty);
    }
    for (span, t) in &truth_span {
        if !seen.contains_key(span) {
            diff.push(format!(
                "true record of type {t} at lines {}..{} was not extracted",
                span.0, span.1
            ));
        }
    }
    let mut mapping = vec![usize::MAX; truth.templates.len()];
    for (r, t) in type_of.iter().enumerate() {
        if let Some(t) = *t {
            if mapping[t] != usize::MAX {
                diff.push(format!(
                    "planted type {t} split over record_{} and record_{r}",
                    mapping[t]
                ));
            }
            mapping[t] = r;
        }
    }
    for (t, &r) in mapping.iter().enumerate() {
        let present = truth.records.iter().any(|rec| rec.ty == t);
        if r == usize::MAX && present {
            diff.push(format!("planted type {t} has no extracted record type"));
        }
    }
    if diff.is_empty() {
        Ok(mapping)
    } else {
        Err(diff)
    }
}

/// Template node with pre-order leaf and array indices.
enum INode {
    F(usize),
    L(u8),
    A {
        id: usize,
        sep: u8,
        term: u8,
        body: Vec<INode>,
    },
}

fn index_nodes(nodes: &[Node], leaf: &mut usize, array: &mut usize) -> Vec<INode> {
    nodes
        .iter()
        .map(|n| match n {
            Node::Field => {
                *leaf += 1;
                INode::F(*leaf - 1)
            }
            Node::Literal(b) => INode::L(*b),
            Node::Array(a) => {
                let id = *array;
                *array += 1;
                INode::A {
                    id,
                    sep: a.sep,
                    term: a.term,
                    body: index_nodes(&a.body, leaf, array),
                }
            }
        })
        .collect()
}

fn index_template(st: &StructureTemplate) -> Vec<INode> {
    index_nodes(st.items(), &mut 0, &mut 0)
}

/// How a run of planted nodes is recovered from a run of discovered ones.
enum Cluster {
    /// Identical literals.
    Lit,
    /// Matching arrays; planted id, discovered id, body alignment.
    Array(usize, usize, Vec<Cluster>),
    /// A discovered field holding one planted field between constant bytes.
    Trim {
        d: usize,
        p: usize,
        prefix: usize,
        suffix: usize,
    },
    /// A discovered field holding only constant bytes.
    Drop,
    /// One planted field split by literals into several discovered fields.
    Join {
        p: usize,
        parts: Vec<Result<usize, u8>>,
    },
}

fn align(p: &[INode], d: &[INode]) -> Option<Vec<Cluster>> {
    fn go(
        p: &[INode],
        d: &[INode],
        i: usize,
        k: usize,
        failed: &mut std::collections::HashSet<(usize, usize)>,
    ) -> Option<Vec<Cluster>> {
        if i == p.len() && k == d.len() {
            return Some(Vec::new());
        }
        if i == p.len() || k == d.len() || failed.contains(&(i, k)) {
            return None;
        }
        let attempt = |cluster: Cluster, di: usize, dk: usize, failed: &mut _| {
            go(p, d, i + di, k + dk, failed).map(|mut rest| {
                rest.insert(0, cluster);
                rest
            })
        };
        match (&p[i], &d[k]) {
            (INode::L(a), INode::L(b)) if a == b => {
                if let Some(r) = attempt(Cluster::Lit, 1, 1, failed) {
                    return Some(r);
                }
            }
            (
                INode::A {
                    id: pa,
                    sep: ps,
                    term: pt,
                    body: pb,
                },
                INode::A {
                    id: da,
                    sep: ds,
                    term: dt,
                    body: db,
                },
            ) if ps == ds && pt == dt => {
                if let Some(inner) = align(pb, db) {
                    if let Some(r) = attempt(Cluster::Array(*pa, *da, inner), 1, 1, failed) {
                        return Some(r);
                    }
                }
            }
            _ => {}
        }
        if let INode::F(dl) = d[k] {
            let mut field = None;
            for m in 1..=p.len() - i {
                match p[i + m - 1] {
                    INode::A { .. } => break,
                    INode::L(b'\n') => break,
                    INode::F(pl) => {
                        if field.is_some() {
                            break;
                        }
                        field = Some((pl, m - 1));
                    }
                    INode::L(_) => {}
                }
                let cluster = match field {
                    Some((pl, at)) => Cluster::Trim {
                        d: dl,
                        p: pl,
                        prefix: at,
                        suffix: m - 1 - at,
                    },
                    None => Cluster::Drop,
                };
                if let Some(r) = attempt(cluster, m, 1, failed) {
                    return Some(r);
                }
            }
        }
        if let INode::F(pl) = p[i] {
            let mut parts = Vec::new();
            for n in 1..=d.len() - k {
                match d[k + n - 1] {
                    INode::F(dl) if n % 2 == 1 => parts.push(Ok(dl)),
                    INode::L(b) if n % 2 == 0 && b != b'\n' => parts.push(Err(b)),
                    _ => break,
                }
                if n >= 3 && n % 2 == 1 {
                    let cluster = Cluster::Join {
                        p: pl,
                        parts: parts.clone(),
                    };
                    if let Some(r) = attempt(cluster, 1, n, failed) {
                        return Some(r);
                    }
                }
            }
        }
        failed.insert((i, k));
        None
    }
    go(p, d, 0, 0, &mut std::collections::HashSet::new())
}

/// Column holding planted leaf `j` after the script has rebuilt it.
fn leaf_column(j: usize) -> String {
    format!("leaf_{j}")
}

struct ScriptBuilder<'a> {
    r: usize,
    script: Vec<RelOp>,
    planted_leaves: &'a dyn Fn(usize) -> Vec<usize>,
}

impl ScriptBuilder<'_> {
    fn table(&self, array: Option<usize>) -> String {
        match array {
            None => root_table_name(self.r),
            Some(a) => crate::extraction::array_table_name(self.r, a),
        }
    }

    /// Emits ops for one table; returns planted leaf -> column in that table.
    fn emit(&mut self, clusters: &[Cluster], table: &str, cols: &mut BTreeMap<usize, String>) {
        for c in clusters {
            match c {
                Cluster::Lit | Cluster::Drop => {}
                Cluster::Trim {
                    d,
                    p,
                    prefix,
                    suffix,
                } => {
                    if prefix + suffix > 0 {
                        self.script.push(RelOp::Trim {
                            table: table.into(),
                            column: field_column(*d),
                            prefix: *prefix,
                            suffix: *suffix,
                        });
                    }
                    cols.insert(*p, field_column(*d));
                }
                Cluster::Join { p, parts } => {
                    let fields: Vec<usize> = parts.iter().filter_map(|x| x.ok()).collect();
                    for w in parts.windows(2) {
                        if let (Ok(f), Err(b)) = (w[0], w[1]) {
                            self.script.push(RelOp::Append {
                                table: table.into(),
                                column: field_column(f),
                                prefix: String::new(),
                                suffix: (b as char).to_string(),
                            });
                        }
                    }
                    let mut acc = field_column(fields[0]);
                    for (n, &f) in fields.iter().enumerate().skip(1) {
                        let into = if n + 1 == fields.len() {
                            leaf_column(*p)
                        } else {
                            format!("{}_part{n}", leaf_column(*p))
                        };
                        self.script.push(RelOp::Concat {
                            table: table.into(),
                            c1: acc,
                            c2: field_column(f),
                            into: into.clone(),
                        });
                        acc = into;
                    }
                    cols.insert(*p, acc);
                }
                Cluster::Array(pa, da, inner) => {
                    let child = self.table(Some(*da));
                    let mut child_cols = BTreeMap::new();
                    self.emit(inner, &child, &mut child_cols);
                    for j in (self.planted_leaves)(*pa) {
                        let Some(col) = child_cols.get(&j) else {
                            continue;
                        };
                        self.script.push(RelOp::GroupConcat {
                            parent: table.into(),
                            child: child.clone(),
                            fk: "_parent_id".into(),
                            column: col.clone(),
                            into: leaf_column(j),
                        });
                        cols.insert(j, leaf_column(j));
                    }
                }
            }
        }
    }
}

/// The rewrite turning the extraction of `discovered`, stored as record
/// type `r`, into the target table of `planted`; `None` when no script of
/// trims, appends, concatenations and group concatenations exists, e.g.
/// when two planted fields were merged into one.
pub fn derive_script(
    discovered: &StructureTemplate,
    r: usize,
    planted: &StructureTemplate,
) -> Option<Vec<RelOp>> {
    let clusters = align(&index_template(planted), &index_template(discovered))?;
    let pct = CompiledTemplate::new(planted.clone());
    let under = |a: usize| -> Vec<usize> {
        (0..pct.leaf_count())
            .filter(|&leaf| {
                let mut q = pct.leaf_parent()[leaf];
                while let Some(x) = q {
                    if x as usize == a {
                        return true;
                    }
                    q = pct.array_parent()[x as usize];
                }
                false
            })
            .collect()
    };
    let mut b = ScriptBuilder {
        r,
        script: Vec::new(),
        planted_leaves: &under,
    };
    let root = b.table(None);
    let mut cols = BTreeMap::new();
    b.emit(&clusters, &root, &mut cols);
    if cols.len() != pct.leaf_count() {
        return None;
    }
    let dct = CompiledTemplate::new(discovered.clone());
    let keep: Vec<&String> = cols.values().collect();
    let mut existing = vec!["_id".to_string(), "_line_end".to_string()];
    for (leaf, parent) in dct.leaf_parent().iter().enumerate() {
        if parent.is_none() {
            existing.push(field_column(leaf));
        }
    }
    for op in &b.script {
        if let RelOp::Concat { table, into, .. }
        | RelOp::GroupConcat {
            parent: table,
            into,
            ..
        } = op
        {
            if *table == root {
                existing.push(into.clone());
            }
        }
    }
    let mut script = b.script;
    for c in existing {
        if !keep.contains(&&c) {
            script.push(RelOp::DeleteCol {
                table: root.clone(),
                column: c,
            });
        }
    }
    for a in 0..dct.array_count() {
        script.push(RelOp::DeleteTable {
            table: crate::extraction::array_table_name(r, a),
        });
    }
    Some(script)
}

/// Script for a whole extraction given the type mapping from
/// [`match_types`]; fails naming the first planted type without one.
pub fn truth_script(
    out: &RelationalOutput,
    truth: &GroundTruth,
    mapping: &[usize],
) -> std::result::Result<Vec<RelOp>, String> {
    let mut script = Vec::new();
    for (t, &r) in mapping.iter().enumerate() {
        if r == usize::MAX {
            continue;
        }
        let planted = StructureTemplate::parse(&truth.templates[t]).map_err(|e| e.to_string())?;
        let discovered = StructureTemplate::parse(&out.templates[r]).map_err(|e| e.to_string())?;
        let ops = derive_script(&discovered, r, &planted).ok_or_else(|| {
            format!(
                "no script turns {} into planted type {t} ({})",
                out.templates[r], truth.templates[t]
            )
        })?;
        script.extend(ops);
    }
    Ok(script)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub success: bool,
    pub diff: Vec<String>,
}

/// Whether `got` holds the rows of `want`, keyed by `_line_start`, with
/// some one-to-one assignment of columns by content.
fn table_matches(got: &Table, want: &Table) -> bool {
    let (Some(gk), Some(wk)) = (got.column("_line_start"), want.column("_line_start")) else {
        return false;
    };
    if got.columns.len() != want.columns.len() || got.rows.len() != want.rows.len() {
        return false;
    }
    let by_key: HashMap<&str, &Vec<String>> =
        got.rows.iter().map(|r| (r[gk].as_str(), r)).collect();
    if by_key.len() != got.rows.len() {
        return false;
    }
    let Some(pairs) = want
        .rows
        .iter()
        .map(|w| by_key.get(w[wk].as_str()).map(|g| (*g, w)))
        .collect::<Option<Vec<_>>>()
    else {
        return false;
    };
    let mut used = vec![false; got.columns.len()];
    used[gk] = true;
    (0..want.columns.len()).filter(|&c| c != wk).all(|wc| {
        let found = (0..got.columns.len())
            .find(|&gc| !used[gc] && pairs.iter().all(|(g, w)| g[gc] == w[wc]));
        found.map(|gc| used[gc] = true).is_some()
    })
}

/// Checks record boundaries and types against the labels, then whether the
/// script turns the extraction into the target tables. Rows are matched by
/// `_line_start`, columns by content; names and orders are free.
pub fn verify_success(
    extracted: &RelationalOutput,
    truth: &GroundTruth,
    script: &[RelOp],
) -> Verdict {
    let mut diff = match match_types(extracted, truth) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    };
    let result = match apply_ops(extracted, script) {
        Ok(r) => r,
        Err(e) => {
            diff.push(e.to_string());
            return Verdict {
                success: false,
                diff,
            };
        }
    };
    let mut used = vec![false; result.tables.len()];
    for target in truth.tables.iter().filter(|t| !t.rows.is_empty()) {
        match (0..result.tables.len())
            .find(|&i| !used[i] && table_matches(&result.tables[i], target))
        {
            Some(i) => used[i] = true,
            None => diff.push(format!("no table after the script equals {}", target.name)),
        }
    }
    for (t, u) in result.tables.iter().zip(&used) {
        if !u && !t.rows.is_empty() {
            diff.push(format!("table {} is left over after the script", t.name));
        }
    }
    Verdict {
        success: diff.is_empty(),
        diff,
    }
}
