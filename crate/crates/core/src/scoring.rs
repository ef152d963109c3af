//! Minimum-description-length scoring of a template against a sample.
//!
//! The text is parsed left to right into record blocks and noise blocks.
//! Each field leaf gets a data type from its observed values, and the total
//! cost in bits is
//!
//! ```text
//! len(template) * 8 + 32 + blocks + Σ noise bytes * 8 + Σ record bits
//! ```
//!
//! where a record costs 32 bits per array instance plus the bits of its
//! field values under their types. Lower is better.

use std::collections::{BTreeMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::SampleView;
use crate::error::Result;
use crate::template::{Cap, CompiledTemplate, MatchOutcome, StructureTemplate};

/// Bits charged per array instance for its repetition count.
pub const ARRAY_COUNT_BITS: u64 = 32;
/// Bits charged for the dataset size header.
pub const HEADER_BITS: u64 = 32;
/// Largest distinct-value count an enumerated field may have.
pub const MAX_ENUM_VALUES: usize = 256;

/// `⌈log2 n⌉`, with `0` for `n <= 1`.
pub fn ceil_log2(n: u128) -> u64 {
    if n <= 1 {
        0
    } else {
        (128 - (n - 1).leading_zeros()) as u64
    }
}

pub fn enumerated_bits(n_value: u64) -> u64 {
    ceil_log2(n_value as u128)
}

/// `None` when the range does not fit in 128 bits.
pub fn integer_bits(min: i128, max: i128) -> Option<u64> {
    let span = max.checked_sub(min)? as u128;
    Some(ceil_log2(span.checked_add(1)?))
}

/// Bits for a real value whose bounds are given scaled by `10^exp`.
pub fn real_bits(min_scaled: i128, max_scaled: i128) -> Option<u64> {
    integer_bits(min_scaled, max_scaled)
}

pub fn string_bits(len: usize) -> u64 {
    (len as u64 + 1) * 8
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldType {
    Enumerated {
        n_value: u64,
    },
    Integer {
        #[serde(with = "decimal_string")]
        min: i128,
        #[serde(with = "decimal_string")]
        max: i128,
    },
    /// Bounds are the values times `10^exp`.
    Real {
        #[serde(with = "decimal_string")]
        min: i128,
        #[serde(with = "decimal_string")]
        max: i128,
        exp: u32,
    },
    String,
}

/// 128-bit bounds travel as JSON strings; JSON numbers lose precision past 2^53.
mod decimal_string {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &i128, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i128, D::Error> {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

impl FieldType {
    /// Fixed cost of one value, or `None` for strings (cost depends on length).
    pub fn bits_per_value(&self) -> Option<u64> {
        match *self {
            FieldType::Enumerated { n_value } => Some(enumerated_bits(n_value)),
            FieldType::Integer { min, max } => integer_bits(min, max),
            FieldType::Real { min, max, .. } => real_bits(min, max),
            FieldType::String => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Decimal {
    mantissa: i128,
    exp: u32,
}

impl Decimal {
    fn rescale(self, exp: u32) -> Option<i128> {
        self.mantissa
            .checked_mul(10i128.checked_pow(exp - self.exp)?)
    }

    fn cmp_checked(self, other: Decimal) -> Option<std::cmp::Ordering> {
        let e = self.exp.max(other.exp);
        Some(self.rescale(e)?.cmp(&other.rescale(e)?))
    }
}

enum Lexeme {
    Int(i128),
    Real(Decimal),
    Other,
}

fn lex(v: &[u8]) -> Lexeme {
    let (neg, body) = match v.first() {
        Some(b'-') => (true, &v[1..]),
        Some(b'+') => (false, &v[1..]),
        _ => (false, v),
    };
    let digits = |s: &[u8]| !s.is_empty() && s.iter().all(u8::is_ascii_digit);
    let parse = |s: &[u8]| -> Option<i128> {
        s.iter().try_fold(0i128, |acc, &d| {
            acc.checked_mul(10)?.checked_add((d - b'0') as i128)
        })
    };
    let sign = |m: i128| if neg { -m } else { m };
    if digits(body) {
        return parse(body).map_or(Lexeme::Other, |m| Lexeme::Int(sign(m)));
    }
    if let Some(dot) = body.iter().position(|&b| b == b'.') {
        let (int, frac) = (&body[..dot], &body[dot + 1..]);
        if digits(int) && digits(frac) {
            let mut all = int.to_vec();
            all.extend_from_slice(frac);
            if let Some(m) = parse(&all) {
                return Lexeme::Real(Decimal {
                    mantissa: sign(m),
                    exp: frac.len() as u32,
                });
            }
        }
    }
    Lexeme::Other
}

/// Running summary of one leaf's values.
#[derive(Debug, Clone)]
pub struct LeafStats {
    pub count: u64,
    pub total_len: u64,
    distinct: HashSet<Vec<u8>>,
    distinct_overflow: bool,
    all_int: bool,
    int_range: Option<(i128, i128)>,
    all_numeric: bool,
    any_real: bool,
    real_range: Option<(Decimal, Decimal)>,
    max_exp: u32,
}

impl Default for LeafStats {
    fn default() -> LeafStats {
        LeafStats {
            count: 0,
            total_len: 0,
            distinct: HashSet::new(),
            distinct_overflow: false,
            all_int: true,
            int_range: None,
            all_numeric: true,
            any_real: false,
            real_range: None,
            max_exp: 0,
        }
    }
}

impl LeafStats {
    pub fn push(&mut self, v: &[u8]) {
        self.count += 1;
        self.total_len += v.len() as u64;
        if !self.distinct_overflow && !self.distinct.contains(v) {
            if self.distinct.len() == MAX_ENUM_VALUES {
                self.distinct_overflow = true;
                self.distinct = HashSet::new();
            } else {
                self.distinct.insert(v.to_vec());
            }
        }
        if !self.all_numeric {
            return;
        }
        let dec = match lex(v) {
            Lexeme::Int(i) => {
                if self.all_int {
                    self.int_range = Some(match self.int_range {
                        None => (i, i),
                        Some((lo, hi)) => (lo.min(i), hi.max(i)),
                    });
                }
                Decimal {
                    mantissa: i,
                    exp: 0,
                }
            }
            Lexeme::Real(d) => {
                self.all_int = false;
                self.any_real = true;
                self.max_exp = self.max_exp.max(d.exp);
                d
            }
            Lexeme::Other => {
                self.all_int = false;
                self.all_numeric = false;
                return;
            }
        };
        self.real_range = match self.real_range {
            None => Some((dec, dec)),
            Some((lo, hi)) => match (dec.cmp_checked(lo), dec.cmp_checked(hi)) {
                (Some(a), Some(b)) => Some((
                    if a.is_lt() { dec } else { lo },
                    if b.is_gt() { dec } else { hi },
                )),
                _ => {
                    self.all_numeric = false;
                    None
                }
            },
        };
    }

    pub fn distinct_count(&self) -> Option<usize> {
        (!self.distinct_overflow).then_some(self.distinct.len())
    }

    /// Integer, then real, then enumerated, then string.
    pub fn infer(&self) -> FieldType {
        if self.count == 0 {
            return FieldType::String;
        }
        if self.all_int {
            if let Some((min, max)) = self.int_range {
                if integer_bits(min, max).is_some() {
                    return FieldType::Integer { min, max };
                }
            }
        }
        if self.all_numeric && self.any_real {
            if let Some((lo, hi)) = self.real_range {
                if let (Some(min), Some(max)) = (lo.rescale(self.max_exp), hi.rescale(self.max_exp))
                {
                    if real_bits(min, max).is_some() {
                        return FieldType::Real {
                            min,
                            max,
                            exp: self.max_exp,
                        };
                    }
                }
            }
        }
        if let Some(n) = self.distinct_count() {
            if n as u64 * 10 <= self.count {
                return FieldType::Enumerated { n_value: n as u64 };
            }
        }
        FieldType::String
    }

    /// Bits to encode every value of this leaf under `ty`.
    pub fn bits(&self, ty: &FieldType) -> u64 {
        match ty.bits_per_value() {
            Some(b) => b * self.count,
            None => (self.total_len + self.count) * 8,
        }
    }
}

/// Outcome of parsing a text with one template.
#[derive(Debug, Clone, Default)]
pub struct ParseResult {
    /// Byte spans of record blocks.
    pub records: Vec<Range<usize>>,
    /// Byte spans of maximal runs of unmatched lines.
    pub noise: Vec<Range<usize>>,
    pub leaves: Vec<LeafStats>,
    pub array_instances: u64,
    /// Repetition-count histogram of each array.
    pub arities: Vec<BTreeMap<usize, u64>>,
}

impl ParseResult {
    pub fn block_count(&self) -> u64 {
        (self.records.len() + self.noise.len()) as u64
    }

    pub fn noise_bytes(&self) -> u64 {
        self.noise.iter().map(|r| (r.end - r.start) as u64).sum()
    }

    pub fn record_bytes(&self) -> u64 {
        self.records.iter().map(|r| (r.end - r.start) as u64).sum()
    }

    /// First byte offset at which a record starts.
    pub fn first_match(&self) -> Option<usize> {
        self.records.first().map(|r| r.start)
    }
}

/// Parses every chunk of `view`, never letting a record cross a chunk edge.
pub fn parse_with_template(
    view: &SampleView,
    ct: &CompiledTemplate,
    max_lines: usize,
) -> ParseResult {
    let mut out = ParseResult {
        leaves: vec![LeafStats::default(); ct.leaf_count()],
        arities: vec![BTreeMap::new(); ct.array_count()],
        ..ParseResult::default()
    };
    let text = view.text();
    let starts = view.line_starts();
    let mut caps = Vec::new();
    let mut stack: Vec<(u32, usize)> = Vec::new();
    for lines in view.chunk_line_ranges() {
        if lines.is_empty() {
            continue;
        }
        let base = starts[lines.start];
        let end = view.line_range(lines.end - 1).end;
        let chunk = &text[base..end];
        let mut noise_start: Option<usize> = None;
        let mut i = lines.start;
        while i < lines.end {
            let pos = starts[i] - base;
            caps.clear();
            match ct.match_at(chunk, pos, max_lines, &mut caps) {
                MatchOutcome::Matched { end, lines } => {
                    if let Some(s) = noise_start.take() {
                        out.noise.push(s..base + pos);
                    }
                    out.records.push(base + pos..base + end);
                    for c in &caps {
                        match *c {
                            Cap::Field { leaf, start, end } => {
                                out.leaves[leaf as usize].push(&chunk[start..end])
                            }
                            Cap::ArrayStart(id) => {
                                out.array_instances += 1;
                                stack.push((id, 0));
                            }
                            Cap::Elem => stack.last_mut().expect("elem inside array").1 += 1,
                            Cap::ArrayEnd => {
                                let (id, n) = stack.pop().expect("balanced arrays");
                                *out.arities[id as usize].entry(n).or_insert(0) += 1;
                            }
                        }
                    }
                    i += lines;
                }
                _ => {
                    noise_start.get_or_insert(base + pos);
                    i += 1;
                }
            }
        }
        if let Some(s) = noise_start {
            out.noise.push(s..end);
        }
    }
    out
}

pub fn infer_field_types(parse: &ParseResult) -> Vec<FieldType> {
    parse.leaves.iter().map(LeafStats::infer).collect()
}

pub fn description_length(st: &StructureTemplate, parse: &ParseResult, types: &[FieldType]) -> u64 {
    let template = st.canonical().len() as u64 * 8;
    let fields: u64 = parse.leaves.iter().zip(types).map(|(l, t)| l.bits(t)).sum();
    template
        + HEADER_BITS
        + parse.block_count()
        + parse.noise_bytes() * 8
        + parse.array_instances * ARRAY_COUNT_BITS
        + fields
}

/// Cost of declaring the whole view noise: one block per chunk.
pub fn noise_only_dl(view: &SampleView) -> u64 {
    let blocks = view.chunk_line_ranges().filter(|r| !r.is_empty()).count() as u64;
    HEADER_BITS + blocks + view.sampled_len() as u64 * 8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTemplate {
    pub template: String,
    pub total_dl: u64,
    pub field_types: Vec<FieldType>,
    pub record_count: u64,
    pub record_bytes: u64,
    pub noise_blocks: u64,
    pub noise_bytes: u64,
}

impl ScoredTemplate {
    pub fn structure(&self) -> StructureTemplate {
        StructureTemplate::parse(&self.template).expect("scored templates hold canonical strings")
    }

    /// Share of the scored bytes inside records, in percent.
    pub fn coverage_pct(&self) -> f64 {
        let total = self.record_bytes + self.noise_bytes;
        if total == 0 {
            0.0
        } else {
            self.record_bytes as f64 * 100.0 / total as f64
        }
    }
}

/// A pluggable regularity score; lower is better.
pub trait RegularityScore: Sync {
    fn score(
        &self,
        view: &SampleView,
        st: &StructureTemplate,
        max_lines: usize,
    ) -> Result<(ScoredTemplate, ParseResult)>;
}

/// The minimum-description-length score.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mdl;

impl RegularityScore for Mdl {
    fn score(
        &self,
        view: &SampleView,
        st: &StructureTemplate,
        max_lines: usize,
    ) -> Result<(ScoredTemplate, ParseResult)> {
        st.check_ll1()?;
        let ct = CompiledTemplate::new(st.clone());
        let parse = parse_with_template(view, &ct, max_lines);
        let types = infer_field_types(&parse);
        let total_dl = description_length(st, &parse, &types);
        let scored = ScoredTemplate {
            template: ct.canonical().to_string(),
            total_dl,
            field_types: types,
            record_count: parse.records.len() as u64,
            record_bytes: parse.record_bytes(),
            noise_blocks: parse.noise.len() as u64,
            noise_bytes: parse.noise_bytes(),
        };
        Ok((scored, parse))
    }
}

/// MDL score of `st` on `view`.
pub fn score(
    view: &SampleView,
    st: &StructureTemplate,
    max_lines: usize,
) -> Result<ScoredTemplate> {
    Mdl.score(view, st, max_lines).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str) -> StructureTemplate {
        StructureTemplate::parse(s).unwrap()
    }

    fn leaf(values: &[&str]) -> LeafStats {
        let mut l = LeafStats::default();
        for v in values {
            l.push(v.as_bytes());
        }
        l
    }

    #[test]
    fn log2_edges() {
        assert_eq!(ceil_log2(0), 0);
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(256), 8);
        assert_eq!(ceil_log2(257), 9);
        assert_eq!(ceil_log2(u128::MAX), 128);
    }

    #[test]
    fn formula_examples() {
        assert_eq!(string_bits(3), 32);
        assert_eq!(integer_bits(0, 255), Some(8));
        assert_eq!(enumerated_bits(1), 0);
        assert_eq!(integer_bits(i128::MIN, i128::MAX), None);
    }

    #[test]
    fn infers_types() {
        assert_eq!(
            leaf(&["1", "2", "300"]).infer(),
            FieldType::Integer { min: 1, max: 300 }
        );
        assert_eq!(
            leaf(&["1.5", "2.25"]).infer(),
            FieldType::Real {
                min: 150,
                max: 225,
                exp: 2
            }
        );
        assert_eq!(
            leaf(&["-3", "0.5"]).infer(),
            FieldType::Real {
                min: -30,
                max: 5,
                exp: 1
            }
        );
        let mut methods = vec!["GET"; 600];
        methods.extend(vec!["POST"; 400]);
        assert_eq!(leaf(&methods).infer(), FieldType::Enumerated { n_value: 2 });
        assert_eq!(leaf(&["a", "b", "c"]).infer(), FieldType::String);
        assert_eq!(
            leaf(&["007", "10"]).infer(),
            FieldType::Integer { min: 7, max: 10 }
        );
        let huge = "9".repeat(60);
        assert_eq!(leaf(&[&huge, "1"]).infer(), FieldType::String);
    }

    #[test]
    fn parse_blocks() {
        let view = SampleView::from_text(b"a,b\nc,d\nnoise\nmore noise\ne,f\n".to_vec());
        let ct = CompiledTemplate::new(st("F,F\\n"));
        let p = parse_with_template(&view, &ct, 10);
        assert_eq!(p.records, vec![0..4, 4..8, 25..29]);
        assert_eq!(p.noise, vec![8..25]);
        assert_eq!(p.block_count(), 4);
    }

    #[test]
    fn dl_by_hand() {
        let view = SampleView::from_text(b"1,x\n2,y\n?\n".to_vec());
        let t = st("F,F\\n");
        let s = score(&view, &t, 10).unwrap();
        // template 5 bytes, 3 blocks, 2 noise bytes, ints 1..2 (1 bit each), strings 16 bits each
        assert_eq!(s.total_dl, 5 * 8 + 32 + 3 + 2 * 8 + 2 + 32);
        assert_eq!(s.record_count, 2);
    }

    #[test]
    fn fixed_arity_beats_array() {
        let mut text = Vec::new();
        for i in 0..200 {
            text.extend_from_slice(format!("{i},{},x{i}\n", i * 7).as_bytes());
        }
        let view = SampleView::from_text(text);
        let fixed = score(&view, &st("F,F,F\\n"), 10).unwrap();
        let array = score(&view, &st("(F,)*F\\n"), 10).unwrap();
        assert!(fixed.total_dl < array.total_dl);
    }

    #[test]
    fn noise_adds_eight_bits_per_byte() {
        let base = b"a,b\n".repeat(20);
        let mut noisy = base.clone();
        noisy.extend_from_slice(b"zzz\n");
        let t = st("F,F\\n");
        let a = score(&SampleView::from_text(base), &t, 10).unwrap();
        let b = score(&SampleView::from_text(noisy), &t, 10).unwrap();
        assert_eq!(b.total_dl - a.total_dl, 4 * 8 + 1);
    }

    #[test]
    fn non_ll1_is_rejected() {
        let view = SampleView::from_text(b"a\n".to_vec());
        assert!(score(&view, &st("F(F,)*F\\n"), 10).is_err());
    }

    #[test]
    fn arity_histogram() {
        let view = SampleView::from_text(b"1,2,3\n1,2\n4,5,6\n".to_vec());
        let ct = CompiledTemplate::new(st("(F,)*F\\n"));
        let p = parse_with_template(&view, &ct, 10);
        assert_eq!(p.arities[0], BTreeMap::from([(2, 1), (3, 2)]));
        assert_eq!(p.array_instances, 3);
    }
}
