//! Record templates and structure templates.
//!
//! A record template is a byte string in which every maximal run of
//! field bytes has been replaced by the placeholder `F`. A structure template
//! is a small regular expression over record templates built from three
//! pieces: fields, literal bytes and arrays `(Ux)*Uy` with `x != y`. A
//! sequence of those pieces is a struct.
//!
//! # Canonical syntax
//!
//! `F` is a field, `(` body sep `)` `*` body term is an array, any other byte
//! is a literal. Literals `(`, `)`, `*` and `\` are backslash-escaped,
//! newline/tab/CR print as `\n`, `\t`, `\r`, and every other byte outside
//! printable ASCII punctuation (including letters and digits) prints as `\xNN`.

mod charset;
mod matcher;
mod reduce;

use std::fmt;
use std::hash::Hasher;

pub use charset::CharSet;
pub use matcher::{matches, Cap, CompiledTemplate, MatchOutcome};
pub use reduce::{
    reduce_template, reduce_to_structure_template, reduce_with, ReduceParams, Reducer,
};

use crate::error::{Error, Result};

/// Placeholder byte standing for one field value in a record template.
pub const PLACEHOLDER: u8 = b'F';

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordTemplate {
    bytes: Vec<u8>,
}

impl RecordTemplate {
    pub fn from_bytes(bytes: impl Into<Vec<u8>>) -> RecordTemplate {
        RecordTemplate {
            bytes: bytes.into(),
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn placeholders(&self) -> usize {
        self.bytes.iter().filter(|&&b| b == PLACEHOLDER).count()
    }

    /// A record template needs at least one placeholder.
    pub fn is_valid(&self) -> bool {
        self.bytes.contains(&PLACEHOLDER)
    }
}

impl fmt::Debug for RecordTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "RecordTemplate({:?})",
            String::from_utf8_lossy(&self.bytes)
        )
    }
}

/// Output of [`extract_record_template`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedTemplate {
    pub template: RecordTemplate,
    /// Bytes of the record that ended up inside field values.
    pub field_bytes: usize,
}

/// Replaces every maximal run of bytes outside `charset ∪ {'\n'}` with `F`.
pub fn extract_record_template(record: &[u8], charset: CharSet) -> ExtractedTemplate {
    let charset = charset.with_newline();
    let mut out = Vec::with_capacity(record.len().min(64));
    let mut field_bytes = 0;
    let mut in_field = false;
    for &b in record {
        if charset.contains(b) {
            out.push(b);
            in_field = false;
        } else {
            field_bytes += 1;
            if !in_field {
                out.push(PLACEHOLDER);
                in_field = true;
            }
        }
    }
    ExtractedTemplate {
        template: RecordTemplate { bytes: out },
        field_bytes,
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Node {
    Field,
    Literal(u8),
    Array(Array),
}

/// `(body sep)* body term`
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Array {
    pub body: Vec<Node>,
    pub sep: u8,
    pub term: u8,
}

impl Node {
    pub fn array(body: Vec<Node>, sep: u8, term: u8) -> Node {
        Node::Array(Array { body, sep, term })
    }

    fn ends_line(&self) -> bool {
        match self {
            Node::Literal(b) => *b == b'\n',
            Node::Array(a) => a.term == b'\n',
            Node::Field => false,
        }
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_nodes(std::slice::from_ref(self), &mut s);
        f.write_str(&s)
    }
}

/// A struct of fields, literals and arrays; the root of a template.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructureTemplate {
    items: Vec<Node>,
}

impl StructureTemplate {
    pub fn new(items: Vec<Node>) -> StructureTemplate {
        StructureTemplate { items }
    }

    pub fn items(&self) -> &[Node] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Node> {
        self.items
    }

    pub fn canonical(&self) -> String {
        let mut s = String::with_capacity(self.items.len() + 8);
        write_nodes(&self.items, &mut s);
        s
    }

    /// Inverse of [`StructureTemplate::canonical`].
    pub fn parse(text: &str) -> Result<StructureTemplate> {
        let mut p = CanonicalParser {
            src: text.as_bytes(),
            pos: 0,
        };
        let items = p.sequence(false)?;
        if p.pos != p.src.len() {
            return Err(p.error("unbalanced ')'"));
        }
        Ok(StructureTemplate { items })
    }

    /// Stable 64-bit key of the canonical string (FNV-1a).
    pub fn hash_key(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write(self.canonical().as_bytes());
        h.finish()
    }

    pub fn field_count(&self) -> usize {
        fn walk(nodes: &[Node]) -> usize {
            nodes
                .iter()
                .map(|n| match n {
                    Node::Field => 1,
                    Node::Literal(_) => 0,
                    Node::Array(a) => walk(&a.body),
                })
                .sum()
        }
        walk(&self.items)
    }

    pub fn array_count(&self) -> usize {
        fn walk(nodes: &[Node]) -> usize {
            nodes
                .iter()
                .map(|n| match n {
                    Node::Array(a) => 1 + walk(&a.body),
                    _ => 0,
                })
                .sum()
        }
        walk(&self.items)
    }

    /// Bytes appearing as literals (including array separators and terminators).
    pub fn literal_bytes(&self) -> CharSet {
        fn walk(nodes: &[Node], set: &mut CharSet) {
            for n in nodes {
                match n {
                    Node::Literal(b) => set.insert(*b),
                    Node::Array(a) => {
                        set.insert(a.sep);
                        set.insert(a.term);
                        walk(&a.body, set);
                    }
                    Node::Field => {}
                }
            }
        }
        let mut set = CharSet::empty();
        walk(&self.items, &mut set);
        set
    }

    /// Top-level pieces that each end a line, in order. A trailing piece that
    /// does not end with a newline is returned as its own segment.
    pub fn line_segments(&self) -> Vec<&[Node]> {
        let mut segs = Vec::new();
        let mut start = 0;
        for (i, n) in self.items.iter().enumerate() {
            if n.ends_line() {
                segs.push(&self.items[start..=i]);
                start = i + 1;
            }
        }
        if start < self.items.len() {
            segs.push(&self.items[start..]);
        }
        segs
    }

    pub fn line_count(&self) -> usize {
        self.line_segments().len()
    }

    /// True when the line sequence begins with a repeated block, i.e. there is
    /// a period `q` with `2q <= lines` such that line `i` equals line `i + q`
    /// throughout. Such a template describes two or more consecutive records
    /// of a shorter template rather than one record.
    pub fn is_record_concatenation(&self) -> bool {
        let segs = self.line_segments();
        let k = segs.len();
        (1..=k / 2).any(|q| (0..k - q).all(|i| segs[i] == segs[i + q]))
    }

    /// Every cyclic rotation of the line segments, starting with the identity.
    pub fn line_rotations(&self) -> Vec<StructureTemplate> {
        let segs = self.line_segments();
        (0..segs.len())
            .map(|r| {
                let items = segs[r..]
                    .iter()
                    .chain(&segs[..r])
                    .flat_map(|s| s.iter().cloned())
                    .collect();
                StructureTemplate { items }
            })
            .collect()
    }

    /// Checks that a left-to-right, one-byte-lookahead parse is deterministic.
    ///
    /// Literal and separator decisions are always made on a single byte, so the
    /// only conflicts are arrays with `sep == term`, empty array bodies, and two
    /// fields that can end up adjacent (a field cannot tell where it stops).
    pub fn check_ll1(&self) -> Result<()> {
        fn first_is_field(nodes: &[Node]) -> bool {
            match nodes.first() {
                Some(Node::Field) => true,
                Some(Node::Array(a)) => first_is_field(&a.body),
                _ => false,
            }
        }
        fn walk(nodes: &[Node], path: &str) -> Result<()> {
            if nodes.is_empty() {
                return Err(Error::NotLl1(format!("empty sequence at {path}")));
            }
            for (i, n) in nodes.iter().enumerate() {
                if let Node::Array(a) = n {
                    if a.sep == a.term {
                        return Err(Error::NotLl1(format!(
                            "array {path}/{i} uses {:?} as both separator and terminator",
                            a.sep as char
                        )));
                    }
                    walk(&a.body, &format!("{path}/{i}"))?;
                }
                if matches!(n, Node::Field) && first_is_field(&nodes[i + 1..]) {
                    return Err(Error::NotLl1(format!(
                        "adjacent fields at {path}/{i} cannot be delimited"
                    )));
                }
            }
            Ok(())
        }
        walk(&self.items, "")
    }
}

impl fmt::Debug for StructureTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StructureTemplate({})", self.canonical())
    }
}

impl fmt::Display for StructureTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

#[derive(Clone, Copy)]
struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

pub(crate) fn escaped_len(b: u8) -> usize {
    match b {
        b'(' | b')' | b'*' | b'\\' | b'\n' | b'\t' | b'\r' => 2,
        _ if b.is_ascii_punctuation() || b == b' ' => 1,
        _ => 4,
    }
}

fn write_literal(b: u8, out: &mut String) {
    match b {
        b'(' | b')' | b'*' | b'\\' => {
            out.push('\\');
            out.push(b as char);
        }
        b'\n' => out.push_str("\\n"),
        b'\t' => out.push_str("\\t"),
        b'\r' => out.push_str("\\r"),
        _ if b.is_ascii_punctuation() || b == b' ' => out.push(b as char),
        _ => out.push_str(&format!("\\x{b:02x}")),
    }
}

fn write_nodes(nodes: &[Node], out: &mut String) {
    for n in nodes {
        match n {
            Node::Field => out.push('F'),
            Node::Literal(b) => write_literal(*b, out),
            Node::Array(a) => {
                out.push('(');
                write_nodes(&a.body, out);
                write_literal(a.sep, out);
                out.push_str(")*");
                write_nodes(&a.body, out);
                write_literal(a.term, out);
            }
        }
    }
}

struct CanonicalParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl CanonicalParser<'_> {
    fn error(&self, reason: &str) -> Error {
        Error::TemplateSyntax {
            offset: self.pos,
            reason: reason.to_string(),
        }
    }

    /// Parses items until end of input, or until an unescaped `)` when `in_array`.
    fn sequence(&mut self, in_array: bool) -> Result<Vec<Node>> {
        let mut items = Vec::new();
        while let Some(&c) = self.src.get(self.pos) {
            match c {
                b')' if in_array => return Ok(items),
                b')' => return Err(self.error("unbalanced ')'")),
                b'*' => return Err(self.error("stray '*'")),
                b'F' => {
                    self.pos += 1;
                    items.push(Node::Field);
                }
                b'(' => {
                    self.pos += 1;
                    items.push(self.array()?);
                }
                _ => items.push(Node::Literal(self.literal()?)),
            }
        }
        if in_array {
            return Err(self.error("unterminated array"));
        }
        Ok(items)
    }

    fn array(&mut self) -> Result<Node> {
        let open = self.pos;
        let mut body = self.sequence(true)?;
        let sep = match body.pop() {
            Some(Node::Literal(b)) => b,
            _ => return Err(self.error("array body must end with a separator literal")),
        };
        if body.is_empty() {
            return Err(self.error("empty array body"));
        }
        if self.src.get(self.pos..self.pos + 2) != Some(b")*") {
            return Err(self.error("expected ')*'"));
        }
        self.pos += 2;
        // The repeated body must be spelled exactly as inside the parentheses.
        let body_text = &self.src[open..self.pos - 2 - escaped_len(sep)];
        if self.src.get(self.pos..self.pos + body_text.len()) != Some(body_text) {
            return Err(self.error("array body is not repeated after ')*'"));
        }
        self.pos += body_text.len();
        if self.src.get(self.pos) == Some(&b'F') || self.src.get(self.pos) == Some(&b'(') {
            return Err(self.error("array needs a terminator literal"));
        }
        if self.pos >= self.src.len() {
            return Err(self.error("array needs a terminator literal"));
        }
        let term = self.literal()?;
        if term == sep {
            return Err(self.error("array separator and terminator must differ"));
        }
        Ok(Node::array(body, sep, term))
    }

    fn literal(&mut self) -> Result<u8> {
        let c = self.src[self.pos];
        if c != b'\\' {
            if c.is_ascii_alphanumeric() || !(c.is_ascii_punctuation() || c == b' ') {
                return Err(self.error("unescaped non-punctuation literal"));
            }
            self.pos += 1;
            return Ok(c);
        }
        let b = match self.src.get(self.pos + 1) {
            Some(b'n') => b'\n',
            Some(b't') => b'\t',
            Some(b'r') => b'\r',
            Some(&e @ (b'(' | b')' | b'*' | b'\\')) => e,
            Some(b'x') => {
                let hex = self
                    .src
                    .get(self.pos + 2..self.pos + 4)
                    .and_then(|h| std::str::from_utf8(h).ok())
                    .and_then(|h| u8::from_str_radix(h, 16).ok())
                    .ok_or_else(|| self.error("bad \\x escape"))?;
                self.pos += 4;
                return Ok(hex);
            }
            _ => return Err(self.error("unknown escape")),
        };
        self.pos += 2;
        Ok(b)
    }
}
