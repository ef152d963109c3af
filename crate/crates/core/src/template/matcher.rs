//! Deterministic left-to-right matching of structure templates.
//!
//! Each decision looks at exactly one byte: a literal must equal the next
//! byte, an array continues on its separator and stops on its terminator,
//! and a field swallows the maximal run of bytes that are not delimiters of
//! the template. Templates that pass [`StructureTemplate::check_ll1`] never
//! need backtracking.

use super::{CharSet, Node, RecordTemplate, StructureTemplate, PLACEHOLDER};

/// One event of a successful match, in document order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cap {
    Field {
        leaf: u32,
        start: usize,
        end: usize,
    },
    ArrayStart(u32),
    /// Start of one repetition of the innermost open array.
    Elem,
    ArrayEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    /// Matched, ending at `end` (clamped to the text) after `lines` newlines.
    Matched {
        end: usize,
        lines: usize,
    },
    Failed,
    /// Input ran out while the text was still a viable prefix.
    Exhausted,
}

#[derive(Debug, Clone)]
enum CNode {
    Field(u32),
    Lit(u8),
    Array(Box<CArray>),
}

#[derive(Debug, Clone)]
struct CArray {
    id: u32,
    body: Vec<CNode>,
    sep: u8,
    term: u8,
}

/// A structure template with numbered leaves and arrays, ready for matching.
///
/// Leaves and arrays are numbered in pre-order. `leaf_parent[i]` is the
/// innermost array holding leaf `i` (`None` for the root struct), and
/// `array_parent` does the same for arrays.
#[derive(Debug, Clone)]
pub struct CompiledTemplate {
    template: StructureTemplate,
    canonical: String,
    nodes: Vec<CNode>,
    delimiters: CharSet,
    leaf_parent: Vec<Option<u32>>,
    array_parent: Vec<Option<u32>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Data,
    RecordTemplate,
}

struct Cursor<'a> {
    text: &'a [u8],
    pos: usize,
    virtual_newline: bool,
    newlines: usize,
    max_lines: usize,
    mode: Mode,
    delimiters: CharSet,
}

enum Stop {
    Fail,
    Exhausted,
}

impl Cursor<'_> {
    #[inline]
    fn peek(&self) -> Option<u8> {
        if self.pos < self.text.len() {
            Some(self.text[self.pos])
        } else if self.pos == self.text.len() && self.virtual_newline {
            Some(b'\n')
        } else {
            None
        }
    }

    #[inline]
    fn eat(&mut self, b: u8) -> Result<(), Stop> {
        match self.peek() {
            Some(c) if c == b => {
                self.pos += 1;
                if b == b'\n' {
                    self.newlines += 1;
                    if self.newlines > self.max_lines {
                        return Err(Stop::Fail);
                    }
                }
                Ok(())
            }
            Some(_) => Err(Stop::Fail),
            None => Err(Stop::Exhausted),
        }
    }

    #[inline]
    fn field(&mut self) -> Result<(usize, usize), Stop> {
        let start = self.pos;
        match self.mode {
            Mode::RecordTemplate => match self.peek() {
                Some(PLACEHOLDER) => {
                    self.pos += 1;
                    Ok((start, self.pos))
                }
                Some(_) => Err(Stop::Fail),
                None => Err(Stop::Exhausted),
            },
            Mode::Data => {
                let text = self.text;
                let mut p = start;
                while p < text.len() && !self.delimiters.contains(text[p]) {
                    p += 1;
                }
                if p == start {
                    return if start >= text.len() {
                        Err(Stop::Exhausted)
                    } else {
                        Err(Stop::Fail)
                    };
                }
                self.pos = p;
                Ok((start, p))
            }
        }
    }
}

impl CompiledTemplate {
    pub fn new(template: StructureTemplate) -> CompiledTemplate {
        let mut leaf_parent = Vec::new();
        let mut array_parent = Vec::new();
        let nodes = compile(template.items(), None, &mut leaf_parent, &mut array_parent);
        CompiledTemplate {
            canonical: template.canonical(),
            delimiters: template.literal_bytes().with_newline(),
            template,
            nodes,
            leaf_parent,
            array_parent,
        }
    }

    pub fn template(&self) -> &StructureTemplate {
        &self.template
    }

    pub fn canonical(&self) -> &str {
        &self.canonical
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_parent.len()
    }

    pub fn array_count(&self) -> usize {
        self.array_parent.len()
    }

    pub fn leaf_parent(&self) -> &[Option<u32>] {
        &self.leaf_parent
    }

    pub fn array_parent(&self) -> &[Option<u32>] {
        &self.array_parent
    }

    /// Bytes that terminate a field: the template's literals plus `\n`.
    pub fn delimiters(&self) -> CharSet {
        self.delimiters
    }

    /// Matches one record starting at `pos`, which must be a line start.
    ///
    /// Succeeds only if the record ends on a line boundary and spans at most
    /// `max_lines` newlines. A missing newline at end of text is accepted once.
    /// Captures are appended to `caps`; on failure `caps` is restored.
    pub fn match_at(
        &self,
        text: &[u8],
        pos: usize,
        max_lines: usize,
        caps: &mut Vec<Cap>,
    ) -> MatchOutcome {
        let mark = caps.len();
        let mut cur = Cursor {
            text,
            pos,
            virtual_newline: text.last().is_some_and(|&b| b != b'\n'),
            newlines: 0,
            max_lines,
            mode: Mode::Data,
            delimiters: self.delimiters,
        };
        let outcome = match match_seq(&self.nodes, &mut cur, caps) {
            Ok(()) => {
                let end = cur.pos.min(text.len());
                let at_boundary =
                    cur.pos > text.len() || end == text.len() || text[end - 1] == b'\n';
                if at_boundary && cur.pos > pos {
                    MatchOutcome::Matched {
                        end,
                        lines: cur.newlines.max(1),
                    }
                } else {
                    MatchOutcome::Failed
                }
            }
            Err(Stop::Fail) => MatchOutcome::Failed,
            Err(Stop::Exhausted) => MatchOutcome::Exhausted,
        };
        if !matches!(outcome, MatchOutcome::Matched { .. }) {
            caps.truncate(mark);
        }
        outcome
    }

    /// Whether `text` (no implicit trailing newline) could begin a record.
    pub fn is_viable_prefix(&self, text: &[u8]) -> bool {
        let mut cur = Cursor {
            text,
            pos: 0,
            virtual_newline: false,
            newlines: 0,
            max_lines: usize::MAX,
            mode: Mode::Data,
            delimiters: self.delimiters,
        };
        let mut caps = Vec::new();
        !matches!(match_seq(&self.nodes, &mut cur, &mut caps), Err(Stop::Fail))
    }

    /// Whether the record template is in the language of this structure template.
    pub fn matches_record_template(&self, rt: &RecordTemplate) -> bool {
        let text = rt.as_bytes();
        let mut cur = Cursor {
            text,
            pos: 0,
            virtual_newline: false,
            newlines: 0,
            max_lines: usize::MAX,
            mode: Mode::RecordTemplate,
            delimiters: self.delimiters,
        };
        let mut caps = Vec::new();
        matches!(match_seq(&self.nodes, &mut cur, &mut caps), Ok(())) && cur.pos == text.len()
    }
}

impl CompiledTemplate {
    /// Rebuilds the bytes of a matched record from its captures.
    ///
    /// A record matched against a missing final newline renders with the
    /// newline present.
    pub fn render(&self, caps: &[Cap], text: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        let mut it = caps.iter().peekable();
        render_seq(&self.nodes, &mut it, text, &mut out);
        out
    }
}

fn render_seq<'c>(
    nodes: &[CNode],
    it: &mut std::iter::Peekable<impl Iterator<Item = &'c Cap>>,
    text: &[u8],
    out: &mut Vec<u8>,
) {
    for node in nodes {
        match node {
            CNode::Field(_) => {
                if let Some(Cap::Field { start, end, .. }) = it.next() {
                    out.extend_from_slice(&text[*start..*end]);
                }
            }
            CNode::Lit(b) => out.push(*b),
            CNode::Array(a) => {
                it.next(); // ArrayStart
                let mut first = true;
                while let Some(Cap::Elem) = it.peek() {
                    it.next();
                    if !first {
                        out.push(a.sep);
                    }
                    first = false;
                    render_seq(&a.body, it, text, out);
                }
                it.next(); // ArrayEnd
                out.push(a.term);
            }
        }
    }
}

/// `true` iff `rt` can be generated from `st`.
pub fn matches(st: &StructureTemplate, rt: &RecordTemplate) -> bool {
    CompiledTemplate::new(st.clone()).matches_record_template(rt)
}

fn compile(
    nodes: &[Node],
    parent: Option<u32>,
    leaf_parent: &mut Vec<Option<u32>>,
    array_parent: &mut Vec<Option<u32>>,
) -> Vec<CNode> {
    nodes
        .iter()
        .map(|n| match n {
            Node::Field => {
                leaf_parent.push(parent);
                CNode::Field(leaf_parent.len() as u32 - 1)
            }
            Node::Literal(b) => CNode::Lit(*b),
            Node::Array(a) => {
                let id = array_parent.len() as u32;
                array_parent.push(parent);
                let body = compile(&a.body, Some(id), leaf_parent, array_parent);
                CNode::Array(Box::new(CArray {
                    id,
                    body,
                    sep: a.sep,
                    term: a.term,
                }))
            }
        })
        .collect()
}

fn match_seq(nodes: &[CNode], cur: &mut Cursor<'_>, caps: &mut Vec<Cap>) -> Result<(), Stop> {
    for node in nodes {
        match node {
            CNode::Field(leaf) => {
                let (start, end) = cur.field()?;
                caps.push(Cap::Field {
                    leaf: *leaf,
                    start,
                    end,
                });
            }
            CNode::Lit(b) => cur.eat(*b)?,
            CNode::Array(a) => {
                caps.push(Cap::ArrayStart(a.id));
                loop {
                    caps.push(Cap::Elem);
                    match_seq(&a.body, cur, caps)?;
                    match cur.peek() {
                        Some(c) if c == a.sep => cur.eat(c)?,
                        Some(c) if c == a.term => {
                            cur.eat(c)?;
                            break;
                        }
                        Some(_) => return Err(Stop::Fail),
                        None => return Err(Stop::Exhausted),
                    }
                }
                caps.push(Cap::ArrayEnd);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn compiled(s: &str) -> CompiledTemplate {
        CompiledTemplate::new(StructureTemplate::parse(s).unwrap())
    }

    fn rt(s: &str) -> RecordTemplate {
        RecordTemplate::from_bytes(s.as_bytes())
    }

    #[test]
    fn record_template_membership() {
        let arr = compiled("(F,)*F\\n");
        assert!(arr.matches_record_template(&rt("F,F,F\n")));
        assert!(arr.matches_record_template(&rt("F\n")));
        assert!(!arr.matches_record_template(&rt("F;F\n")));
        assert!(!arr.matches_record_template(&rt("F,F,F\nF")));
        let quoted = compiled("F,\"(F,)*F\",F");
        assert!(quoted.matches_record_template(&rt("F,\"F,F,F\",F")));
        assert!(quoted.matches_record_template(&rt("F,\"F\",F")));
        assert!(!quoted.matches_record_template(&rt("F,\"\",F")));
    }

    #[test]
    fn data_match_captures_fields_and_arrays() {
        let t = compiled("F,\"(F,)*F\",F\\n");
        let text = b"x,\"1,2,3\",y\n";
        let mut caps = Vec::new();
        let out = t.match_at(text, 0, 10, &mut caps);
        assert_eq!(
            out,
            MatchOutcome::Matched {
                end: text.len(),
                lines: 1
            }
        );
        let fields: Vec<&[u8]> = caps
            .iter()
            .filter_map(|c| match *c {
                Cap::Field { start, end, .. } => Some(&text[start..end]),
                _ => None,
            })
            .collect();
        assert_eq!(fields, vec![&b"x"[..], b"1", b"2", b"3", b"y"]);
        assert_eq!(caps.iter().filter(|c| **c == Cap::Elem).count(), 3);
        assert_eq!(t.leaf_parent(), &[None, Some(0), None]);
        assert_eq!(t.render(&caps, text), text.to_vec());
    }

    #[test]
    fn virtual_newline_at_eof() {
        let t = compiled("F,F\\n");
        let mut caps = Vec::new();
        assert_eq!(
            t.match_at(b"a,b", 0, 10, &mut caps),
            MatchOutcome::Matched { end: 3, lines: 1 }
        );
        assert_eq!(
            t.match_at(b"a,b\nc,d", 4, 10, &mut caps),
            MatchOutcome::Matched { end: 7, lines: 1 }
        );
    }

    #[test]
    fn respects_line_limit_and_boundaries() {
        let t = compiled("F\\nF\\nF\\n");
        let mut caps = Vec::new();
        assert!(matches!(
            t.match_at(b"a\nb\nc\n", 0, 3, &mut caps),
            MatchOutcome::Matched { lines: 3, .. }
        ));
        caps.clear();
        assert_eq!(
            t.match_at(b"a\nb\nc\n", 0, 2, &mut caps),
            MatchOutcome::Failed
        );
        assert!(caps.is_empty());
        let t = compiled("F,F");
        assert_eq!(
            t.match_at(b"a,b;c\n", 0, 2, &mut caps),
            MatchOutcome::Failed
        );
    }

    #[test]
    fn failure_restores_captures() {
        let t = compiled("F,F\\n");
        let mut caps = vec![Cap::Elem];
        assert_eq!(t.match_at(b"a;b\n", 0, 10, &mut caps), MatchOutcome::Failed);
        assert_eq!(caps, vec![Cap::Elem]);
    }

    #[test]
    fn viable_prefixes() {
        let t = compiled("[F] F:F\\nF\\n");
        assert!(t.is_viable_prefix(b"[a] b:c\n"));
        assert!(t.is_viable_prefix(b"[a"));
        assert!(!t.is_viable_prefix(b"a] b"));
        assert!(!t.is_viable_prefix(b"[a] b;c\n"));
    }
}
