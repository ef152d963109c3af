//! Folding repeated patterns of a record template into arrays.
//!
//! Templates are handled as symbol strings: `0` is a field, `1 + b` is the
//! literal byte `b`, and values from [`FIRST_ARRAY`] up are arrays interned
//! by the [`Reducer`]. A rewrite replaces `(U x){k} U y` (with `y != x`,
//! `k + 1 >= min_units` and `U` holding at least one field) by one array
//! symbol. Among all applicable rewrites the leftmost start wins, then the
//! run covering the most symbols, then the shorter unit. Rewrites repeat
//! until none applies.

use std::collections::HashMap;

use super::{escaped_len, Node, RecordTemplate, StructureTemplate, PLACEHOLDER};

pub const FIELD: u32 = 0;
pub const FIRST_ARRAY: u32 = 257;

#[inline]
pub fn literal(b: u8) -> u32 {
    1 + b as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReduceParams {
    /// Fewest unit occurrences (including the terminated one) that form an array.
    pub min_units: usize,
    /// Largest serialized size of a unit plus its separator.
    pub max_unit_bytes: usize,
}

impl Default for ReduceParams {
    fn default() -> ReduceParams {
        ReduceParams {
            min_units: 3,
            max_unit_bytes: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ArraySym {
    body: Vec<u32>,
    sep: u8,
    term: u8,
}

/// Reduces symbol strings and interns the arrays it creates.
#[derive(Debug, Clone, Default)]
pub struct Reducer {
    params: ReduceParams,
    arrays: Vec<ArraySym>,
    /// Serialized size of each interned array.
    array_len: Vec<usize>,
    lookup: HashMap<ArraySym, u32>,
    scratch: (Vec<usize>, Vec<u32>),
}

impl Reducer {
    pub fn new(params: ReduceParams) -> Reducer {
        Reducer {
            params,
            ..Reducer::default()
        }
    }

    pub fn params(&self) -> ReduceParams {
        self.params
    }

    /// Symbols of a record template, one per byte.
    pub fn record_symbols(rt: &[u8]) -> Vec<u32> {
        rt.iter()
            .map(|&b| if b == PLACEHOLDER { FIELD } else { literal(b) })
            .collect()
    }

    /// Symbols of an existing structure template; its arrays are interned as is.
    pub fn template_symbols(&mut self, st: &StructureTemplate) -> Vec<u32> {
        self.nodes_to_symbols(st.items())
    }

    fn nodes_to_symbols(&mut self, nodes: &[Node]) -> Vec<u32> {
        nodes
            .iter()
            .map(|n| match n {
                Node::Field => FIELD,
                Node::Literal(b) => literal(*b),
                Node::Array(a) => {
                    let body = self.nodes_to_symbols(&a.body);
                    self.intern(ArraySym {
                        body,
                        sep: a.sep,
                        term: a.term,
                    })
                }
            })
            .collect()
    }

    fn intern(&mut self, a: ArraySym) -> u32 {
        if let Some(&id) = self.lookup.get(&a) {
            return id;
        }
        let body_len = self.serialized_len(&a.body);
        let len = 3 + 2 * body_len + escaped_len(a.sep) + escaped_len(a.term);
        let id = FIRST_ARRAY + self.arrays.len() as u32;
        self.arrays.push(a.clone());
        self.array_len.push(len);
        self.lookup.insert(a, id);
        id
    }

    #[inline]
    fn symbol_len(&self, s: u32) -> usize {
        match s {
            FIELD => 1,
            s if s < FIRST_ARRAY => escaped_len((s - 1) as u8),
            s => self.array_len[(s - FIRST_ARRAY) as usize],
        }
    }

    fn serialized_len(&self, syms: &[u32]) -> usize {
        syms.iter().map(|&s| self.symbol_len(s)).sum()
    }

    /// Rewrites `syms` to its fixed point.
    pub fn reduce_symbols(&mut self, syms: &[u32]) -> Vec<u32> {
        self.reduce_extending(syms, 0)
    }

    /// Like [`Reducer::reduce_symbols`] when `syms[..clean]` is already a
    /// fixed point; only rewrites reaching past it are searched for.
    pub fn reduce_extending(&mut self, syms: &[u32], clean: usize) -> Vec<u32> {
        let mut cur = syms.to_vec();
        let mut clean = clean.min(cur.len());
        while let Some(rw) = self.find_rewrite(&cur, self.earliest_start(&cur, clean)) {
            let body = self.reduce_symbols(&cur[rw.start..rw.start + rw.unit]);
            let id = self.intern(ArraySym {
                body,
                sep: rw.sep,
                term: rw.term,
            });
            cur.splice(rw.start..rw.end, std::iter::once(id));
            clean = rw.start;
        }
        cur
    }

    /// Leftmost start of a rewrite that ends past `clean`: its units repeat
    /// with period `step` up to `clean`, so it lies inside a periodic suffix.
    fn earliest_start(&self, s: &[u32], clean: usize) -> usize {
        let mut from = clean;
        for step in 1..=(self.params.max_unit_bytes + 1).min(clean) {
            let mut j = clean - step;
            while j > 0 && s[j - 1] == s[j - 1 + step] {
                j -= 1;
            }
            from = from.min(j);
        }
        from
    }

    fn find_rewrite(&mut self, s: &[u32], from: usize) -> Option<Rewrite> {
        if from >= s.len() {
            return None;
        }
        // Symbols before `from` cannot take part in a rewrite.
        let s = &s[from..];
        let min_units = self.params.min_units.max(2);
        let is_slot = |x: u32| x == FIELD || x >= FIRST_ARRAY;
        // Prefix byte and slot counts.
        let mut scratch = std::mem::take(&mut self.scratch);
        let (bytes, slots) = &mut scratch;
        bytes.clear();
        slots.clear();
        bytes.push(0);
        slots.push(0);
        let (mut nb, mut ns) = (0, 0);
        for &x in s {
            nb += self.symbol_len(x);
            ns += is_slot(x) as u32;
            bytes.push(nb);
            slots.push(ns);
        }
        let found = self.scan(s, min_units, bytes, slots);
        self.scratch = scratch;
        found.map(|rw| Rewrite {
            start: rw.start + from,
            end: rw.end + from,
            ..rw
        })
    }

    fn scan(&self, s: &[u32], min_units: usize, bytes: &[usize], slots: &[u32]) -> Option<Rewrite> {
        let n = s.len();
        let is_slot = |x: u32| x == FIELD || x >= FIRST_ARRAY;
        for start in 0..n {
            let mut best: Option<Rewrite> = None;
            let first = s[start];
            // The unit's successor repeats its first symbol one step later.
            for p in start + 2..n {
                if s[p] != first {
                    if bytes[p] - bytes[start] > self.params.max_unit_bytes {
                        break;
                    }
                    continue;
                }
                let step = p - start;
                let unit = step - 1;
                let x = s[start + unit];
                if bytes[start + step] - bytes[start] > self.params.max_unit_bytes
                    || start + min_units * step > n
                {
                    break;
                }
                if is_slot(x) || slots[start + unit] == slots[start] {
                    continue;
                }
                let u = &s[start..start + unit];
                let mut copies = 1;
                while start + (copies + 1) * step <= n
                    && s[start + copies * step + unit] == x
                    && s[start + copies * step..start + copies * step + unit] == *u
                {
                    copies += 1;
                }
                let tail = start + copies * step;
                if copies + 1 < min_units || tail + step > n || s[tail..tail + unit] != *u {
                    continue;
                }
                let y = s[tail + unit];
                if is_slot(y) {
                    continue;
                }
                let end = tail + step;
                if best.as_ref().is_none_or(|b| end > b.end) {
                    best = Some(Rewrite {
                        start,
                        end,
                        unit,
                        sep: (x - 1) as u8,
                        term: (y - 1) as u8,
                    });
                }
            }
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// Builds the structure template spelled by `syms`.
    pub fn to_template(&self, syms: &[u32]) -> StructureTemplate {
        StructureTemplate::new(self.to_nodes(syms))
    }

    fn to_nodes(&self, syms: &[u32]) -> Vec<Node> {
        syms.iter()
            .map(|&s| match s {
                FIELD => Node::Field,
                s if s < FIRST_ARRAY => Node::Literal((s - 1) as u8),
                s => {
                    let a = &self.arrays[(s - FIRST_ARRAY) as usize];
                    Node::array(self.to_nodes(&a.body), a.sep, a.term)
                }
            })
            .collect()
    }
}

struct Rewrite {
    start: usize,
    end: usize,
    unit: usize,
    sep: u8,
    term: u8,
}

/// Minimal structure template of `rt` with the default parameters.
pub fn reduce_to_structure_template(rt: &RecordTemplate) -> StructureTemplate {
    reduce_with(rt, ReduceParams::default())
}

pub fn reduce_with(rt: &RecordTemplate, params: ReduceParams) -> StructureTemplate {
    let mut r = Reducer::new(params);
    let syms = r.reduce_symbols(&Reducer::record_symbols(rt.as_bytes()));
    r.to_template(&syms)
}

/// Applies further reduction to an existing structure template.
pub fn reduce_template(st: &StructureTemplate, params: ReduceParams) -> StructureTemplate {
    let mut r = Reducer::new(params);
    let syms = r.template_symbols(st);
    let syms = r.reduce_symbols(&syms);
    r.to_template(&syms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn red(s: &str) -> String {
        reduce_to_structure_template(&RecordTemplate::from_bytes(s.as_bytes())).canonical()
    }

    #[test]
    fn nothing_to_fold() {
        assert_eq!(red("F\n"), "F\\n");
        assert_eq!(red("F,F\n"), "F,F\\n");
    }

    #[test]
    fn needs_three_units() {
        assert_eq!(red("F,F,F\n"), "(F,)*F\\n");
        assert_eq!(red("[F,F]\n"), "[F,F]\\n");
        let two = ReduceParams {
            min_units: 2,
            ..ReduceParams::default()
        };
        assert_eq!(
            reduce_with(&RecordTemplate::from_bytes(&b"[F,F]\n"[..]), two).canonical(),
            "[(F,)*F]\\n"
        );
    }

    #[test]
    fn inner_run_inside_quotes() {
        assert_eq!(red("F,F,F,\"F,F,F\",F\n"), "F,F,F,\"(F,)*F\",F\\n");
    }

    #[test]
    fn nested_arrays() {
        assert_eq!(
            red("[F,F,F] [F,F,F,F] [F,F,F]\n"),
            "([(F,)*F] )*[(F,)*F]\\n"
        );
        assert_eq!(red("F,F,F;F,F,F;F,F,F\n"), "(F,F,F;)*F,F,F\\n");
        assert_eq!(red("F:F F:F F:F\n"), "(F:F )*F:F\\n");
    }

    #[test]
    fn shorter_unit_wins_ties() {
        assert_eq!(red("F,F,F,F,F,F\n"), "(F,)*F\\n");
    }

    #[test]
    fn unit_cap() {
        let long = format!("{0};{0};{0}\n", "F,".repeat(20) + "F");
        let out = red(&long);
        assert!(!out.contains(";)*"), "{out}");
        assert_eq!(out.matches("(F,)*F").count(), 3);
    }

    #[test]
    fn reduction_is_sound_and_idempotent() {
        for rt in [
            "F,F,F,\"F,F,F\",F\n",
            "[F] F F F F\nF\n",
            "F=F&F=F&F=F&F=F\n",
            "F\n",
        ] {
            let rt = RecordTemplate::from_bytes(rt.as_bytes());
            let st = reduce_to_structure_template(&rt);
            assert!(super::super::matches(&st, &rt), "{st}");
            assert_eq!(reduce_template(&st, ReduceParams::default()), st);
        }
    }
}
