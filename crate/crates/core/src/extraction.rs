//! Applying discovered templates to a whole corpus.
//!
//! Every line start is tried against the templates in plan order; the first
//! match becomes a record, otherwise the line is noise. Records are emitted
//! as normalized tables: one root table per template (`record_{r}`) and one
//! child table per array (`record_{r}_array_{a}`) whose `_parent_id` points
//! at the root row or at the row of the enclosing array element.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::pipeline::ExtractionPlan;
use crate::template::{Cap, CompiledTemplate, MatchOutcome, Node, StructureTemplate};

/// Lines per shard of the boundary scan.
const SHARD_LINES: usize = 1 << 16;
/// Events per chunk when building rows.
const ROW_CHUNK: usize = 1 << 15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: Vec<String>) -> Table {
        Table {
            name: name.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub child: String,
    pub column: String,
    pub parent: String,
}

/// A line no template explained, without its trailing newline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseLine {
    pub offset: usize,
    pub line: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationalOutput {
    /// Canonical template of each record type, in plan order.
    pub templates: Vec<String>,
    pub tables: Vec<Table>,
    pub foreign_keys: Vec<ForeignKey>,
    pub noise: Vec<NoiseLine>,
    /// The input's last line had no newline.
    pub missing_final_newline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

pub fn root_table_name(r: usize) -> String {
    format!("record_{r}")
}

pub fn array_table_name(r: usize, a: usize) -> String {
    format!("record_{r}_array_{a}")
}

pub fn field_column(leaf: usize) -> String {
    format!("field_{leaf}")
}

/// Table layout of one template.
struct Layout {
    ct: CompiledTemplate,
    /// Table index (0 = root, 1 + a = array a) and column of each leaf.
    leaf_slot: Vec<(usize, usize)>,
    /// Cells per table, excluding the id columns.
    width: Vec<usize>,
}

impl Layout {
    fn new(st: StructureTemplate) -> Layout {
        let ct = CompiledTemplate::new(st);
        let mut width = vec![0; 1 + ct.array_count()];
        let leaf_slot = ct
            .leaf_parent()
            .iter()
            .map(|p| {
                let t = p.map_or(0, |a| 1 + a as usize);
                width[t] += 1;
                (t, width[t] - 1)
            })
            .collect();
        Layout {
            ct,
            leaf_slot,
            width,
        }
    }

    fn columns(&self, table: usize) -> Vec<String> {
        let mut cols: Vec<String> = if table == 0 {
            vec!["_id".into(), "_line_start".into(), "_line_end".into()]
        } else {
            vec!["_id".into(), "_parent_id".into()]
        };
        for (leaf, &(t, _)) in self.leaf_slot.iter().enumerate() {
            if t == table {
                cols.push(field_column(leaf));
            }
        }
        cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    start: usize,
    end: usize,
    line_start: usize,
    line_end: usize,
    /// Template index, or `NOISE`.
    tpl: u32,
}

const NOISE: u32 = u32::MAX;

struct Scanner<'a> {
    text: &'a [u8],
    starts: &'a [usize],
    layouts: &'a [Layout],
    max_lines: usize,
}

impl Scanner<'_> {
    fn line_end(&self, i: usize) -> usize {
        self.starts.get(i + 1).copied().unwrap_or(self.text.len())
    }

    fn step(&self, line: usize, caps: &mut Vec<Cap>) -> Event {
        let start = self.starts[line];
        for (r, l) in self.layouts.iter().enumerate() {
            caps.clear();
            if let MatchOutcome::Matched { end, lines } =
                l.ct.match_at(self.text, start, self.max_lines, caps)
            {
                return Event {
                    start,
                    end,
                    line_start: line,
                    line_end: line + lines,
                    tpl: r as u32,
                };
            }
        }
        caps.clear();
        Event {
            start,
            end: self.line_end(line),
            line_start: line,
            line_end: line + 1,
            tpl: NOISE,
        }
    }

    /// Events from `line` until some event ends at or past `stop_line`.
    fn scan(&self, mut line: usize, stop_line: usize) -> Vec<Event> {
        let mut caps = Vec::new();
        let mut out = Vec::new();
        while line < stop_line {
            let e = self.step(line, &mut caps);
            line = e.line_end;
            out.push(e);
        }
        out
    }

    /// Boundary events for the whole text: shards are scanned independently
    /// and stitched where their positions agree with a sequential scan.
    fn events(&self) -> Vec<Event> {
        let n = self.starts.len();
        let shards: Vec<(usize, usize)> = (0..n)
            .step_by(SHARD_LINES)
            .map(|a| (a, (a + SHARD_LINES).min(n)))
            .collect();
        let parts: Vec<Vec<Event>> = shards.par_iter().map(|&(a, b)| self.scan(a, b)).collect();
        let mut events = Vec::with_capacity(parts.iter().map(Vec::len).sum());
        let mut caps = Vec::new();
        let mut line = 0;
        for (&(_, b), part) in shards.iter().zip(&parts) {
            while line < b {
                if let Ok(k) = part.binary_search_by_key(&line, |e| e.line_start) {
                    events.extend_from_slice(&part[k..]);
                    line = part.last().expect("nonempty").line_end;
                    break;
                }
                let e = self.step(line, &mut caps);
                line = e.line_end;
                events.push(e);
            }
        }
        events
    }
}

/// Rows of one chunk of events, with ids local to the chunk.
#[derive(Default)]
struct LocalRows {
    /// Per template, per table: (id, parent id or line span, cells).
    tables: Vec<Vec<Vec<LocalRow>>>,
    noise: Vec<NoiseLine>,
}

struct LocalRow {
    parent: u64,
    line_end: u64,
    cells: Vec<String>,
}

fn cell(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn build_rows(scanner: &Scanner<'_>, events: &[Event]) -> LocalRows {
    let layouts = scanner.layouts;
    let mut out = LocalRows {
        tables: layouts
            .iter()
            .map(|l| (0..l.width.len()).map(|_| Vec::new()).collect())
            .collect(),
        noise: Vec::new(),
    };
    let mut caps = Vec::new();
    // (table, row index) of open array elements.
    let mut stack: Vec<(usize, Option<usize>)> = Vec::new();
    for e in events {
        if e.tpl == NOISE {
            let mut line = &scanner.text[e.start..e.end];
            if line.last() == Some(&b'\n') {
                line = &line[..line.len() - 1];
            }
            out.noise.push(NoiseLine {
                offset: e.start,
                line: cell(line),
            });
            continue;
        }
        let r = e.tpl as usize;
        let layout = &layouts[r];
        caps.clear();
        let m = layout
            .ct
            .match_at(scanner.text, e.start, scanner.max_lines, &mut caps);
        debug_assert!(matches!(m, MatchOutcome::Matched { .. }));
        let tables = &mut out.tables[r];
        let root = tables[0].len();
        tables[0].push(LocalRow {
            parent: e.line_start as u64,
            line_end: e.line_end as u64,
            cells: vec![String::new(); layout.width[0]],
        });
        stack.clear();
        for c in &caps {
            match *c {
                Cap::Field { leaf, start, end } => {
                    let (t, col) = layout.leaf_slot[leaf as usize];
                    let row = if t == 0 {
                        root
                    } else {
                        stack
                            .last()
                            .and_then(|s| s.1)
                            .expect("field inside element")
                    };
                    tables[t][row].cells[col] = cell(&scanner.text[start..end]);
                }
                Cap::ArrayStart(a) => stack.push((1 + a as usize, None)),
                Cap::Elem => {
                    let (t, _) = *stack.last().expect("open array");
                    let parent = if stack.len() >= 2 {
                        stack[stack.len() - 2].1.expect("enclosing element")
                    } else {
                        root
                    };
                    tables[t].push(LocalRow {
                        parent: parent as u64,
                        line_end: 0,
                        cells: vec![String::new(); layout.width[t]],
                    });
                    stack.last_mut().expect("open array").1 = Some(tables[t].len() - 1);
                }
                Cap::ArrayEnd => {
                    stack.pop();
                }
            }
        }
    }
    out
}

/// Extracts every record of the plan's templates from the corpus.
pub fn extract_all(corpus: &Corpus, plan: &ExtractionPlan) -> Result<RelationalOutput> {
    extract_with(corpus, &plan.templates()?, plan.max_span)
}

pub fn extract_with(
    corpus: &Corpus,
    templates: &[StructureTemplate],
    max_lines: usize,
) -> Result<RelationalOutput> {
    for t in templates {
        t.check_ll1()?;
    }
    let layouts: Vec<Layout> = templates.iter().cloned().map(Layout::new).collect();
    let scanner = Scanner {
        text: corpus.bytes(),
        starts: corpus.line_starts(),
        layouts: &layouts,
        max_lines,
    };
    let events = scanner.events();
    let chunks: Vec<LocalRows> = events
        .par_chunks(ROW_CHUNK)
        .map(|c| build_rows(&scanner, c))
        .collect();

    let mut out = RelationalOutput {
        templates: layouts
            .iter()
            .map(|l| l.ct.canonical().to_string())
            .collect(),
        missing_final_newline: corpus.bytes().last() != Some(&b'\n'),
        ..RelationalOutput::default()
    };
    // Index of table (r, t) in `out.tables`.
    let mut table_index: Vec<Vec<usize>> = Vec::new();
    for (r, l) in layouts.iter().enumerate() {
        let mut idx = Vec::new();
        for t in 0..l.width.len() {
            let name = if t == 0 {
                root_table_name(r)
            } else {
                array_table_name(r, t - 1)
            };
            if t > 0 {
                let parent = match l.ct.array_parent()[t - 1] {
                    None => root_table_name(r),
                    Some(p) => array_table_name(r, p as usize),
                };
                out.foreign_keys.push(ForeignKey {
                    child: name.clone(),
                    column: "_parent_id".into(),
                    parent,
                });
            }
            idx.push(out.tables.len());
            out.tables.push(Table::new(name, l.columns(t)));
        }
        table_index.push(idx);
    }

    for chunk in chunks {
        for (r, tables) in chunk.tables.into_iter().enumerate() {
            // Offsets must be read before this chunk's rows are appended.
            let offsets: Vec<u64> = table_index[r]
                .iter()
                .map(|&i| out.tables[i].rows.len() as u64)
                .collect();
            for (t, rows) in tables.into_iter().enumerate() {
                let parent_off = if t == 0 {
                    0
                } else {
                    match layouts[r].ct.array_parent()[t - 1] {
                        None => offsets[0],
                        Some(p) => offsets[1 + p as usize],
                    }
                };
                let table = &mut out.tables[table_index[r][t]];
                for (k, row) in rows.into_iter().enumerate() {
                    let id = offsets[t] + k as u64;
                    let mut full = Vec::with_capacity(row.cells.len() + 3);
                    full.push(id.to_string());
                    if t == 0 {
                        full.push(row.parent.to_string());
                        full.push(row.line_end.to_string());
                    } else {
                        full.push((row.parent + parent_off).to_string());
                    }
                    full.extend(row.cells);
                    table.rows.push(full);
                }
            }
        }
        out.noise.extend(chunk.noise);
    }
    Ok(out)
}

impl RelationalOutput {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn table_mut(&mut self, name: &str) -> Option<&mut Table> {
        self.tables.iter_mut().find(|t| t.name == name)
    }

    /// Child rows of each table, grouped by parent id, in row order.
    fn children(&self) -> HashMap<&str, HashMap<&str, Vec<usize>>> {
        let mut out: HashMap<&str, HashMap<&str, Vec<usize>>> = HashMap::new();
        for fk in &self.foreign_keys {
            if let Some(t) = self.table(&fk.child) {
                let col = t.column(&fk.column).expect("fk column");
                let by_parent = out.entry(t.name.as_str()).or_default();
                for (i, row) in t.rows.iter().enumerate() {
                    by_parent.entry(row[col].as_str()).or_default().push(i);
                }
            }
        }
        out
    }

    /// Records as nested JSON objects, in file order.
    pub fn denormalized(&self) -> Vec<Value> {
        let children = self.children();
        let mut records: Vec<(u64, Value)> = Vec::new();
        for r in 0..self.templates.len() {
            let Some(root) = self.table(&root_table_name(r)) else {
                continue;
            };
            let line_col = root.column("_line_start").expect("root layout");
            for row in &root.rows {
                let mut obj = self.nest(root, row, &children);
                obj.insert("_type".into(), Value::String(root.name.clone()));
                records.push((row[line_col].parse().unwrap_or(0), Value::Object(obj)));
            }
        }
        records.sort_by_key(|(line, _)| *line);
        records.into_iter().map(|(_, v)| v).collect()
    }

    fn nest(
        &self,
        table: &Table,
        row: &[String],
        children: &HashMap<&str, HashMap<&str, Vec<usize>>>,
    ) -> Map<String, Value> {
        let mut obj = Map::new();
        for (c, v) in table.columns.iter().zip(row) {
            if c != "_parent_id" {
                obj.insert(c.clone(), Value::String(v.clone()));
            }
        }
        for fk in self
            .foreign_keys
            .iter()
            .filter(|fk| fk.parent == table.name)
        {
            let child = self.table(&fk.child).expect("fk child");
            let items = children
                .get(child.name.as_str())
                .and_then(|m| m.get(row[0].as_str()))
                .map(|rows| {
                    rows.iter()
                        .map(|&i| Value::Object(self.nest(child, &child.rows[i], children)))
                        .collect()
                })
                .unwrap_or_default();
            let key = child
                .name
                .rsplit_once("_array_")
                .map_or(child.name.clone(), |(_, a)| format!("array_{a}"));
            obj.insert(key, Value::Array(items));
        }
        obj
    }

    /// Rebuilds the input bytes from the tables and the noise lines.
    ///
    /// Fails when records and noise do not tile the input line by line.
    pub fn reconstruct(&self) -> Result<Vec<u8>> {
        let children = self.children();
        let mut records: Vec<(usize, usize, Vec<u8>)> = Vec::new();
        for (r, canonical) in self.templates.iter().enumerate() {
            let st = StructureTemplate::parse(canonical)?;
            let Some(root) = self.table(&root_table_name(r)) else {
                continue;
            };
            for row in &root.rows {
                let mut bytes = Vec::new();
                let mut leaf = 0;
                let mut array = 0;
                self.render(
                    st.items(),
                    root,
                    row,
                    r,
                    &children,
                    &mut leaf,
                    &mut array,
                    &mut bytes,
                );
                let start: usize = row[1].parse().map_err(|_| corrupt("bad _line_start"))?;
                let end: usize = row[2].parse().map_err(|_| corrupt("bad _line_end"))?;
                records.push((start, end, bytes));
            }
        }
        records.sort_by_key(|r| r.0);
        let mut out = Vec::new();
        let mut line = 0;
        let (mut ri, mut ni) = (0, 0);
        while ri < records.len() || ni < self.noise.len() {
            if ri < records.len() && records[ri].0 == line {
                out.extend_from_slice(&records[ri].2);
                line = records[ri].1;
                ri += 1;
            } else if ni < self.noise.len() && self.noise[ni].offset == out.len() {
                out.extend_from_slice(self.noise[ni].line.as_bytes());
                out.push(b'\n');
                line += 1;
                ni += 1;
            } else {
                return Err(corrupt(&format!(
                    "no record or noise line starts at line {line}"
                )));
            }
        }
        if self.missing_final_newline && out.last() == Some(&b'\n') {
            out.pop();
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn render(
        &self,
        nodes: &[Node],
        table: &Table,
        row: &[String],
        r: usize,
        children: &HashMap<&str, HashMap<&str, Vec<usize>>>,
        leaf: &mut usize,
        array: &mut usize,
        out: &mut Vec<u8>,
    ) {
        for n in nodes {
            match n {
                Node::Field => {
                    let col = table.column(&field_column(*leaf)).expect("leaf column");
                    out.extend_from_slice(row[col].as_bytes());
                    *leaf += 1;
                }
                Node::Literal(b) => out.push(*b),
                Node::Array(a) => {
                    let child = self
                        .table(&array_table_name(r, *array))
                        .expect("array table");
                    *array += 1;
                    let rows = children
                        .get(child.name.as_str())
                        .and_then(|m| m.get(row[0].as_str()))
                        .cloned()
                        .unwrap_or_default();
                    let (leaf0, array0) = (*leaf, *array);
                    for (k, &i) in rows.iter().enumerate() {
                        if k > 0 {
                            out.push(a.sep);
                        }
                        *leaf = leaf0;
                        *array = array0;
                        self.render(
                            &a.body,
                            child,
                            &child.rows[i],
                            r,
                            children,
                            leaf,
                            array,
                            out,
                        );
                    }
                    out.push(a.term);
                }
            }
        }
    }
}

fn corrupt(msg: &str) -> Error {
    Error::Config(format!("relational output is inconsistent: {msg}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything but the rows: written as `_schema.json` next to the tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Schema {
    templates: Vec<String>,
    tables: Vec<String>,
    foreign_keys: Vec<ForeignKey>,
    missing_final_newline: bool,
}

const SCHEMA_FILE: &str = "_schema.json";
const NOISE_FILE: &str = "_noise.txt";

/// Writes CSV tables and/or NDJSON records, `_noise.txt` and `_schema.json` into `dir`.
pub fn write_output(out: &RelationalOutput, dir: &Path, format: OutputFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let schema = Schema {
        templates: out.templates.clone(),
        tables: out.tables.iter().map(|t| t.name.clone()).collect(),
        foreign_keys: out.foreign_keys.clone(),
        missing_final_newline: out.missing_final_newline,
    };
    let path = dir.join(SCHEMA_FILE);
    let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        for t in &out.tables {
            let path = dir.join(format!("{}.csv", t.name));
            let csv_err = |source| Error::Csv {
                path: path.clone(),
                source,
            };
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            w.write_record(&t.columns).map_err(csv_err)?;
            for row in &t.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.flush().map_err(io_err(&path))?;
        }
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let path = dir.join("records.ndjson");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for v in out.denormalized() {
            serde_json::to_writer(&mut w, &v).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })?;
            w.write_all(b"\n").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let path = dir.join(NOISE_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = BufWriter::new(file);
    for n in &out.noise {
        writeln!(w, "{}\t{}", n.offset, n.line).map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}

/// Reads back CSV tables written by [`write_output`].
pub fn read_tables(dir: &Path) -> Result<Vec<Table>> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    let mut tables = Vec::new();
    for path in names {
        let csv_err = |source| Error::Csv {
            path: path.clone(),
            source,
        };
        let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
        let columns = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut table = Table::new(
            path.file_stem().unwrap_or_default().to_string_lossy(),
            columns,
        );
        for rec in r.records() {
            table
                .rows
                .push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
        }
        tables.push(table);
    }
    Ok(tables)
}

/// Reads back a CSV output directory written by [`write_output`].
pub fn read_output(dir: &Path) -> Result<RelationalOutput> {
    let path = dir.join(SCHEMA_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let schema: Schema = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let mut by_name: HashMap<String, Table> = read_tables(dir)?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();
    let tables = schema
        .tables
        .iter()
        .map(|name| {
            by_name.remove(name).ok_or_else(|| {
                Error::Config(format!("{}: table {name} has no CSV file", dir.display()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let path = dir.join(NOISE_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let noise = text
        .lines()
        .map(|l| {
            let (offset, line) = l.split_once('\t')?;
            Some(NoiseLine {
                offset: offset.parse().ok()?,
                line: line.to_string(),
            })
        })
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Config(format!("{}: malformed noise line", path.display())))?;
    Ok(RelationalOutput {
        templates: schema.templates,
        tables,
        foreign_keys: schema.foreign_keys,
        noise,
        missing_final_newline: schema.missing_final_newline,
    })
}
