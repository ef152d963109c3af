//! Raw log text as an indexed sequence of newline-terminated lines.
//!
//! Everything downstream works on bytes. `\r\n` is folded to `\n` when a file
//! is loaded; a lone `\r` is kept as an ordinary byte.

use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Default number of bytes drawn into a [`SampleView`].
pub const DEFAULT_SAMPLE_BYTES: usize = 4 << 20;
/// Default size of one sampled chunk.
pub const DEFAULT_CHUNK_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    bytes: Vec<u8>,
    line_starts: Vec<usize>,
}

impl Corpus {
    /// Reads `path`, optionally keeping only the whole lines that fit in `budget` bytes.
    pub fn load(path: impl AsRef<Path>, budget: Option<usize>) -> Result<Corpus> {
        let path = path.as_ref();
        let mut raw = fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if let Some(limit) = budget {
            if raw.len() > limit {
                let cut = raw[..limit]
                    .iter()
                    .rposition(|&b| b == b'\n')
                    .map_or(limit, |p| p + 1);
                raw.truncate(cut);
            }
        }
        Corpus::from_bytes(raw)
    }

    pub fn from_bytes(raw: impl Into<Vec<u8>>) -> Result<Corpus> {
        let bytes = normalize_newlines(raw.into());
        if bytes.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let line_starts = index_lines(&bytes);
        Ok(Corpus { bytes, line_starts })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn line_starts(&self) -> &[usize] {
        &self.line_starts
    }

    pub fn total_len(&self) -> usize {
        self.bytes.len()
    }

    pub fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    /// Byte range of line `i`, including its trailing `\n` when present.
    pub fn line_range(&self, i: usize) -> Range<usize> {
        let end = self
            .line_starts
            .get(i + 1)
            .copied()
            .unwrap_or(self.bytes.len());
        self.line_starts[i]..end
    }

    pub fn line(&self, i: usize) -> &[u8] {
        &self.bytes[self.line_range(i)]
    }

    /// The whole corpus as a single-chunk view.
    pub fn full_view(&self) -> SampleView {
        SampleView::from_chunks(self, vec![(0, self.bytes.len())])
    }

    /// Draws roughly `budget` bytes as non-overlapping, line-aligned chunks.
    ///
    /// Chunk starts are uniform over the file (seeded ChaCha8), snapped forward
    /// to the next line start, and each chunk is extended to a whole line.
    pub fn sample(&self, budget: usize, chunk_size: usize, seed: u64) -> SampleView {
        assert!(
            chunk_size > 0 && budget >= chunk_size,
            "budget >= chunk_size > 0"
        );
        let total = self.bytes.len();
        if total <= budget {
            return self.full_view();
        }
        let wanted = budget.div_ceil(chunk_size);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chunks: Vec<(usize, usize)> = Vec::with_capacity(wanted);
        let mut attempts = 0;
        while chunks.len() < wanted && attempts < wanted * 64 {
            attempts += 1;
            let raw = rng.gen_range(0..total.saturating_sub(chunk_size).max(1));
            let first_line = self.line_at_or_after(raw);
            if first_line >= self.line_starts.len() {
                continue;
            }
            let start = self.line_starts[first_line];
            let end = self.line_end_at_or_after((start + chunk_size).min(total));
            if chunks.iter().any(|&(s, len)| start < s + len && s < end) {
                continue;
            }
            chunks.push((start, end - start));
        }
        chunks.sort_unstable();
        SampleView::from_chunks(self, chunks)
    }

    fn line_at_or_after(&self, offset: usize) -> usize {
        self.line_starts.partition_point(|&s| s < offset)
    }

    /// Smallest line end (exclusive, just past `\n` or EOF) that is `>= offset`.
    fn line_end_at_or_after(&self, offset: usize) -> usize {
        if offset == 0 {
            return self.line_range(0).end;
        }
        match self.bytes[offset - 1..].iter().position(|&b| b == b'\n') {
            Some(p) => offset + p,
            None => self.bytes.len(),
        }
    }
}

/// A set of line-aligned chunks of a corpus, concatenated in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleView {
    chunks: Vec<(usize, usize)>,
    text: Vec<u8>,
    line_starts: Vec<usize>,
    /// Index into `line_starts` of the first line of each chunk, plus a final sentinel.
    chunk_lines: Vec<usize>,
}

impl SampleView {
    fn from_chunks(corpus: &Corpus, chunks: Vec<(usize, usize)>) -> SampleView {
        let mut text = Vec::with_capacity(chunks.iter().map(|c| c.1).sum());
        for &(off, len) in &chunks {
            text.extend_from_slice(&corpus.bytes[off..off + len]);
        }
        let mut line_starts = Vec::new();
        let mut chunk_lines = Vec::with_capacity(chunks.len() + 1);
        let mut base = 0;
        for &(_, len) in &chunks {
            chunk_lines.push(line_starts.len());
            line_starts.extend(
                index_lines(&text[base..base + len])
                    .into_iter()
                    .map(|s| s + base),
            );
            base += len;
        }
        chunk_lines.push(line_starts.len());
        SampleView {
            chunks,
            text,
            line_starts,
            chunk_lines,
        }
    }

    /// A view over arbitrary in-memory text (one chunk).
    pub fn from_text(text: impl Into<Vec<u8>>) -> SampleView {
        let text = text.into();
        let line_starts = if text.is_empty() {
            Vec::new()
        } else {
            index_lines(&text)
        };
        let len = text.len();
        SampleView {
            chunks: vec![(0, len)],
            chunk_lines: vec![0, line_starts.len()],
            text,
            line_starts,
        }
    }

    /// `(offset, length)` of each chunk in the source corpus.
    pub fn chunks(&self) -> &[(usize, usize)] {
        &self.chunks
    }

    pub fn text(&self) -> &[u8] {
        &self.text
    }

    pub fn sampled_len(&self) -> usize {
        self.text.len()
    }

    pub fn line_starts(&self) -> &[usize] {
        &self.line_starts
    }

    pub fn line_count(&self) -> usize {
        self.line_starts.len()
    }

    pub fn line_range(&self, i: usize) -> Range<usize> {
        let end = self
            .line_starts
            .get(i + 1)
            .copied()
            .unwrap_or(self.text.len());
        self.line_starts[i]..end
    }

    /// Line index ranges of each chunk; records never straddle two of these.
    pub fn chunk_line_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.chunk_lines.windows(2).map(|w| w[0]..w[1])
    }
}

fn normalize_newlines(mut bytes: Vec<u8>) -> Vec<u8> {
    if !bytes.windows(2).any(|w| w == b"\r\n") {
        return bytes;
    }
    let mut w = 0;
    for r in 0..bytes.len() {
        let b = bytes[r];
        if b == b'\r' && bytes.get(r + 1) == Some(&b'\n') {
            continue;
        }
        bytes[w] = b;
        w += 1;
    }
    bytes.truncate(w);
    bytes
}

fn index_lines(bytes: &[u8]) -> Vec<usize> {
    let mut starts = Vec::with_capacity(bytes.len() / 48 + 1);
    starts.push(0);
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' && i + 1 < bytes.len() {
            starts.push(i + 1);
        }
    }
    starts
}
