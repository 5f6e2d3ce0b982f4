//! Semantic IDs and the response grammar.
//!
//! A token is `<` level `_` decimal-digits `>` with level one of `a`, `b`,
//! `c`. An ID is three tokens with levels `a`, `b`, `c` written back to back
//! with nothing in between, e.g. `<a_3><b_5><c_7>`. Any other character
//! (whitespace included) breaks a run and is otherwise ignored.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cardinalities of the three ID levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct CatalogShape {
    n_a: u32,
    n_b: u32,
    n_c: u32,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    n_a: u32,
    n_b: u32,
    n_c: u32,
}

impl TryFrom<RawShape> for CatalogShape {
    type Error = Error;
    fn try_from(raw: RawShape) -> Result<Self> {
        CatalogShape::new(raw.n_a, raw.n_b, raw.n_c)
    }
}

impl From<CatalogShape> for RawShape {
    fn from(s: CatalogShape) -> Self {
        RawShape { n_a: s.n_a, n_b: s.n_b, n_c: s.n_c }
    }
}

impl CatalogShape {
    pub fn new(n_a: u32, n_b: u32, n_c: u32) -> Result<Self> {
        let size = n_a as u64 * n_b as u64 * n_c as u64;
        if n_a == 0 || n_b == 0 || n_c == 0 || size < 2 || size > u32::MAX as u64 {
            return Err(Error::InvalidShape { n_a, n_b, n_c });
        }
        Ok(CatalogShape { n_a, n_b, n_c })
    }

    pub fn n_a(&self) -> u32 {
        self.n_a
    }

    pub fn n_b(&self) -> u32 {
        self.n_b
    }

    pub fn n_c(&self) -> u32 {
        self.n_c
    }

    /// Number of items, `n_a · n_b · n_c`.
    pub fn size(&self) -> usize {
        self.n_a as usize * self.n_b as usize * self.n_c as usize
    }

    pub fn contains(&self, a: u32, b: u32, c: u32) -> bool {
        a < self.n_a && b < self.n_b && c < self.n_c
    }

    /// Row-major flat index of `id` (a slowest, c fastest).
    pub fn index_of(&self, id: SemanticId) -> usize {
        (id.a as usize * self.n_b as usize + id.b as usize) * self.n_c as usize + id.c as usize
    }

    pub fn id_at(&self, index: usize) -> SemanticId {
        let n_c = self.n_c as usize;
        let n_b = self.n_b as usize;
        SemanticId {
            a: (index / (n_b * n_c)) as u32,
            b: ((index / n_c) % n_b) as u32,
            c: (index % n_c) as u32,
        }
    }

    /// All IDs in flat-index order.
    pub fn ids(&self) -> impl Iterator<Item = SemanticId> + '_ {
        (0..self.size()).map(move |i| self.id_at(i))
    }
}

/// A three-level item identifier. Ordering is lexicographic on `(a, b, c)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SemanticId {
    pub a: u32,
    pub b: u32,
    pub c: u32,
}

impl SemanticId {
    /// Builds an ID, checking it against `shape`.
    pub fn new(a: u32, b: u32, c: u32, shape: &CatalogShape) -> Result<Self> {
        if shape.contains(a, b, c) {
            Ok(SemanticId { a, b, c })
        } else {
            Err(Error::OutOfBounds { a, b, c })
        }
    }

    pub fn in_bounds(&self, shape: &CatalogShape) -> bool {
        shape.contains(self.a, self.b, self.c)
    }
}

/// Generated text together with its grammar-token count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseText {
    text: String,
    token_length: usize,
}

impl ResponseText {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let token_length = tokenize(&text).len();
        ResponseText { text, token_length }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn token_length(&self) -> usize {
        self.token_length
    }
}

impl From<&str> for ResponseText {
    fn from(s: &str) -> Self {
        ResponseText::new(s)
    }
}

/// Deduplicated set of IDs, iterated in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdSet(BTreeSet<SemanticId>);

impl IdSet {
    pub fn new() -> Self {
        IdSet(BTreeSet::new())
    }

    pub fn single(id: SemanticId) -> Self {
        let mut s = IdSet::new();
        s.insert(id);
        s
    }

    pub fn insert(&mut self, id: SemanticId) -> bool {
        self.0.insert(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: &SemanticId) -> bool {
        self.0.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SemanticId> + '_ {
        self.0.iter()
    }

    pub fn intersection_len(&self, other: &IdSet) -> usize {
        self.0.intersection(&other.0).count()
    }

    pub fn extend_from(&mut self, other: &IdSet) {
        self.0.extend(other.0.iter().copied());
    }
}

impl FromIterator<SemanticId> for IdSet {
    fn from_iter<I: IntoIterator<Item = SemanticId>>(iter: I) -> Self {
        IdSet(iter.into_iter().collect())
    }
}

/// Canonical text of one ID: `<a_i><b_j><c_k>`.
pub fn render_sid(id: SemanticId) -> ResponseText {
    let mut text = String::new();
    push_sid(&mut text, id);
    ResponseText { text, token_length: 3 }
}

pub(crate) fn push_sid(out: &mut String, id: SemanticId) {
    // Writing into a String cannot fail.
    let _ = write!(out, "<a_{}><b_{}><c_{}>", id.a, id.b, id.c);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Level {
    A,
    B,
    C,
}

#[derive(Debug, Clone, Copy)]
struct Token {
    start: usize,
    end: usize,
    level: Level,
    /// `None` when the digits overflow `u32`.
    value: Option<u32>,
}

fn tokenize(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if let Some(tok) = token_at(bytes, i) {
            i = tok.end;
            tokens.push(tok);
        } else {
            i += 1;
        }
    }
    tokens
}

fn token_at(bytes: &[u8], start: usize) -> Option<Token> {
    if bytes.get(start) != Some(&b'<') {
        return None;
    }
    let level = match bytes.get(start + 1)? {
        b'a' => Level::A,
        b'b' => Level::B,
        b'c' => Level::C,
        _ => return None,
    };
    if bytes.get(start + 2) != Some(&b'_') {
        return None;
    }
    let digits_start = start + 3;
    let mut j = digits_start;
    let mut value: Option<u32> = Some(0);
    while let Some(&d) = bytes.get(j) {
        if !d.is_ascii_digit() {
            break;
        }
        value = value
            .and_then(|v| v.checked_mul(10))
            .and_then(|v| v.checked_add((d - b'0') as u32));
        j += 1;
    }
    if j == digits_start || bytes.get(j) != Some(&b'>') {
        return None;
    }
    Some(Token { start, end: j + 1, level, value })
}

/// Extracts every well-formed, in-bounds ID from `text`.
///
/// Never fails: malformed fragments, out-of-range indices and incomplete
/// triples are skipped, and repeated IDs collapse into one member.
pub fn parse_response(text: &str, shape: &CatalogShape) -> IdSet {
    let tokens = tokenize(text);
    let mut ids = IdSet::new();
    let mut i = 0;
    while i + 2 < tokens.len() {
        let (t0, t1, t2) = (tokens[i], tokens[i + 1], tokens[i + 2]);
        let is_triple = t0.level == Level::A
            && t1.level == Level::B
            && t2.level == Level::C
            && t0.end == t1.start
            && t1.end == t2.start;
        if is_triple {
            if let (Some(a), Some(b), Some(c)) = (t0.value, t1.value, t2.value) {
                if shape.contains(a, b, c) {
                    ids.insert(SemanticId { a, b, c });
                }
            }
            i += 3;
        } else {
            i += 1;
        }
    }
    ids
}
