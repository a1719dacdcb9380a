//! Frozen expert embeddings and sentence pooling.
//!
//! An expert maps each token to a fixed vector. Two sources exist: tables
//! loaded from word-vector text files, and seeded stubs that derive a vector
//! from a hash of the token. Sentence vectors are the mean of token vectors.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::Rng;

const FNV_OFFSET: u64 = 14695981039346656037;
const FNV_PRIME: u64 = 1099511628211;

/// FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    fnv1a64_bytes(FNV_OFFSET, token.as_bytes())
}

/// Continues an FNV-1a hash from `state`.
pub fn fnv1a64_bytes(state: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Non-empty sequence of non-empty tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("token sequence is empty".into()));
        }
        if tokens.iter().any(String::is_empty) {
            return Err(Error::InvalidArgument("token sequence contains an empty token".into()));
        }
        Ok(TokenSequence(tokens))
    }

    /// Splits preprocessed text on whitespace.
    pub fn from_text(text: &str) -> Result<Self> {
        Self::new(text.split_whitespace().map(str::to_owned).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.0.join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OovPolicy {
    Zero,
    /// Unknown tokens get the stub vector for this seed.
    StubFallback { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StubExpertSpec {
    pub name: String,
    pub dim: usize,
    pub seed: u64,
}

impl StubExpertSpec {
    pub fn new(name: impl Into<String>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("stub expert dimension must be at least 1".into()));
        }
        Ok(StubExpertSpec {
            name: name.into(),
            dim,
            seed,
        })
    }
}

/// Vector for `token` under a stub expert: uniform entries in `[-√3, √3]`
/// from a generator seeded with `seed ^ fnv1a64(token)`.
pub fn stub_embed(spec: &StubExpertSpec, token: &str) -> Vec<f64> {
    stub_vector(spec.seed, spec.dim, token)
}

fn stub_vector(seed: u64, dim: usize, token: &str) -> Vec<f64> {
    let bound = 3f64.sqrt();
    let mut rng = Rng::new(seed ^ fnv1a64(token));
    (0..dim).map(|_| rng.symmetric(bound)).collect()
}

/// Token → vector table with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTable {
    name: String,
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
    oov_policy: OovPolicy,
}

impl ExpertTable {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        entries: HashMap<String, Vec<f64>>,
        oov_policy: OovPolicy,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("table dimension must be at least 1".into()));
        }
        if let Some((token, v)) = entries.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::DimensionMismatch {
                context: "ExpertTable::new",
                expected: format!("dimension {dim}"),
                got: format!("dimension {} for token {token:?}", v.len()),
            });
        }
        Ok(ExpertTable {
            name: name.into(),
            dim,
            entries,
            oov_policy,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    /// Entries sorted by token.
    pub fn sorted_entries(&self) -> Vec<(&str, &[f64])> {
        let mut out: Vec<_> = self
            .entries
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_slice()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expert {
    Table(ExpertTable),
    Stub(StubExpertSpec),
}

/// Mean-pooled sentence vector plus how many tokens were out of vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub vector: Vec<f64>,
    pub oov: usize,
}

impl Expert {
    pub fn name(&self) -> &str {
        match self {
            Expert::Table(t) => t.name(),
            Expert::Stub(s) => &s.name,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Expert::Table(t) => t.dim(),
            Expert::Stub(s) => s.dim,
        }
    }

    /// Adds the token's vector into `acc`; returns false for an OOV token.
    fn accumulate(&self, token: &str, acc: &mut [f64]) -> bool {
        let add = |acc: &mut [f64], v: &[f64]| acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        match self {
            Expert::Stub(spec) => {
                add(acc, &stub_embed(spec, token));
                true
            }
            Expert::Table(table) => match (table.get(token), table.oov_policy) {
                (Some(v), _) => {
                    add(acc, v);
                    true
                }
                (None, OovPolicy::Zero) => false,
                (None, OovPolicy::StubFallback { seed }) => {
                    add(acc, &stub_vector(seed, table.dim, token));
                    false
                }
            },
        }
    }

    /// Token vector, or `None` when the token is unknown and the policy is zero.
    pub fn embed(&self, token: &str) -> Option<Vec<f64>> {
        let mut v = vec![0.0; self.dim()];
        let known = self.accumulate(token, &mut v);
        match (known, self) {
            (false, Expert::Table(t)) if t.oov_policy == OovPolicy::Zero => None,
            _ => Some(v),
        }
    }

    /// Arithmetic mean of token vectors.
    pub fn embed_and_pool(&self, seq: &TokenSequence) -> Pooled {
        let mut sum = vec![0.0; self.dim()];
        let mut oov = 0;
        for token in seq.tokens() {
            if !self.accumulate(token, &mut sum) {
                oov += 1;
            }
        }
        let t = seq.len() as f64;
        sum.iter_mut().for_each(|v| *v /= t);
        Pooled { vector: sum, oov }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTable {
    pub table: ExpertTable,
    /// Lines whose token had already appeared; the later line wins.
    pub duplicates: usize,
}

/// Reads a word-vector text file: a `V D` header, then `V` lines of
/// `token f_1 … f_D`.
pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<LoadedTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_embedding_text(&text, path, &name)
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(' ').filter(|f| !f.is_empty())
}

pub fn parse_embedding_text(text: &str, path: &Path, name: &str) -> Result<LoadedTable> {
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or("");
    let header_fields: Vec<&str> = fields(header).collect();
    let parse_count = |s: &str| s.parse::<usize>().ok();
    let (vocab, dim) = match header_fields.as_slice() {
        [v, d] => match (parse_count(v), parse_count(d)) {
            (Some(v), Some(d)) if d >= 1 => (v, d),
            _ => {
                return Err(Error::parse(path, 1, format!("malformed header {header:?}: expected \"V D\" with D >= 1")))
            }
        },
        _ => return Err(Error::parse(path, 1, format!("malformed header {header:?}: expected \"V D\""))),
    };

    let mut entries = HashMap::with_capacity(vocab);
    let mut duplicates = 0;
    let mut seen = 0;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.is_empty() {
            // Only a trailing newline may produce an empty line.
            if text[..].ends_with('\n') && seen == vocab {
                continue;
            }
            return Err(Error::parse(path, line_no, "empty line"));
        }
        if seen == vocab {
            return Err(Error::parse(path, line_no, format!("more than the {vocab} vectors declared in the header")));
        }
        let mut parts = fields(line);
        let token = parts
            .next()
            .ok_or_else(|| Error::parse(path, line_no, "missing token"))?;
        let vector = parts
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, line_no, format!("non-numeric field {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.len() != dim {
            return Err(Error::parse(
                path,
                line_no,
                format!("vector for {token:?} has {} components, header declares {dim}", vector.len()),
            ));
        }
        if entries.insert(token.to_owned(), vector).is_some() {
            duplicates += 1;
        }
        seen += 1;
    }
    if seen != vocab {
        return Err(Error::parse(
            path,
            seen + 2,
            format!("header declares {vocab} vectors, found {seen}"),
        ));
    }
    Ok(LoadedTable {
        table: ExpertTable::new(name, dim, entries, OovPolicy::Zero)?,
        duplicates,
    })
}

/// Writes `table` in the word-vector text format, tokens sorted.
pub fn write_embedding_file(table: &ExpertTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for (token, v) in table.sorted_entries() {
        out.push_str(token);
        for x in v {
            out.push(' ');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
