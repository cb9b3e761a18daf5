//! Condition features: equation-symbol vectors, coefficient and boundary
//! feature vectors, and point-wise fields laid out on the model grid.
//!
//! The learned adapters that turn these features into deep conditions live
//! with the model parameters (see [`crate::model`]).

use std::collections::BTreeMap;
use std::fs::File;
use std::hash::Hasher;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use fnv::FnvHasher;
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::components::{BoundaryType, EdgeKind, Field};
use crate::model::TaskMode;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("equation symbols are empty")]
    EmptySymbols,
    #[error("no precomputed embedding for symbols {0:?}")]
    MissingSymbols(String),
    #[error("embedding width mismatch: expected {expected}, got {actual}")]
    Width { expected: usize, actual: usize },
    #[error("coefficient {0:?} is not among the model's coefficient keys")]
    UnknownCoefficient(String),
    #[error("coefficient {key} = {value} cannot be log-scaled")]
    LogOfNonPositive { key: String, value: f64 },
    #[error("{field} field of shape {shape:?} does not fit the model grid {grid:?}")]
    FieldGrid {
        field: &'static str,
        shape: Vec<usize>,
        grid: [usize; 2],
    },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

/// Splits LaTeX into lexemes: control words (`\partial`), numbers, single
/// letters, and single punctuation characters.
pub fn tokenize_latex(s: &str) -> Vec<String> {
    let chars: Vec<char> = s.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\\' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_alphabetic() {
                i += 1;
            }
            if i == start + 1 && i < chars.len() {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

fn fnv(parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0x1f);
    }
    h.finish()
}

/// Signed feature hashing of lexeme unigrams and bigrams, L2-normalized.
pub fn hashed_embedding(symbols: &str, dim: usize) -> Result<Vec<f64>> {
    let tokens = tokenize_latex(symbols);
    if tokens.is_empty() {
        return Err(EmbedError::EmptySymbols);
    }
    let mut v = vec![0.0; dim];
    let mut bump = |h: u64| {
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % dim as u64) as usize] += sign;
    };
    for t in &tokens {
        bump(fnv(&[t]));
    }
    for w in tokens.windows(2) {
        bump(fnv(&[&w[0], &w[1]]));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every bucket cancelled; fall back to the unsigned count of the first token
        v[(fnv(&[&tokens[0]]) % dim as u64) as usize] = 1.0;
        return Ok(v);
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

pub const EMBEDDING_MAGIC: [u8; 4] = *b"UEMB";
pub const EMBEDDING_VERSION: u16 = 1;

/// Precomputed, mean-pooled symbol vectors keyed by the symbols string.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, symbols: &str, v: Vec<f32>) -> Result<()> {
        if v.len() != self.dim {
            return Err(EmbedError::Width {
                expected: self.dim,
                actual: v.len(),
            });
        }
        self.entries.insert(symbols.to_string(), v);
        Ok(())
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut w = Writer::new(out);
        w.bytes(&EMBEDDING_MAGIC)?;
        w.u16(EMBEDDING_VERSION)?;
        w.u32(self.dim as u32)?;
        for (k, v) in &self.entries {
            w.str(k)?;
            for &x in v {
                w.f32(x)?;
            }
        }
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut r = Reader::new(input);
        r.magic(EMBEDDING_MAGIC)?;
        let version = r.u16()?;
        if version != EMBEDDING_VERSION {
            return Err(CodecError::UnsupportedVersion(version).into());
        }
        let dim = r.u32()? as usize;
        let mut table = EmbeddingTable::new(dim);
        loop {
            let key = match r.str() {
                Ok(k) => k,
                Err(CodecError::Io(e)) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut v = Vec::with_capacity(dim);
            for _ in 0..dim {
                v.push(r.f32()?);
            }
            table.entries.insert(key, v);
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path).map_err(CodecError::from)?);
        self.write_to(&mut f)?;
        f.flush().map_err(CodecError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path).map_err(CodecError::from)?))
    }
}

/// Maps a symbols string to a fixed-width vector.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolEmbedder {
    Hashed { dim: usize },
    Precomputed(EmbeddingTable),
}

impl SymbolEmbedder {
    pub fn dim(&self) -> usize {
        match self {
            SymbolEmbedder::Hashed { dim } => *dim,
            SymbolEmbedder::Precomputed(t) => t.dim,
        }
    }

    pub fn embed_symbols(&self, symbols: &str) -> Result<Vec<f64>> {
        if symbols.trim().is_empty() {
            return Err(EmbedError::EmptySymbols);
        }
        match self {
            SymbolEmbedder::Hashed { dim } => hashed_embedding(symbols, *dim),
            SymbolEmbedder::Precomputed(t) => t
                .entries
                .get(symbols)
                .map(|v| v.iter().map(|&x| x as f64).collect())
                .ok_or_else(|| EmbedError::MissingSymbols(symbols.to_string())),
        }
    }
}

/// `[value, present]` per key, or `None` when no key is present.
pub fn coefficient_features(
    keys: &[String],
    log_keys: &[String],
    coefficients: &BTreeMap<String, f64>,
) -> Result<Option<Vec<f64>>> {
    if let Some(k) = coefficients.keys().find(|k| !keys.contains(k)) {
        return Err(EmbedError::UnknownCoefficient(k.clone()));
    }
    if !keys.iter().any(|k| coefficients.contains_key(k)) {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(2 * keys.len());
    for k in keys {
        match coefficients.get(k) {
            Some(&v) => {
                out.push(coefficient_value(k, v, log_keys)?);
                out.push(1.0);
            }
            None => out.extend([0.0, 0.0]),
        }
    }
    Ok(Some(out))
}

pub(crate) fn coefficient_value(key: &str, v: f64, log_keys: &[String]) -> Result<f64> {
    if log_keys.iter().any(|k| k == key) {
        if v <= 0.0 {
            return Err(EmbedError::LogOfNonPositive {
                key: key.to_string(),
                value: v,
            });
        }
        Ok(v.log10())
    } else {
        Ok(v)
    }
}

/// Edges described by the boundary features.
pub const MAX_EDGES: usize = 4;
pub const BOUNDARY_FEATURES: usize = 2 + MAX_EDGES * 5;

/// One-hot periodic / non-periodic, then per edge a one-hot kind and `(α, β)`.
pub fn boundary_features(b: &BoundaryType) -> Vec<f64> {
    let mut out = vec![0.0; BOUNDARY_FEATURES];
    match b {
        BoundaryType::Periodic => out[0] = 1.0,
        BoundaryType::NonPeriodic(edges) => {
            out[1] = 1.0;
            for (i, e) in edges.iter().take(MAX_EDGES).enumerate() {
                let base = 2 + 5 * i;
                let kind = match e.kind {
                    EdgeKind::Dirichlet => 0,
                    EdgeKind::Neumann => 1,
                    EdgeKind::Robin => 2,
                };
                out[base + kind] = 1.0;
                out[base + 3] = e.alpha;
                out[base + 4] = e.beta;
            }
        }
    }
    out
}

/// Lays a field out on the `[H, W]` model grid: `[C, W]` is repeated along
/// the first axis in full-field mode; `[C, H, W]` passes through.
pub fn to_model_grid(field: &Field, name: &'static str, mode: TaskMode, grid: [usize; 2]) -> Result<Tensor> {
    let s = field.shape();
    let err = || EmbedError::FieldGrid {
        field: name,
        shape: s.to_vec(),
        grid,
    };
    match s.len() {
        2 if mode == TaskMode::FullField && s[1] == grid[1] => {
            let (c, w) = (s[0], s[1]);
            let mut data = Vec::with_capacity(c * grid[0] * w);
            for ch in field.data().chunks(w) {
                for _ in 0..grid[0] {
                    data.extend_from_slice(ch);
                }
            }
            Ok(Tensor::new(vec![c, grid[0], w], data).expect("grid shape"))
        }
        3 if s[1] == grid[0] && s[2] == grid[1] => Ok(field.clone()),
        _ => Err(err()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::EdgeCondition;

    #[test]
    fn tokenizer_splits_lexemes() {
        assert_eq!(
            tokenize_latex("\\partial_t u + \\partial_x(2u^2) = 0.5"),
            ["\\partial", "_", "t", "u", "+", "\\partial", "_", "x", "(", "2", "u", "^", "2", ")", "=", "0.5"]
        );
        assert_eq!(tokenize_latex("c_{01}\\,u"), ["c", "_", "{", "01", "}", "\\,", "u"]);
    }

    #[test]
    fn hashed_vectors_are_deterministic_and_unit() {
        let s = "\\partial_t u + \\partial_x(2u^2) = 0";
        let a = hashed_embedding(s, 64).unwrap();
        assert_eq!(a, hashed_embedding(s, 64).unwrap());
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let b = hashed_embedding("\\partial_t u = 0", 64).unwrap();
        assert_ne!(a, b);
        assert!(matches!(hashed_embedding("  ", 64), Err(EmbedError::EmptySymbols)));
    }

    #[test]
    fn precomputed_lookup_and_missing_key() {
        let mut t = EmbeddingTable::new(3);
        t.insert("u_t = 0", vec![1.0, 2.0, 3.0]).unwrap();
        assert!(t.insert("bad", vec![1.0]).is_err());
        let mut bytes = Vec::new();
        t.write_to(&mut bytes).unwrap();
        let back = EmbeddingTable::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, t);
        let e = SymbolEmbedder::Precomputed(back);
        assert_eq!(e.embed_symbols("u_t = 0").unwrap(), vec![1.0, 2.0, 3.0]);
        let err = e.embed_symbols("u_t = 1").unwrap_err();
        assert!(err.to_string().contains("u_t = 1"));
    }

    #[test]
    fn coefficient_features_carry_presence() {
        let keys = vec!["nu".to_string(), "omega".to_string()];
        let logs = vec!["nu".to_string()];
        let mut m = BTreeMap::new();
        assert_eq!(coefficient_features(&keys, &logs, &m).unwrap(), None);
        m.insert("nu".to_string(), 1e-3);
        let f = coefficient_features(&keys, &logs, &m).unwrap().unwrap();
        assert!((f[0] + 3.0).abs() < 1e-12);
        assert_eq!(&f[1..], &[1.0, 0.0, 0.0]);
        m.insert("beta".to_string(), 1.0);
        assert!(matches!(
            coefficient_features(&keys, &logs, &m),
            Err(EmbedError::UnknownCoefficient(_))
        ));
    }

    #[test]
    fn boundary_features_layout() {
        assert_eq!(boundary_features(&BoundaryType::Periodic)[..2], [1.0, 0.0]);
        let f = boundary_features(&BoundaryType::NonPeriodic(vec![
            EdgeCondition::robin(0.7, 1.0, 0.2),
            EdgeCondition::neumann(0.1),
        ]));
        assert_eq!(f.len(), BOUNDARY_FEATURES);
        assert_eq!(&f[..12], &[0.0, 1.0, 0.0, 0.0, 1.0, 0.7, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn full_field_tiling_repeats_rows() {
        let f = Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let t = to_model_grid(&f, "force", TaskMode::FullField, [2, 3]).unwrap();
        assert_eq!(t.shape(), &[1, 2, 3]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert!(to_model_grid(&f, "force", TaskMode::Frames, [2, 3]).is_err());
    }

    #[test]
    fn family_symbols_rarely_collide() {
        use crate::solvers::{sample_1d_pde, TrigSeries};
        let base = sample_1d_pde(0);
        let mut strings = std::collections::BTreeSet::new();
        for mask in 0u32..256 {
            let mut spec = base.clone();
            for i in 0..6 {
                spec.c[i / 3][i % 3] = if mask >> i & 1 == 1 { 1.0 } else { 0.0 };
            }
            spec.source = if mask & 64 != 0 { TrigSeries::constant(0.3) } else { TrigSeries::zero() };
            spec.kappa = if mask & 128 != 0 { TrigSeries::constant(0.01) } else { TrigSeries::zero() };
            strings.insert(spec.symbols());
        }
        assert_eq!(strings.len(), 256);
        let vecs: Vec<Vec<f64>> = strings.iter().map(|s| hashed_embedding(s, 64).unwrap()).collect();
        let collided = (0..vecs.len())
            .filter(|&i| (0..vecs.len()).any(|j| j != i && vecs[i] == vecs[j]))
            .count();
        assert!((collided as f64) < 0.01 * vecs.len() as f64, "{collided} collisions");
        let a = hashed_embedding("\\partial_t u + \\partial_x(2u^2) = 0", 64).unwrap();
        let b = hashed_embedding("\\partial_t u = 0", 64).unwrap();
        assert_ne!(a, b);
    }
}
