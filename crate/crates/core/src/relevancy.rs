//! Relevancy between two label vocabularies: the mean absolute cosine
//! similarity of their word embeddings over all label pairs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn lookup(&self, token: &str) -> Option<&[f32]>;
    fn source_id(&self) -> &str;
}

/// In-memory token table.
#[derive(Debug, Clone)]
pub struct TableProvider {
    source: String,
    dim: usize,
    table: HashMap<String, Vec<f32>>,
}

impl TableProvider {
    pub fn new(source: impl Into<String>, entries: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut table = HashMap::new();
        let mut dim = None;
        for (token, v) in entries {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Contract(format!(
                        "embedding for `{token}` has dimension {}, expected {d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            table.insert(token, v);
        }
        Ok(Self {
            source: source.into(),
            dim: dim.unwrap_or(0),
            table,
        })
    }

    /// Small fixed table for tests and demos.
    pub fn toy() -> Self {
        let rows: [(&str, [f32; 4]); 12] = [
            ("running", [0.9, 0.3, 0.1, 0.0]),
            ("walking", [0.8, 0.5, 0.1, 0.1]),
            ("jumping", [0.7, 0.2, 0.4, 0.0]),
            ("fighting", [0.6, -0.2, 0.6, 0.1]),
            ("throwing", [0.5, 0.1, 0.7, 0.2]),
            ("bicycle", [0.1, 0.9, -0.1, 0.3]),
            ("car", [-0.1, 0.8, 0.0, 0.5]),
            ("truck", [-0.2, 0.7, 0.1, 0.6]),
            ("skateboard", [0.3, 0.8, 0.2, 0.1]),
            ("person", [0.4, 0.1, 0.1, 0.9]),
            ("ball", [0.2, 0.3, 0.8, 0.2]),
            ("dog", [0.3, -0.1, 0.2, 0.8]),
        ];
        Self::new("toy", rows.iter().map(|(k, v)| (k.to_string(), v.to_vec()))).expect("consistent toy table")
    }

    /// Load word vectors: the standard binary format (`.bin`) or one
    /// `token v1 … vD` line per entry otherwise. `limit` caps the vocabulary.
    pub fn load(path: &Path, limit: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut reader = BufReader::new(file);
        let source = path.display().to_string();
        if path.extension().is_some_and(|e| e == "bin") {
            Self::read_binary(&mut reader, source, limit)
        } else {
            Self::read_text(reader, source, limit)
        }
    }

    fn read_binary(reader: &mut impl BufRead, source: String, limit: Option<usize>) -> Result<Self> {
        let bad = |m: &str| Error::Lookup(format!("malformed word-vector file: {m}"));
        let mut header = String::new();
        reader
            .read_line(&mut header)
            .map_err(|e| Error::io("reading word-vector header", e))?;
        let mut parts = header.split_whitespace();
        let count: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("header"))?;
        let dim: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("header"))?;
        let take = limit.map_or(count, |l| l.min(count));
        let mut entries = Vec::with_capacity(take);
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..take {
            let mut word = Vec::new();
            loop {
                let mut byte = [0u8; 1];
                reader.read_exact(&mut byte).map_err(|e| Error::io("reading word", e))?;
                match byte[0] {
                    b' ' => break,
                    b'\n' if word.is_empty() => continue,
                    b => word.push(b),
                }
            }
            reader.read_exact(&mut buf).map_err(|e| Error::io("reading vector", e))?;
            let v: Vec<f32> = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.push((String::from_utf8_lossy(&word).into_owned(), v));
        }
        Self::new(source, entries)
    }

    fn read_text(reader: impl BufRead, source: String, limit: Option<usize>) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading word vectors", e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if n == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
                // `count dim` header
                continue;
            }
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Lookup(format!("bad vector for `{token}`: {e}")))?;
            if v.is_empty() {
                continue;
            }
            entries.push((token.to_string(), v));
            if limit.is_some_and(|l| entries.len() >= l) {
                break;
            }
        }
        Self::new(source, entries)
    }
}

impl EmbeddingProvider for TableProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup(&self, token: &str) -> Option<&[f32]> {
        self.table.get(token).map(Vec::as_slice)
    }

    fn source_id(&self) -> &str {
        &self.source
    }
}

/// Lower-cased, trimmed labels; never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub labels: Vec<String>,
}

impl LabelSet {
    pub fn new<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|l| l.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
            .filter(|l| !l.is_empty())
            .collect();
        if labels.is_empty() {
            return Err(Error::Contract("label set is empty".into()));
        }
        Ok(Self { labels })
    }

    /// One label per non-empty line.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::new(text.lines())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean of the in-vocabulary token vectors of `label`.
pub fn embed_label(label: &str, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
    let mut sum = vec![0.0f64; provider.dim()];
    let mut known = 0usize;
    let mut missing = Vec::new();
    for token in label.split_whitespace() {
        match provider.lookup(token) {
            Some(v) => {
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += *x as f64;
                }
                known += 1;
            }
            None => missing.push(token),
        }
    }
    if known == 0 {
        return Err(Error::Lookup(format!(
            "no token of label `{label}` is in the {} vocabulary",
            provider.source_id()
        )));
    }
    if !missing.is_empty() {
        log::warn!("label `{label}`: out-of-vocabulary tokens {missing:?} dropped");
    }
    Ok(sum.into_iter().map(|s| s / known as f64).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[derive(Debug, Clone)]
pub struct Relevancy {
    /// `S̄ ∈ [0, 1]`.
    pub score: f64,
    /// `|cos|` for every (P label, Q label) pair, row-major by P.
    pub matrix: Vec<Vec<f64>>,
}

impl Relevancy {
    pub fn to_csv(&self, p: &LabelSet, q: &LabelSet) -> String {
        let mut out = String::from("label");
        for l in &q.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in p.labels.iter().zip(&self.matrix) {
            out.push_str(label);
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `S̄ = (1/(ℓ_P·ℓ_Q)) Σ_p Σ_q |cos(π_p, π_q)|`.
pub fn mean_abs_cos_sim(p: &LabelSet, q: &LabelSet, provider: &dyn EmbeddingProvider) -> Result<Relevancy> {
    let embed_all = |set: &LabelSet| -> Result<Vec<Vec<f64>>> {
        set.labels
            .iter()
            .map(|l| {
                let v = embed_label(l, provider)?;
                if v.iter().all(|&x| x == 0.0) {
                    return Err(Error::Contract(format!("label `{l}` embeds to the zero vector")));
                }
                Ok(v)
            })
            .collect()
    };
    let ep = embed_all(p)?;
    let eq = embed_all(q)?;
    let matrix: Vec<Vec<f64>> = ep
        .iter()
        .map(|a| eq.iter().map(|b| cosine(a, b).abs().min(1.0)).collect())
        .collect();
    let total: f64 = matrix.iter().flatten().sum();
    Ok(Relevancy {
        score: total / (p.len() * q.len()) as f64,
        matrix,
    })
}
