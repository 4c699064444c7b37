//! Embedding storage, cosine scoring of candidate pairs and the thresholded edge list.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ArticleId;
use crate::entities::CandidatePair;
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";
pub const EDGE_MAGIC: &[u8; 4] = b"EDG1";
pub const DEFAULT_THRESHOLD: f32 = 0.9;

/// Rows whose norm is within this of 1 are kept bit-exact on load.
const UNIT_TOLERANCE: f64 = 1e-6;

/// Row-major `f32` embeddings keyed by article id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<ArticleId>,
    data: Vec<f32>,
    rows: HashMap<ArticleId, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, ids: Vec<ArticleId>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::DimMismatch {
                expected: 1,
                found: 0,
            });
        }
        if data.len() != ids.len() * dim {
            return Err(Error::IdCountMismatch {
                rows: data.len() / dim,
                ids: ids.len(),
            });
        }
        let rows = ids.iter().enumerate().map(|(row, id)| (*id, row)).collect();
        Ok(EmbeddingMatrix { dim, ids, data, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[ArticleId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vector(&self, id: ArticleId) -> Option<&[f32]> {
        self.rows.get(&id).map(|&row| self.row(row))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Scales every row to unit length. Rows already unit to within 1e-6 are untouched.
    pub fn normalize(&mut self) -> Result<()> {
        let dim = self.dim;
        for (row, values) in self.data.chunks_exact_mut(dim).enumerate() {
            let norm = values
                .iter()
                .map(|v| f64::from(*v) * f64::from(*v))
                .sum::<f64>()
                .sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm {
                    id: Some(self.ids[row]),
                });
            }
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                for v in values.iter_mut() {
                    *v = (f64::from(*v) / norm) as f32;
                }
            }
        }
        Ok(())
    }
}

/// The ids file that accompanies an embedding file.
pub fn ids_path_for(path: &Path) -> PathBuf {
    path.with_extension("ids")
}

pub fn encode_emb1(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + matrix.data.len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&(matrix.len() as u32).to_le_bytes());
    out.extend_from_slice(&(matrix.dim as u32).to_le_bytes());
    for v in &matrix.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an EMB1 payload into `(dim, row-major values)`.
pub fn decode_emb1(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::BadMagic {
            expected: "EMB1",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len() as u64,
        });
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::DimMismatch {
            expected: 1,
            found: 0,
        });
    }
    let expected = 12 + (count as u64) * (dim as u64) * 4;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[12..expected as usize]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((count, dim, data))
}

pub fn parse_ids(text: &str, name: &Path) -> Result<Vec<ArticleId>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map(ArticleId).map_err(|e| Error::Malformed {
                path: name.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `path` (EMB1) and its sibling ids file.
pub fn write_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    fs::write(path, encode_emb1(matrix)).map_err(|e| Error::io(path, e))?;
    let ids_path = ids_path_for(path);
    let mut ids = String::with_capacity(matrix.len() * 8);
    for id in &matrix.ids {
        ids.push_str(&id.0.to_string());
        ids.push('\n');
    }
    fs::write(&ids_path, ids).map_err(|e| Error::io(&ids_path, e))
}

/// Reads an EMB1 file and its ids without normalizing.
pub fn read_embeddings_raw(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (count, dim, data) = decode_emb1(&bytes)?;
    if let Some(expected) = expected_dim {
        if expected != dim {
            return Err(Error::DimMismatch { expected, found: dim });
        }
    }
    let ids_path = ids_path_for(path);
    let text = fs::read_to_string(&ids_path).map_err(|e| Error::io(&ids_path, e))?;
    let ids = parse_ids(&text, &ids_path)?;
    if ids.len() != count {
        return Err(Error::IdCountMismatch {
            rows: count,
            ids: ids.len(),
        });
    }
    EmbeddingMatrix::new(dim, ids, data)
}

/// Reads an EMB1 file and normalizes rows to unit length.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    load_embeddings_with_dim(path, None)
}

pub fn load_embeddings_with_dim(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let mut matrix = read_embeddings_raw(path, expected_dim)?;
    matrix.normalize()?;
    Ok(matrix)
}

/// Cosine similarity, accumulated in `f64`.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0f64, 0f64, 0f64);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (f64::from(*a), f64::from(*b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm { id: None });
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0))
}

fn unit_dot(u: &[f32], v: &[f32]) -> f32 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
    (dot as f32).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub a: ArticleId,
    pub b: ArticleId,
    pub score: f32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub candidates: u64,
    pub scored: u64,
    pub edges: u64,
    pub skipped_pairs: u64,
    pub missing_articles: Vec<ArticleId>,
}

#[derive(Debug, Clone)]
pub struct Scored {
    pub edges: Vec<SimilarityEdge>,
    pub report: ScoreReport,
}

const SCORE_CHUNK: usize = 8192;

/// Keeps the candidate pairs whose cosine is strictly above `threshold`.
///
/// Rows are unit length, so a score is a dot product accumulated in `f64` and
/// rounded to `f32`; the comparison happens at `f32` precision. Pairs touching
/// an article without an embedding are skipped and reported.
pub fn score_candidates(pairs: &[CandidatePair], embeddings: &EmbeddingMatrix, threshold: f32) -> Scored {
    let parts: Vec<(Vec<SimilarityEdge>, u64, BTreeSet<ArticleId>)> = pairs
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let mut edges = Vec::new();
            let mut skipped = 0u64;
            let mut missing = BTreeSet::new();
            for pair in chunk {
                let (u, v) = (embeddings.vector(pair.a), embeddings.vector(pair.b));
                let (Some(u), Some(v)) = (u, v) else {
                    skipped += 1;
                    if u.is_none() {
                        missing.insert(pair.a);
                    }
                    if v.is_none() {
                        missing.insert(pair.b);
                    }
                    continue;
                };
                let score = unit_dot(u, v);
                if score > threshold {
                    edges.push(SimilarityEdge {
                        a: pair.a,
                        b: pair.b,
                        score,
                    });
                }
            }
            (edges, skipped, missing)
        })
        .collect();

    let mut edges = Vec::new();
    let mut skipped_pairs = 0;
    let mut missing = BTreeSet::new();
    for (part, skipped, miss) in parts {
        edges.extend(part);
        skipped_pairs += skipped;
        missing.extend(miss);
    }
    if !edges.windows(2).all(|w| (w[0].a, w[0].b) <= (w[1].a, w[1].b)) {
        edges.par_sort_unstable_by_key(|e| (e.a, e.b));
    }
    let report = ScoreReport {
        candidates: pairs.len() as u64,
        scored: pairs.len() as u64 - skipped_pairs,
        edges: edges.len() as u64,
        skipped_pairs,
        missing_articles: missing.into_iter().collect(),
    };
    Scored { edges, report }
}

pub fn encode_edges(edges: &[SimilarityEdge]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + edges.len() * 20);
    out.extend_from_slice(EDGE_MAGIC);
    for e in edges {
        out.extend_from_slice(&e.a.0.to_le_bytes());
        out.extend_from_slice(&e.b.0.to_le_bytes());
        out.extend_from_slice(&e.score.to_le_bytes());
    }
    out
}

pub fn decode_edges(bytes: &[u8]) -> Result<Vec<SimilarityEdge>> {
    if bytes.len() < 4 || &bytes[..4] != EDGE_MAGIC {
        return Err(Error::BadMagic {
            expected: "EDG1",
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    let payload = &bytes[4..];
    if !payload.len().is_multiple_of(20) {
        return Err(Error::Truncated {
            expected: (payload.len() as u64 / 20 + 1) * 20,
            found: payload.len() as u64,
        });
    }
    Ok(payload
        .chunks_exact(20)
        .map(|r| SimilarityEdge {
            a: ArticleId(u64::from_le_bytes(r[..8].try_into().unwrap())),
            b: ArticleId(u64::from_le_bytes(r[8..16].try_into().unwrap())),
            score: f32::from_le_bytes(r[16..].try_into().unwrap()),
        })
        .collect())
}

pub fn write_edges_jsonl(mut w: impl Write, edges: &[SimilarityEdge]) -> std::io::Result<()> {
    for e in edges {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_edges(path: &Path, edges: &[SimilarityEdge]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_edges(edges))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_edges(path: &Path) -> Result<Vec<SimilarityEdge>> {
    decode_edges(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Word window used by the mock embedder.
pub const HEAD_WORDS: usize = 288;
pub const TAIL_WORDS: usize = 96;

fn words(title: &str, text: &str) -> Vec<String> {
    title
        .split(|c: char| !c.is_alphanumeric())
        .chain(text.split(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn feature_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    for part in parts {
        h.write(part.as_bytes());
        h.write_u8(0xff);
    }
    h.finish()
}

/// Deterministic stand-in for a trained encoder: signed feature hashing of the
/// unigrams and bigrams in the head/tail word window, L2-normalized.
pub fn mock_embed(title: &str, text: &str, dim: usize, seed: u64) -> Vec<f32> {
    assert!(dim >= 8, "mock_embed needs dim >= 8");
    let mut words = words(title, text);
    if words.len() > HEAD_WORDS + TAIL_WORDS {
        words.drain(HEAD_WORDS..words.len() - TAIL_WORDS);
    }
    let mut acc = vec![0f64; dim];
    let add = |acc: &mut [f64], h: u64| {
        let bucket = (h >> 1) as usize % acc.len();
        acc[bucket] += if h & 1 == 0 { 1.0 } else { -1.0 };
    };
    for (i, w) in words.iter().enumerate() {
        add(&mut acc, feature_hash(seed, &[w]));
        if let Some(next) = words.get(i + 1) {
            add(&mut acc, feature_hash(seed, &[w, next]));
        }
    }
    let mut norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        add(&mut acc, feature_hash(seed, &[]));
        norm = 1.0;
    }
    acc.into_iter().map(|v| (v / norm) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        let dim = rows[0].len();
        EmbeddingMatrix::new(
            dim,
            (0..rows.len() as u64).map(ArticleId).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_analytic_values() {
        assert!((cosine(&[0.6, 0.8], &[0.6, 0.8]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        let s = std::f32::consts::FRAC_1_SQRT_2;
        assert!((cosine(&[1.0, 0.0], &[s, s]).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm { .. })
        ));
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn emb1_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        let m = matrix(&[
            &[1.5, -2.0, 0.25, 3.0],
            &[0.1, 0.2, 0.3, 0.4],
            &[-7.0, 0.0, 1e-30, 2.0],
        ]);
        write_embeddings(&path, &m).unwrap();
        let back = read_embeddings_raw(&path, Some(4)).unwrap();
        let bits = |m: &EmbeddingMatrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        assert_eq!(back.ids(), m.ids());

        let loaded = load_embeddings(&path).unwrap();
        for row in 0..3 {
            let n: f64 = loaded.row(row).iter().map(|v| f64::from(*v).powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn emb1_error_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.emb");
        let m = matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        write_embeddings(&path, &m).unwrap();
        assert!(matches!(
            read_embeddings_raw(&path, Some(3)),
            Err(Error::DimMismatch {
                expected: 3,
                found: 2
            })
        ));

        let mut bytes = encode_emb1(&m);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_emb1(&bytes), Err(Error::BadMagic { .. })));

        let bytes = encode_emb1(&m);
        assert!(matches!(
            decode_emb1(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));

        fs::write(ids_path_for(&path), "0\n").unwrap();
        assert!(matches!(
            read_embeddings_raw(&path, None),
            Err(Error::IdCountMismatch { rows: 2, ids: 1 })
        ));
    }

    #[test]
    fn threshold_is_strict_at_f32_precision() {
        let at = (1.0f32 - 0.9f32 * 0.9f32).sqrt();
        let above = 0.9f32 + 1e-6;
        let m = matrix(&[&[1.0, 0.0], &[0.9, at], &[above, (1.0 - above * above).sqrt()]]);
        let pairs = [
            CandidatePair::new(ArticleId(0), ArticleId(1)),
            CandidatePair::new(ArticleId(0), ArticleId(2)),
        ];
        let out = score_candidates(&pairs, &m, 0.9);
        assert_eq!(out.edges.len(), 1);
        assert_eq!((out.edges[0].a, out.edges[0].b), (ArticleId(0), ArticleId(2)));
    }

    #[test]
    fn identical_vectors_score_one() {
        let m = matrix(&[&[0.6, 0.8], &[0.6, 0.8]]);
        let out = score_candidates(&[CandidatePair::new(ArticleId(0), ArticleId(1))], &m, 0.9);
        assert_eq!(out.edges[0].score, 1.0);
    }

    #[test]
    fn missing_embeddings_are_reported() {
        let m = matrix(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let pairs = [
            CandidatePair::new(ArticleId(0), ArticleId(1)),
            CandidatePair::new(ArticleId(1), ArticleId(7)),
        ];
        let out = score_candidates(&pairs, &m, 0.9);
        assert_eq!(out.edges.len(), 1);
        assert_eq!(out.report.skipped_pairs, 1);
        assert_eq!(out.report.missing_articles, vec![ArticleId(7)]);
    }

    #[test]
    fn edge_binary_round_trip() {
        let edges = vec![
            SimilarityEdge {
                a: ArticleId(1),
                b: ArticleId(9),
                score: 0.95,
            },
            SimilarityEdge {
                a: ArticleId(2),
                b: ArticleId(3),
                score: 1.0,
            },
        ];
        let bytes = encode_edges(&edges);
        assert_eq!(bytes.len(), 4 + 40);
        assert_eq!(decode_edges(&bytes).unwrap(), edges);
        assert!(decode_edges(b"EDG2").is_err());
    }

    #[test]
    fn mock_embed_is_deterministic_and_unit() {
        let a = mock_embed("Storm hits coast", "Heavy rain and wind today.", 64, 7);
        let b = mock_embed("Storm hits coast", "Heavy rain and wind today.", 64, 7);
        assert_eq!(a, b);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let n: f64 = a.iter().map(|v| f64::from(*v).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert_ne!(
            a,
            mock_embed("Storm hits coast", "Heavy rain and wind today.", 64, 8)
        );
        let empty = mock_embed("", "", 16, 1);
        assert!((empty.iter().map(|v| v * v).sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mock_embed_window_ignores_middle() {
        let mut body: Vec<String> = (0..1000).map(|i| format!("w{i}")).collect();
        let a = mock_embed("", &body.join(" "), 128, 1);
        for w in body.iter_mut().take(700).skip(400) {
            *w = "changed".into();
        }
        let b = mock_embed("", &body.join(" "), 128, 1);
        assert_eq!(a, b);
    }
}
