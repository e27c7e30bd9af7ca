//! Product quantization: hashed document embeddings, per-subspace k-means
//! codebooks, and nearest-centroid encoding.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DocIdError;
use crate::corpus::Document;
use crate::num::{s, Scalar};
use crate::text::{fnv1a64, mix_seed, tokenize};

/// Dense vectors keyed by doc_id, all sharing one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct EmbeddingTable<F: Scalar> {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<F>>,
}

/// Per-subspace centroid table. Quantizing a vector yields one token per
/// group; the scheme contributes exactly `n_groups * k_centers` vocabulary
/// tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PqCodebook<F: Scalar> {
    pub n_groups: usize,
    pub k_centers: usize,
    pub dim: usize,
    pub base_token_offset: usize,
    /// `[group][center][dim / n_groups]`
    pub centroids: Vec<Vec<Vec<F>>>,
}

impl<F: Scalar> PqCodebook<F> {
    pub fn sub_dim(&self) -> usize {
        self.dim / self.n_groups
    }
}

impl<F: Scalar> EmbeddingTable<F> {
    /// Drop zero vectors (empty documents). Codebooks are fitted on this
    /// subset; the full table is still encodable afterwards.
    pub fn nonzero_subset(&self) -> EmbeddingTable<F> {
        EmbeddingTable {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .filter(|(_, v)| v.iter().any(|x| *x != F::zero()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

/// Codebook plus the per-group SSE trace of the Lloyd iterations that
/// produced it (index 0 is the SSE under the k-means++ seeding).
#[derive(Debug, Clone)]
pub struct PqFit<F: Scalar> {
    pub codebook: PqCodebook<F>,
    pub sse_history: Vec<Vec<f64>>,
}

/// Seeded hashed bag-of-words embedding: each term hashes to a signed
/// coordinate, accumulated with tf weighting, then L2-normalized. The zero
/// vector appears only for empty bodies.
pub fn embed_document<F: Scalar>(doc: &Document, dim: usize, seed: u64) -> Vec<F> {
    assert!(dim >= 2, "embedding dim must be >= 2");
    let mut v = vec![F::zero(); dim];
    for term in tokenize(&doc.body) {
        let h = fnv1a64(&[&seed.to_le_bytes()[..], term.as_bytes()].concat());
        let bucket = ((h >> 1) % dim as u64) as usize;
        let sign = if h & 1 == 0 { F::one() } else { -F::one() };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| *x * *x).sum::<F>().sqrt();
    if norm > F::zero() {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub fn build_embedding_table<F: Scalar>(
    corpus: &[Document],
    dim: usize,
    seed: u64,
) -> EmbeddingTable<F> {
    let vectors = corpus
        .iter()
        .map(|d| (d.doc_id.clone(), embed_document(d, dim, seed)))
        .collect();
    EmbeddingTable { dim, vectors }
}

fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding over one subspace.
/// Returns (centroids, per-iteration SSE).
fn kmeans<F: Scalar>(
    points: &[Vec<F>],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> (Vec<Vec<F>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    debug_assert!(n >= k && k >= 1);

    // k-means++: first center uniform, then proportional to squared distance.
    let mut centers: Vec<Vec<F>> = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0]).as_f64()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining mass at existing centers; any point works.
            rng.random_range(0..n)
        } else {
            let mut u = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centers.last().unwrap()).as_f64());
        }
    }

    let dim = points[0].len();
    let mut sse_history = Vec::new();
    let mut assignment = vec![0usize; n];
    for _ in 0..max_iters {
        // Assignment step (ties to the lowest center index).
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = sq_dist(p, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
            sse += best_d.as_f64();
        }
        sse_history.push(sse);

        // Update step; empty clusters keep their previous centroid.
        let mut sums = vec![vec![F::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (acc, x) in sums[assignment[i]].iter_mut().zip(p) {
                *acc += *x;
            }
        }
        let mut max_shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = F::one() / s::<F>(counts[c] as f64);
            let new: Vec<F> = sums[c].iter().map(|x| *x * inv).collect();
            max_shift = max_shift.max(sq_dist(&new, &centers[c]).as_f64().sqrt());
            centers[c] = new;
        }
        if max_shift < tol {
            break;
        }
    }
    (centers, sse_history)
}

/// Fit one k-means codebook per subspace, deterministic for a fixed seed.
/// Callers fitting over a corpus with empty documents should pass
/// [`EmbeddingTable::nonzero_subset`].
pub fn fit_pq_codebook<F: Scalar>(
    table: &EmbeddingTable<F>,
    n_groups: usize,
    k_centers: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<PqFit<F>, DocIdError> {
    if n_groups == 0 || table.dim % n_groups != 0 {
        return Err(DocIdError::NonDivisibleDim { dim: table.dim, n_groups });
    }
    let usable: Vec<&Vec<F>> = table.vectors.values().collect();
    if usable.len() < k_centers {
        return Err(DocIdError::TooFewPoints { points: usable.len(), k_centers });
    }
    let sub = table.dim / n_groups;
    let mut centroids = Vec::with_capacity(n_groups);
    let mut sse_history = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let points: Vec<Vec<F>> =
            usable.iter().map(|v| v[g * sub..(g + 1) * sub].to_vec()).collect();
        let (centers, sse) =
            kmeans(&points, k_centers, mix_seed(seed, &format!("group-{g}")), max_iters, tol);
        centroids.push(centers);
        sse_history.push(sse);
    }
    Ok(PqFit {
        codebook: PqCodebook { n_groups, k_centers, dim: table.dim, base_token_offset: 0, centroids },
        sse_history,
    })
}

/// Nearest-centroid code per subspace (ties to the lowest center index).
pub fn group_codes<F: Scalar>(
    vector: &[F],
    codebook: &PqCodebook<F>,
) -> Result<Vec<usize>, DocIdError> {
    if vector.len() != codebook.dim {
        return Err(DocIdError::DimMismatch { expected: codebook.dim, got: vector.len() });
    }
    let sub = codebook.sub_dim();
    let mut codes = Vec::with_capacity(codebook.n_groups);
    for g in 0..codebook.n_groups {
        let v = &vector[g * sub..(g + 1) * sub];
        let mut best = 0usize;
        let mut best_d = sq_dist(v, &codebook.centroids[g][0]);
        for (c, center) in codebook.centroids[g].iter().enumerate().skip(1) {
            let d = sq_dist(v, center);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        codes.push(best);
    }
    Ok(codes)
}

/// Token ids for a vector: entry for group `g` is
/// `base_token_offset + g * k_centers + nearest_center`.
pub fn encode_pq<F: Scalar>(
    vector: &[F],
    codebook: &PqCodebook<F>,
) -> Result<Vec<usize>, DocIdError> {
    Ok(group_codes(vector, codebook)?
        .into_iter()
        .enumerate()
        .map(|(g, c)| codebook.base_token_offset + g * codebook.k_centers + c)
        .collect())
}

/// Total squared reconstruction error of a code assignment, summed over groups.
pub fn quantization_error<F: Scalar>(
    vector: &[F],
    codes: &[usize],
    codebook: &PqCodebook<F>,
) -> F {
    let sub = codebook.sub_dim();
    (0..codebook.n_groups)
        .map(|g| sq_dist(&vector[g * sub..(g + 1) * sub], &codebook.centroids[g][codes[g]]))
        .sum()
}
