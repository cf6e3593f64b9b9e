//! Representation-quality metrics: alignment, uniformity, the 1-Wasserstein
//! distance between inner-product distributions, rank and effective rank.

use nalgebra::SVD;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_same_shape, gram, pairwise_sq_dist, EmbeddingBatch};

/// Singular values at or below this are treated as zero by [`metric_rank`].
pub const RANK_EPS: f64 = 1e-5;
/// Shift added to normalised singular values in [`metric_effective_rank`].
pub const EFFECTIVE_RANK_EPS: f64 = 1e-7;
pub const DEFAULT_UNIFORMITY_T: f64 = 2.0;
pub const DEFAULT_N_REF: usize = 100_000;
pub const MIN_N_REF: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsParams {
    pub t: f64,
    pub n_ref: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub alignment: f64,
    pub uniformity: f64,
    pub wasserstein: f64,
    pub rank: usize,
    pub effective_rank: f64,
    pub params: MetricsParams,
}

/// Mean squared distance between positive pairs.
pub fn metric_alignment(u: &EmbeddingBatch, v: &EmbeddingBatch) -> Result<f64> {
    check_same_shape(u, v)?;
    let m = u.len();
    let total: f64 = (0..m)
        .map(|i| (u.points().row(i) - v.points().row(i)).norm_squared())
        .sum();
    Ok(total / m as f64)
}

/// `log( 1/(M(M-1)) sum_{i != j} exp(-t |u_i - u_j|^2) )`, evaluated with a
/// log-sum-exp reduction.
pub fn metric_uniformity(u: &EmbeddingBatch, t: f64) -> Result<f64> {
    let m = u.len();
    if m < 2 {
        return Err(Error::InvalidArity(format!(
            "uniformity needs M >= 2, got {m}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "t must be positive, got {t}"
        )));
    }
    let sq = pairwise_sq_dist(u, u)?;
    let mut zmax = f64::NEG_INFINITY;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                zmax = zmax.max(-t * sq[(i, j)]);
            }
        }
    }
    let mut sum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                sum += (-t * sq[(i, j)] - zmax).exp();
            }
        }
    }
    Ok(zmax + (sum / (m * (m - 1)) as f64).ln())
}

/// 1-Wasserstein distance between two empirical distributions on the line:
/// the integral of `|F_a - F_b|` over the merged support.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);

    let (mut ia, mut ib) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while ia < a.len() || ib < b.len() {
        let next = match (a.get(ia), b.get(ib)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (ia as f64 / na - ib as f64 / nb).abs() * (next - prev);
        while ia < a.len() && a[ia] == next {
            ia += 1;
        }
        while ib < b.len() && b[ib] == next {
            ib += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Draws inner products `<u, u'>` for independent uniform points on
/// `S^{d-1}`: `2B - 1` with `B ~ Beta((d-1)/2, (d-1)/2)`.
pub fn sample_uniform_similarity<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "inner-product reference needs d >= 2, got {d}"
        )));
    }
    let shape = (d as f64 - 1.0) / 2.0;
    let beta = Beta::new(shape, shape).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..n).map(|_| 2.0 * beta.sample(rng) - 1.0).collect())
}

/// Off-diagonal inner products `<u_i, u_j>`, `i < j`.
pub fn pairwise_similarities(u: &EmbeddingBatch) -> Result<Vec<f64>> {
    let g = gram(u, u)?;
    let m = u.len();
    let mut out = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            out.push(g[(i, j)]);
        }
    }
    Ok(out)
}

/// `W_1` between the inner products of `u` and those of the uniform sphere
/// measure, the latter represented by `n_ref` reference draws.
pub fn metric_wasserstein_similarity<R: Rng + ?Sized>(
    u: &EmbeddingBatch,
    n_ref: usize,
    rng: &mut R,
) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::InvalidArity(format!(
            "similarity distribution needs M >= 2, got {}",
            u.len()
        )));
    }
    if n_ref < MIN_N_REF {
        return Err(Error::InvalidArgument(format!(
            "n_ref must be at least {MIN_N_REF}, got {n_ref}"
        )));
    }
    let sims = pairwise_similarities(u)?;
    let reference = sample_uniform_similarity(u.dim(), n_ref, rng)?;
    wasserstein_1d(&sims, &reference)
}

fn singular_values(u: &EmbeddingBatch) -> Vec<f64> {
    SVD::new(u.points().clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .collect()
}

/// Number of singular values above [`RANK_EPS`].
pub fn metric_rank(u: &EmbeddingBatch) -> usize {
    singular_values(u)
        .into_iter()
        .filter(|&s| s > RANK_EPS)
        .count()
}

/// Entropy of the normalised singular values, each shifted by
/// [`EFFECTIVE_RANK_EPS`].
pub fn metric_effective_rank(u: &EmbeddingBatch) -> f64 {
    let sv = singular_values(u);
    let total: f64 = sv.iter().map(|s| s.abs()).sum();
    sv.iter()
        .map(|s| {
            let p = s / total + EFFECTIVE_RANK_EPS;
            -p * p.ln()
        })
        .sum()
}

/// All metrics at once. The reference sample for the Wasserstein term is
/// drawn from a generator seeded with `params.seed`.
pub fn metrics_report(
    u: &EmbeddingBatch,
    v: &EmbeddingBatch,
    params: MetricsParams,
) -> Result<MetricsReport> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed);
    Ok(MetricsReport {
        alignment: metric_alignment(u, v)?,
        uniformity: metric_uniformity(u, params.t)?,
        wasserstein: metric_wasserstein_similarity(u, params.n_ref, &mut rng)?,
        rank: metric_rank(u),
        effective_rank: metric_effective_rank(u),
        params,
    })
}
