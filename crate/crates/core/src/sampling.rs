//! Synthetic positive-pair distributions on the sphere and Monte Carlo
//! estimators of expected and asymptotic losses.
//!
//! Pairs follow a two-step process: draw an anchor (the "clean" datapoint),
//! then produce both views by independently applying the same perturbation
//! law. Both views therefore share one marginal.
//!
//! Estimators never share a generator across work items. Each batch (or
//! anchor block) gets its own ChaCha stream derived from a base seed and its
//! index, so results are bit-identical regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EmbeddingBatch;
use crate::losses::{evaluate_raw, normalizing_constant, LossKind, LossSpec, Variant};

pub const MIN_BATCHES: usize = 30;
pub const MIN_ASYMPTOTIC_SAMPLES: usize = 1000;

/// Generator for work item `index` under `base_seed`.
pub fn derived_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            return g / norm;
        }
    }
}

fn perturb<R: Rng + ?Sized>(anchor: &DVector<f64>, scale: f64, rng: &mut R) -> DVector<f64> {
    loop {
        let noise = DVector::from_fn(anchor.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let moved = anchor + noise * scale;
        let norm = moved.norm();
        if norm > 1e-300 {
            return moved / norm;
        }
    }
}

/// A source of positive pairs `(u, v)` on `S^{d-1}`.
pub trait PairDistribution: Sync {
    fn dim(&self) -> usize;
    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairModel {
    /// `v = u`, `u` uniform.
    Perfect,
    /// Uniform anchor `z`; each view is `normalize(z + sigma * xi)`.
    Jitter { sigma: f64 },
    /// Anchor is one of `k` fixed centres; each view is
    /// `normalize(c + xi / concentration)`.
    Clustered { k: usize, concentration: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSphereDistribution {
    d: usize,
    pair_model: PairModel,
    seed: u64,
}

/// Synthetic distribution of positive pairs on the sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSphereDistribution", into = "RawSphereDistribution")]
pub struct SphereDistribution {
    d: usize,
    pair_model: PairModel,
    seed: u64,
    centers: Option<DMatrix<f64>>,
}

impl TryFrom<RawSphereDistribution> for SphereDistribution {
    type Error = Error;
    fn try_from(raw: RawSphereDistribution) -> Result<Self> {
        SphereDistribution::new(raw.d, raw.pair_model, raw.seed)
    }
}

impl From<SphereDistribution> for RawSphereDistribution {
    fn from(dist: SphereDistribution) -> Self {
        RawSphereDistribution {
            d: dist.d,
            pair_model: dist.pair_model,
            seed: dist.seed,
        }
    }
}

impl SphereDistribution {
    pub fn new(d: usize, pair_model: PairModel, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!(
                "sphere distribution needs d >= 2, got {d}"
            )));
        }
        let centers = match pair_model {
            PairModel::Perfect => None,
            PairModel::Jitter { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "jitter sigma must be non-negative, got {sigma}"
                    )));
                }
                None
            }
            PairModel::Clustered { k, concentration } => {
                if k == 0 || !(concentration > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "clustered model needs k >= 1 and concentration > 0, got k={k}, concentration={concentration}"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut c = DMatrix::zeros(k, d);
                for i in 0..k {
                    c.set_row(i, &random_unit(d, &mut rng).transpose());
                }
                Some(c)
            }
        };
        Ok(Self {
            d,
            pair_model,
            seed,
            centers,
        })
    }

    pub fn perfect(d: usize) -> Result<Self> {
        Self::new(d, PairModel::Perfect, 0)
    }

    pub fn jitter(d: usize, sigma: f64) -> Result<Self> {
        Self::new(d, PairModel::Jitter { sigma }, 0)
    }

    pub fn pair_model(&self) -> PairModel {
        self.pair_model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn centers(&self) -> Option<&DMatrix<f64>> {
        self.centers.as_ref()
    }
}

impl PairDistribution for SphereDistribution {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        match self.pair_model {
            PairModel::Perfect | PairModel::Jitter { sigma: 0.0 } => {
                let u = random_unit(self.d, rng);
                (u.clone(), u)
            }
            PairModel::Jitter { sigma } => {
                let z = random_unit(self.d, rng);
                (perturb(&z, sigma, rng), perturb(&z, sigma, rng))
            }
            PairModel::Clustered { k, concentration } => {
                let centers = self.centers.as_ref().expect("built in new");
                let c = centers.row(rng.random_range(0..k)).transpose();
                let scale = 1.0 / concentration;
                (perturb(&c, scale, rng), perturb(&c, scale, rng))
            }
        }
    }
}

/// Every pair is `(p, p)` for one fixed unit vector `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    point: DVector<f64>,
}

impl PointMass {
    pub fn new(point: DVector<f64>) -> Result<Self> {
        let norm = point.norm();
        if !(norm > 1e-300) {
            return Err(Error::ZeroRow { row: 0 });
        }
        Ok(Self {
            point: point / norm,
        })
    }
}

impl PairDistribution for PointMass {
    fn dim(&self) -> usize {
        self.point.len()
    }

    fn sample_pair<R: Rng + ?Sized>(&self, _rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        (self.point.clone(), self.point.clone())
    }
}

/// `n` i.i.d. uniform points on `S^{d-1}` (normalised isotropic Gaussians).
pub fn sample_uniform_sphere<R: Rng + ?Sized>(
    d: usize,
    n: usize,
    rng: &mut R,
) -> Result<EmbeddingBatch> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and n >= 1, got d={d}, n={n}"
        )));
    }
    let mut points = DMatrix::zeros(n, d);
    for i in 0..n {
        points.set_row(i, &random_unit(d, rng).transpose());
    }
    Ok(EmbeddingBatch::from_matrix_unchecked(points))
}

/// `M` positive pairs, stacked as `(U, V)`.
pub fn sample_positive_batch<D: PairDistribution + ?Sized, R: Rng + ?Sized>(
    dist: &D,
    m: usize,
    rng: &mut R,
) -> Result<(EmbeddingBatch, EmbeddingBatch)> {
    if m < 2 {
        return Err(Error::InvalidArity(format!("need M >= 2, got {m}")));
    }
    let d = dist.dim();
    let mut u = DMatrix::zeros(m, d);
    let mut v = DMatrix::zeros(m, d);
    for i in 0..m {
        let (a, b) = dist.sample_pair(rng);
        u.set_row(i, &a.transpose());
        v.set_row(i, &b.transpose());
    }
    Ok((
        EmbeddingBatch::from_matrix_unchecked(u),
        EmbeddingBatch::from_matrix_unchecked(v),
    ))
}

/// Monte Carlo mean of the mini-batch loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectationEstimate {
    pub mean: f64,
    /// Sample standard deviation over batches divided by `sqrt(n_batches)`.
    pub stderr: f64,
    pub n_batches: usize,
    #[serde(rename = "M")]
    pub m: usize,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of the loss over `n_batches` independent batches
/// of `M` positive pairs.
pub fn estimate_expected_loss<D: PairDistribution, R: Rng + ?Sized>(
    spec: &LossSpec,
    dist: &D,
    m: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<ExpectationEstimate> {
    spec.validate()?;
    if n_batches < MIN_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "n_batches must be at least {MIN_BATCHES}, got {n_batches}"
        )));
    }
    if m < 2 {
        return Err(Error::InvalidArity(format!("need M >= 2, got {m}")));
    }
    let base_seed: u64 = rng.random();
    let values: Vec<f64> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut brng = derived_rng(base_seed, b as u64);
            let (u, v) = sample_positive_batch(dist, m, &mut brng)?;
            evaluate_raw(spec, u.points(), v.points(), false)
                .map(|e| e.value)
                .map_err(|source| Error::Batch {
                    index: b,
                    source: Box::new(source),
                })
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(&values);
    Ok(ExpectationEstimate {
        mean,
        stderr,
        n_batches,
        m,
    })
}

/// Monte Carlo estimate of the batch-free limit of a loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticEstimate {
    pub value: f64,
    /// Standard error over anchors (ignores the inner-pool error).
    pub stderr: f64,
    pub n_samples: usize,
    /// Size of the independent pool used for the inner expectation.
    pub inner_pool: usize,
}

/// Estimates the asymptotic loss.
///
/// Softmax-style variants:
/// `E[-v^T u / tau] + E_u[ log E_{u'}[ exp(u^T u' / tau) ] ]`, with the inner
/// expectation taken over an independent pool of `n_samples` negatives
/// (nested estimator, biased low by `O(1/n_samples)`).
///
/// KCL: `E[-K_A(u, v)] + gamma E[K_U(u, u')]`, which is also the expected
/// mini-batch loss at every batch size.
pub fn estimate_asymptotic_loss<D: PairDistribution, R: Rng + ?Sized>(
    spec: &LossSpec,
    dist: &D,
    n_samples: usize,
    rng: &mut R,
) -> Result<AsymptoticEstimate> {
    spec.validate()?;
    if n_samples < MIN_ASYMPTOTIC_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "n_samples must be at least {MIN_ASYMPTOTIC_SAMPLES}, got {n_samples}"
        )));
    }
    let d = dist.dim();
    let base_seed: u64 = rng.random();
    let mut anchor_rng = derived_rng(base_seed, 0);
    let mut pool_rng = derived_rng(base_seed, 1);
    let mut anchors_u = DMatrix::zeros(n_samples, d);
    let mut anchors_v = DMatrix::zeros(n_samples, d);
    let mut pool = DMatrix::zeros(n_samples, d);
    for k in 0..n_samples {
        let (a, b) = dist.sample_pair(&mut anchor_rng);
        anchors_u.set_row(k, &a.transpose());
        anchors_v.set_row(k, &b.transpose());
        let (c, _) = dist.sample_pair(&mut pool_rng);
        pool.set_row(k, &c.transpose());
    }

    let terms: Vec<f64> = match &spec.kind {
        LossKind::Infonce { tau }
        | LossKind::Simclr { tau }
        | LossKind::Dcl { tau }
        | LossKind::Dhel { tau } => {
            let tau = *tau;
            let sims = &anchors_u * pool.transpose();
            (0..n_samples)
                .into_par_iter()
                .map(|k| {
                    let row = sims.row(k);
                    let zmax = row.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s / tau));
                    let sum: f64 = row.iter().map(|&s| (s / tau - zmax).exp()).sum();
                    let log_mean = zmax + (sum / n_samples as f64).ln();
                    let positive = anchors_u.row(k).dot(&anchors_v.row(k));
                    -positive / tau + log_mean
                })
                .collect()
        }
        LossKind::Kcl {
            kernel_a,
            kernel_u,
            gamma,
        } => (0..n_samples)
            .into_par_iter()
            .map(|k| -> Result<f64> {
                let a = kernel_a
                    .value_unchecked((anchors_u.row(k) - anchors_v.row(k)).norm_squared())?;
                let mut energy = 0.0;
                for l in 0..n_samples {
                    energy += kernel_u
                        .value_unchecked((anchors_u.row(k) - pool.row(l)).norm_squared())?;
                }
                Ok(-a + gamma * energy / n_samples as f64)
            })
            .collect::<Result<_>>()?,
        LossKind::Generic { .. } => {
            return Err(Error::InvalidLoss(
                "asymptotic form is only defined for named variants and kcl".into(),
            ))
        }
    };
    let (value, stderr) = mean_and_stderr(&terms);
    Ok(AsymptoticEstimate {
        value,
        stderr,
        n_samples,
        inner_pool: n_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    #[serde(rename = "M")]
    pub m: usize,
    pub mean: f64,
    pub normalized_mean: f64,
    pub stderr: f64,
    /// `|normalized_mean - asymptotic|`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub variant: Variant,
    pub asymptotic: AsymptoticEstimate,
    pub points: Vec<ConvergencePoint>,
}

/// Expected loss minus its normalising constant, for each batch size,
/// reported against the asymptotic estimate.
pub fn convergence_study<D: PairDistribution, R: Rng + ?Sized>(
    spec: &LossSpec,
    dist: &D,
    m_list: &[usize],
    n_batches: usize,
    asymptotic_samples: usize,
    rng: &mut R,
) -> Result<ConvergenceStudy> {
    if m_list.is_empty() || m_list.windows(2).any(|w| w[0] >= w[1]) || m_list[0] < 2 {
        return Err(Error::InvalidArgument(format!(
            "M list must be strictly increasing with every M >= 2, got {m_list:?}"
        )));
    }
    let variant = spec.variant();
    let asymptotic = estimate_asymptotic_loss(spec, dist, asymptotic_samples, rng)?;
    let mut points = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let est = estimate_expected_loss(spec, dist, m, n_batches, rng)?;
        let normalized_mean = est.mean - normalizing_constant(variant, m)?;
        points.push(ConvergencePoint {
            m,
            mean: est.mean,
            normalized_mean,
            stderr: est.stderr,
            gap: (normalized_mean - asymptotic.value).abs(),
        });
    }
    Ok(ConvergenceStudy {
        variant,
        asymptotic,
        points,
    })
}
