//! Factor-overlap matrices of normalized left singular vectors, and
//! random null models for certifying non-random structure.
//!
//! Left singular vectors are row-normalized per stock over the factor
//! index, then overlaps are C = A^T B for the price/price, spread/spread
//! and price/spread combinations. Null models redraw the response
//! matrices with matched global mean and standard deviation and push them
//! through the identical pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SvdResult};
use crate::matrix::Matrix;
use crate::response::ResponseMatrix;

/// Left singular vectors z-scored per stock row over the N factors.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedFactorMatrix(Matrix);

impl NormalizedFactorMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }
}

/// Row-wise z-score over the factor index with the population standard
/// deviation.
pub fn normalize_factors(u: &Matrix) -> Result<NormalizedFactorMatrix> {
    if u.rows() != u.cols() {
        return Err(Error::Incompatible(format!(
            "factor matrix must be square, got {}x{}",
            u.rows(),
            u.cols()
        )));
    }
    let n = u.cols() as f64;
    let mut out = u.clone();
    for i in 0..u.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        let std = (row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        if std == 0.0 || !std.is_finite() {
            return Err(Error::Degenerate(format!(
                "factor row {i} is constant and cannot be normalized"
            )));
        }
        for x in row.iter_mut() {
            *x = (*x - mean) / std;
        }
    }
    Ok(NormalizedFactorMatrix(out))
}

/// Which pair of response types an overlap relates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapKind {
    Mm,
    Ss,
    Ms,
}

impl OverlapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OverlapKind::Mm => "mm",
            OverlapKind::Ss => "ss",
            OverlapKind::Ms => "ms",
        }
    }
}

/// Overlap of two normalized factor sets: C = A^T B.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub c: Matrix,
    pub kind: OverlapKind,
}

pub fn overlap_matrix(
    a: &NormalizedFactorMatrix,
    b: &NormalizedFactorMatrix,
    kind: OverlapKind,
) -> Result<OverlapMatrix> {
    if a.n() != b.n() {
        return Err(Error::Incompatible(format!(
            "factor matrices disagree in size: {} vs {}",
            a.n(),
            b.n()
        )));
    }
    let c = a.matrix().transpose().matmul(b.matrix())?;
    Ok(OverlapMatrix { c, kind })
}

/// Entry distribution of the null model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullDistribution {
    /// i.i.d. Gaussian with the empirical matrix's global mean and std.
    #[default]
    Gaussian,
    /// i.i.d. uniform with the same mean and std.
    Uniform,
    /// Random permutation of the empirical entries (moments exact).
    PermuteEntries,
}

impl NullDistribution {
    pub fn as_str(self) -> &'static str {
        match self {
            NullDistribution::Gaussian => "gaussian",
            NullDistribution::Uniform => "uniform",
            NullDistribution::PermuteEntries => "permutation",
        }
    }
}

/// Surrogate response matrix with the empirical matrix's global moments,
/// seeded and reproducible. Missing entries must have been imputed; the
/// zero-imputed dense view sets the matched moments.
pub fn random_response(
    r: &ResponseMatrix,
    dist: NullDistribution,
    seed: u64,
) -> ResponseMatrix {
    let (dense, _) = r.to_dense_imputed();
    let n = dense.rows();
    let count = (n * n) as f64;
    let mean = dense.iter().sum::<f64>() / count;
    let std = (dense.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count).sqrt();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let entries: Vec<f64> = match dist {
        NullDistribution::Gaussian => {
            let normal = Normal::new(mean, std.max(f64::MIN_POSITIVE)).unwrap();
            (0..n * n).map(|_| normal.sample(&mut rng)).collect()
        }
        NullDistribution::Uniform => {
            let half_width = std * 3.0f64.sqrt();
            (0..n * n)
                .map(|_| mean + (2.0 * rng.random::<f64>() - 1.0) * half_width)
                .collect()
        }
        NullDistribution::PermuteEntries => {
            let mut entries: Vec<f64> = dense.iter().collect();
            // Fisher-Yates with the seeded stream.
            for i in (1..entries.len()).rev() {
                let j = rng.random_range(0..=i);
                entries.swap(i, j);
            }
            entries
        }
    };

    let mut out = ResponseMatrix::new(r.x_kind, r.y_kind, r.subset, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, entries[i * n + j], 1);
        }
    }
    out
}

/// SVD of an overlap matrix; the factors of factors.
pub fn decompose_overlap(c: &OverlapMatrix) -> Result<SvdResult> {
    linalg::svd(&c.c)
}

/// The three overlaps produced by one pass of the factor pipeline.
#[derive(Debug, Clone)]
pub struct OverlapSet {
    pub c_mm: OverlapMatrix,
    pub c_ss: OverlapMatrix,
    pub c_ms: OverlapMatrix,
}

/// Empirical branch: svd each response, normalize the left factors, and
/// form the three overlaps.
pub fn overlap_pipeline(r_m: &ResponseMatrix, r_s: &ResponseMatrix) -> Result<OverlapSet> {
    let (dense_m, _) = r_m.to_dense_imputed();
    let (dense_s, _) = r_s.to_dense_imputed();
    let u_m = normalize_factors(&linalg::svd(&dense_m)?.u)?;
    let u_s = normalize_factors(&linalg::svd(&dense_s)?.u)?;
    Ok(OverlapSet {
        c_mm: overlap_matrix(&u_m, &u_m, OverlapKind::Mm)?,
        c_ss: overlap_matrix(&u_s, &u_s, OverlapKind::Ss)?,
        c_ms: overlap_matrix(&u_m, &u_s, OverlapKind::Ms)?,
    })
}

/// Null branch: redraw both responses with matched moments, then run the
/// identical pipeline. Sub-seeds derive from the master seed by counter.
pub fn null_overlap_pipeline(
    r_m: &ResponseMatrix,
    r_s: &ResponseMatrix,
    dist: NullDistribution,
    seed: u64,
) -> Result<OverlapSet> {
    let null_m = random_response(r_m, dist, derive_seed(seed, 0));
    let null_s = random_response(r_s, dist, derive_seed(seed, 1));
    overlap_pipeline(&null_m, &null_s)
}

/// Counter-based sub-seed derivation (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
