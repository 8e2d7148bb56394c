//! Dense SVD of real square matrices by one-sided Jacobi rotations.
//!
//! Columns of a working copy are rotated pairwise until mutually
//! orthogonal; their norms are the singular values. The sweep order is
//! fixed and nothing is randomized, so identical input bits give
//! identical output bits. A decomposition runs on one thread; distinct
//! matrices decompose concurrently without shared state.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative off-diagonal threshold for convergence.
const JACOBI_TOL: f64 = 1e-14;
/// Sweep cap; exceeding it is an error, never a silent result.
const MAX_SWEEPS: usize = 60;

/// Decomposition M = U S V^T with singular values descending and the
/// largest-magnitude entry of each U column made positive.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// Left singular vectors as columns.
    pub u: Matrix,
    /// Singular values, non-negative, descending.
    pub s: Vec<f64>,
    /// Right singular vectors as columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn n(&self) -> usize {
        self.s.len()
    }
}

/// One-sided Jacobi SVD of a square matrix with finite entries.
///
/// Ties in singular values keep their pre-sort column order, so repeated
/// values have a reproducible factor identity.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() != m.cols() {
        return Err(Error::Incompatible(format!(
            "svd expects a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(SvdResult {
            u: Matrix::zeros(0, 0),
            s: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }

    // Work on columns: b = M (rotated in place), v accumulates rotations,
    // so b = M * v throughout.
    let mut b: Vec<Vec<f64>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut max_rel = 0.0f64;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (app, aqq, apq) = gram_entries(&b[p], &b[q]);
                let denom = (app * aqq).sqrt();
                if denom == 0.0 {
                    continue;
                }
                let rel = apq.abs() / denom;
                if rel > max_rel {
                    max_rel = rel;
                }
                if rel <= JACOBI_TOL {
                    continue;
                }
                let (c, s) = jacobi_rotation(app, aqq, apq);
                rotate_pair(&mut b, p, q, c, s);
                rotate_pair(&mut v, p, q, c, s);
            }
        }
        if max_rel <= JACOBI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "jacobi svd: off-diagonal still above {JACOBI_TOL:e} after {MAX_SWEEPS} sweeps"
        )));
    }

    // Singular values are the column norms; order descending, stable.
    let norms: Vec<f64> = b.iter().map(|col| norm(col)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &bb| norms[bb].partial_cmp(&norms[a]).unwrap());

    let mut s = Vec::with_capacity(n);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for &j in &order {
        s.push(norms[j]);
        v_cols.push(v[j].clone());
        if norms[j] > 0.0 {
            u_cols.push(b[j].iter().map(|x| x / norms[j]).collect());
        } else {
            u_cols.push(Vec::new()); // completed below
        }
    }
    complete_null_columns(&mut u_cols, n);

    // Sign convention: largest-magnitude entry of each U column positive.
    for j in 0..n {
        let mut arg = 0;
        for i in 1..n {
            if u_cols[j][i].abs() > u_cols[j][arg].abs() {
                arg = i;
            }
        }
        if u_cols[j][arg] < 0.0 {
            for i in 0..n {
                u_cols[j][i] = -u_cols[j][i];
                v_cols[j][i] = -v_cols[j][i];
            }
        }
    }

    Ok(SvdResult {
        u: from_columns(&u_cols, n),
        s,
        v: from_columns(&v_cols, n),
    })
}

/// Rebuild U S V^T.
pub fn reconstruct(d: &SvdResult) -> Matrix {
    let mut us = d.u.clone();
    for (j, &sv) in d.s.iter().enumerate() {
        us.scale_column(j, sv);
    }
    us.matmul(&d.v.transpose())
        .expect("factor shapes agree by construction")
}

fn gram_entries(bp: &[f64], bq: &[f64]) -> (f64, f64, f64) {
    let mut app = 0.0;
    let mut aqq = 0.0;
    let mut apq = 0.0;
    for (x, y) in bp.iter().zip(bq) {
        app += x * x;
        aqq += y * y;
        apq += x * y;
    }
    (app, aqq, apq)
}

/// Rotation (c, s) zeroing the (p, q) Gram entry.
fn jacobi_rotation(app: f64, aqq: f64, apq: f64) -> (f64, f64) {
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    (c, c * t)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn norm(col: &[f64]) -> f64 {
    col.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fill columns left empty by zero singular values with an orthonormal
/// completion, built deterministically from standard basis vectors.
fn complete_null_columns(u_cols: &mut [Vec<f64>], n: usize) {
    let needs: Vec<usize> = (0..u_cols.len())
        .filter(|&j| u_cols[j].is_empty())
        .collect();
    if needs.is_empty() {
        return;
    }
    for j in needs {
        let mut candidate_basis = 0;
        loop {
            let mut col = vec![0.0; n];
            col[candidate_basis] = 1.0;
            // Two Gram-Schmidt passes against the filled columns.
            for _ in 0..2 {
                for other in u_cols.iter().filter(|c| !c.is_empty()) {
                    let proj: f64 = col.iter().zip(other.iter()).map(|(a, b)| a * b).sum();
                    for (c, o) in col.iter_mut().zip(other.iter()) {
                        *c -= proj * o;
                    }
                }
            }
            let len = norm(&col);
            if len > 0.5 {
                for c in &mut col {
                    *c /= len;
                }
                u_cols[j] = col;
                break;
            }
            candidate_basis += 1;
            assert!(candidate_basis < n, "orthonormal completion must exist");
        }
    }
}

fn from_columns(cols: &[Vec<f64>], n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    m
}

/// Frobenius distance of A^T A from the identity; 0 for orthogonal A.
pub fn orthogonality_defect(a: &Matrix) -> f64 {
    let gram = a.transpose().matmul(a).expect("square input");
    let eye = Matrix::identity(a.rows());
    gram.sub(&eye).expect("same shape").frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha12Rng) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
        m
    }

    fn check_contract(m: &Matrix, d: &SvdResult) {
        let n = m.rows();
        // Orthogonality.
        assert!(orthogonality_defect(&d.u) < 1e-10, "U not orthogonal");
        assert!(orthogonality_defect(&d.v) < 1e-10, "V not orthogonal");
        // Descending non-negative singular values.
        for w in d.s.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(d.s.iter().all(|&s| s >= 0.0));
        // Reconstruction.
        let rec = reconstruct(d);
        let denom = m.frobenius_norm().max(f64::MIN_POSITIVE);
        assert!(rec.sub(m).unwrap().frobenius_norm() / denom < 1e-10);
        // M v_i = s_i u_i and M^T u_i = s_i v_i.
        let mt = m.transpose();
        for i in 0..n {
            for r in 0..n {
                let mv: f64 = (0..n).map(|k| m[(r, k)] * d.v[(k, i)]).sum();
                assert!((mv - d.s[i] * d.u[(r, i)]).abs() < 1e-8);
                let mtu: f64 = (0..n).map(|k| mt[(r, k)] * d.u[(k, i)]).sum();
                assert!((mtu - d.s[i] * d.v[(r, i)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let d = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(d.s, vec![1.0, 1.0, 1.0]);
        check_contract(&Matrix::identity(3), &d);
    }

    #[test]
    fn diagonal_signs_are_absorbed() {
        let m = Matrix::from_rows(vec![vec![3.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let d = svd(&m).unwrap();
        assert!((d.s[0] - 3.0).abs() < 1e-14);
        assert!((d.s[1] - 2.0).abs() < 1e-14);
        check_contract(&m, &d);
    }

    #[test]
    fn rank_one_outer_product_closed_form() {
        let a = [1.0, -2.0, 0.5];
        let b = [0.25, 3.0, -1.0, 0.0];
        // Square it up: 4x4 with last row zero.
        let mut m = Matrix::zeros(4, 4);
        for i in 0..3 {
            for j in 0..4 {
                m[(i, j)] = a[i] * b[j];
            }
        }
        let d = svd(&m).unwrap();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((d.s[0] - na * nb).abs() < 1e-12);
        for &s in &d.s[1..] {
            assert!(s < 1e-12);
        }
        check_contract(&m, &d);
    }

    #[test]
    fn zero_matrix_decomposes_cleanly() {
        let m = Matrix::zeros(5, 5);
        let d = svd(&m).unwrap();
        assert!(d.s.iter().all(|&s| s == 0.0));
        check_contract(&m, &d);
        assert_eq!(reconstruct(&d), m);
    }

    #[test]
    fn singular_matrix_gets_an_orthonormal_completion() {
        // Rank 1 in 3x3: two zero singular values, U must still be orthogonal.
        let m = Matrix::from_rows(vec![
            vec![1.0, 2.0, 3.0],
            vec![2.0, 4.0, 6.0],
            vec![3.0, 6.0, 9.0],
        ])
        .unwrap();
        let d = svd(&m).unwrap();
        check_contract(&m, &d);
        assert!(d.s[1] < 1e-10 && d.s[2] < 1e-10);
    }

    #[test]
    fn random_contract_over_sizes() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for n in [2, 3, 5, 8, 17, 33] {
            let m = random_matrix(n, &mut rng);
            let d = svd(&m).unwrap();
            check_contract(&m, &d);
        }
    }

    #[test]
    fn transpose_swaps_factor_roles() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = random_matrix(9, &mut rng);
        let d = svd(&m).unwrap();
        let dt = svd(&m.transpose()).unwrap();
        for i in 0..9 {
            assert!((d.s[i] - dt.s[i]).abs() < 1e-10);
        }
        // Columns agree up to sign (the convention is fixed on U, so the
        // swapped factors may flip jointly).
        for j in 0..9 {
            let dot: f64 = (0..9).map(|i| d.u[(i, j)] * dt.v[(i, j)]).sum();
            let sgn = if dot >= 0.0 { 1.0 } else { -1.0 };
            for i in 0..9 {
                assert!((d.u[(i, j)] - sgn * dt.v[(i, j)]).abs() < 1e-8);
                assert!((d.v[(i, j)] - sgn * dt.u[(i, j)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn singular_values_invariant_under_orthogonal_factors() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 12;
        let m = random_matrix(n, &mut rng);
        let q1 = random_orthogonal(n, &mut rng);
        let q2 = random_orthogonal(n, &mut rng);
        let rotated = q1.matmul(&m).unwrap().matmul(&q2).unwrap();
        let s1 = svd(&m).unwrap().s;
        let s2 = svd(&rotated).unwrap().s;
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).abs() <= 1e-8 * s1[0].max(1.0));
        }
    }

    /// QR of a Gaussian matrix by modified Gram-Schmidt (test helper).
    fn random_orthogonal(n: usize, rng: &mut ChaCha12Rng) -> Matrix {
        let mut cols: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        // Box-Muller keeps the helper free of rand_distr.
                        let u1: f64 = rng.random::<f64>().max(1e-12);
                        let u2: f64 = rng.random();
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect();
        for j in 0..n {
            for k in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let prev = cols[k].clone();
                for (x, p) in cols[j].iter_mut().zip(&prev) {
                    *x -= proj * p;
                }
            }
            let len = norm(&cols[j]);
            for x in &mut cols[j] {
                *x /= len;
            }
        }
        from_columns(&cols, n)
    }

    #[test]
    fn bitwise_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let m = random_matrix(20, &mut rng);
        let d1 = svd(&m).unwrap();
        let d2 = svd(&m).unwrap();
        assert_eq!(d1.s, d2.s);
        assert_eq!(d1.u.data(), d2.u.data());
        assert_eq!(d1.v.data(), d2.v.data());
    }

    #[test]
    fn non_finite_entry_is_domain_error() {
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn non_square_rejected() {
        assert!(svd(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn reconstruct_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(19);
        let m = random_matrix(16, &mut rng);
        let d = svd(&m).unwrap();
        let rec = reconstruct(&d);
        assert!(rec.sub(&m).unwrap().frobenius_norm() / m.frobenius_norm() < 1e-10);
    }
}
