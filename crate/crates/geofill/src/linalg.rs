//! Dense matrix container plus the few numerical kernels the solvers
//! need: thin SVD, singular-value thresholding, forward-difference
//! operators, and a fast solver for shifted second-difference systems.
//!
//! All kernels run sequentially regardless of how many threads the
//! caller owns, so results are reproducible across machines and worker
//! counts. Parallelism belongs to callers, across independent problems.

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::matmul::matmul;
use faer::linalg::svd::{compute_svd, compute_svd_req, ComputeVectors, SvdParams};
use faer::Parallelism;

use crate::error::{Error, Result};

/// Dense column-major matrix of `f64`.
///
/// Column-major means entry `(r, c)` lives at `r + rows*c`, so each
/// column is a contiguous slice — the natural shape for per-column
/// solves and for handing views to the linear-algebra backend.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Wraps a column-major value vector of length `rows * cols`.
    pub fn from_column_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimsMismatch {
                context: "matrix construction",
                expected: format!("{} values for {rows}x{cols}", rows * cols),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from row slices; handy for literal matrices in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::DimsMismatch {
                context: "matrix construction",
                expected: format!("rows of equal length {ncols}"),
                found: "ragged rows".to_string(),
            });
        }
        let mut m = Self::zeros(nrows, ncols);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                m.set(r, c, v);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + self.rows * c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r + self.rows * c] = value;
    }

    pub fn as_column_major(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_column_major(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self - other` without materializing the
    /// difference.
    pub fn sub_frobenius_norm(&self, other: &DenseMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimsMismatch {
                context: "matrix difference",
                expected: format!("{}x{}", self.rows, self.cols),
                found: format!("{}x{}", other.rows, other.cols),
            });
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum.sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = DenseMatrix::zeros(self.cols, self.rows);
        for c in 0..self.cols {
            for r in 0..self.rows {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimsMismatch {
                context: "matrix product",
                expected: format!("{} inner rows", self.cols),
                found: format!("{}", other.rows),
            });
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        matmul(
            out.as_faer_mut(),
            self.as_faer(),
            other.as_faer(),
            None,
            1.0,
            Parallelism::None,
        );
        Ok(out)
    }

    fn as_faer(&self) -> faer::MatRef<'_, f64> {
        faer::mat::from_column_major_slice::<f64>(self.data.as_slice(), self.rows, self.cols)
    }

    fn as_faer_mut(&mut self) -> faer::MatMut<'_, f64> {
        faer::mat::from_column_major_slice_mut::<f64>(
            self.data.as_mut_slice(),
            self.rows,
            self.cols,
        )
    }
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`.
///
/// `u` is `m x r` and `v` is `n x r` with `r = min(m, n)`; singular
/// values are non-negative and sorted in descending order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl ThinSvd {
    /// Multiplies the factors back together; mainly for tests.
    pub fn reconstruct(&self) -> Result<DenseMatrix> {
        let r = self.singular_values.len();
        let mut scaled = self.u.clone();
        for c in 0..r {
            for row in 0..scaled.rows() {
                let v = scaled.get(row, c) * self.singular_values[c];
                scaled.set(row, c, v);
            }
        }
        let vt = self.v.transpose();
        scaled.matmul(&vt)
    }
}

/// Computes the thin SVD of `matrix` with a sequential backend.
///
/// The fast backend mishandles singular vectors on some exactly
/// rank-deficient inputs (mostly-zero matrices with many duplicate
/// columns return factors whose product misses the input by double-digit
/// percentages while the singular values stay correct), so every
/// factorization is verified by multiplying it back together; on a bad
/// residual the decomposition is redone with one-sided Jacobi rotations,
/// which are slower but unconditionally accurate.
pub fn thin_svd(matrix: &DenseMatrix) -> Result<ThinSvd> {
    let svd = faer_thin_svd(matrix)?;
    let norm = matrix.frobenius_norm();
    if norm == 0.0 {
        return Ok(svd);
    }
    let residual = svd.reconstruct()?.sub_frobenius_norm(matrix)?;
    if residual <= SVD_VERIFY_TOL * norm {
        return Ok(svd);
    }
    jacobi_thin_svd(matrix)
}

/// Relative reconstruction error above which an SVD is rejected. Healthy
/// factorizations land near machine epsilon; the failure mode this
/// guards against misses by ten percent or more.
const SVD_VERIFY_TOL: f64 = 1e-10;

fn faer_thin_svd(matrix: &DenseMatrix) -> Result<ThinSvd> {
    if !matrix.is_finite() {
        return Err(Error::NonFiniteInput(
            "SVD input contains NaN or infinity".to_string(),
        ));
    }
    let (m, n) = (matrix.rows(), matrix.cols());
    let r = m.min(n);
    let mut s = vec![0.0; r];
    let mut u = DenseMatrix::zeros(m, r);
    let mut v = DenseMatrix::zeros(n, r);
    let req = compute_svd_req::<f64>(
        m,
        n,
        ComputeVectors::Thin,
        ComputeVectors::Thin,
        Parallelism::None,
        SvdParams::default(),
    )
    .map_err(|_| Error::InvalidParameter("SVD workspace size overflow".to_string()))?;
    let mut buffer = GlobalPodBuffer::new(req);
    compute_svd(
        matrix.as_faer(),
        faer::col::from_slice_mut(&mut s),
        Some(u.as_faer_mut()),
        Some(v.as_faer_mut()),
        Parallelism::None,
        PodStack::new(&mut buffer),
        SvdParams::default(),
    );
    Ok(ThinSvd {
        u,
        singular_values: s,
        v,
    })
}

/// One-sided Jacobi SVD: orthogonalizes the columns of the tall
/// orientation with plane rotations until every column pair is
/// numerically orthogonal. Each rotation acts on full columns, so
/// accuracy does not depend on the spectrum being well separated — the
/// degenerate inputs that defeat the fast backend (duplicate columns,
/// whole blocks of zeros) are handled exactly like any other matrix.
fn jacobi_thin_svd(matrix: &DenseMatrix) -> Result<ThinSvd> {
    let (m, n) = (matrix.rows(), matrix.cols());
    if m < n {
        // Factor the tall transpose and swap the roles of U and V.
        let t = jacobi_thin_svd(&matrix.transpose())?;
        return Ok(ThinSvd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }

    // Work on column copies: rotations combine column pairs in place,
    // while `rot` accumulates the product of rotations, which ends up
    // being V.
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|c| matrix.as_column_major()[c * m..(c + 1) * m].to_vec())
        .collect();
    let mut rot: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    const MAX_SWEEPS: usize = 64;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    app += cols[p][r] * cols[p][r];
                    aqq += cols[q][r] * cols[q][r];
                    apq += cols[p][r] * cols[q][r];
                }
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (head, tail) = cols.split_at_mut(q);
                rotate_pair(&mut head[p], &mut tail[0], c, s);
                let (head, tail) = rot.split_at_mut(q);
                rotate_pair(&mut head[p], &mut tail[0], c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; normalized columns are U.
    // Sort descending to match the backend's convention.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let mut u = DenseMatrix::zeros(m, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        singular_values.push(sigma);
        if sigma > 0.0 {
            for r in 0..m {
                u.set(r, dst, cols[src][r] / sigma);
            }
        }
        for r in 0..n {
            v.set(r, dst, rot[src][r]);
        }
    }
    Ok(ThinSvd {
        u,
        singular_values,
        v,
    })
}

/// Applies the plane rotation `(p, q) <- (c p - s q, s p + c q)` to a
/// pair of equal-length vectors.
fn rotate_pair(p: &mut [f64], q: &mut [f64], c: f64, s: f64) {
    for (vp, vq) in p.iter_mut().zip(q.iter_mut()) {
        let a = *vp;
        let b = *vq;
        *vp = c * a - s * b;
        *vq = s * a + c * b;
    }
}

/// Singular value thresholding: shrinks every singular value of
/// `matrix` by `threshold`, clamping at zero, and multiplies the
/// factors back together.
///
/// Returns the shrunk matrix together with the shrunk singular values
/// (including the zeroed ones), whose sum is the nuclear norm of the
/// result.
pub fn svt(matrix: &DenseMatrix, threshold: f64) -> Result<(DenseMatrix, Vec<f64>)> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shrinkage threshold must be finite and non-negative, got {threshold}"
        )));
    }
    let svd = thin_svd(matrix)?;
    let shrunk: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|&s| (s - threshold).max(0.0))
        .collect();
    let rank = shrunk.iter().filter(|&&s| s > 0.0).count();
    let (m, n) = (matrix.rows(), matrix.cols());
    if rank == 0 {
        return Ok((DenseMatrix::zeros(m, n), shrunk));
    }
    // U[:, :rank] scaled by the shrunk values, times V[:, :rank]ᵀ.
    // Leading columns of a column-major matrix are a contiguous prefix.
    let mut u_scaled = Vec::with_capacity(m * rank);
    for c in 0..rank {
        for r in 0..m {
            u_scaled.push(svd.u.get(r, c) * shrunk[c]);
        }
    }
    let u_ref = faer::mat::from_column_major_slice::<f64>(u_scaled.as_slice(), m, rank);
    let v_ref =
        faer::mat::from_column_major_slice::<f64>(&svd.v.as_column_major()[..n * rank], n, rank);
    let mut out = DenseMatrix::zeros(m, n);
    matmul(
        out.as_faer_mut(),
        u_ref,
        v_ref.transpose(),
        None,
        1.0,
        Parallelism::None,
    );
    Ok((out, shrunk))
}

/// Forward-difference operator along a line of `n` cells: an
/// `(n-1) x n` matrix with rows `(…, -1, 1, …)`. Its Gram matrix
/// `DᵀD` is the second-difference (path-graph Laplacian) matrix that
/// penalizes roughness along one grid axis.
pub fn build_difference_operator(n: usize) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "difference operator needs at least one cell".to_string(),
        ));
    }
    let mut d = DenseMatrix::zeros(n - 1, n);
    for r in 0..n - 1 {
        d.set(r, r, -1.0);
        d.set(r, r + 1, 1.0);
    }
    Ok(d)
}

/// Pre-factorized solver for `(beta·DᵀD + rho·I) x = b` where `D` is
/// the forward-difference operator on `n` cells.
///
/// The system matrix is symmetric positive definite and tridiagonal,
/// so it is factorized once (LDLᵀ) and each solve is O(n). With
/// `beta = 0` it degenerates to scaling by `1/rho` and no
/// factorization is stored.
#[derive(Debug, Clone)]
pub struct RegularizedSolver {
    n: usize,
    kind: SolverKind,
}

#[derive(Debug, Clone)]
enum SolverKind {
    /// beta == 0: the system is rho·I.
    Scale(f64),
    /// LDLᵀ factors of the tridiagonal system.
    Tridiagonal { diag: Vec<f64>, lower: Vec<f64> },
}

impl RegularizedSolver {
    /// Factorizes the `n x n` system for the given `rho > 0` and
    /// `beta >= 0`.
    pub fn new(n: usize, rho: f64, beta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "solver needs at least one cell".to_string(),
            ));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be finite and positive, got {rho}"
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must be finite and non-negative, got {beta}"
            )));
        }
        if beta == 0.0 {
            return Ok(Self {
                n,
                kind: SolverKind::Scale(1.0 / rho),
            });
        }
        // DᵀD has diagonal degree pattern (1, 2, …, 2, 1) and -1 on the
        // off-diagonals; the shift by rho keeps the pivots positive.
        let mut diag = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let degree = usize::from(i > 0) + usize::from(i + 1 < n);
            diag.push(rho + beta * degree as f64);
        }
        // in-place LDLᵀ: lower[i] = A[i+1,i]/d[i], d[i+1] -= lower[i]²·d[i]
        for i in 0..n.saturating_sub(1) {
            let l = -beta / diag[i];
            lower.push(l);
            diag[i + 1] -= l * l * diag[i];
        }
        debug_assert!(diag.iter().all(|&d| d > 0.0));
        Ok(Self {
            n,
            kind: SolverKind::Tridiagonal { diag, lower },
        })
    }

    /// Number of cells the factorization was built for.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Solves the system for one right-hand side in place.
    pub fn solve_slice(&self, rhs: &mut [f64]) -> Result<()> {
        if rhs.len() != self.n {
            return Err(Error::DimsMismatch {
                context: "regularized solve",
                expected: format!("{} entries", self.n),
                found: format!("{} entries", rhs.len()),
            });
        }
        match &self.kind {
            SolverKind::Scale(inv_rho) => {
                for v in rhs.iter_mut() {
                    *v *= inv_rho;
                }
            }
            SolverKind::Tridiagonal { diag, lower } => {
                // forward substitution with unit lower factor
                for i in 1..self.n {
                    rhs[i] -= lower[i - 1] * rhs[i - 1];
                }
                // diagonal scaling, then backward substitution
                for i in 0..self.n {
                    rhs[i] /= diag[i];
                }
                for i in (0..self.n - 1).rev() {
                    rhs[i] -= lower[i] * rhs[i + 1];
                }
            }
        }
        Ok(())
    }

    /// Solves the system for every column of `matrix` in place; the
    /// row count must equal the factorization size.
    pub fn solve_in_place(&self, matrix: &mut DenseMatrix) -> Result<()> {
        if matrix.rows() != self.n {
            return Err(Error::DimsMismatch {
                context: "regularized solve",
                expected: format!("{} rows", self.n),
                found: format!("{} rows", matrix.rows()),
            });
        }
        let rows = self.n;
        for col in matrix.as_mut_column_major().chunks_exact_mut(rows) {
            self.solve_slice(col)?;
        }
        Ok(())
    }
}

/// Solves a small dense square system `a x = b` with full-pivot LU.
/// Intended for one-off systems (fits, oracles), not hot loops.
pub fn solve_dense(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.rows() != a.cols() {
        return Err(Error::DimsMismatch {
            context: "dense solve",
            expected: "square matrix".to_string(),
            found: format!("{}x{}", a.rows(), a.cols()),
        });
    }
    if b.len() != a.rows() {
        return Err(Error::DimsMismatch {
            context: "dense solve",
            expected: format!("{} rhs entries", a.rows()),
            found: format!("{}", b.len()),
        });
    }
    use faer::prelude::*;
    let rhs = faer::mat::from_column_major_slice::<f64>(b, b.len(), 1);
    let solved = a.as_faer().full_piv_lu().solve(rhs);
    Ok((0..b.len()).map(|i| solved.read(i, 0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        DenseMatrix::from_column_major(rows, cols, data).unwrap()
    }

    /// Independent estimate of the largest singular value by power
    /// iteration on AᵀA.
    fn largest_singular_value_power(a: &DenseMatrix, iters: usize) -> f64 {
        let n = a.cols();
        let mut x = DenseMatrix::from_column_major(n, 1, vec![1.0 / (n as f64).sqrt(); n]).unwrap();
        let at = a.transpose();
        let mut sigma = 0.0;
        for _ in 0..iters {
            let ax = a.matmul(&x).unwrap();
            sigma = ax.frobenius_norm();
            let atax = at.matmul(&ax).unwrap();
            let norm = atax.frobenius_norm();
            x = DenseMatrix::from_column_major(
                n,
                1,
                atax.as_column_major().iter().map(|v| v / norm).collect(),
            )
            .unwrap();
        }
        sigma
    }

    #[test]
    fn matrix_construction_and_access() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 3));
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 2), 6.0);
        // column-major layout: columns are contiguous
        assert_eq!(m.as_column_major(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);

        assert!(DenseMatrix::from_column_major(2, 2, vec![0.0; 3]).is_err());
        assert!(DenseMatrix::from_rows(&[&[1.0], &[1.0, 2.0]]).is_err());
    }

    #[test]
    fn matmul_hand_example() {
        let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[&[5.0, 6.0], &[7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        let expected = DenseMatrix::from_rows(&[&[19.0, 22.0], &[43.0, 50.0]]).unwrap();
        assert_eq!(c, expected);
        assert!(a.matmul(&DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = seeded_matrix(4, 7, 1);
        assert_eq!(a.transpose().transpose(), a);
    }

    #[test]
    fn svd_of_diagonal_matrix() {
        let a = DenseMatrix::from_rows(&[&[3.0, 0.0], &[0.0, 2.0]]).unwrap();
        let svd = thin_svd(&a).unwrap();
        assert_relative_eq!(svd.singular_values[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(svd.singular_values[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn svd_reconstructs_input() {
        for (rows, cols, seed) in [(7, 5, 2u64), (5, 7, 3), (6, 6, 4)] {
            let a = seeded_matrix(rows, cols, seed);
            let svd = thin_svd(&a).unwrap();
            let back = svd.reconstruct().unwrap();
            let mut err = 0.0f64;
            for c in 0..cols {
                for r in 0..rows {
                    err = err.max((back.get(r, c) - a.get(r, c)).abs());
                }
            }
            assert!(err < 1e-12, "reconstruction error {err} for {rows}x{cols}");
        }
    }

    #[test]
    fn svd_values_sorted_and_orthonormal() {
        let a = seeded_matrix(8, 5, 5);
        let svd = thin_svd(&a).unwrap();
        for w in svd.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(svd.singular_values.iter().all(|&s| s >= 0.0));
        for (q, dim) in [(&svd.u, 5), (&svd.v, 5)] {
            let gram = q.transpose().matmul(q).unwrap();
            for r in 0..dim {
                for c in 0..dim {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((gram.get(r, c) - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn svd_rank_one_outer_product() {
        let u = [1.0, 2.0, 3.0];
        let w = [4.0, 0.0, -2.0, 1.0];
        let mut a = DenseMatrix::zeros(3, 4);
        for r in 0..3 {
            for c in 0..4 {
                a.set(r, c, u[r] * w[c]);
            }
        }
        let svd = thin_svd(&a).unwrap();
        let norm_u = (1.0f64 + 4.0 + 9.0).sqrt();
        let norm_w = (16.0f64 + 4.0 + 1.0).sqrt();
        assert_relative_eq!(svd.singular_values[0], norm_u * norm_w, epsilon = 1e-10);
        assert!(svd.singular_values[1].abs() < 1e-10);
    }

    #[test]
    fn svd_largest_value_matches_power_iteration() {
        let a = seeded_matrix(8, 6, 9);
        let svd = thin_svd(&a).unwrap();
        let power = largest_singular_value_power(&a, 500);
        assert_relative_eq!(svd.singular_values[0], power, epsilon = 1e-8);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, f64::NAN);
        assert!(matches!(thin_svd(&a), Err(Error::NonFiniteInput(_))));
    }

    #[test]
    fn svd_survives_degenerate_sparse_unfolding() {
        // Mode-0 unfolding of a sparsely observed smooth field: mostly
        // zeros, whole zero columns, and duplicated values. The fast
        // backend used to return singular vectors whose product missed
        // this matrix by ~14% while the singular values stayed correct;
        // the verified path has to catch that and still factor it
        // accurately.
        let dims = crate::tensor::Dims3::new(24, 24, 9).unwrap();
        let truth = crate::synthetic::layered(dims);
        let n = (dims.len() as f64 * 0.05).round() as usize;
        let mask = crate::synthetic::sample_cells_uniform(dims, n, 0).unwrap();
        let observed = crate::tensor::project(&truth, &mask).unwrap();
        let w = crate::tensor::unfold(&observed, 0).unwrap().matrix;
        let svd = thin_svd(&w).unwrap();
        let resid = svd.reconstruct().unwrap().sub_frobenius_norm(&w).unwrap();
        assert!(
            resid <= 1e-10 * w.frobenius_norm(),
            "relative residual {:.3e}",
            resid / w.frobenius_norm()
        );
    }

    #[test]
    fn jacobi_svd_matches_backend_on_generic_matrices() {
        for (rows, cols, seed) in [(7, 5, 21), (5, 9, 22), (6, 6, 23)] {
            let a = seeded_matrix(rows, cols, seed);
            let fast = thin_svd(&a).unwrap();
            let slow = jacobi_thin_svd(&a).unwrap();
            for (f, s) in fast.singular_values.iter().zip(&slow.singular_values) {
                assert_relative_eq!(f, s, epsilon = 1e-12);
            }
            let resid = slow.reconstruct().unwrap().sub_frobenius_norm(&a).unwrap();
            assert!(resid <= 1e-12 * a.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn jacobi_svd_orthonormal_on_full_rank_input() {
        let a = seeded_matrix(8, 5, 31);
        let svd = jacobi_thin_svd(&a).unwrap();
        for q in [&svd.u, &svd.v] {
            let gram = q.transpose().matmul(q).unwrap();
            for r in 0..gram.rows() {
                for c in 0..gram.cols() {
                    let expect = if r == c { 1.0 } else { 0.0 };
                    assert!((gram.get(r, c) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn jacobi_svd_handles_duplicate_and_zero_columns() {
        // Three copies of one column, a zero column, and a second
        // direction: rank 2, with the duplicate block mapping to a
        // single singular value.
        let mut a = DenseMatrix::zeros(4, 5);
        for (c, scale) in [(0, 1.0), (1, 1.0), (3, 1.0), (4, 2.0)] {
            for r in 0..4 {
                let base = if c == 4 { (r == 0) as i32 } else { 1 - (r == 0) as i32 };
                a.set(r, c, scale * f64::from(base));
            }
        }
        let svd = jacobi_thin_svd(&a).unwrap();
        let resid = svd.reconstruct().unwrap().sub_frobenius_norm(&a).unwrap();
        assert!(resid <= 1e-12 * a.frobenius_norm());
        assert!(svd.singular_values[1] > 0.0);
        assert!(svd.singular_values[2].abs() < 1e-12);
        for w in svd.singular_values.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn svt_diagonal_example() {
        let a = DenseMatrix::from_rows(&[&[5.0, 0.0], &[0.0, 1.0]]).unwrap();
        let (shrunk, values) = svt(&a, 2.0).unwrap();
        assert_relative_eq!(shrunk.get(0, 0), 3.0, epsilon = 1e-12);
        assert!(shrunk.get(1, 1).abs() < 1e-12);
        assert_eq!(values, vec![3.0, 0.0]);
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let a = seeded_matrix(5, 4, 6);
        let (out, _) = svt(&a, 0.0).unwrap();
        for c in 0..4 {
            for r in 0..5 {
                assert_relative_eq!(out.get(r, c), a.get(r, c), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn svt_large_threshold_zeroes_everything() {
        let a = seeded_matrix(5, 4, 7);
        let sigma_max = thin_svd(&a).unwrap().singular_values[0];
        let (out, values) = svt(&a, sigma_max + 1.0).unwrap();
        assert!(out.as_column_major().iter().all(|&v| v == 0.0));
        assert!(values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn svt_minimizes_prox_objective() {
        // svt(B, t) is the unique minimizer of t·‖X‖* + ½‖X−B‖²_F;
        // perturbing the result in any direction must not lower the
        // objective.
        let b = seeded_matrix(3, 3, 8);
        let t = 0.2;
        let (star, values) = svt(&b, t).unwrap();
        let objective = |x: &DenseMatrix| -> f64 {
            let nuclear: f64 = thin_svd(x).unwrap().singular_values.iter().sum();
            let mut dist = 0.0;
            for c in 0..3 {
                for r in 0..3 {
                    dist += (x.get(r, c) - b.get(r, c)).powi(2);
                }
            }
            t * nuclear + 0.5 * dist
        };
        let at_star = objective(&star);
        let nuclear_star: f64 = values.iter().sum();
        let direct: f64 = thin_svd(&star).unwrap().singular_values.iter().sum();
        assert_relative_eq!(nuclear_star, direct, epsilon = 1e-10);
        for dir_seed in 10..20u64 {
            let dir = seeded_matrix(3, 3, dir_seed);
            let scale = 1e-3 / dir.frobenius_norm();
            let mut perturbed = star.clone();
            for c in 0..3 {
                for r in 0..3 {
                    perturbed.set(r, c, star.get(r, c) + scale * dir.get(r, c));
                }
            }
            assert!(objective(&perturbed) >= at_star - 1e-12);
        }
    }

    #[test]
    fn svt_rejects_bad_threshold() {
        let a = DenseMatrix::zeros(2, 2);
        assert!(svt(&a, -1.0).is_err());
        assert!(svt(&a, f64::NAN).is_err());
    }

    #[test]
    fn difference_operator_shape_and_gram() {
        let d = build_difference_operator(4).unwrap();
        let expected = DenseMatrix::from_rows(&[
            &[-1.0, 1.0, 0.0, 0.0],
            &[0.0, -1.0, 1.0, 0.0],
            &[0.0, 0.0, -1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(d, expected);

        let gram = d.transpose().matmul(&d).unwrap();
        let laplacian = DenseMatrix::from_rows(&[
            &[1.0, -1.0, 0.0, 0.0],
            &[-1.0, 2.0, -1.0, 0.0],
            &[0.0, -1.0, 2.0, -1.0],
            &[0.0, 0.0, -1.0, 1.0],
        ])
        .unwrap();
        assert_eq!(gram, laplacian);

        assert_eq!(build_difference_operator(1).unwrap().rows(), 0);
        assert!(build_difference_operator(0).is_err());
    }

    #[test]
    fn solver_beta_zero_scales() {
        let solver = RegularizedSolver::new(5, 2.0, 0.0).unwrap();
        let mut rhs = vec![2.0, 4.0, 6.0, 8.0, 10.0];
        solver.solve_slice(&mut rhs).unwrap();
        assert_eq!(rhs, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn solver_single_cell() {
        let solver = RegularizedSolver::new(1, 4.0, 0.5).unwrap();
        let mut rhs = vec![8.0];
        solver.solve_slice(&mut rhs).unwrap();
        // DᵀD is zero for a single cell, so the system is rho·I
        assert_relative_eq!(rhs[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn solver_matches_dense_oracle() {
        let (n, rho, beta) = (7, 0.9, 0.09);
        let d = build_difference_operator(n).unwrap();
        let gram = d.transpose().matmul(&d).unwrap();
        let mut a = DenseMatrix::zeros(n, n);
        for c in 0..n {
            for r in 0..n {
                let identity = if r == c { rho } else { 0.0 };
                a.set(r, c, beta * gram.get(r, c) + identity);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).sin()).collect();
        let oracle = solve_dense(&a, &b).unwrap();

        let solver = RegularizedSolver::new(n, rho, beta).unwrap();
        let mut fast = b.clone();
        solver.solve_slice(&mut fast).unwrap();
        for i in 0..n {
            assert_relative_eq!(fast[i], oracle[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn solver_applies_to_every_column() {
        let solver = RegularizedSolver::new(3, 1.0, 0.2).unwrap();
        let mut m = seeded_matrix(3, 5, 11);
        let original = m.clone();
        solver.solve_in_place(&mut m).unwrap();
        for c in 0..5 {
            let mut col: Vec<f64> = (0..3).map(|r| original.get(r, c)).collect();
            solver.solve_slice(&mut col).unwrap();
            for r in 0..3 {
                assert_relative_eq!(m.get(r, c), col[r], epsilon = 1e-14);
            }
        }
        assert!(solver.solve_in_place(&mut DenseMatrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn solver_rejects_bad_parameters() {
        assert!(RegularizedSolver::new(0, 1.0, 0.1).is_err());
        assert!(RegularizedSolver::new(3, 0.0, 0.1).is_err());
        assert!(RegularizedSolver::new(3, -1.0, 0.1).is_err());
        assert!(RegularizedSolver::new(3, 1.0, -0.1).is_err());
        assert!(RegularizedSolver::new(3, f64::NAN, 0.1).is_err());
    }

    #[test]
    fn dense_solve_identity_and_errors() {
        let a = DenseMatrix::from_rows(&[&[2.0, 0.0], &[0.0, 4.0]]).unwrap();
        let x = solve_dense(&a, &[6.0, 8.0]).unwrap();
        assert_relative_eq!(x[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
        assert!(solve_dense(&DenseMatrix::zeros(2, 3), &[0.0, 0.0]).is_err());
        assert!(solve_dense(&a, &[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn svt_shrinks_singular_values(rows in 2usize..7, cols in 2usize..7,
                                       seed in 0u64..500, threshold in 0.0f64..2.0) {
            let a = seeded_matrix(rows, cols, seed);
            let before = thin_svd(&a).unwrap().singular_values;
            let (out, reported) = svt(&a, threshold).unwrap();
            let after = thin_svd(&out).unwrap().singular_values;
            for (idx, &s) in before.iter().enumerate() {
                let expect = (s - threshold).max(0.0);
                prop_assert!((after[idx] - expect).abs() < 1e-9);
                prop_assert!((reported[idx] - expect).abs() < 1e-12);
            }
        }

        #[test]
        fn solver_residual_is_small(n in 1usize..12, seed in 0u64..500,
                                    rho in 0.1f64..2.0, beta in 0.0f64..1.0) {
            let b: Vec<f64> = {
                let m = seeded_matrix(n, 1, seed);
                m.as_column_major().to_vec()
            };
            let solver = RegularizedSolver::new(n, rho, beta).unwrap();
            let mut x = b.clone();
            solver.solve_slice(&mut x).unwrap();
            // residual of (beta·DᵀD + rho·I)·x against b
            for i in 0..n {
                let lap = if n == 1 {
                    0.0
                } else if i == 0 {
                    x[0] - x[1]
                } else if i + 1 == n {
                    x[n - 1] - x[n - 2]
                } else {
                    2.0 * x[i] - x[i - 1] - x[i + 1]
                };
                let resid = beta * lap + rho * x[i] - b[i];
                prop_assert!(resid.abs() < 1e-9);
            }
        }
    }
}
