//! Dense linear-algebra helpers shared by the estimators: SVD pseudoinverse,
//! a streaming QR least-squares accumulator, complex eigendecomposition of
//! real matrices and a PSD square root.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Singular values below `PINV_RTOL * sigma_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-10;

/// Diagnostics from a pseudoinverse computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinvInfo {
    pub rank: usize,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

impl PinvInfo {
    pub fn condition(&self) -> f64 {
        if self.sigma_min > 0.0 {
            self.sigma_max / self.sigma_min
        } else {
            f64::INFINITY
        }
    }

    pub fn full_rank(&self, ncols: usize) -> bool {
        self.rank == ncols
    }
}

/// Moore-Penrose pseudoinverse via SVD with relative cutoff `rtol`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rtol: f64) -> Result<(DMatrix<f64>, PinvInfo)> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(Error::RankDeficient("empty matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "non-finite entry in least-squares matrix".into(),
        ));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let s = &svd.singular_values;
    let sigma_max = s.iter().cloned().fold(0.0_f64, f64::max);
    let sigma_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if sigma_max == 0.0 {
        return Err(Error::RankDeficient("all-zero matrix".into()));
    }
    let cutoff = rtol * sigma_max;
    let mut pinv = DMatrix::<f64>::zeros(n, m);
    let mut rank = 0;
    for (k, &sk) in s.iter().enumerate() {
        if sk > cutoff {
            rank += 1;
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            pinv += (vk / sk) * uk.transpose();
        }
    }
    Ok((
        pinv,
        PinvInfo {
            rank,
            sigma_max,
            sigma_min,
        },
    ))
}

/// Minimum-norm least-squares solution of `a * x ≈ b`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> Result<(DMatrix<f64>, PinvInfo)> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let (pinv, info) = pseudo_inverse(a, rtol)?;
    Ok((pinv * b, info))
}

const CHUNK_ROWS: usize = 2048;

/// Tall least-squares problem accumulated row by row through successive
/// QR factorizations, so the full design matrix is never materialized.
///
/// Keeps the triangular factor `R` and `Qᵀb`; the normal equations are never
/// formed, which matters for ill-conditioned monomial features.
#[derive(Debug, Clone)]
pub struct StreamingLeastSquares {
    ncols: usize,
    nrhs: usize,
    r: DMatrix<f64>,
    qtb: DMatrix<f64>,
    buf_a: Vec<f64>,
    buf_b: Vec<f64>,
    rows: usize,
}

impl StreamingLeastSquares {
    pub fn new(ncols: usize, nrhs: usize) -> Self {
        Self {
            ncols,
            nrhs,
            r: DMatrix::zeros(ncols, ncols),
            qtb: DMatrix::zeros(ncols, nrhs),
            buf_a: Vec::with_capacity(CHUNK_ROWS * ncols),
            buf_b: Vec::with_capacity(CHUNK_ROWS * nrhs),
            rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn push_row(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.ncols);
        debug_assert_eq!(b.len(), self.nrhs);
        self.buf_a.extend_from_slice(a);
        self.buf_b.extend_from_slice(b);
        self.rows += 1;
        if self.buf_a.len() >= CHUNK_ROWS * self.ncols {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let c = self.buf_a.len() / self.ncols;
        if c == 0 {
            return;
        }
        let chunk_a = DMatrix::from_row_slice(c, self.ncols, &self.buf_a);
        let chunk_b = DMatrix::from_row_slice(c, self.nrhs, &self.buf_b);
        self.buf_a.clear();
        self.buf_b.clear();
        self.absorb(&chunk_a, &chunk_b);
    }

    fn absorb(&mut self, a: &DMatrix<f64>, b: &DMatrix<f64>) {
        let n = self.ncols;
        let rows = n + a.nrows();
        let mut stacked = DMatrix::zeros(rows, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&self.r);
        stacked.view_mut((n, 0), (a.nrows(), n)).copy_from(a);
        let mut rhs = DMatrix::zeros(rows, self.nrhs);
        rhs.view_mut((0, 0), (n, self.nrhs)).copy_from(&self.qtb);
        rhs.view_mut((n, 0), (b.nrows(), self.nrhs)).copy_from(b);
        let qr = stacked.qr();
        qr.q_tr_mul(&mut rhs);
        self.r = qr.r();
        self.qtb = rhs.rows(0, n).into_owned();
    }

    /// Folds another accumulator's rows into this one.
    pub fn merge(&mut self, mut other: StreamingLeastSquares) {
        assert_eq!(self.ncols, other.ncols);
        assert_eq!(self.nrhs, other.nrhs);
        other.flush();
        self.flush();
        let (r, qtb) = (other.r, other.qtb);
        self.absorb(&r, &qtb);
        self.rows += other.rows;
    }

    /// Minimum-norm solution `x` of `A x ≈ B` over all pushed rows.
    pub fn solve(mut self, rtol: f64) -> Result<(DMatrix<f64>, PinvInfo)> {
        self.flush();
        if self.rows == 0 {
            return Err(Error::RankDeficient("no rows accumulated".into()));
        }
        lstsq(&self.r, &self.qtb, rtol)
    }
}

/// Eigenvalues and unit-norm eigenvectors (columns) of a real square matrix.
#[derive(Debug, Clone)]
pub struct ComplexEigen {
    pub values: Vec<Complex64>,
    pub vectors: DMatrix<Complex64>,
    /// Largest singular value left in the null-space computation of any
    /// cluster, relative to the matrix norm. Large values signal a defective matrix.
    pub defect: f64,
}

/// Sort key used everywhere a spectrum is listed: real part descending,
/// then imaginary part ascending.
pub fn spectral_order(a: &Complex64, b: &Complex64) -> std::cmp::Ordering {
    b.re.partial_cmp(&a.re)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.im.partial_cmp(&b.im).unwrap_or(std::cmp::Ordering::Equal))
}

/// Full eigendecomposition of a real matrix.
///
/// Eigenvalues come from the real Schur form; eigenvectors are null vectors
/// of `A - βI`, one SVD per cluster of (numerically) equal eigenvalues so
/// that repeated semisimple eigenvalues get a full eigenbasis.
pub fn eigen_decompose(a: &DMatrix<f64>) -> Result<ComplexEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(
            "eigendecomposition of non-finite matrix".into(),
        ));
    }
    if n == 0 {
        return Ok(ComplexEigen {
            values: vec![],
            vectors: DMatrix::zeros(0, 0),
            defect: 0.0,
        });
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical(format!("Schur iteration failed to converge (n={n})")))?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().cloned().collect();
    values.sort_by(spectral_order);

    // group numerically coincident eigenvalues
    let tol = 1e-9 * scale.max(1.0);
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for k in 0..n {
        if cluster_of[k] != usize::MAX {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![k];
        cluster_of[k] = id;
        let mut head = 0;
        while head < members.len() {
            let p = members[head];
            for q in 0..n {
                if cluster_of[q] == usize::MAX && (values[p] - values[q]).norm() <= tol {
                    cluster_of[q] = id;
                    members.push(q);
                }
            }
            head += 1;
        }
        members.sort_unstable();
        clusters.push(members);
    }

    let ac = a.map(|v| Complex64::new(v, 0.0));
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut defect = 0.0_f64;
    for members in &clusters {
        let k = members.len();
        let centre = members.iter().map(|&i| values[i]).sum::<Complex64>() / k as f64;
        let mut shifted = ac.clone();
        for d in 0..n {
            shifted[(d, d)] -= centre;
        }
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| {
            svd.singular_values[x]
                .partial_cmp(&svd.singular_values[y])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for (slot, &col) in members.iter().zip(order.iter()) {
            defect = defect.max(svd.singular_values[col] / scale);
            let mut v: DVector<Complex64> = v_t.row(col).transpose().map(|z| z.conj());
            normalize_phase(&mut v);
            vectors.set_column(*slot, &v);
        }
    }
    Ok(ComplexEigen {
        values,
        vectors,
        defect,
    })
}

/// Unit 2-norm, largest-modulus component real and positive.
fn normalize_phase(v: &mut DVector<Complex64>) {
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let pivot = v
        .iter()
        .cloned()
        .max_by(|a, b| {
            a.norm()
                .partial_cmp(&b.norm())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(Complex64::new(1.0, 0.0));
    let phase = pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        *z = *z * phase / norm;
    }
}

/// Ratio of extreme singular values of a complex matrix.
pub fn complex_condition(m: &DMatrix<Complex64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    let max = s.iter().cloned().fold(0.0_f64, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Symmetric PSD square root with negative eigenvalues clamped to zero.
/// Returns the root and the magnitude of the most negative clamped eigenvalue.
pub fn psd_sqrt(b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = b.nrows();
    if n == 1 {
        let v = b[(0, 0)];
        return (
            DMatrix::from_element(1, 1, v.max(0.0).sqrt()),
            (-v).max(0.0),
        );
    }
    let sym = (b + b.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut clamped = 0.0_f64;
    let roots = eig.eigenvalues.map(|l| {
        if l < 0.0 {
            clamped = clamped.max(-l);
        }
        l.max(0.0).sqrt()
    });
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&roots) * q.transpose(), clamped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn pinv_of_identity_is_identity() {
        let (p, info) = pseudo_inverse(&DMatrix::identity(4, 4), PINV_RTOL).unwrap();
        assert_abs_diff_eq!(p, DMatrix::identity(4, 4), epsilon = 1e-14);
        assert_eq!(info.rank, 4);
    }

    #[test]
    fn pinv_rejects_zero_matrix() {
        let err = pseudo_inverse(&DMatrix::zeros(3, 2), PINV_RTOL).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
    }

    #[test]
    fn pinv_truncates_tiny_singular_values() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-12]);
        let (p, info) = pseudo_inverse(&a, PINV_RTOL).unwrap();
        assert_eq!(info.rank, 1);
        assert_abs_diff_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn streaming_matches_direct_lstsq() {
        let rows = 5000;
        let mut acc = StreamingLeastSquares::new(3, 2);
        let mut a = DMatrix::zeros(rows, 3);
        let mut b = DMatrix::zeros(rows, 2);
        for r in 0..rows {
            let t = r as f64 / rows as f64;
            let row = [1.0, t, t * t];
            let rhs = [2.0 - t + 0.5 * t * t + (r as f64).sin() * 1e-3, t.cos()];
            for c in 0..3 {
                a[(r, c)] = row[c];
            }
            b[(r, 0)] = rhs[0];
            b[(r, 1)] = rhs[1];
            acc.push_row(&row, &rhs);
        }
        let (x_stream, _) = acc.solve(PINV_RTOL).unwrap();
        let (x_direct, _) = lstsq(&a, &b, PINV_RTOL).unwrap();
        assert_abs_diff_eq!(x_stream, x_direct, epsilon = 1e-10);
    }

    #[test]
    fn merge_equals_sequential() {
        let mut whole = StreamingLeastSquares::new(2, 1);
        let mut left = StreamingLeastSquares::new(2, 1);
        let mut right = StreamingLeastSquares::new(2, 1);
        for r in 0..300 {
            let x = r as f64 * 0.01;
            let row = [1.0, x];
            let rhs = [3.0 * x - 1.0 + (x * 7.0).sin() * 0.1];
            whole.push_row(&row, &rhs);
            if r < 150 {
                left.push_row(&row, &rhs);
            } else {
                right.push_row(&row, &rhs);
            }
        }
        left.merge(right);
        assert_eq!(left.rows(), 300);
        let (a, _) = whole.solve(PINV_RTOL).unwrap();
        let (b, _) = left.solve(PINV_RTOL).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn eigen_of_rotation_block() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = eigen_decompose(&a).unwrap();
        assert_abs_diff_eq!(e.values[0].im, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1].im, 1.0, epsilon = 1e-12);
        let ac = a.map(|v| Complex64::new(v, 0.0));
        for k in 0..2 {
            let v = e.vectors.column(k);
            let r = &ac * v - v * e.values[k];
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn eigen_of_identity_gives_full_basis() {
        let e = eigen_decompose(&DMatrix::identity(3, 3)).unwrap();
        assert!(complex_condition(&e.vectors) < 1.0 + 1e-9);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let b = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let (s, clamped) = psd_sqrt(&b);
        assert_eq!(clamped, 0.0);
        assert_abs_diff_eq!(&s * &s, b, epsilon = 1e-12);
        let (s, clamped) = psd_sqrt(&DMatrix::from_element(1, 1, -1e-3));
        assert_eq!(s[(0, 0)], 0.0);
        assert_abs_diff_eq!(clamped, 1e-3);
    }
}
