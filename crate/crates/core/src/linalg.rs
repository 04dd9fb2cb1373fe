//! Small dense linear algebra shared by the whole crate: symmetric matrices,
//! the rescaled half-vectorization convention, duplication matrices, and a
//! deterministic symmetric eigensolver.
//!
//! The half-vectorization used here stacks the diagonal entries first, scaled
//! by 1/sqrt(2), followed by the above-diagonal entries in the order
//! (1,2),(1,3),...,(1,m),(2,3),...,(m-1,m). With that convention
//! `vech(A)'vech(A) = ||A||_F^2 / 2` for symmetric `A`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("vector of length {len} is not a half-vectorization of an {m}x{m} matrix (expected {expected})")]
    VechLength { len: usize, m: usize, expected: usize },
    #[error("matrix is not orthogonal: max |O'O - I| = {residual:.3e}")]
    NotOrthogonal { residual: f64 },
    #[error("matrix is not symmetric: |A[{i},{j}] - A[{j},{i}]| = {diff:.3e}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
}

/// Symmetric matrix with single storage of each entry pair (packed lower
/// triangle, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        SymMat { dim, data: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.set(i, i, 1.0);
        }
        s
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                s.set(i, j, f(i, j));
            }
        }
        s
    }

    /// Builds from a dense matrix, requiring exact symmetry.
    pub fn from_dense(a: &DMatrix<f64>) -> Result<Self, LinalgError> {
        assert_eq!(a.nrows(), a.ncols());
        for i in 0..a.nrows() {
            for j in 0..i {
                if a[(i, j)] != a[(j, i)] {
                    return Err(LinalgError::NotSymmetric {
                        i,
                        j,
                        diff: (a[(i, j)] - a[(j, i)]).abs(),
                    });
                }
            }
        }
        Ok(Self::from_fn(a.nrows(), |i, j| a[(i, j)]))
    }

    /// Builds from a dense matrix, averaging the off-diagonal pairs.
    pub fn symmetrize(a: &DMatrix<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        Self::from_fn(a.nrows(), |i, j| {
            if i == j {
                a[(i, i)]
            } else {
                0.5 * (a[(i, j)] + a[(j, i)])
            }
        })
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.get(i, i))
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s
    }
}

/// Index pairs of the half-vectorization of an m x m symmetric matrix:
/// diagonal pairs (t,t) first, then (i,j) with i < j in row-major order.
pub fn vech_pairs(m: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(m * (m + 1) / 2);
    for t in 0..m {
        pairs.push((t, t));
    }
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Position of the pair (i,j), i <= j, inside the half-vectorization order.
#[inline]
pub fn vech_index(m: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < m);
    if i == j {
        i
    } else {
        // above-diagonal block starts at m; row r contributes (m-1-r) entries
        m + i * (m - 1) - i * (i - 1) / 2 + (j - i - 1)
    }
}

/// Half-vectorization with diagonal entries scaled by 1/sqrt(2).
pub fn vech(s: &SymMat) -> DVector<f64> {
    let m = s.dim();
    let mut out = DVector::zeros(m * (m + 1) / 2);
    let inv_sqrt2 = 0.5f64.sqrt();
    for t in 0..m {
        out[t] = s.get(t, t) * inv_sqrt2;
    }
    let mut k = m;
    for i in 0..m {
        for j in (i + 1)..m {
            out[k] = s.get(i, j);
            k += 1;
        }
    }
    out
}

/// `vech` applied to a dense matrix assumed symmetric (upper triangle read).
pub fn vech_dense(a: &DMatrix<f64>) -> DVector<f64> {
    let m = a.nrows();
    let mut out = DVector::zeros(m * (m + 1) / 2);
    let inv_sqrt2 = 0.5f64.sqrt();
    for t in 0..m {
        out[t] = a[(t, t)] * inv_sqrt2;
    }
    let mut k = m;
    for i in 0..m {
        for j in (i + 1)..m {
            out[k] = a[(i, j)];
            k += 1;
        }
    }
    out
}

/// Inverse of `vech`: rebuilds the symmetric matrix.
pub fn unvech(v: &DVector<f64>, m: usize) -> Result<SymMat, LinalgError> {
    let expected = m * (m + 1) / 2;
    if v.len() != expected {
        return Err(LinalgError::VechLength { len: v.len(), m, expected });
    }
    let mut s = SymMat::zeros(m);
    let sqrt2 = 2.0f64.sqrt();
    for t in 0..m {
        s.set(t, t, v[t] * sqrt2);
    }
    let mut k = m;
    for i in 0..m {
        for j in (i + 1)..m {
            s.set(i, j, v[k]);
            k += 1;
        }
    }
    Ok(s)
}

/// Duplication matrix A_m mapping `vech(S)` to `vec(S)` for symmetric S.
///
/// Satisfies A'A = 2I, K_{m,m} A = A, and AA' = I + K_{m,m}.
#[derive(Debug, Clone)]
pub struct DuplicationMat {
    pub m: usize,
    pub a: DMatrix<f64>,
}

pub fn duplication(m: usize) -> DuplicationMat {
    let p = m * (m + 1) / 2;
    let mut a = DMatrix::zeros(m * m, p);
    let sqrt2 = 2.0f64.sqrt();
    for t in 0..m {
        a[(t * m + t, t)] = sqrt2;
    }
    let mut k = m;
    for i in 0..m {
        for j in (i + 1)..m {
            // column-major vec: entry (r,c) sits at c*m + r
            a[(j * m + i, k)] = 1.0;
            a[(i * m + j, k)] = 1.0;
            k += 1;
        }
    }
    DuplicationMat { m, a }
}

/// Commutation matrix K_{m,m}: K vec(A) = vec(A').
pub fn commutation(m: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(m * m, m * m);
    for i in 0..m {
        for j in 0..m {
            k[(j * m + i, i * m + j)] = 1.0;
        }
    }
    k
}

/// Orthogonal representation of conjugation on half-vectorized symmetric
/// matrices: `vech(O^{-1} S O) = rotation_rep(O) * vech(S)`.
pub fn rotation_rep(o: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let m = o.nrows();
    assert_eq!(m, o.ncols());
    let residual = (o.transpose() * o - DMatrix::identity(m, m)).abs().max();
    if residual > 1e-10 {
        return Err(LinalgError::NotOrthogonal { residual });
    }
    let a = duplication(m).a;
    let ot = o.transpose();
    Ok(0.5 * a.transpose() * ot.kronecker(&ot) * a)
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order
/// and a fixed sign convention: the largest-magnitude entry of each
/// eigenvector is positive, ties broken by the first index.
pub fn sym_eig(s: &SymMat) -> (DVector<f64>, DMatrix<f64>) {
    sym_eig_dense(&s.to_dense())
}

/// `sym_eig` on a dense symmetric matrix.
pub fn sym_eig_dense(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap()
            .then(i.cmp(&j))
    });
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vectors = DMatrix::zeros(n, n);
    for (out_col, &src_col) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src_col).clone_owned();
        fix_sign(&mut col);
        vectors.set_column(out_col, &col);
    }
    (values, vectors)
}

fn fix_sign(v: &mut DVector<f64>) {
    let mut imax = 0;
    let mut best = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            imax = i;
        }
    }
    if v[imax] < 0.0 {
        v.neg_mut();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_symmetric(m: usize, rng: &mut ChaCha8Rng) -> SymMat {
        SymMat::from_fn(m, |_, _| rng.sample(StandardNormal))
    }

    fn random_orthogonal(m: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = a.qr();
        qr.q()
    }

    #[test]
    fn vech_of_identity_2x2() {
        let s = SymMat::identity(2);
        let v = vech(&s);
        let r = 0.5f64.sqrt();
        assert_relative_eq!(v[0], r, max_relative = 1e-15);
        assert_relative_eq!(v[1], r, max_relative = 1e-15);
        assert_relative_eq!(v[2], 0.0);
    }

    #[test]
    fn vech_norm_is_half_frobenius() {
        let mut rng = crate::rng::substream(7, &[1]);
        for _ in 0..50 {
            let s = random_symmetric(5, &mut rng);
            let v = vech(&s);
            assert_relative_eq!(
                v.dot(&v),
                0.5 * s.frobenius_norm_sq(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn vech_ordering_matches_enumeration() {
        // entries a_ij = (i+1) + (j+1), 3x3
        let s = SymMat::from_fn(3, |i, j| (i + j + 2) as f64);
        let v = vech(&s);
        // brute-force construction in the stated order
        let mut expected = Vec::new();
        for t in 0..3 {
            expected.push(s.get(t, t) / 2.0f64.sqrt());
        }
        for i in 0..3 {
            for j in (i + 1)..3 {
                expected.push(s.get(i, j));
            }
        }
        for (k, e) in expected.iter().enumerate() {
            assert_relative_eq!(v[k], *e, max_relative = 1e-15);
        }
    }

    #[test]
    fn vech_index_agrees_with_pairs() {
        for m in 1..8 {
            for (pos, (i, j)) in vech_pairs(m).into_iter().enumerate() {
                assert_eq!(vech_index(m, i, j), pos, "m={m} pair=({i},{j})");
            }
        }
    }

    #[test]
    fn unvech_round_trip() {
        let mut rng = crate::rng::substream(7, &[2]);
        for _ in 0..20 {
            let v = DVector::from_fn(6, |_, _| rng.sample::<f64, _>(StandardNormal));
            let s = unvech(&v, 3).unwrap();
            let back = vech(&s);
            assert_relative_eq!((back - &v).abs().max(), 0.0, epsilon = 1e-14);
        }
        let z = DVector::zeros(6);
        assert_eq!(unvech(&z, 3).unwrap(), SymMat::zeros(3));
        assert!(unvech(&z, 4).is_err());
    }

    #[test]
    fn unvech_of_identity_vech() {
        let r = 0.5f64.sqrt();
        let v = DVector::from_vec(vec![r, r, 0.0]);
        let s = unvech(&v, 2).unwrap();
        assert_relative_eq!((s.to_dense() - DMatrix::identity(2, 2)).abs().max(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn duplication_identities() {
        for m in 2..6 {
            let a = duplication(m).a;
            let p = m * (m + 1) / 2;
            let k = commutation(m);
            let ata: DMatrix<f64> = a.transpose() * &a;
            assert_relative_eq!((ata - 2.0 * DMatrix::<f64>::identity(p, p)).abs().max(), 0.0, epsilon = 1e-14);
            assert_relative_eq!(((&k * &a) - &a).abs().max(), 0.0, epsilon = 1e-14);
            let aat = &a * a.transpose();
            assert_relative_eq!((aat - (DMatrix::identity(m * m, m * m) + k)).abs().max(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn duplication_maps_vech_to_vec() {
        let mut rng = crate::rng::substream(7, &[3]);
        let s = random_symmetric(4, &mut rng);
        let a = duplication(4).a;
        let dense = s.to_dense();
        let vec_s = DVector::from_column_slice(dense.as_slice());
        let from_vech = a * vech(&s);
        assert_relative_eq!((vec_s - from_vech).abs().max(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rotation_rep_identity() {
        let r = rotation_rep(&DMatrix::identity(3, 3)).unwrap();
        assert_relative_eq!((r - DMatrix::identity(6, 6)).abs().max(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn rotation_rep_conjugation_and_group_laws() {
        let mut rng = crate::rng::substream(7, &[4]);
        for _ in 0..100 {
            let o = random_orthogonal(4, &mut rng);
            let s = random_symmetric(4, &mut rng);
            let r = rotation_rep(&o).unwrap();
            let lhs = vech_dense(&(o.transpose() * s.to_dense() * &o));
            let rhs = &r * vech(&s);
            assert!((lhs - rhs).abs().max() < 1e-10);

            let o2 = random_orthogonal(4, &mut rng);
            let r2 = rotation_rep(&o2).unwrap();
            let prod = rotation_rep(&(&o2 * &o)).unwrap();
            assert!((&r * &r2 - prod).abs().max() < 1e-10);

            let rinv = rotation_rep(&o.transpose().clone_owned()).unwrap();
            assert!((&r * &rinv - DMatrix::identity(10, 10)).abs().max() < 1e-10);
            // orthogonality of the representation itself
            assert!((r.transpose() * &r - DMatrix::identity(10, 10)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn rotation_rep_rejects_non_orthogonal() {
        let m = DMatrix::from_fn(3, 3, |i, j| (i + j) as f64);
        assert!(rotation_rep(&m).is_err());
    }

    #[test]
    fn sym_eig_diagonal() {
        let s = SymMat::from_fn(3, |i, j| {
            if i == j {
                [3.0, 1.0, 2.0][i]
            } else {
                0.0
            }
        });
        let (vals, _) = sym_eig(&s);
        assert_relative_eq!(vals[0], 3.0, max_relative = 1e-12);
        assert_relative_eq!(vals[1], 2.0, max_relative = 1e-12);
        assert_relative_eq!(vals[2], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sym_eig_reconstruction_and_residual() {
        let mut rng = crate::rng::substream(7, &[5]);
        for _ in 0..20 {
            let s = random_symmetric(6, &mut rng);
            let dense = s.to_dense();
            let (vals, vecs) = sym_eig(&s);
            let recon = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
            assert!((recon - &dense).abs().max() < 1e-10);
            let scale = dense.abs().max().max(1.0);
            for j in 0..6 {
                let r = (&dense * vecs.column(j) - vals[j] * vecs.column(j)).abs().max();
                assert!(r < 1e-9 * scale);
            }
        }
    }

    #[test]
    fn sym_eig_rank_one() {
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let outer = &u * u.transpose();
        let s = SymMat::from_dense(&outer).unwrap();
        let (vals, vecs) = sym_eig(&s);
        assert_relative_eq!(vals[0], u.dot(&u), max_relative = 1e-12);
        for j in 1..4 {
            assert!(vals[j].abs() < 1e-12 * u.dot(&u));
        }
        // sign convention: largest-magnitude entry positive
        let c0 = vecs.column(0);
        let mut imax = 0;
        for i in 0..4 {
            if c0[i].abs() > c0[imax].abs() {
                imax = i;
            }
        }
        assert!(c0[imax] > 0.0);
    }

    #[test]
    fn sym_eig_deterministic() {
        let mut rng = crate::rng::substream(7, &[6]);
        let s = random_symmetric(8, &mut rng);
        let (v1, e1) = sym_eig(&s);
        let (v2, e2) = sym_eig(&s);
        assert_eq!(v1.as_slice(), v2.as_slice());
        assert_eq!(e1.as_slice(), e2.as_slice());
    }
}
