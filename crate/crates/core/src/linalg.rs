//! Tolerance-aware dense linear algebra.
//!
//! Every cut-off in this crate (eigenvalue sign, numerical rank, pseudoinverse
//! truncation) goes through [`TolerancePolicy::tau`], so a verdict on one
//! matrix is consistent across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance with an absolute floor.
///
/// The effective threshold for a matrix `M` is
/// `max(abs_floor, rel_tol * max(1, ‖M‖_F))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TolerancePolicy {
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for TolerancePolicy {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_floor: 1e-12,
        }
    }
}

impl TolerancePolicy {
    pub fn new(rel_tol: f64, abs_floor: f64) -> Result<Self> {
        if !(rel_tol > 0.0 && rel_tol.is_finite()) || !(abs_floor > 0.0 && abs_floor.is_finite()) {
            return Err(Error::PreconditionFailed(format!(
                "tolerances must be positive and finite (rel_tol={rel_tol}, abs_floor={abs_floor})"
            )));
        }
        Ok(Self { rel_tol, abs_floor })
    }

    pub fn tau(&self, m: &DMatrix<f64>) -> f64 {
        self.tau_for_norm(m.norm())
    }

    pub fn tau_for_norm(&self, frobenius: f64) -> f64 {
        self.abs_floor.max(self.rel_tol * frobenius.max(1.0))
    }
}

/// A square matrix stored in exactly symmetric form `(M + Mᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m`. Fails on non-square input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self(symmetrize(&m)))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SymMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// `(M - Mᵀ)/2`, exactly skew.
pub fn antisymmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m - m.transpose())
}

/// Largest absolute entry of `M - Mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows().min(m.ncols());
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} has non-finite entries")))
    }
}

/// Eigenvalues in ascending order together with matching eigenvector columns.
pub fn sym_eigen(m: &SymMatrix) -> Result<(Vec<f64>, DMatrix<f64>)> {
    ensure_finite(m.matrix(), "symmetric matrix")?;
    let n = m.dim();
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(m.matrix().clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Outcome of a semidefiniteness test, with the extreme eigenvalue as evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemidefiniteCheck {
    pub holds: bool,
    /// Largest eigenvalue (for the NSD test) or smallest (for the PSD test).
    pub extreme_eigenvalue: f64,
    pub tau: f64,
}

/// `M ≤ 0` within `tau(M)`.
pub fn is_neg_semidefinite(m: &SymMatrix, tol: &TolerancePolicy) -> Result<SemidefiniteCheck> {
    let (values, _) = sym_eigen(m)?;
    let max_eig = values.last().copied().unwrap_or(0.0);
    let tau = tol.tau(m.matrix());
    Ok(SemidefiniteCheck {
        holds: max_eig <= tau,
        extreme_eigenvalue: max_eig,
        tau,
    })
}

/// `M ≥ 0` within `tau(M)`.
pub fn is_pos_semidefinite(m: &SymMatrix, tol: &TolerancePolicy) -> Result<SemidefiniteCheck> {
    let (values, _) = sym_eigen(m)?;
    let min_eig = values.first().copied().unwrap_or(0.0);
    let tau = tol.tau(m.matrix());
    Ok(SemidefiniteCheck {
        holds: min_eig >= -tau,
        extreme_eigenvalue: min_eig,
        tau,
    })
}

/// Thin singular value decomposition `M = U diag(σ) Vᵀ`, σ descending.
///
/// Computed from the symmetric eigenproblem of `[[0, M], [Mᵀ, 0]]`, whose
/// eigenvalues are `±σᵢ` with eigenvectors `(uᵢ; ±vᵢ)/√2`. nalgebra's bidiagonal
/// SVD returns factors that do not reconstruct some exactly rank-deficient
/// symmetric matrices, while its symmetric eigensolver is backward stable.
/// Columns of `U`, `V` belonging to `σ = 0` are not meaningful.
struct Svd {
    values: Vec<f64>,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
}

fn svd(m: &DMatrix<f64>) -> Svd {
    let (rows, cols) = m.shape();
    let p = rows.min(cols);
    if p == 0 {
        return Svd {
            values: Vec::new(),
            u: DMatrix::zeros(rows, 0),
            v: DMatrix::zeros(cols, 0),
        };
    }
    let mut aug = DMatrix::zeros(rows + cols, rows + cols);
    aug.view_mut((0, rows), (rows, cols)).copy_from(m);
    aug.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
    let eig = SymmetricEigen::new(aug);
    let mut order: Vec<usize> = (0..rows + cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut out = Svd {
        values: Vec::with_capacity(p),
        u: DMatrix::zeros(rows, p),
        v: DMatrix::zeros(cols, p),
    };
    for (k, &i) in order.iter().take(p).enumerate() {
        out.values.push(eig.eigenvalues[i].max(0.0));
        let w = eig.eigenvectors.column(i);
        out.u.set_column(k, &(w.rows(0, rows) * std::f64::consts::SQRT_2));
        out.v.set_column(k, &(w.rows(rows, cols) * std::f64::consts::SQRT_2));
    }
    out
}

/// Singular values in descending order, padded with zeros to `ncols` entries.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut values = svd(m).values;
    values.resize(m.ncols(), 0.0);
    values
}

/// Numerical rank together with the smallest retained singular value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RankInfo {
    pub rank: usize,
    /// Smallest singular value above the threshold (`None` when rank is 0).
    pub smallest_retained: Option<f64>,
    /// Largest singular value at or below the threshold.
    pub largest_dropped: Option<f64>,
    pub tau: f64,
}

pub fn rank_info(m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<RankInfo> {
    ensure_finite(m, "matrix")?;
    let tau = tol.tau(m);
    let values = singular_values(m);
    let mut info = RankInfo {
        rank: 0,
        smallest_retained: None,
        largest_dropped: None,
        tau,
    };
    for s in values {
        if s > tau {
            info.rank += 1;
            info.smallest_retained = Some(info.smallest_retained.map_or(s, |c: f64| c.min(s)));
        } else {
            info.largest_dropped = Some(info.largest_dropped.map_or(s, |c: f64| c.max(s)));
        }
    }
    Ok(info)
}

pub fn rank_svd(m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<usize> {
    Ok(rank_info(m, tol)?.rank)
}

/// Orthonormal basis of the right null space.
pub fn kernel_basis(m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<Vec<DVector<f64>>> {
    ensure_finite(m, "matrix")?;
    let tau = tol.tau(m);
    let cols = m.ncols();
    let f = svd(m);
    let rank = f.values.iter().filter(|&&s| s > tau).count();
    if rank == 0 {
        let id = DMatrix::<f64>::identity(cols, cols);
        return Ok(id.column_iter().map(|c| c.into_owned()).collect());
    }
    // The complement of the retained right singular vectors is the unit
    // eigenspace of the projector I − V_r V_rᵀ.
    let vr = f.v.columns(0, rank);
    let proj = DMatrix::identity(cols, cols) - vr * vr.transpose();
    let (values, vectors) = sym_eigen(&SymMatrix::new(symmetrize(&proj))?)?;
    Ok(values
        .iter()
        .enumerate()
        .rev()
        .take(cols - rank)
        .map(|(i, _)| vectors.column(i).into_owned())
        .collect())
}

/// Symmetric PSD square root; eigenvalues in `[-tau, 0)` are clamped to zero.
pub fn sqrt_psd(m: &SymMatrix, tol: &TolerancePolicy) -> Result<SymMatrix> {
    let (values, vectors) = sym_eigen(m)?;
    let tau = tol.tau(m.matrix());
    if let Some(&min_eig) = values.first() {
        if min_eig < -tau {
            return Err(Error::NotPsd { min_eig, tau });
        }
    }
    let n = m.dim();
    let mut root = DMatrix::zeros(n, n);
    for (i, &lambda) in values.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        let v = vectors.column(i);
        root += s * v * v.transpose();
    }
    SymMatrix::new(root)
}

/// Moore–Penrose pseudoinverse with singular values at or below `tau(M)` zeroed.
pub fn pinv_svd(m: &DMatrix<f64>, tol: &TolerancePolicy) -> Result<DMatrix<f64>> {
    ensure_finite(m, "matrix")?;
    pinv_with_threshold(m, tol.tau(m))
}

/// Pseudoinverse with an explicit singular-value cut-off.
pub fn pinv_with_threshold(m: &DMatrix<f64>, threshold: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let f = svd(m);
    let mut out = DMatrix::zeros(cols, rows);
    for (i, &s) in f.values.iter().enumerate() {
        if s > threshold {
            out += (1.0 / s) * f.v.column(i) * f.u.column(i).transpose();
        }
    }
    Ok(out)
}

/// Block-diagonal stacking of two (possibly empty or non-square) matrices.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar + br, ac + bc);
    out.view_mut((0, 0), (ar, ac)).copy_from(a);
    out.view_mut((ar, ac), (br, bc)).copy_from(b);
    out
}

/// `[[tl, tr], [bl, br]]` assembled from compatible blocks.
pub fn block2x2(
    tl: &DMatrix<f64>,
    tr: &DMatrix<f64>,
    bl: &DMatrix<f64>,
    br: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (r0, c0) = tl.shape();
    let (r1, c1) = br.shape();
    debug_assert_eq!(tr.shape(), (r0, c1));
    debug_assert_eq!(bl.shape(), (r1, c0));
    let mut out = DMatrix::zeros(r0 + r1, c0 + c1);
    out.view_mut((0, 0), (r0, c0)).copy_from(tl);
    out.view_mut((0, c0), (r0, c1)).copy_from(tr);
    out.view_mut((r0, 0), (r1, c0)).copy_from(bl);
    out.view_mut((r0, c0), (r1, c1)).copy_from(br);
    out
}

/// Largest absolute entry (0 for an empty matrix).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn tol() -> TolerancePolicy {
        TolerancePolicy::default()
    }

    #[test]
    fn tau_uses_floor_and_scale() {
        let t = tol();
        assert_eq!(t.tau(&DMatrix::zeros(2, 2)), 1e-9);
        let big = DMatrix::from_element(1, 1, 1e6);
        assert!((t.tau(&big) - 1e-3).abs() < 1e-15);
        let t = TolerancePolicy::new(1e-20, 1e-12).unwrap();
        assert_eq!(t.tau(&DMatrix::zeros(1, 1)), 1e-12);
        assert!(TolerancePolicy::new(0.0, 1e-12).is_err());
        assert!(TolerancePolicy::new(1e-9, -1.0).is_err());
    }

    #[test]
    fn nsd_examples() {
        let m = SymMatrix::new(dmatrix![0.0, 0.0; 0.0, -1.0]).unwrap();
        let r = is_neg_semidefinite(&m, &tol()).unwrap();
        assert!(r.holds);
        assert_eq!(r.extreme_eigenvalue, 0.0);

        let m = SymMatrix::new(dmatrix![1.0]).unwrap();
        let r = is_neg_semidefinite(&m, &tol()).unwrap();
        assert!(!r.holds);
        assert_eq!(r.extreme_eigenvalue, 1.0);
    }

    #[test]
    fn nsd_rejects_nan() {
        let m = SymMatrix::new(dmatrix![f64::NAN]).unwrap();
        assert!(matches!(
            is_neg_semidefinite(&m, &tol()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_svd(&DMatrix::identity(2, 2), &tol()).unwrap(), 2);
        assert_eq!(rank_svd(&DMatrix::zeros(2, 2), &tol()).unwrap(), 0);
        // columns (0,1)ᵀ and (1,-1)ᵀ, determinant -1
        assert_eq!(rank_svd(&dmatrix![0.0, 1.0; 1.0, -1.0], &tol()).unwrap(), 2);
        assert_eq!(rank_svd(&DMatrix::zeros(0, 3), &tol()).unwrap(), 0);
    }

    #[test]
    fn kernel_examples() {
        assert!(kernel_basis(&DMatrix::identity(2, 2), &tol()).unwrap().is_empty());

        let k = kernel_basis(&dmatrix![1.0, 0.0; 0.0, 0.0], &tol()).unwrap();
        assert_eq!(k.len(), 1);
        assert!((k[0][0]).abs() < 1e-14 && (k[0][1].abs() - 1.0).abs() < 1e-14);

        let k = kernel_basis(&dmatrix![1.0, 1.0; 1.0, 1.0], &tol()).unwrap();
        assert_eq!(k.len(), 1);
        assert!((k[0][0] + k[0][1]).abs() < 1e-14);
        assert!((k[0].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn kernel_of_wide_and_empty_matrices() {
        let k = kernel_basis(&dmatrix![1.0, 0.0, 0.0], &tol()).unwrap();
        assert_eq!(k.len(), 2);
        for v in &k {
            assert!(v[0].abs() < 1e-14);
        }
        let k = kernel_basis(&DMatrix::zeros(0, 3), &tol()).unwrap();
        assert_eq!(k.len(), 3);
    }

    #[test]
    fn sqrt_examples() {
        let r = sqrt_psd(&SymMatrix::identity(3), &tol()).unwrap();
        assert!((r.matrix() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);

        let r = sqrt_psd(&SymMatrix::new(dmatrix![4.0, 0.0; 0.0, 9.0]).unwrap(), &tol()).unwrap();
        assert!((r.matrix() - dmatrix![2.0, 0.0; 0.0, 3.0]).norm() < 1e-14);

        let err = sqrt_psd(&SymMatrix::new(dmatrix![-1.0]).unwrap(), &tol());
        assert!(matches!(err, Err(Error::NotPsd { .. })));

        // rounding-level negative eigenvalue is clamped
        let r = sqrt_psd(&SymMatrix::new(dmatrix![1.0, 0.0; 0.0, -1e-13]).unwrap(), &tol()).unwrap();
        assert_eq!(r.matrix()[(1, 1)], 0.0);
    }

    #[test]
    fn pinv_examples() {
        let p = pinv_svd(&DMatrix::identity(2, 2), &tol()).unwrap();
        assert!((p - DMatrix::<f64>::identity(2, 2)).norm() < 1e-14);
        let p = pinv_svd(&DMatrix::zeros(2, 3), &tol()).unwrap();
        assert_eq!(p, DMatrix::zeros(3, 2));
        let p = pinv_svd(&dmatrix![2.0, 0.0; 0.0, 0.0], &tol()).unwrap();
        assert!((p - dmatrix![0.5, 0.0; 0.0, 0.0]).norm() < 1e-15);
        let p = pinv_svd(&DMatrix::zeros(0, 2), &tol()).unwrap();
        assert_eq!(p.shape(), (2, 0));
    }

    #[test]
    fn block_helpers() {
        let a = dmatrix![1.0, 2.0];
        let b = dmatrix![3.0; 4.0];
        let d = block_diag(&a, &b);
        assert_eq!(d.shape(), (3, 3));
        assert_eq!(d[(0, 1)], 2.0);
        assert_eq!(d[(2, 2)], 4.0);
        assert_eq!(d[(1, 0)], 0.0);
        let e = block_diag(&DMatrix::zeros(0, 0), &a);
        assert_eq!(e, a);
    }

    #[test]
    fn asymmetry_and_symmetrize() {
        let m = dmatrix![1.0, 2.0; 4.0, 1.0];
        assert_eq!(asymmetry(&m), 2.0);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.matrix()[(0, 1)], 3.0);
        assert_eq!(s.matrix()[(1, 0)], 3.0);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn pinv_of_rank_deficient_psd_is_a_projector_pair() {
        // nalgebra's own SVD fails to reconstruct this matrix (error ~8e-3).
        let q = dmatrix![
            0.2169077119284866, -0.1022214164191223, -0.455903446298493, -0.1556397266887445;
            -0.1022214164191223, 1.4309873445875696, -0.09576484034826438, -0.18180674721064308;
            -0.455903446298493, -0.09576484034826438, 1.3742992631843032, -0.3014953893273954;
            -0.1556397266887445, -0.18180674721064308, -0.3014953893273954, 1.5174629907773511
        ];
        let p = pinv_svd(&q, &tol()).unwrap();
        let pi = &q * &p;
        assert!(max_abs(&(&pi - pi.transpose())) < 1e-12);
        assert!(max_abs(&(&pi * &pi - &pi)) < 1e-12);
        assert!(max_abs(&(&q * &p * &q - &q)) < 1e-12);
        assert_eq!(rank_svd(&q, &tol()).unwrap(), 3);
        let ker = kernel_basis(&q, &tol()).unwrap();
        assert_eq!(ker.len(), 1);
        assert!((&q * &ker[0]).norm() < 1e-12);
    }
}
