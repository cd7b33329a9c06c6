//! Numerical subspace algebra over complex coordinate spaces: verified
//! spectral decompositions, orthonormalization, complements, principal
//! angles, PSD square roots, and rank/range with explicit tolerances.
//!
//! Every "closure" or "density" statement in the toolkit reduces to the rank
//! and angle comparisons implemented here, so the tolerance conventions in
//! [`Tolerance`] are the single source of truth for such verdicts.
//!
//! All singular-value and Hermitian-eigen decompositions flow through
//! [`svd_thin`] and [`herm_eigen`], which check the returned factorization by
//! reconstruction and orthonormality residuals. When the fast library routine
//! fails those checks (its iterative complex SVD can silently misconverge on
//! degenerate spectra) the computation is redone with in-crate Jacobi
//! algorithms, which are unconditionally backward stable.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Absolute floor under which singular values are always treated as zero.
pub const SIGMA_FLOOR: f64 = 1e-12;

/// Shared tolerances: relative singular-value cutoff for ranks, absolute
/// residual bound for operator identities, and principal-angle bound for
/// subspace comparisons.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerance {
    pub rank_rel: f64,
    pub residual_abs: f64,
    pub angle: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rank_rel: 1e-8,
            residual_abs: 1e-8,
            angle: 1e-6,
        }
    }
}

impl Tolerance {
    pub fn validate(&self) -> Result<()> {
        if self.rank_rel <= 0.0 || self.residual_abs <= 0.0 || self.angle <= 0.0 {
            return Err(Error::Invalid("tolerances must be strictly positive".into()));
        }
        Ok(())
    }

    /// Singular-value cutoff for a spectrum with maximum `sigma_max`:
    /// relative to the largest singular value, with an absolute floor.
    pub fn sigma_cutoff(&self, sigma_max: f64) -> f64 {
        (self.rank_rel * sigma_max).max(SIGMA_FLOOR)
    }

    /// Absolute singular-value cutoff for defect operators Δ = (I − M*M)^{1/2}.
    /// Since ‖Δ‖ ≤ 1, the natural scale is 1 and a direction is genuine when
    /// the Gram eigenvalue exceeds rank_rel, i.e. σ_Δ > sqrt(rank_rel). The
    /// square root matters: rounding noise of order eps in the Gram is
    /// amplified to sqrt(eps) ≈ 1e-8 in Δ, so a relative cutoff on Δ keeps
    /// noise directions whenever the true defect vanishes.
    pub fn defect_sigma_cutoff(&self) -> f64 {
        self.rank_rel.sqrt()
    }
}

/// A subspace of C^ambient_dim represented by a matrix with orthonormal columns.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    ambient_dim: usize,
    columns: CMat,
}

impl SubspaceBasis {
    /// Wrap a matrix whose columns are already orthonormal (validated).
    pub fn from_orthonormal(columns: CMat) -> Result<Self> {
        let r = columns.ncols();
        let gram = columns.adjoint() * &columns;
        let dev = (gram - CMat::identity(r, r)).norm();
        if dev > 1e-9 * (r as f64 + 1.0).sqrt() {
            return Err(Error::Invalid(format!(
                "columns not orthonormal (deviation {dev:.3e})"
            )));
        }
        Ok(SubspaceBasis {
            ambient_dim: columns.nrows(),
            columns,
        })
    }

    /// The zero subspace of the given ambient space.
    pub fn zero(ambient_dim: usize) -> Self {
        SubspaceBasis {
            ambient_dim,
            columns: CMat::zeros(ambient_dim, 0),
        }
    }

    /// The full ambient space.
    pub fn full(ambient_dim: usize) -> Self {
        SubspaceBasis {
            ambient_dim,
            columns: CMat::identity(ambient_dim, ambient_dim),
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &CMat {
        &self.columns
    }

    /// The orthogonal projector B·B* onto the subspace.
    pub fn projector(&self) -> CMat {
        &self.columns * self.columns.adjoint()
    }

    /// Coordinates of ambient vectors with respect to this basis (B*·x).
    pub fn coords(&self, x: &CMat) -> CMat {
        self.columns.adjoint() * x
    }
}

/// Thin SVD A = U·diag(s)·V^H with s sorted non-increasing, U: m×k, V: n×k,
/// k = min(m, n). The factorization is verified by reconstruction and
/// orthonormality residuals; on failure it is recomputed with a one-sided
/// Jacobi sweep. Columns are orthonormal even past the numerical rank.
pub fn svd_thin(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return (CMat::zeros(m, 0), Vec::new(), CMat::zeros(n, 0));
    }
    if let Some(svd) = a.clone().try_svd(true, true, f64::EPSILON, 1000) {
        let u = svd.u.expect("left factor requested");
        let vt = svd.v_t.expect("right factor requested");
        let (u, s, v) = sort_svd(u, svd.singular_values.iter().copied().collect(), vt.adjoint());
        if svd_ok(a, &u, &s, &v) {
            return (u, s, v);
        }
    }
    let (u, s, v) = jacobi_svd(a);
    if !svd_ok(a, &u, &s, &v) {
        panic!("Jacobi SVD failed verification; input is likely non-finite");
    }
    (u, s, v)
}

/// Sort an SVD triple by non-increasing singular value.
fn sort_svd(u: CMat, s: Vec<f64>, v: CMat) -> (CMat, Vec<f64>, CMat) {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return (u, s, v);
    }
    let mut u2 = CMat::zeros(u.nrows(), u.ncols());
    let mut v2 = CMat::zeros(v.nrows(), v.ncols());
    let mut s2 = Vec::with_capacity(s.len());
    for (dst, &src) in order.iter().enumerate() {
        u2.set_column(dst, &u.column(src));
        v2.set_column(dst, &v.column(src));
        s2.push(s[src]);
    }
    (u2, s2, v2)
}

/// Verification: Frobenius reconstruction residual and factor orthonormality.
fn svd_ok(a: &CMat, u: &CMat, s: &[f64], v: &CMat) -> bool {
    let k = s.len();
    let smax = s.first().copied().unwrap_or(0.0);
    let scale = (1.0 + smax) * (k as f64 + 1.0).sqrt();
    let gram_u = (u.adjoint() * u - CMat::identity(k, k)).norm();
    let gram_v = (v.adjoint() * v - CMat::identity(k, k)).norm();
    if gram_u > 1e-9 * scale || gram_v > 1e-9 * scale {
        return false;
    }
    let mut us = u.clone();
    for (i, &si) in s.iter().enumerate() {
        us.column_mut(i).scale_mut(si);
    }
    let recon = (a - us * v.adjoint()).norm();
    recon <= 1e-9 * scale
}

/// One-sided (Hestenes) Jacobi SVD: orthogonalizes columns by complex plane
/// rotations. Slow but unconditionally backward stable.
fn jacobi_svd(a: &CMat) -> (CMat, Vec<f64>, CMat) {
    let (m, n) = a.shape();
    if m < n {
        let (u, s, v) = jacobi_svd(&a.adjoint());
        return (v, s, u);
    }
    let mut b = a.clone();
    let mut v = CMat::identity(n, n);
    for _sweep in 0..60 {
        let mut max_ratio = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0f64;
                let mut beta = 0.0f64;
                let mut gamma = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)];
                    alpha += bp.norm_sqr();
                    beta += bq.norm_sqr();
                    gamma += bp.conj() * bq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let r = gamma.norm();
                let ratio = r / (alpha.sqrt() * beta.sqrt());
                max_ratio = max_ratio.max(ratio);
                if ratio <= 1e-15 {
                    continue;
                }
                // Phase w makes the column overlap real; the real rotation
                // then zeroes it exactly.
                let w = (gamma / r).conj();
                let tau = (beta - alpha) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let bp = b[(i, p)];
                    let bq = b[(i, q)] * w;
                    b[(i, p)] = bp.scale(c) - bq.scale(s);
                    b[(i, q)] = bp.scale(s) + bq.scale(c);
                }
                for i in 0..n {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)] * w;
                    v[(i, p)] = vp.scale(c) - vq.scale(s);
                    v[(i, q)] = vp.scale(s) + vq.scale(c);
                }
            }
        }
        if max_ratio <= 1e-15 {
            break;
        }
    }
    let mut s: Vec<f64> = (0..n).map(|j| b.column(j).norm()).collect();
    let (mut u, s_sorted, v_sorted) = sort_svd(b, s.clone(), v);
    s = s_sorted;
    let smax = s.first().copied().unwrap_or(0.0);
    let floor = smax * 1e-14;
    let mut firm = 0usize;
    for j in 0..n {
        if s[j] > floor && s[j] > 0.0 {
            u.column_mut(j).scale_mut(1.0 / s[j]);
            firm = j + 1;
        } else {
            s[j] = if s[j] > 0.0 { s[j] } else { 0.0 };
        }
    }
    complete_orthonormal_in_place(&mut u, firm);
    (u, s, v_sorted)
}

/// Overwrite columns firm.. with a deterministic orthonormal completion of
/// the leading firm columns (coordinate candidates, re-orthogonalized twice).
fn complete_orthonormal_in_place(u: &mut CMat, firm: usize) {
    let (m, k) = u.shape();
    let mut have = firm;
    let mut cand = 0usize;
    while have < k && cand < m {
        let mut x = CVec::zeros(m);
        x[cand] = Complex64::new(1.0, 0.0);
        for _ in 0..2 {
            for j in 0..have {
                let proj = u.column(j).dotc(&x);
                let col = u.column(j).into_owned();
                x -= col * proj;
            }
        }
        let nrm = x.norm();
        if nrm > 0.5 {
            x.scale_mut(1.0 / nrm);
            u.set_column(have, &x);
            have += 1;
        }
        cand += 1;
    }
    assert_eq!(have, k, "orthonormal completion exhausted candidates");
}

/// Hermitian eigendecomposition A = Q·diag(λ)·Q^H with λ sorted
/// non-increasing, verified by reconstruction; falls back to a two-sided
/// Jacobi eigensolver when the library routine misconverges. The input is
/// Hermitianized as (A + A^H)/2 first.
pub fn herm_eigen(a: &CMat) -> (Vec<f64>, CMat) {
    let dim = a.nrows();
    assert_eq!(dim, a.ncols(), "herm_eigen needs a square matrix");
    if dim == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let herm = (a + a.adjoint()).scale(0.5);
    if let Some(eig) = nalgebra::SymmetricEigen::try_new(herm.clone(), f64::EPSILON, 1000) {
        let (vals, q) = sort_eigen(
            eig.eigenvalues.iter().copied().collect(),
            eig.eigenvectors,
        );
        if eigen_ok(&herm, &vals, &q) {
            return (vals, q);
        }
    }
    let (vals, q) = jacobi_herm_eigen(&herm);
    if !eigen_ok(&herm, &vals, &q) {
        panic!("Jacobi eigensolver failed verification; input is likely non-finite");
    }
    (vals, q)
}

fn sort_eigen(vals: Vec<f64>, q: CMat) -> (Vec<f64>, CMat) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap());
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return (vals, q);
    }
    let mut q2 = CMat::zeros(q.nrows(), q.ncols());
    let mut v2 = Vec::with_capacity(vals.len());
    for (dst, &src) in order.iter().enumerate() {
        q2.set_column(dst, &q.column(src));
        v2.push(vals[src]);
    }
    (v2, q2)
}

fn eigen_ok(herm: &CMat, vals: &[f64], q: &CMat) -> bool {
    let dim = vals.len();
    let lmax = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let scale = (1.0 + lmax) * (dim as f64 + 1.0).sqrt();
    let gram = (q.adjoint() * q - CMat::identity(dim, dim)).norm();
    if gram > 1e-9 * scale {
        return false;
    }
    let mut ql = q.clone();
    for (i, &v) in vals.iter().enumerate() {
        ql.column_mut(i).scale_mut(v);
    }
    (herm - ql * q.adjoint()).norm() <= 1e-9 * scale
}

/// Classical two-sided Jacobi eigensolver for Hermitian matrices.
fn jacobi_herm_eigen(herm: &CMat) -> (Vec<f64>, CMat) {
    let dim = herm.nrows();
    let mut a = herm.clone();
    let mut q = CMat::identity(dim, dim);
    let scale0 = a.iter().fold(0.0f64, |m, v| m.max(v.norm())).max(1e-300);
    for _sweep in 0..60 {
        let mut max_off = 0.0f64;
        for p in 0..dim {
            for q_i in (p + 1)..dim {
                let apq = a[(p, q_i)];
                let r = apq.norm();
                max_off = max_off.max(r);
                if r <= 1e-15 * scale0 {
                    continue;
                }
                let app = a[(p, p)].re;
                let aqq = a[(q_i, q_i)].re;
                let w = (apq / r).conj();
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                // Columns: col q ×= w, then rotate (p, q).
                for i in 0..dim {
                    let xp = a[(i, p)];
                    let xq = a[(i, q_i)] * w;
                    a[(i, p)] = xp.scale(c) - xq.scale(s);
                    a[(i, q_i)] = xp.scale(s) + xq.scale(c);
                }
                // Rows: row q ×= conj(w), then rotate (p, q).
                for j in 0..dim {
                    let xp = a[(p, j)];
                    let xq = a[(q_i, j)] * w.conj();
                    a[(p, j)] = xp.scale(c) - xq.scale(s);
                    a[(q_i, j)] = xp.scale(s) + xq.scale(c);
                }
                for i in 0..dim {
                    let xp = q[(i, p)];
                    let xq = q[(i, q_i)] * w;
                    q[(i, p)] = xp.scale(c) - xq.scale(s);
                    q[(i, q_i)] = xp.scale(s) + xq.scale(c);
                }
            }
        }
        if max_off <= 1e-15 * scale0 {
            break;
        }
    }
    let vals: Vec<f64> = (0..dim).map(|i| a[(i, i)].re).collect();
    sort_eigen(vals, q)
}

/// Operator (spectral) norm; 0 for empty matrices.
pub fn op_norm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    singular_values(a).first().copied().unwrap_or(0.0)
}

/// Singular values in non-increasing order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Vec::new();
    }
    svd_thin(a).1
}

/// Orthonormal basis for the column span of `vectors`, keeping singular
/// directions with σ above the relative cutoff.
pub fn orthonormalize(vectors: &CMat, tol: &Tolerance) -> SubspaceBasis {
    let ambient = vectors.nrows();
    if vectors.ncols() == 0 || ambient == 0 {
        return SubspaceBasis::zero(ambient);
    }
    let (u, s, _v) = svd_thin(vectors);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    if sigma_max <= SIGMA_FLOOR {
        return SubspaceBasis::zero(ambient);
    }
    let cutoff = tol.sigma_cutoff(sigma_max);
    let rank = s.iter().filter(|&&x| x > cutoff).count();
    SubspaceBasis {
        ambient_dim: ambient,
        columns: u.columns(0, rank).into_owned(),
    }
}

/// Orthonormal basis for the column span with an absolute singular-value
/// cutoff, for spectra whose natural scale is fixed rather than relative to
/// the data (defect operators, whose norm never exceeds 1).
pub fn orthonormalize_abs(vectors: &CMat, abs_cutoff: f64) -> SubspaceBasis {
    let ambient = vectors.nrows();
    if vectors.ncols() == 0 || ambient == 0 {
        return SubspaceBasis::zero(ambient);
    }
    let (u, s, _v) = svd_thin(vectors);
    let rank = s.iter().filter(|&&x| x > abs_cutoff).count();
    SubspaceBasis {
        ambient_dim: ambient,
        columns: u.columns(0, rank).into_owned(),
    }
}

/// Orthogonal complement of a subspace in its ambient space, via the verified
/// Hermitian eigendecomposition of the projector.
pub fn complement(b: &SubspaceBasis) -> SubspaceBasis {
    let dim = b.ambient_dim();
    if b.rank() == 0 {
        return SubspaceBasis::full(dim);
    }
    if b.rank() == dim {
        return SubspaceBasis::zero(dim);
    }
    // Eigenvalues of the projector are ~1 on the span and ~0 on the
    // complement, so a fixed 0.5 split keeps the rank exact.
    let (vals, q) = herm_eigen(&b.projector());
    let keep: Vec<usize> = (0..dim).filter(|&i| vals[i] < 0.5).collect();
    debug_assert_eq!(keep.len(), dim - b.rank());
    let mut cols = CMat::zeros(dim, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        cols.set_column(dst, &q.column(src));
    }
    SubspaceBasis {
        ambient_dim: dim,
        columns: cols,
    }
}

/// How far `small` sticks out of `big`: ‖(I − P_big)·small‖.
pub fn containment_residual(big: &SubspaceBasis, small: &SubspaceBasis) -> f64 {
    if small.rank() == 0 {
        return 0.0;
    }
    let proj = big.projector() * small.columns();
    op_norm(&(small.columns() - proj))
}

/// big ⊖ small, after checking small ⊆ big.
pub fn relative_complement(
    big: &SubspaceBasis,
    small: &SubspaceBasis,
    tol: &Tolerance,
) -> Result<SubspaceBasis> {
    if big.ambient_dim() != small.ambient_dim() {
        return Err(Error::Shape("ambient dims differ".into()));
    }
    let residual = containment_residual(big, small);
    if residual > tol.residual_abs.max(tol.angle) {
        return Err(Error::Containment { residual });
    }
    if small.rank() == 0 {
        return Ok(big.clone());
    }
    // (I − P_small)·big spans big ⊖ small when small ⊆ big.
    let proj = small.projector() * big.columns();
    let diff = big.columns() - proj;
    Ok(orthonormalize(&diff, tol))
}

/// Principal angles between two subspaces of a common ambient space, in
/// non-decreasing order; the list has min(rank1, rank2) entries.
pub fn principal_angles(b1: &SubspaceBasis, b2: &SubspaceBasis) -> Vec<f64> {
    if b1.rank() == 0 || b2.rank() == 0 {
        return Vec::new();
    }
    let overlap = b1.columns().adjoint() * b2.columns();
    let mut cosines = singular_values(&overlap);
    cosines.truncate(b1.rank().min(b2.rank()));
    cosines
        .iter()
        .map(|&c| c.clamp(-1.0, 1.0).acos())
        .collect()
}

/// True iff b1 ⊆ b2 within the angle tolerance.
pub fn is_contained(b1: &SubspaceBasis, b2: &SubspaceBasis, tol: &Tolerance) -> bool {
    if b1.rank() == 0 {
        return true;
    }
    if b1.rank() > b2.rank() {
        return false;
    }
    let overlap = b2.columns().adjoint() * b1.columns();
    let sv = singular_values(&overlap);
    // b1 ⊆ b2 iff every principal angle between b1 and its shadow in b2 is
    // small, i.e. all rank(b1) cosines are ~1.
    if sv.len() < b1.rank() {
        return false;
    }
    let min_cos = sv[b1.rank() - 1];
    min_cos.clamp(-1.0, 1.0).acos() <= tol.angle
}

/// Subspace equality: equal ranks and mutual containment within angle tol.
pub fn subspace_equal(b1: &SubspaceBasis, b2: &SubspaceBasis, tol: &Tolerance) -> bool {
    b1.rank() == b2.rank() && is_contained(b1, b2, tol) && is_contained(b2, b1, tol)
}

/// Hermitian PSD square root via eigendecomposition. Eigenvalues in
/// [−clip_tol, 0) are clipped to 0; anything below −clip_tol is an error.
pub fn psd_sqrt(a: &CMat, clip_tol: f64) -> Result<CMat> {
    let dim = a.nrows();
    if dim != a.ncols() {
        return Err(Error::Shape("psd_sqrt needs a square matrix".into()));
    }
    if dim == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let herm_dev = op_norm(&(a - a.adjoint()));
    if herm_dev > 1e-8 * (1.0 + op_norm(a)) {
        return Err(Error::Invalid(format!(
            "psd_sqrt input not Hermitian (deviation {herm_dev:.3e})"
        )));
    }
    let (mut vals, q) = herm_eigen(a);
    for v in vals.iter_mut() {
        if *v < -clip_tol {
            return Err(Error::NotContractive { violation: -*v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut qs = q.clone();
    for (i, v) in vals.iter().enumerate() {
        qs.column_mut(i).scale_mut(v.sqrt());
    }
    Ok(qs * q.adjoint())
}

/// Rank of a matrix at the shared tolerance.
pub fn rank(a: &CMat, tol: &Tolerance) -> usize {
    let sv = singular_values(a);
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if sigma_max <= SIGMA_FLOOR {
        return 0;
    }
    let cutoff = tol.sigma_cutoff(sigma_max);
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Orthonormal basis of the range (column space) of a matrix.
pub fn range(a: &CMat, tol: &Tolerance) -> SubspaceBasis {
    orthonormalize(a, tol)
}

/// Minimum-norm least-squares solution X of A·X = B via the SVD pseudoinverse,
/// together with the dimension of A's (numerical) nullspace.
pub fn lstsq(a: &CMat, b: &CMat, tol: &Tolerance) -> (CMat, usize) {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return (CMat::zeros(cols, b.ncols()), cols);
    }
    let (u, s, v) = svd_thin(a);
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let cutoff = if sigma_max <= SIGMA_FLOOR {
        f64::INFINITY
    } else {
        tol.sigma_cutoff(sigma_max)
    };
    let rank = s.iter().filter(|&&x| x > cutoff).count();
    let ub = u.columns(0, rank).adjoint() * b;
    let mut scaled = ub;
    for i in 0..rank {
        scaled.row_mut(i).scale_mut(1.0 / s[i]);
    }
    let x = v.columns(0, rank) * scaled;
    (x, cols - rank)
}

/// Polar factor (closest unitary/isometry) of a matrix. For square input the
/// result is unitary even when the input is rank-deficient: unconstrained
/// directions are completed deterministically from coordinate vectors.
pub fn polar_unitary(a: &CMat) -> CMat {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return CMat::zeros(r, c);
    }
    if r < c {
        return polar_unitary(&a.adjoint()).adjoint();
    }
    let (mut u, s, mut v) = svd_thin(a);
    let smax = s.first().copied().unwrap_or(0.0);
    let firm = s.iter().filter(|&&x| x > smax * 1e-13).count();
    complete_orthonormal_in_place(&mut u, firm);
    complete_orthonormal_in_place(&mut v, firm);
    u * v.adjoint()
}

/// Intersection of two subspaces: complement of the sum of complements.
pub fn intersection(b1: &SubspaceBasis, b2: &SubspaceBasis, tol: &Tolerance) -> SubspaceBasis {
    let c1 = complement(b1);
    let c2 = complement(b2);
    let dim = b1.ambient_dim();
    let stacked = {
        let mut m = CMat::zeros(dim, c1.rank() + c2.rank());
        m.columns_mut(0, c1.rank()).copy_from(c1.columns());
        m.columns_mut(c1.rank(), c2.rank()).copy_from(c2.columns());
        m
    };
    complement(&orthonormalize(&stacked, tol))
}

/// Direct (concatenated) sum of spanning sets, re-orthonormalized.
pub fn span_union(parts: &[&SubspaceBasis], tol: &Tolerance) -> SubspaceBasis {
    let dim = parts
        .first()
        .map(|b| b.ambient_dim())
        .unwrap_or(0);
    let total: usize = parts.iter().map(|b| b.rank()).sum();
    let mut m = CMat::zeros(dim, total);
    let mut at = 0;
    for b in parts {
        m.columns_mut(at, b.rank()).copy_from(b.columns());
        at += b.rank();
    }
    orthonormalize(&m, tol)
}
