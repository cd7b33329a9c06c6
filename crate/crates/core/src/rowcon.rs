//! Row contractions T = [T_1, …, T_n] on C^d: validation, defect operators,
//! purity classification, invariant subspaces, characteristic functions, and
//! seeded generators for test fixtures.

use crate::freeword::Word;
use crate::manop::MultiAnalyticSymbol;
use crate::numsub::{
    op_norm, psd_sqrt, range, CMat, SubspaceBasis, Tolerance,
};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Slack allowed on the row-contraction norm check.
pub const ROW_NORM_SLACK: f64 = 1e-10;

/// A row contraction: an n-tuple of d×d blocks with ‖Σ T_iT_i*‖ ≤ 1.
#[derive(Debug, Clone)]
pub struct RowContraction {
    blocks: Vec<CMat>,
}

impl RowContraction {
    /// Validate shapes and the row-norm bound.
    pub fn new(blocks: Vec<CMat>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Sizing("need at least one block".into()));
        }
        let d = blocks[0].nrows();
        for (i, b) in blocks.iter().enumerate() {
            if b.nrows() != d || b.ncols() != d {
                return Err(Error::Shape(format!(
                    "block {i} is {}x{}, expected {d}x{d}",
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        let t = RowContraction { blocks };
        let norm = op_norm(&t.row());
        if norm > 1.0 + ROW_NORM_SLACK {
            return Err(Error::NotContractive {
                violation: norm - 1.0,
            });
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Block for letter l ∈ 1..=n.
    pub fn block(&self, letter: u8) -> &CMat {
        &self.blocks[(letter - 1) as usize]
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    /// The d×(n·d) row matrix [T_1 … T_n].
    pub fn row(&self) -> CMat {
        let d = self.dim();
        let n = self.n();
        let mut m = CMat::zeros(d, n * d);
        for (i, b) in self.blocks.iter().enumerate() {
            m.view_mut((0, i * d), (d, d)).copy_from(b);
        }
        m
    }

    /// T_α = T_{α_1}·T_{α_2}···T_{α_m} (identity for the empty word).
    pub fn word_product(&self, w: &Word) -> CMat {
        let d = self.dim();
        let mut acc = CMat::identity(d, d);
        for &l in w.letters() {
            acc = acc * self.block(l);
        }
        acc
    }

    /// The completely positive map Ψ(X) = Σ_i T_i X T_i*.
    pub fn psi(&self, x: &CMat) -> CMat {
        let d = self.dim();
        let mut acc = CMat::zeros(d, d);
        for b in &self.blocks {
            acc += b * x * b.adjoint();
        }
        acc
    }
}

/// Defect operators and their ranges: D_T = (I − T*T)^{1/2} on C^{nd} with
/// range 𝒟_T, and D_T* = (I − TT*)^{1/2} on C^d with range 𝒟_T*.
#[derive(Debug, Clone)]
pub struct DefectData {
    pub d_t: CMat,
    pub d_tstar: CMat,
    pub basis_t: SubspaceBasis,
    pub basis_tstar: SubspaceBasis,
}

/// Compute both defect operators and orthonormal bases of their ranges.
pub fn defects(t: &RowContraction, tol: &Tolerance) -> Result<DefectData> {
    let row = t.row();
    let nd = row.ncols();
    let d = row.nrows();
    let gram_t = CMat::identity(nd, nd) - row.adjoint() * &row;
    let gram_tstar = CMat::identity(d, d) - &row * row.adjoint();
    let d_t = psd_sqrt(&gram_t, 100.0 * ROW_NORM_SLACK)?;
    let d_tstar = psd_sqrt(&gram_tstar, 100.0 * ROW_NORM_SLACK)?;
    let basis_t = range(&d_t, tol);
    let basis_tstar = range(&d_tstar, tol);
    Ok(DefectData {
        d_t,
        d_tstar,
        basis_t,
        basis_tstar,
    })
}

/// Residual of the defect intertwining identity T·D_T = D_T*·T.
pub fn defect_intertwine_residual(t: &RowContraction, defs: &DefectData) -> f64 {
    let row = t.row();
    op_norm(&(&row * &defs.d_t - &defs.d_tstar * &row))
}

/// Purity diagnosis from the decay of Ψ^k(I).
#[derive(Debug, Clone, serde::Serialize)]
pub struct PurityReport {
    pub pure: bool,
    /// ‖Ψ^k(I)‖ at the last computed iterate.
    pub tail_norm: f64,
    pub iterations: usize,
    /// ‖Ψ^k(I)‖ for k = 1..=iterations.
    pub curve: Vec<f64>,
    /// Rank of the last iterate: dimension proxy for the space on which the
    /// tuple fails to be pure.
    pub fixed_rank: usize,
}

/// Iterate Ψ^k(I) until it vanishes (pure), plateaus, or hits max_iters.
pub fn classify(t: &RowContraction, max_iters: usize, tol: &Tolerance) -> PurityReport {
    let d = t.dim();
    let mut x = CMat::identity(d, d);
    let mut curve = Vec::new();
    let mut prev = 1.0f64;
    for _ in 0..max_iters.max(1) {
        x = t.psi(&x);
        let norm = op_norm(&x);
        curve.push(norm);
        if norm <= tol.residual_abs * 1e-2 {
            break;
        }
        if (prev - norm).abs() <= 1e-14 * prev.max(1.0) {
            break;
        }
        prev = norm;
    }
    let tail_norm = curve.last().copied().unwrap_or(1.0);
    let pure = tail_norm <= tol.residual_abs;
    let fixed_rank = if pure {
        0
    } else {
        crate::numsub::rank(&x, tol)
    };
    PurityReport {
        pure,
        tail_norm,
        iterations: curve.len(),
        curve,
        fixed_rank,
    }
}

/// Max over i of ‖(I − P_M)·T_i·B_M‖: zero iff M is invariant for every T_i.
pub fn joint_invariance_residual(t: &RowContraction, m: &SubspaceBasis) -> f64 {
    if m.rank() == 0 {
        return 0.0;
    }
    let p = m.projector();
    let mut worst = 0.0f64;
    for b in t.blocks() {
        let image = b * m.columns();
        let out = &image - &p * &image;
        worst = worst.max(op_norm(&out));
    }
    worst
}

/// True iff M is jointly invariant under all T_i within tolerance.
pub fn jointly_invariant(t: &RowContraction, m: &SubspaceBasis, tol: &Tolerance) -> bool {
    joint_invariance_residual(t, m) <= tol.residual_abs
}

/// Characteristic function of a row contraction as a symbol with coefficient
/// spaces 𝒟_T and 𝒟_T* (in the orthonormal bases from [`defects`]), with
/// support truncated at max_degree:
/// the empty word carries −T restricted to 𝒟_T, and the word i·α carries
/// D_T*·T_α*·P_i·D_T, where P_i picks the i-th block of C^{nd}.
pub fn char_function(
    t: &RowContraction,
    max_degree: usize,
    tol: &Tolerance,
) -> Result<MultiAnalyticSymbol> {
    let defs = defects(t, tol)?;
    char_function_with(t, &defs, max_degree, tol)
}

/// [`char_function`] from precomputed defect data.
pub fn char_function_with(
    t: &RowContraction,
    defs: &DefectData,
    max_degree: usize,
    tol: &Tolerance,
) -> Result<MultiAnalyticSymbol> {
    let row = t.row();
    let d = t.dim();
    let n = t.n();
    let bt = &defs.basis_t;
    let bts = &defs.basis_tstar;
    // −T must map 𝒟_T into 𝒟_T* (exact for true contractions); anything
    // outside signals an invalid defect computation.
    let image = &row * bt.columns();
    let leak = op_norm(&(&image - bts.projector() * &image));
    if leak > 1e-8 {
        return Err(Error::Decomposition(format!(
            "constant coefficient leaks outside the *-defect (residual {leak:.3e})"
        )));
    }
    let mut coeffs: BTreeMap<Word, CMat> = BTreeMap::new();
    coeffs.insert(Word::empty(), -(bts.coords(&image)));
    // Precompute D_T·B_T split into letter blocks: block i is P_i·D_T·B_T.
    let dt_cols = &defs.d_t * bt.columns();
    // Word products T_α by grade, extended one letter at a time.
    let mut products: BTreeMap<Word, CMat> = BTreeMap::new();
    products.insert(Word::empty(), CMat::identity(d, d));
    let dstar_coord = bts.coords(&defs.d_tstar);
    for grade in 1..=max_degree {
        let mut next: BTreeMap<Word, CMat> = BTreeMap::new();
        for (alpha, t_alpha) in &products {
            if alpha.len() != grade - 1 {
                continue;
            }
            for j in 1..=n as u8 {
                let mut letters = vec![j];
                letters.extend_from_slice(alpha.letters());
                let w = Word::new(&letters, n)?;
                // w = j·alpha ; coefficient D_T*·T_alpha*·P_j·D_T.
                let pj_dt = dt_cols.rows((j as usize - 1) * d, d);
                let coeff = &dstar_coord * (t_alpha.adjoint() * pj_dt);
                coeffs.insert(w, coeff);
                // Extend products for the next grade: T_{alpha·j'} handled by
                // appending on the right.
            }
            for j in 1..=n as u8 {
                let mut letters = alpha.letters().to_vec();
                letters.push(j);
                let w = Word::new(&letters, n)?;
                next.insert(w, t_alpha * t.block(j));
            }
        }
        products.extend(next);
    }
    MultiAnalyticSymbol::new(n, bt.rank(), bts.rank(), coeffs)
}

/// Random strict row contraction: i.i.d. complex Gaussian-ish blocks scaled
/// so the row norm equals 1 − margin.
pub fn random_row_contraction(
    n: usize,
    d: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> RowContraction {
    assert!(n >= 1 && d >= 1 && margin > 0.0 && margin < 1.0);
    let blocks: Vec<CMat> = (0..n)
        .map(|_| {
            CMat::from_fn(d, d, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        })
        .collect();
    let t = RowContraction {
        blocks,
    };
    let norm = op_norm(&t.row());
    let scale = (1.0 - margin) / norm.max(1e-300);
    let blocks = t.blocks.into_iter().map(|b| b.scale(scale)).collect();
    RowContraction { blocks }
}

/// Random nilpotent row contraction with a block-superdiagonal grading:
/// C^d = G_0 ⊕ … ⊕ G_m with dim G_j = group_dims[j], and every T_i maps
/// G_{j+1} into G_j and kills G_0. Then T_α = 0 whenever |α| > m, so the
/// tuple is pure with exactly vanishing tail and its characteristic function
/// is a polynomial of degree ≤ m + 1.
pub fn random_nilpotent(
    n: usize,
    group_dims: &[usize],
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> RowContraction {
    assert!(n >= 1 && !group_dims.is_empty() && group_dims.iter().all(|&g| g > 0));
    let d: usize = group_dims.iter().sum();
    let offsets: Vec<usize> = group_dims
        .iter()
        .scan(0usize, |acc, &g| {
            let o = *acc;
            *acc += g;
            Some(o)
        })
        .collect();
    let blocks: Vec<CMat> = (0..n)
        .map(|_| {
            let mut b = CMat::zeros(d, d);
            for j in 0..group_dims.len() - 1 {
                for r in 0..group_dims[j] {
                    for c in 0..group_dims[j + 1] {
                        b[(offsets[j] + r, offsets[j + 1] + c)] =
                            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    }
                }
            }
            b
        })
        .collect();
    let t = RowContraction { blocks };
    let norm = op_norm(&t.row());
    if norm <= 1e-12 {
        return t;
    }
    let scale = (1.0 - margin) / norm;
    let blocks = t.blocks.into_iter().map(|b| b.scale(scale)).collect();
    RowContraction { blocks }
}

/// Coordinate span of the first `count` coordinates of C^dim.
pub fn coordinate_span(dim: usize, count: usize) -> SubspaceBasis {
    let mut m = CMat::zeros(dim, count);
    for i in 0..count {
        m[(i, i)] = Complex64::new(1.0, 0.0);
    }
    SubspaceBasis::from_orthonormal(m).expect("coordinate basis")
}
