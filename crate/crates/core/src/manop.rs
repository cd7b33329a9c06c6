//! Multi-analytic operators on the truncated Fock space: symbol algebra,
//! assembly into concrete matrices, defect operators, the associated row
//! isometry, density/Cuntz checks, purely contractive decomposition, and
//! coincidence testing.
//!
//! A multi-analytic operator `M` intertwines the ampliated creation operators
//! and is determined by its symbol coefficients `θ_α : E → E_*`; its action is
//! `M(e_β ⊗ h) = Σ_α e_{βα} ⊗ θ_α h`, truncated to grades `<= N`. On columns
//! supported in grades `<= N − degree` ("interior" columns) the truncated
//! matrix agrees exactly with the infinite-dimensional operator.

use crate::freeword::{ampliate, creation_matrix, FockIndex, Word};
use crate::numsub::{
    self, complement, is_contained, op_norm, orthonormalize, orthonormalize_abs, polar_unitary,
    psd_sqrt, rank,
    singular_values, subspace_equal, CMat, SubspaceBasis, Tolerance,
};
use crate::{Error, Result};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Slack allowed on contractivity checks of symbols and their assemblies.
pub const CONTRACTIVITY_SLACK: f64 = 1e-8;

/// A finitely supported symbol of a multi-analytic operator.
#[derive(Debug, Clone)]
pub struct MultiAnalyticSymbol {
    n: usize,
    dim_e: usize,
    dim_estar: usize,
    coeffs: BTreeMap<Word, CMat>,
    degree: usize,
}

impl MultiAnalyticSymbol {
    /// Build and validate a symbol. Exact-zero coefficient matrices are
    /// dropped; the necessary contractivity condition Σ θ_α*θ_α ⪯ I (within
    /// slack) is enforced.
    pub fn new(
        n: usize,
        dim_e: usize,
        dim_estar: usize,
        coeffs: BTreeMap<Word, CMat>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::Sizing("alphabet size must be >= 1".into()));
        }
        let mut kept = BTreeMap::new();
        for (w, m) in coeffs {
            for &l in w.letters() {
                if l == 0 || l as usize > n {
                    return Err(Error::Invalid(format!(
                        "support word {} outside alphabet 1..={n}",
                        w.to_digits()
                    )));
                }
            }
            if m.nrows() != dim_estar || m.ncols() != dim_e {
                return Err(Error::Shape(format!(
                    "coefficient at {:?} is {}x{}, expected {dim_estar}x{dim_e}",
                    w.to_digits(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
                kept.insert(w, m);
            }
        }
        let degree = kept.keys().map(|w| w.len()).max().unwrap_or(0);
        let sym = MultiAnalyticSymbol {
            n,
            dim_e,
            dim_estar,
            coeffs: kept,
            degree,
        };
        let gram_norm = op_norm(&sym.column_gram());
        if gram_norm > 1.0 + CONTRACTIVITY_SLACK {
            return Err(Error::NotContractive {
                violation: gram_norm - 1.0,
            });
        }
        Ok(sym)
    }

    /// The constant symbol with θ_∅ = a.
    pub fn constant(n: usize, a: CMat) -> Result<Self> {
        let (r, c) = a.shape();
        let mut coeffs = BTreeMap::new();
        coeffs.insert(Word::empty(), a);
        MultiAnalyticSymbol::new(n, c, r, coeffs)
    }

    /// The identity constant symbol on a dim-dimensional coefficient space.
    pub fn identity(n: usize, dim: usize) -> Self {
        MultiAnalyticSymbol::constant(n, CMat::identity(dim, dim)).expect("identity is contractive")
    }

    /// The zero symbol.
    pub fn zero(n: usize, dim_e: usize, dim_estar: usize) -> Self {
        MultiAnalyticSymbol {
            n,
            dim_e,
            dim_estar,
            coeffs: BTreeMap::new(),
            degree: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim_e(&self) -> usize {
        self.dim_e
    }

    pub fn dim_estar(&self) -> usize {
        self.dim_estar
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Coefficient at a word; zero matrix if unsupported.
    pub fn coeff(&self, w: &Word) -> CMat {
        self.coeffs
            .get(w)
            .cloned()
            .unwrap_or_else(|| CMat::zeros(self.dim_estar, self.dim_e))
    }

    /// Supported (word, coefficient) pairs in graded-lex order.
    pub fn support(&self) -> impl Iterator<Item = (&Word, &CMat)> {
        self.coeffs.iter()
    }

    pub fn support_len(&self) -> usize {
        self.coeffs.len()
    }

    /// Σ_α θ_α*θ_α — the Gram matrix of the symbol's column action on E.
    pub fn column_gram(&self) -> CMat {
        let mut g = CMat::zeros(self.dim_e, self.dim_e);
        for m in self.coeffs.values() {
            g += m.adjoint() * m;
        }
        g
    }

    /// Drop coefficients with operator norm below rel_tol times the largest;
    /// used to stabilize the degree of numerically computed symbols.
    pub fn pruned(&self, rel_tol: f64) -> Self {
        let max_norm = self
            .coeffs
            .values()
            .map(op_norm)
            .fold(0.0f64, f64::max);
        let cut = rel_tol * max_norm;
        let kept: BTreeMap<Word, CMat> = self
            .coeffs
            .iter()
            .filter(|(_, m)| op_norm(m) > cut)
            .map(|(w, m)| (w.clone(), m.clone()))
            .collect();
        let degree = kept.keys().map(|w| w.len()).max().unwrap_or(0);
        MultiAnalyticSymbol {
            n: self.n,
            dim_e: self.dim_e,
            dim_estar: self.dim_estar,
            coeffs: kept,
            degree,
        }
    }

    /// Conjugate by constant unitaries: (I⊗v)·Θ·(I⊗u*), giving the symbol
    /// with coefficients v·θ_α·u*.
    pub fn conjugated(&self, u: &CMat, v: &CMat) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for (w, m) in &self.coeffs {
            coeffs.insert(w.clone(), v * m * u.adjoint());
        }
        MultiAnalyticSymbol::new(self.n, u.nrows(), v.nrows(), coeffs)
    }

    /// Assemble the truncated matrix of the multi-analytic operator at
    /// truncation degree cap.
    pub fn assemble(&self, cap: usize) -> Result<AssembledOperator> {
        let idx = FockIndex::new(self.n, cap)?;
        let l = idx.len();
        let mut m = CMat::zeros(l * self.dim_estar, l * self.dim_e);
        for (col, beta) in idx.words().iter().enumerate() {
            for (alpha, theta) in &self.coeffs {
                if beta.len() + alpha.len() > cap {
                    continue;
                }
                let row = idx.position(&beta.concat(alpha)).expect("within cap");
                let mut block = m.view_mut(
                    (row * self.dim_estar, col * self.dim_e),
                    (self.dim_estar, self.dim_e),
                );
                block += theta;
            }
        }
        Ok(AssembledOperator {
            matrix: m,
            idx,
            dim_e: self.dim_e,
            dim_estar: self.dim_estar,
            degree: self.degree,
        })
    }
}

/// Composition of symbols: the symbol of M_φ ∘ M_θ, with coefficient at γ
/// equal to Σ over factorizations γ = αβ of φ_β·θ_α. Degrees add.
pub fn multiply(
    phi: &MultiAnalyticSymbol,
    theta: &MultiAnalyticSymbol,
) -> Result<MultiAnalyticSymbol> {
    multiply_capped(phi, theta, phi.degree() + theta.degree())
}

/// Composition with coefficients beyond word length cap discarded.
pub fn multiply_capped(
    phi: &MultiAnalyticSymbol,
    theta: &MultiAnalyticSymbol,
    cap: usize,
) -> Result<MultiAnalyticSymbol> {
    if phi.n() != theta.n() {
        return Err(Error::Shape("alphabet sizes differ".into()));
    }
    if phi.dim_e() != theta.dim_estar() {
        return Err(Error::Shape(format!(
            "composition dims: phi acts on C^{}, theta maps into C^{}",
            phi.dim_e(),
            theta.dim_estar()
        )));
    }
    let mut coeffs: BTreeMap<Word, CMat> = BTreeMap::new();
    for (alpha, t) in theta.support() {
        for (beta, p) in phi.support() {
            if alpha.len() + beta.len() > cap {
                continue;
            }
            let gamma = alpha.concat(beta);
            let term = p * t;
            coeffs
                .entry(gamma)
                .and_modify(|acc| *acc += &term)
                .or_insert(term);
        }
    }
    MultiAnalyticSymbol::new(theta.n(), theta.dim_e(), phi.dim_estar(), coeffs)
}

/// Left-to-right product Θ_m···Θ_1 of a slice [Θ_1, ..., Θ_m], capped.
pub fn multiply_fold(factors: &[MultiAnalyticSymbol], cap: usize) -> Result<MultiAnalyticSymbol> {
    let first = factors
        .first()
        .ok_or_else(|| Error::Invalid("empty factor list".into()))?;
    let mut acc = first.clone();
    for f in &factors[1..] {
        acc = multiply_capped(f, &acc, cap)?;
    }
    Ok(acc)
}

/// The truncated matrix of a multi-analytic operator together with its
/// indexing data.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub matrix: CMat,
    pub idx: FockIndex,
    pub dim_e: usize,
    pub dim_estar: usize,
    pub degree: usize,
}

impl AssembledOperator {
    pub fn cap(&self) -> usize {
        self.idx.cap()
    }

    /// Number of domain coordinates supported in grades <= g (these occupy the
    /// leading positions of the word-major layout).
    pub fn domain_dim_up_to_grade(&self, g: usize) -> usize {
        self.idx.dim_up_to_grade(g) * self.dim_e
    }

    pub fn codomain_dim_up_to_grade(&self, g: usize) -> usize {
        self.idx.dim_up_to_grade(g) * self.dim_estar
    }

    /// Largest grade unaffected by truncation on the domain side: N − degree
    /// (None if the degree exceeds the truncation).
    pub fn interior_grade(&self) -> Option<usize> {
        self.idx.cap().checked_sub(self.degree)
    }

    /// Number of interior domain coordinates.
    pub fn interior_domain_dim(&self) -> usize {
        match self.interior_grade() {
            Some(g) => self.domain_dim_up_to_grade(g),
            None => 0,
        }
    }

    /// Residual of the intertwining identity M(S_i⊗I) = (S_i⊗I)M on columns
    /// of grade <= N − degree − 1 (where it must hold exactly).
    pub fn intertwining_residual(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        let keep = match self.interior_grade() {
            Some(g) if g >= 1 => self.domain_dim_up_to_grade(g - 1),
            _ => return Ok(0.0),
        };
        for i in 1..=self.idx.n() {
            let s = creation_matrix(i, &self.idx)?;
            let s_dom = ampliate(&s, self.dim_e);
            let s_cod = ampliate(&s, self.dim_estar);
            let diff = &self.matrix * s_dom - s_cod * &self.matrix;
            let restricted = diff.columns(0, keep).into_owned();
            worst = worst.max(op_norm(&restricted));
        }
        Ok(worst)
    }
}

/// Defect operator Δ = (I − M*M)^{1/2} of an assembled symbol, and the
/// orthonormal range of Δ over interior columns (the truncation-honest proxy
/// for the closure of Δ(Γ⊗E)).
#[derive(Debug, Clone)]
pub struct DefectOutput {
    pub delta: CMat,
    pub range: SubspaceBasis,
}

/// Compute the defect of a symbol at truncation cap.
pub fn defect(sym: &MultiAnalyticSymbol, cap: usize, tol: &Tolerance) -> Result<DefectOutput> {
    let op = sym.assemble(cap)?;
    defect_of_assembled(&op, tol)
}

/// Defect from an already assembled operator.
pub fn defect_of_assembled(op: &AssembledOperator, tol: &Tolerance) -> Result<DefectOutput> {
    let norm = op_norm(&op.matrix);
    if norm > 1.0 + CONTRACTIVITY_SLACK {
        return Err(Error::NotContractive {
            violation: norm - 1.0,
        });
    }
    let dim = op.matrix.ncols();
    let gram = CMat::identity(dim, dim) - op.matrix.adjoint() * &op.matrix;
    let delta = psd_sqrt(&gram, 4.0 * CONTRACTIVITY_SLACK)?;
    let keep = op.interior_domain_dim();
    let interior_cols = delta.columns(0, keep).into_owned();
    // Defect spectra are judged on the absolute scale: the square root
    // amplifies Gram rounding noise to ~1e-8, so a cutoff relative to the
    // largest singular value would keep noise directions whenever the true
    // defect vanishes (inner symbols).
    let range = orthonormalize_abs(&interior_cols, tol.defect_sigma_cutoff());
    Ok(DefectOutput { delta, range })
}

/// True iff the constant coefficient strictly contracts: σ_max(θ_∅) < 1 − tol.
pub fn is_purely_contractive(sym: &MultiAnalyticSymbol, tol: &Tolerance) -> bool {
    op_norm(&sym.coeff(&Word::empty())) < 1.0 - tol.residual_abs
}

/// The splitting of a symbol into its purely contractive part and a constant
/// unitary part θ = θ^pure ⊕ (I⊗U).
#[derive(Debug, Clone)]
pub struct PureDecomposition {
    pub pure_part: MultiAnalyticSymbol,
    /// Unitary E^u → θ_∅E^u expressed in the bases below; 0×0 when absent.
    pub unitary: CMat,
    /// Basis of E^u inside E.
    pub domain_u: SubspaceBasis,
    /// Basis of θ_∅E^u inside E_*.
    pub codomain_u: SubspaceBasis,
    /// Basis of E ⊖ E^u (domain of the pure part).
    pub domain_p: SubspaceBasis,
    /// Basis of E_* ⊖ θ_∅E^u (codomain of the pure part).
    pub codomain_p: SubspaceBasis,
}

/// Split off the maximal constant-unitary direct summand of a contractive
/// symbol. E^u starts as ker(I−θ_∅*θ_∅) ∩ (∩_{α≠∅} ker θ_α) and is reduced
/// until the complementary compressions are genuinely block-diagonal.
pub fn purely_contractive_part(
    sym: &MultiAnalyticSymbol,
    tol: &Tolerance,
) -> Result<PureDecomposition> {
    let e = sym.dim_e();
    let theta0 = sym.coeff(&Word::empty());
    // Norm-attaining domain of the whole column: ker(I − Σθ_α*θ_α); by
    // column contractivity this is automatically inside every ker θ_α, α≠∅.
    let gram = sym.column_gram();
    let defect0 = CMat::identity(e, e) - &gram;
    let mut eu = kernel_of_psd(&defect0, tol);
    // Reduce until θ_α(E⊖E^u) stays out of θ_∅E^u for every α (including ∅).
    let mut steps = 0usize;
    loop {
        if eu.rank() == 0 {
            break;
        }
        let fu = orthonormalize(&(&theta0 * eu.columns()), tol);
        let ep = complement(&eu);
        let mut worst = 0.0f64;
        let mut leak_cols: Vec<CMat> = Vec::new();
        for (_, m) in sym.support() {
            let cross = fu.columns().adjoint() * m * ep.columns();
            let nm = op_norm(&cross);
            worst = worst.max(nm);
            if nm > tol.residual_abs {
                // Directions of E^u whose image is hit from outside must leave E^u.
                let hit = fu.columns() * cross;
                leak_cols.push(theta0.adjoint() * hit);
            }
        }
        if worst <= tol.residual_abs {
            break;
        }
        let mut stacked = CMat::zeros(e, leak_cols.iter().map(|c| c.ncols()).sum());
        let mut at = 0;
        for c in &leak_cols {
            stacked.columns_mut(at, c.ncols()).copy_from(c);
            at += c.ncols();
        }
        let bad = orthonormalize(&stacked, tol);
        let keep = numsub::intersection(&eu, &complement(&bad), tol);
        if keep.rank() == eu.rank() {
            return Err(Error::Decomposition(
                "unitary-part reduction stalled without converging".into(),
            ));
        }
        eu = keep;
        steps += 1;
        if steps > e {
            return Err(Error::Decomposition(format!(
                "unitary-part reduction did not converge in {e} steps"
            )));
        }
    }
    let domain_u = eu;
    let codomain_u = orthonormalize(&(&theta0 * domain_u.columns()), tol);
    let domain_p = complement(&domain_u);
    let codomain_p = complement(&codomain_u);
    let unitary = codomain_u.columns().adjoint() * &theta0 * domain_u.columns();
    if domain_u.rank() > 0 {
        let udev = op_norm(
            &(unitary.adjoint() * &unitary - CMat::identity(domain_u.rank(), domain_u.rank())),
        );
        if udev > 1e-8 {
            return Err(Error::Decomposition(format!(
                "extracted constant part is not unitary (deviation {udev:.3e})"
            )));
        }
    }
    let mut pure_coeffs = BTreeMap::new();
    for (w, m) in sym.support() {
        pure_coeffs.insert(
            w.clone(),
            codomain_p.columns().adjoint() * m * domain_p.columns(),
        );
    }
    let pure_part =
        MultiAnalyticSymbol::new(sym.n(), domain_p.rank(), codomain_p.rank(), pure_coeffs)?;
    // Reassembly must reproduce the input.
    let mut worst = 0.0f64;
    for (w, m) in sym.support() {
        let mut rebuilt =
            codomain_p.columns() * pure_part.coeff(w) * domain_p.columns().adjoint();
        if w.is_empty() && domain_u.rank() > 0 {
            rebuilt += codomain_u.columns() * &unitary * domain_u.columns().adjoint();
        }
        worst = worst.max(op_norm(&(m - rebuilt)));
    }
    if worst > 10.0 * tol.residual_abs {
        return Err(Error::Decomposition(format!(
            "pure ⊕ unitary reassembly residual {worst:.3e}"
        )));
    }
    Ok(PureDecomposition {
        pure_part,
        unitary,
        domain_u,
        codomain_u,
        domain_p,
        codomain_p,
    })
}

/// Kernel of a PSD matrix as the span of eigenvectors with eigenvalue below
/// the relative cutoff.
fn kernel_of_psd(a: &CMat, tol: &Tolerance) -> SubspaceBasis {
    let dim = a.nrows();
    if dim == 0 {
        return SubspaceBasis::zero(0);
    }
    let (vals, q) = numsub::herm_eigen(a);
    let max_ev = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cut = tol.sigma_cutoff(max_ev.max(1.0));
    let cols: Vec<usize> = (0..dim).filter(|&i| vals[i].abs() <= cut).collect();
    let mut b = CMat::zeros(dim, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        b.set_column(j, &q.column(i));
    }
    SubspaceBasis::from_orthonormal(b).expect("eigenvector columns are orthonormal")
}

/// The row isometry C = (C_1..C_n) induced on the coordinates of the defect
/// range by C_j(Δf) = Δ((S_j⊗I)f), solved by least squares over a spanning
/// set of interior f.
#[derive(Debug, Clone)]
pub struct RowIsometry {
    /// One square matrix per letter, acting on defect-range coordinates.
    pub c: Vec<CMat>,
    /// Defect range basis (in Γ_N⊗E coordinates) that defines the coordinates.
    pub basis: SubspaceBasis,
    /// Projector (in defect coordinates) onto the span of the constraining
    /// data Δf; the defining relation only determines C there.
    pub constrained: SubspaceBasis,
    /// Max over j of ‖(C_j*C_j − I)‖ compressed to the constrained span.
    pub isometry_defect: f64,
    /// ‖Σ_j C_jC_j* − I‖ compressed to the constrained span.
    pub cuntz_residual: f64,
}

/// Build the row isometry of a symbol's defect at truncation cap.
pub fn row_isometry(
    sym: &MultiAnalyticSymbol,
    cap: usize,
    tol: &Tolerance,
) -> Result<RowIsometry> {
    let op = sym.assemble(cap)?;
    let d = defect_of_assembled(&op, tol)?;
    row_isometry_of_defect(&op, &d, tol)
}

/// Row isometry from precomputed assembly and defect.
pub fn row_isometry_of_defect(
    op: &AssembledOperator,
    d: &DefectOutput,
    tol: &Tolerance,
) -> Result<RowIsometry> {
    let r = d.range.rank();
    let n = op.idx.n();
    if r == 0 {
        return Ok(RowIsometry {
            c: vec![CMat::zeros(0, 0); n],
            basis: d.range.clone(),
            constrained: SubspaceBasis::zero(0),
            isometry_defect: 0.0,
            cuntz_residual: 0.0,
        });
    }
    let span_grade = match op.interior_grade() {
        Some(g) if g >= 1 => g - 1,
        _ => {
            return Err(Error::Truncation(
                "defect range nonzero but no interior spanning grades remain".into(),
            ))
        }
    };
    let keep = op.domain_dim_up_to_grade(span_grade);
    let delta_span = d.delta.columns(0, keep).into_owned();
    let x = d.range.coords(&delta_span);
    let mut c = Vec::with_capacity(n);
    let mut isometry_defect = 0.0f64;
    let constrained = orthonormalize(&x, tol);
    let pc = constrained.projector();
    for j in 1..=n {
        let s = creation_matrix(j, &op.idx)?;
        let s_dom = ampliate(&s, op.dim_e);
        let shifted = &d.delta * s_dom.columns(0, keep).into_owned();
        let y = d.range.coords(&shifted);
        let (cj_t, _) = numsub::lstsq(&x.transpose(), &y.transpose(), tol);
        let cj = cj_t.transpose();
        let resid = op_norm(&(&cj * &x - &y));
        if resid > tol.residual_abs * 100.0 {
            return Err(Error::Truncation(format!(
                "row-isometry defining relation residual {resid:.3e}"
            )));
        }
        let dev = &pc * (cj.adjoint() * &cj - CMat::identity(r, r)) * &pc;
        isometry_defect = isometry_defect.max(op_norm(&dev));
        c.push(cj);
    }
    let mut sum = CMat::zeros(r, r);
    for cj in &c {
        sum += cj * cj.adjoint();
    }
    let cuntz_residual = op_norm(&(&pc * (sum - CMat::identity(r, r)) * &pc));
    Ok(RowIsometry {
        c,
        basis: d.range.clone(),
        constrained,
        isometry_defect,
        cuntz_residual,
    })
}

/// Verdicts of the density condition and the Cuntz property of the defect's
/// row isometry; the two must agree (tested by callers, not assumed).
#[derive(Debug, Clone, serde::Serialize)]
pub struct SzegoReport {
    /// Density condition: range of Δ over all interior columns equals the
    /// range over interior columns of grade >= 1.
    pub satisfied: bool,
    /// Σ C_jC_j* = I on the constrained defect coordinates.
    pub cuntz: bool,
    pub cuntz_residual: f64,
    pub defect_rank: usize,
    /// True when the defect range is zero-dimensional (both verdicts vacuous).
    pub vacuous: bool,
}

/// Check the density condition and the Cuntz property of a symbol's defect.
pub fn szego_check(sym: &MultiAnalyticSymbol, cap: usize, tol: &Tolerance) -> Result<SzegoReport> {
    let op = sym.assemble(cap)?;
    let d = defect_of_assembled(&op, tol)?;
    let full = &d.range;
    let keep = op.interior_domain_dim();
    let from = op.domain_dim_up_to_grade(0);
    let sub = if keep > from {
        let cols = d.delta.columns(from, keep - from).into_owned();
        orthonormalize(&cols, tol)
    } else {
        SubspaceBasis::zero(d.delta.nrows())
    };
    let vacuous = full.rank() == 0;
    let satisfied = subspace_equal(full, &sub, tol);
    let iso = row_isometry_of_defect(&op, &d, tol)?;
    let cuntz = iso.cuntz_residual <= tol.residual_abs.max(100.0 * CONTRACTIVITY_SLACK);
    Ok(SzegoReport {
        satisfied,
        cuntz,
        cuntz_residual: iso.cuntz_residual,
        defect_rank: full.rank(),
        vacuous,
    })
}

/// Outcome of a coincidence test between two symbols.
#[derive(Debug, Clone)]
pub enum CoincideVerdict {
    /// Explicit unitaries with N_α·U = V·M_α for all α; residual is the max
    /// operator-norm violation.
    Witness { u: CMat, v: CMat, residual: f64 },
    /// No witness found, but every necessary invariant matched.
    InvariantsPass,
    Fail {
        reason: String,
    },
}

impl CoincideVerdict {
    pub fn is_witness(&self) -> bool {
        matches!(self, CoincideVerdict::Witness { .. })
    }

    pub fn passed(&self) -> bool {
        !matches!(self, CoincideVerdict::Fail { .. })
    }

    pub fn residual(&self) -> Option<f64> {
        match self {
            CoincideVerdict::Witness { residual, .. } => Some(*residual),
            _ => None,
        }
    }
}

/// Max over the union of supports of ‖N_α·U − V·M_α‖.
pub fn witness_residual(
    m_sym: &MultiAnalyticSymbol,
    n_sym: &MultiAnalyticSymbol,
    u: &CMat,
    v: &CMat,
) -> f64 {
    let mut words: Vec<Word> = m_sym.coeffs.keys().cloned().collect();
    for w in n_sym.coeffs.keys() {
        if !m_sym.coeffs.contains_key(w) {
            words.push(w.clone());
        }
    }
    let mut worst = 0.0f64;
    for w in &words {
        let lhs = n_sym.coeff(w) * u;
        let rhs = v * m_sym.coeff(w);
        worst = worst.max(op_norm(&(lhs - rhs)));
    }
    worst
}

/// Test whether two symbols coincide (equal up to constant unitaries on E and
/// E_*). A supplied witness is verified; otherwise a necessary-invariant
/// screen runs, followed by a heuristic witness search (SVD-aligned start,
/// alternating Procrustes polish, deterministic restarts).
pub fn coincide(
    m_sym: &MultiAnalyticSymbol,
    n_sym: &MultiAnalyticSymbol,
    tol: &Tolerance,
    witness: Option<(&CMat, &CMat)>,
) -> CoincideVerdict {
    if m_sym.n() != n_sym.n() {
        return CoincideVerdict::Fail {
            reason: "alphabet sizes differ".into(),
        };
    }
    if let Some((u, v)) = witness {
        if u.ncols() != m_sym.dim_e()
            || u.nrows() != n_sym.dim_e()
            || v.ncols() != m_sym.dim_estar()
            || v.nrows() != n_sym.dim_estar()
        {
            return CoincideVerdict::Fail {
                reason: "witness dimensions do not match the symbols".into(),
            };
        }
        let residual = witness_residual(m_sym, n_sym, u, v);
        if residual <= tol.residual_abs {
            return CoincideVerdict::Witness {
                u: u.clone(),
                v: v.clone(),
                residual,
            };
        }
        return CoincideVerdict::Fail {
            reason: format!("supplied witness residual {residual:.3e} exceeds tolerance"),
        };
    }
    if m_sym.dim_e() != n_sym.dim_e() || m_sym.dim_estar() != n_sym.dim_estar() {
        return CoincideVerdict::Fail {
            reason: format!(
                "coefficient space dims differ: ({},{}) vs ({},{})",
                m_sym.dim_e(),
                m_sym.dim_estar(),
                n_sym.dim_e(),
                n_sym.dim_estar()
            ),
        };
    }
    // Necessary-invariant screen: per-grade singular values of the stacked
    // coefficient matrices are unitary-conjugation invariants.
    let max_deg = m_sym.degree().max(n_sym.degree());
    let scale = 1.0
        + m_sym
            .coeffs
            .values()
            .map(op_norm)
            .fold(0.0f64, f64::max);
    for g in 0..=max_deg {
        let sm = singular_values(&graded_stack(m_sym, g));
        let sn = singular_values(&graded_stack(n_sym, g));
        let len = sm.len().max(sn.len());
        for i in 0..len {
            let a = sm.get(i).copied().unwrap_or(0.0);
            let b = sn.get(i).copied().unwrap_or(0.0);
            if (a - b).abs() > 1e-6 * scale {
                return CoincideVerdict::Fail {
                    reason: format!(
                        "singular values of grade-{g} stacks differ ({a:.6e} vs {b:.6e})"
                    ),
                };
            }
        }
    }
    // Degenerate case: both symbols are (numerically) zero.
    if m_sym.coeffs.values().map(op_norm).fold(0.0f64, f64::max) <= tol.residual_abs {
        return CoincideVerdict::Witness {
            u: CMat::identity(m_sym.dim_e(), m_sym.dim_e()),
            v: CMat::identity(m_sym.dim_estar(), m_sym.dim_estar()),
            residual: witness_residual(
                m_sym,
                n_sym,
                &CMat::identity(m_sym.dim_e(), m_sym.dim_e()),
                &CMat::identity(m_sym.dim_estar(), m_sym.dim_estar()),
            ),
        };
    }
    // Heuristic search.
    let e = m_sym.dim_e();
    let mut starts: Vec<CMat> = vec![CMat::identity(e, e)];
    if let Some(u0) = kron_aligned_start(m_sym, n_sym) {
        starts.push(u0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6f_72_62_69);
    for _ in 0..6 {
        let g = CMat::from_fn(e, e, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        starts.push(polar_unitary(&g));
    }
    let mut best: Option<(CMat, CMat, f64)> = None;
    for u0 in starts {
        let (u, v, residual) = procrustes_polish(m_sym, n_sym, u0, 100);
        if best.as_ref().map(|(_, _, r)| residual < *r).unwrap_or(true) {
            best = Some((u, v, residual));
        }
        if let Some((_, _, r)) = &best {
            if *r <= tol.residual_abs {
                break;
            }
        }
    }
    match best {
        Some((u, v, residual)) if residual <= tol.residual_abs => {
            CoincideVerdict::Witness { u, v, residual }
        }
        _ => CoincideVerdict::InvariantsPass,
    }
}

/// Stack the grade-g coefficients vertically in graded-lex order of the word.
fn graded_stack(sym: &MultiAnalyticSymbol, g: usize) -> CMat {
    let words: Vec<&Word> = sym.coeffs.keys().filter(|w| w.len() == g).collect();
    let mut m = CMat::zeros(words.len() * sym.dim_estar(), sym.dim_e());
    for (i, w) in words.iter().enumerate() {
        m.view_mut((i * sym.dim_estar(), 0), (sym.dim_estar(), sym.dim_e()))
            .copy_from(&sym.coeffs[*w]);
    }
    m
}

/// Initial U guess from the dominant singular direction of the alignment
/// operator Σ_α conj(M_α) ⊗ N_α acting on vec(U).
fn kron_aligned_start(
    m_sym: &MultiAnalyticSymbol,
    n_sym: &MultiAnalyticSymbol,
) -> Option<CMat> {
    let e = m_sym.dim_e();
    if e == 0 || e > 24 {
        return None;
    }
    // conj(M_α) is e*×e and N_α is e*×e, so the kron is (e*·e*)×(e·e).
    let estar = m_sym.dim_estar();
    let mut k = CMat::zeros(estar * estar, e * e);
    let mut words: Vec<Word> = m_sym.coeffs.keys().cloned().collect();
    for w in n_sym.coeffs.keys() {
        if !m_sym.coeffs.contains_key(w) {
            words.push(w.clone());
        }
    }
    for w in &words {
        let ma = m_sym.coeff(w).map(|z| z.conj());
        let na = n_sym.coeff(w);
        k += ma.kronecker(&na);
    }
    if k.iter().all(|z| z.norm() <= 1e-14) {
        return None;
    }
    // Top right-singular vector, reshaped column-major into an e×e matrix.
    let (_, _, v) = numsub::svd_thin(&k);
    let top = v.column(0);
    let mut u0 = CMat::zeros(e, e);
    for j in 0..e {
        for i in 0..e {
            u0[(i, j)] = top[j * e + i];
        }
    }
    Some(polar_unitary(&u0))
}

/// Alternating orthogonal-Procrustes polish of a witness pair.
fn procrustes_polish(
    m_sym: &MultiAnalyticSymbol,
    n_sym: &MultiAnalyticSymbol,
    mut u: CMat,
    max_iters: usize,
) -> (CMat, CMat, f64) {
    let estar = m_sym.dim_estar();
    let mut words: Vec<Word> = m_sym.coeffs.keys().cloned().collect();
    for w in n_sym.coeffs.keys() {
        if !m_sym.coeffs.contains_key(w) {
            words.push(w.clone());
        }
    }
    let mut v = CMat::identity(estar, estar);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        // Best V for fixed U maximizes Re tr(V* Σ N_α U M_α*).
        let mut acc = CMat::zeros(estar, estar);
        for w in &words {
            acc += n_sym.coeff(w) * &u * m_sym.coeff(w).adjoint();
        }
        v = polar_unitary(&acc);
        // Best U for fixed V.
        let e = m_sym.dim_e();
        let mut acc_u = CMat::zeros(e, e);
        for w in &words {
            acc_u += n_sym.coeff(w).adjoint() * &v * m_sym.coeff(w);
        }
        u = polar_unitary(&acc_u);
        let r = witness_residual(m_sym, n_sym, &u, &v);
        if (residual - r).abs() < 1e-15 && r <= residual {
            residual = r;
            break;
        }
        residual = r;
        if r < 1e-13 {
            break;
        }
    }
    (u, v, residual)
}

/// Inner test: M*M = I on interior columns.
pub fn is_inner(sym: &MultiAnalyticSymbol, cap: usize, tol: &Tolerance) -> Result<bool> {
    let op = sym.assemble(cap)?;
    let keep = op.interior_domain_dim();
    if keep == 0 {
        return Ok(false);
    }
    let dim = op.matrix.ncols();
    let gram = CMat::identity(dim, dim) - op.matrix.adjoint() * &op.matrix;
    let restricted = gram.columns(0, keep).into_owned();
    Ok(op_norm(&restricted) <= tol.residual_abs.max(10.0 * CONTRACTIVITY_SLACK))
}

/// Outer verdict: the interior part of the codomain is contained in the range
/// of the truncated operator. Always carries a truncation caveat: density in
/// infinite dimensions cannot be decided at finite N.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OuterVerdict {
    pub outer: bool,
    pub truncation_caveat: bool,
}

pub fn is_outer(sym: &MultiAnalyticSymbol, cap: usize, tol: &Tolerance) -> Result<OuterVerdict> {
    let op = sym.assemble(cap)?;
    let rng = numsub::range(&op.matrix, tol);
    let keep = match op.interior_grade() {
        Some(g) => op.codomain_dim_up_to_grade(g),
        None => 0,
    };
    if keep == 0 {
        return Ok(OuterVerdict {
            outer: false,
            truncation_caveat: true,
        });
    }
    let rows = op.matrix.nrows();
    let mut interior = CMat::zeros(rows, keep);
    for i in 0..keep {
        interior[(i, i)] = Complex64::new(1.0, 0.0);
    }
    let interior_basis = SubspaceBasis::from_orthonormal(interior).expect("coordinate basis");
    let outer = is_contained(&interior_basis, &rng, tol);
    Ok(OuterVerdict {
        outer,
        truncation_caveat: true,
    })
}

/// Rank of an assembled operator at the shared tolerance.
pub fn assembled_rank(sym: &MultiAnalyticSymbol, cap: usize, tol: &Tolerance) -> Result<usize> {
    Ok(rank(&sym.assemble(cap)?.matrix, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numsub::Tolerance;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_symbol(n: usize, entries: &[(&str, Complex64)]) -> MultiAnalyticSymbol {
        let mut coeffs = BTreeMap::new();
        for (digits, v) in entries {
            let w = Word::from_digits(digits, n).unwrap();
            coeffs.insert(w, CMat::from_element(1, 1, *v));
        }
        MultiAnalyticSymbol::new(n, 1, 1, coeffs).unwrap()
    }

    /// Coefficients of (z−a)/(1−āz) = −a + (1−|a|²)·Σ_{k≥1} ā^{k−1} z^k.
    fn moebius_coeffs(a: Complex64, max_k: usize) -> Vec<Complex64> {
        let mut out = vec![-a];
        let d = 1.0 - a.norm_sqr();
        for k in 1..=max_k {
            out.push(c(d, 0.0) * a.conj().powu((k - 1) as u32));
        }
        out
    }

    fn moebius_symbol(a: Complex64, max_k: usize) -> MultiAnalyticSymbol {
        let coeffs = moebius_coeffs(a, max_k);
        let entries: Vec<(String, Complex64)> = coeffs
            .iter()
            .enumerate()
            .map(|(k, v)| ("1".repeat(k), *v))
            .collect();
        let refs: Vec<(&str, Complex64)> =
            entries.iter().map(|(s, v)| (s.as_str(), *v)).collect();
        scalar_symbol(1, &refs)
    }

    #[test]
    fn constant_assembles_block_diagonal() {
        let tol = Tolerance::default();
        let a = CMat::from_fn(2, 2, |i, j| c(0.1 * (i + 1) as f64, 0.05 * j as f64));
        let sym = MultiAnalyticSymbol::constant(2, a.clone()).unwrap();
        let op = sym.assemble(2).unwrap();
        let idx = FockIndex::new(2, 2).unwrap();
        let expected = ampliate(&CMat::identity(idx.len(), idx.len()), 2);
        // Block diagonal: M = I_Γ ⊗ A in the word-major layout means each
        // word's 2×2 diagonal block equals A.
        for w in 0..idx.len() {
            let block = op.matrix.view((w * 2, w * 2), (2, 2)).into_owned();
            assert!(op_norm(&(block - &a)) < 1e-14);
        }
        assert_eq!(op.matrix.nrows(), expected.nrows());
        assert!(defect(&sym, 2, &tol).is_ok());
    }

    #[test]
    fn shift_symbol_assembles_to_creation() {
        let sym = scalar_symbol(1, &[("1", c(1.0, 0.0))]);
        let op = sym.assemble(3).unwrap();
        let idx = FockIndex::new(1, 3).unwrap();
        let s = creation_matrix(1, &idx).unwrap();
        assert!(op_norm(&(op.matrix - s)) < 1e-14);
    }

    #[test]
    fn intertwining_holds_on_interior_grades() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut coeffs = BTreeMap::new();
        for digits in ["", "1", "2", "11", "12", "21", "22"] {
            let w = Word::from_digits(digits, 2).unwrap();
            let m = CMat::from_fn(2, 3, |_, _| {
                c(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2))
            });
            coeffs.insert(w, m);
        }
        let sym = MultiAnalyticSymbol::new(2, 3, 2, coeffs).unwrap();
        assert_eq!(sym.degree(), 2);
        let op = sym.assemble(4).unwrap();
        assert!(op.intertwining_residual().unwrap() < 1e-13);
    }

    #[test]
    fn multiply_identity_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut coeffs = BTreeMap::new();
        for digits in ["", "1", "21"] {
            coeffs.insert(
                Word::from_digits(digits, 2).unwrap(),
                CMat::from_fn(2, 2, |_, _| c(rng.gen_range(-0.3..0.3), 0.0)),
            );
        }
        let sym = MultiAnalyticSymbol::new(2, 2, 2, coeffs).unwrap();
        let id = MultiAnalyticSymbol::identity(2, 2);
        let left = multiply(&id, &sym).unwrap();
        let right = multiply(&sym, &id).unwrap();
        for (w, m) in sym.support() {
            assert!(op_norm(&(left.coeff(w) - m)) < 1e-14);
            assert!(op_norm(&(right.coeff(w) - m)) < 1e-14);
        }
    }

    #[test]
    fn multiply_matches_scalar_series_product() {
        // For n=1 the coefficient convolution must reproduce the power-series
        // product of two Möbius-type series.
        let a = c(0.5, 0.0);
        let b = c(-0.3, 0.4);
        let deg = 8usize;
        let pa = moebius_symbol(a, deg);
        let pb = moebius_symbol(b, deg);
        let prod = multiply_capped(&pb, &pa, deg).unwrap();
        let ca = moebius_coeffs(a, deg);
        let cb = moebius_coeffs(b, deg);
        for k in 0..=deg {
            let mut expect = c(0.0, 0.0);
            for i in 0..=k {
                expect += cb[k - i] * ca[i];
            }
            let w = Word::from_digits(&"1".repeat(k), 1).unwrap();
            assert!((prod.coeff(&w)[(0, 0)] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn assembled_product_equals_product_of_assemblies_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let mk = |rng: &mut ChaCha8Rng, de: usize, ds: usize| {
            let mut coeffs = BTreeMap::new();
            for digits in ["", "1", "2"] {
                coeffs.insert(
                    Word::from_digits(digits, 2).unwrap(),
                    CMat::from_fn(ds, de, |_, _| {
                        c(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25))
                    }),
                );
            }
            MultiAnalyticSymbol::new(2, de, ds, coeffs).unwrap()
        };
        let theta = mk(&mut rng, 2, 3);
        let phi = mk(&mut rng, 3, 2);
        let prod = multiply(&phi, &theta).unwrap();
        let cap = 4usize;
        let lhs = prod.assemble(cap).unwrap().matrix;
        let rhs = phi.assemble(cap).unwrap().matrix * theta.assemble(cap).unwrap().matrix;
        let keep = FockIndex::new(2, cap).unwrap().dim_up_to_grade(cap - 2) * 2;
        let diff = (lhs - rhs).columns(0, keep).into_owned();
        assert!(op_norm(&diff) < 1e-13);
    }

    #[test]
    fn multiply_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mk = |rng: &mut ChaCha8Rng| {
            let mut coeffs = BTreeMap::new();
            for digits in ["", "2", "12"] {
                coeffs.insert(
                    Word::from_digits(digits, 2).unwrap(),
                    CMat::from_fn(2, 2, |_, _| {
                        c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))
                    }),
                );
            }
            MultiAnalyticSymbol::new(2, 2, 2, coeffs).unwrap()
        };
        let a = mk(&mut rng);
        let b = mk(&mut rng);
        let d = mk(&mut rng);
        let left = multiply(&multiply(&a, &b).unwrap(), &d).unwrap();
        let right = multiply(&a, &multiply(&b, &d).unwrap()).unwrap();
        for (w, m) in left.support() {
            assert!(op_norm(&(right.coeff(w) - m)) < 1e-13);
        }
    }

    #[test]
    fn defect_of_constant_is_ampliated() {
        let tol = Tolerance::default();
        let a = CMat::from_element(1, 1, c(0.6, 0.0));
        let sym = MultiAnalyticSymbol::constant(1, a).unwrap();
        let d = defect(&sym, 4, &tol).unwrap();
        let expected = CMat::identity(5, 5).scale(0.8);
        assert!(op_norm(&(d.delta - expected)) < 1e-12);
        assert_eq!(d.range.rank(), 5);
    }

    #[test]
    fn defect_of_zero_is_identity() {
        let tol = Tolerance::default();
        let sym = MultiAnalyticSymbol::zero(2, 2, 2);
        let d = defect(&sym, 2, &tol).unwrap();
        let dim = FockIndex::new(2, 2).unwrap().len() * 2;
        assert!(op_norm(&(d.delta - CMat::identity(dim, dim))) < 1e-12);
    }

    #[test]
    fn purely_contractive_flags() {
        let tol = Tolerance::default();
        let z = scalar_symbol(1, &[("1", c(1.0, 0.0))]);
        assert!(is_purely_contractive(&z, &tol));
        let one = MultiAnalyticSymbol::identity(1, 2);
        assert!(!is_purely_contractive(&one, &tol));
        let mixed = MultiAnalyticSymbol::constant(
            1,
            CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0, 0.0), c(0.3, 0.0)])),
        )
        .unwrap();
        assert!(!is_purely_contractive(&mixed, &tol));
    }

    #[test]
    fn pure_decomposition_splits_direct_sum() {
        let tol = Tolerance::default();
        // Direct sum of a genuinely contractive 1D piece (Möbius at 0.5 on
        // coordinate 0) and a unitary constant on coordinate 1.
        let phase = c(0.6, 0.8); // unit modulus
        let mut coeffs = BTreeMap::new();
        let m0 = moebius_coeffs(c(0.5, 0.0), 3);
        for (k, v) in m0.iter().enumerate() {
            let mut mat = CMat::zeros(2, 2);
            mat[(0, 0)] = *v;
            if k == 0 {
                mat[(1, 1)] = phase;
            }
            coeffs.insert(Word::from_digits(&"1".repeat(k), 1).unwrap(), mat);
        }
        let sym = MultiAnalyticSymbol::new(1, 2, 2, coeffs).unwrap();
        let dec = purely_contractive_part(&sym, &tol).unwrap();
        assert_eq!(dec.domain_u.rank(), 1);
        assert_eq!(dec.pure_part.dim_e(), 1);
        assert!(is_purely_contractive(&dec.pure_part, &tol));
        assert_eq!(dec.unitary.nrows(), 1);
        assert!((dec.unitary[(0, 0)].norm() - 1.0).abs() < 1e-10);
        // Purely contractive input: no unitary part.
        let z = moebius_symbol(c(0.5, 0.0), 4);
        let dz = purely_contractive_part(&z, &tol).unwrap();
        assert_eq!(dz.domain_u.rank(), 0);
        // Unitary constant input: no pure part.
        let u = MultiAnalyticSymbol::constant(1, CMat::from_element(1, 1, phase)).unwrap();
        let du = purely_contractive_part(&u, &tol).unwrap();
        assert_eq!(du.pure_part.dim_e(), 0);
        assert_eq!(du.domain_u.rank(), 1);
    }

    #[test]
    fn row_isometry_of_inner_symbol_is_empty() {
        let tol = Tolerance::default();
        let z = scalar_symbol(1, &[("1", c(1.0, 0.0))]);
        let iso = row_isometry(&z, 4, &tol).unwrap();
        assert_eq!(iso.basis.rank(), 0);
        assert_eq!(iso.c.len(), 1);
        assert_eq!(iso.c[0].nrows(), 0);
    }

    #[test]
    fn row_isometry_of_constant_is_shift_like() {
        let tol = Tolerance::default();
        let a = MultiAnalyticSymbol::constant(1, CMat::from_element(1, 1, c(0.5, 0.0))).unwrap();
        let cap = 4usize;
        let iso = row_isometry(&a, cap, &tol).unwrap();
        assert_eq!(iso.basis.rank(), cap + 1);
        assert!(iso.isometry_defect < 1e-10);
        // Not Cuntz: the image misses the vacuum direction.
        assert!(iso.cuntz_residual > 0.5);
    }

    #[test]
    fn row_isometry_defining_relation_small_residual() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut coeffs = BTreeMap::new();
        for digits in ["", "1", "2"] {
            coeffs.insert(
                Word::from_digits(digits, 2).unwrap(),
                CMat::from_fn(2, 2, |_, _| {
                    c(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3))
                }),
            );
        }
        let sym = MultiAnalyticSymbol::new(2, 2, 2, coeffs).unwrap();
        let iso = row_isometry(&sym, 4, &tol).unwrap();
        // Row-isometry cross relations on constrained interior data.
        let pc = iso.constrained.projector();
        let r = iso.basis.rank();
        for i in 0..2 {
            for j in 0..2 {
                let prod = iso.c[i].adjoint() * &iso.c[j];
                let expect = if i == j {
                    CMat::identity(r, r)
                } else {
                    CMat::zeros(r, r)
                };
                assert!(op_norm(&(&pc * (prod - expect) * &pc)) < 1e-7);
            }
        }
    }

    #[test]
    fn szego_verdicts_inner_and_constant() {
        let tol = Tolerance::default();
        let z = scalar_symbol(1, &[("1", c(1.0, 0.0))]);
        let rep = szego_check(&z, 4, &tol).unwrap();
        assert!(rep.vacuous && rep.satisfied && rep.cuntz);
        let a = MultiAnalyticSymbol::constant(2, CMat::from_element(1, 1, c(0.4, 0.3))).unwrap();
        let rep = szego_check(&a, 3, &tol).unwrap();
        assert!(!rep.vacuous);
        assert!(!rep.satisfied);
        assert!(!rep.cuntz);
        assert_eq!(rep.satisfied, rep.cuntz);
    }

    #[test]
    fn coincide_reflexive_and_constructed() {
        let tol = Tolerance::default();
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut coeffs = BTreeMap::new();
        for digits in ["", "1", "2", "12"] {
            coeffs.insert(
                Word::from_digits(digits, 2).unwrap(),
                CMat::from_fn(3, 2, |_, _| {
                    c(rng.gen_range(-0.25..0.25), rng.gen_range(-0.25..0.25))
                }),
            );
        }
        let m = MultiAnalyticSymbol::new(2, 2, 3, coeffs).unwrap();
        // Reflexive with explicit witness.
        let vid = coincide(
            &m,
            &m,
            &tol,
            Some((&CMat::identity(2, 2), &CMat::identity(3, 3))),
        );
        assert!(vid.is_witness());
        // Conjugated copy: search must find a witness.
        let u = polar_unitary(&CMat::from_fn(2, 2, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }));
        let v = polar_unitary(&CMat::from_fn(3, 3, |_, _| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        }));
        let conj = m.conjugated(&u, &v).unwrap();
        let verdict = coincide(&m, &conj, &tol, None);
        match &verdict {
            CoincideVerdict::Witness { residual, .. } => assert!(*residual <= 1e-8),
            other => panic!("expected witness, got {other:?}"),
        }
        // Witness inverts: symmetric direction.
        if let CoincideVerdict::Witness { u: wu, v: wv, .. } = &verdict {
            let back = coincide(&conj, &m, &tol, Some((&wu.adjoint(), &wv.adjoint())));
            assert!(back.is_witness());
        }
        // Scaled copy fails the invariant screen.
        let half: BTreeMap<Word, CMat> = m
            .support()
            .map(|(w, mat)| (w.clone(), mat.scale(0.5)))
            .collect();
        let half = MultiAnalyticSymbol::new(2, 2, 3, half).unwrap();
        assert!(matches!(
            coincide(&m, &half, &tol, None),
            CoincideVerdict::Fail { .. }
        ));
    }

    #[test]
    fn inner_outer_flags() {
        let tol = Tolerance::default();
        let z = scalar_symbol(1, &[("1", c(1.0, 0.0))]);
        assert!(is_inner(&z, 4, &tol).unwrap());
        assert!(!is_outer(&z, 4, &tol).unwrap().outer);
        let a = MultiAnalyticSymbol::constant(1, CMat::from_element(1, 1, c(0.5, 0.0))).unwrap();
        assert!(!is_inner(&a, 4, &tol).unwrap());
        let ov = is_outer(&a, 4, &tol).unwrap();
        assert!(ov.outer && ov.truncation_caveat);
        let zero = MultiAnalyticSymbol::zero(1, 1, 1);
        assert!(!is_inner(&zero, 4, &tol).unwrap());
        assert!(!is_outer(&zero, 4, &tol).unwrap().outer);
    }

    #[test]
    fn symbol_validation_rejects_expansive() {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(Word::empty(), CMat::from_element(1, 1, c(0.9, 0.0)));
        coeffs.insert(
            Word::from_digits("1", 1).unwrap(),
            CMat::from_element(1, 1, c(0.9, 0.0)),
        );
        assert!(MultiAnalyticSymbol::new(1, 1, 1, coeffs).is_err());
    }
}
