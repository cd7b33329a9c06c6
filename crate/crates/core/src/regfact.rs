//! k-fold factorizations Θ = Θ_k⋯Θ_1 of multi-analytic operators: the stacked
//! defect isometry, regularity verdicts, the partition/aggregation calculus,
//! the intertwining relation with defect row isometries, and regular divisors.
//!
//! Throughout, a chain stores Θ_1, …, Θ_k with Θ_i mapping Γ⊗E_{i-1} into
//! Γ⊗E_i, composed as Θ = Θ_k⋯Θ_1. The stacked map sends Δ_Θ f to the direct
//! sum Δ_kΘ_{k-1}⋯Θ_1 f ⊕ ⋯ ⊕ Δ_1 f (last factor's block on top); it is
//! always an isometry, and the factorization is k-regular exactly when it is
//! also onto, which at truncation becomes a rank equality.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::freeword::{ampliate, creation_matrix, FockIndex, Word};
use crate::manop::{
    defect_of_assembled, multiply_capped, multiply_fold, row_isometry_of_defect,
    AssembledOperator, DefectOutput, MultiAnalyticSymbol,
};
use crate::numsub::{
    lstsq, op_norm, orthonormalize_abs, psd_sqrt, rank, singular_values, CMat, SubspaceBasis,
    Tolerance, SIGMA_FLOOR,
};
use crate::{Error, Result};

/// An ordered factorization Θ = Θ_k⋯Θ_1 at a fixed truncation cap.
#[derive(Debug, Clone)]
pub struct FactorizationChain {
    factors: Vec<MultiAnalyticSymbol>,
    product: MultiAnalyticSymbol,
    cap: usize,
}

impl FactorizationChain {
    /// Build a chain from factors Θ_1..Θ_k; validates that codomain/domain
    /// dimensions compose and that the truncation admits an interior grade.
    pub fn new(factors: Vec<MultiAnalyticSymbol>, cap: usize) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Invalid("factorization chain needs k >= 1".into()));
        }
        let n = factors[0].n();
        for f in &factors {
            if f.n() != n {
                return Err(Error::Shape("chain factors over different alphabets".into()));
            }
        }
        for i in 0..factors.len() - 1 {
            if factors[i].dim_estar() != factors[i + 1].dim_e() {
                return Err(Error::Shape(format!(
                    "chain dims do not compose at factor {}: {} vs {}",
                    i + 1,
                    factors[i].dim_estar(),
                    factors[i + 1].dim_e()
                )));
            }
        }
        let total: usize = factors.iter().map(|f| f.degree()).sum();
        if total > cap {
            return Err(Error::Truncation(format!(
                "total factor degree {total} exceeds truncation cap {cap}"
            )));
        }
        let product = multiply_fold(&factors, cap)?;
        Ok(FactorizationChain {
            factors,
            product,
            cap,
        })
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn n(&self) -> usize {
        self.product.n()
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn factors(&self) -> &[MultiAnalyticSymbol] {
        &self.factors
    }

    /// Factor Θ_i, 1-based.
    pub fn factor(&self, i: usize) -> &MultiAnalyticSymbol {
        &self.factors[i - 1]
    }

    pub fn product(&self) -> &MultiAnalyticSymbol {
        &self.product
    }

    /// Sum of the factor degrees (an upper bound for the product degree).
    pub fn total_degree(&self) -> usize {
        self.factors.iter().map(|f| f.degree()).sum()
    }

    /// Largest grade on which every partial product acts without truncation
    /// loss: cap − total_degree.
    pub fn interior_grade(&self) -> usize {
        self.cap - self.total_degree()
    }

    /// Dimension of the intermediate coefficient space E_j (j = 0..k).
    pub fn space_dim(&self, j: usize) -> usize {
        if j == 0 {
            self.factors[0].dim_e()
        } else {
            self.factors[j - 1].dim_estar()
        }
    }

    /// Product Θ_b⋯Θ_a of a consecutive segment (1-based, inclusive); the
    /// empty segment a = b+1 yields the identity on E_{a-1}.
    pub fn segment_product(&self, a: usize, b: usize) -> Result<MultiAnalyticSymbol> {
        if a == b + 1 {
            return Ok(MultiAnalyticSymbol::identity(self.n(), self.space_dim(a - 1)));
        }
        if a < 1 || b > self.k() || a > b {
            return Err(Error::Invalid(format!("bad segment {a}..{b}")));
        }
        multiply_fold(&self.factors[a - 1..b], self.cap)
    }

    /// The sub-chain (Θ_a, …, Θ_b) as a chain in its own right.
    pub fn sub_chain(&self, a: usize, b: usize) -> Result<FactorizationChain> {
        if a < 1 || b > self.k() || a > b {
            return Err(Error::Invalid(format!("bad sub-chain {a}..{b}")));
        }
        FactorizationChain::new(self.factors[a - 1..b].to_vec(), self.cap)
    }
}

/// Per-chain assembly artifacts shared by the stacked-map constructions.
struct ChainData {
    /// Assembled factor operators M_1..M_k.
    ops: Vec<AssembledOperator>,
    /// Factor defects Δ_i with their canonical interior range bases.
    defects: Vec<DefectOutput>,
    /// Partial-product matrices: heads[i] is the matrix of Θ_i⋯Θ_1
    /// (heads[0] = I). Truncated assembly is multiplicative, so these are the
    /// exact assembled partial products.
    heads: Vec<CMat>,
    product_op: AssembledOperator,
    product_defect: DefectOutput,
}

fn chain_data(chain: &FactorizationChain, tol: &Tolerance) -> Result<ChainData> {
    let mut ops = Vec::with_capacity(chain.k());
    let mut defects = Vec::with_capacity(chain.k());
    for f in chain.factors() {
        let op = f.assemble(chain.cap)?;
        let d = defect_of_assembled(&op, tol)?;
        ops.push(op);
        defects.push(d);
    }
    let dim0 = ops[0].matrix.ncols();
    let mut heads = vec![CMat::identity(dim0, dim0)];
    for op in &ops {
        let next = &op.matrix * heads.last().expect("nonempty");
        heads.push(next);
    }
    let product_op = chain.product.assemble(chain.cap)?;
    let product_defect = defect_of_assembled(&product_op, tol)?;
    Ok(ChainData {
        ops,
        defects,
        heads,
        product_op,
        product_defect,
    })
}

/// The stacked defect map in coordinates, together with the bases that define
/// those coordinates.
#[derive(Debug, Clone)]
pub struct StackedZ {
    /// Coordinate matrix of the stacked map: (Σ_i rank Δ_i) × rank(domain).
    /// Always an isometry up to the recorded residual.
    pub w: CMat,
    /// Orthonormal basis of Δ_Θ applied to grades ≤ interior_grade, inside
    /// Γ_N⊗E_0.
    pub domain: SubspaceBasis,
    /// Canonical defect-range bases of the factors, in stacking order: entry
    /// 0 belongs to Θ_k (top block), entry k−1 to Θ_1 (bottom block).
    pub codomain: Vec<SubspaceBasis>,
    /// max_f |‖stack(f)‖² − ‖Δ_Θ f‖²| over the spanning set.
    pub isometry_residual: f64,
    /// Consistency of the coordinate solve defining `w`.
    pub fit_residual: f64,
}

impl StackedZ {
    /// Total codomain dimension Σ_i rank Δ_i.
    pub fn sum_codomain_rank(&self) -> usize {
        self.codomain.iter().map(|b| b.rank()).sum()
    }
}

/// Stack matrices vertically; `cols` disambiguates the width when every block
/// is empty.
fn vstack(blocks: &[CMat], cols: usize) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, 0), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

fn stacked_z_impl(chain: &FactorizationChain, data: &ChainData, tol: &Tolerance) -> Result<StackedZ> {
    let g = chain.interior_grade();
    let m0 = data.product_op.domain_dim_up_to_grade(g);
    let spanning = data.product_defect.delta.columns(0, m0).into_owned();
    let domain = orthonormalize_abs(&spanning, tol.defect_sigma_cutoff());

    // Coordinate blocks b_i^H Δ_i Θ_{i-1}⋯Θ_1 restricted to the spanning
    // columns, stacked with the last factor on top.
    let mut blocks: Vec<CMat> = Vec::with_capacity(chain.k());
    for l in (1..=chain.k()).rev() {
        let moved = &data.defects[l - 1].delta * data.heads[l - 1].columns(0, m0);
        blocks.push(data.defects[l - 1].range.coords(&moved));
    }
    let y = vstack(&blocks, m0);

    let mut iso = 0.0f64;
    for j in 0..m0 {
        let got = y.column(j).norm_squared();
        let want = spanning.column(j).norm_squared();
        iso = iso.max((got - want).abs());
    }
    if iso > tol.residual_abs {
        return Err(Error::Truncation(format!(
            "stacked map is not isometric on the spanning set (residual {iso:.3e}); \
             the truncation is too small for this chain"
        )));
    }

    let x = domain.coords(&spanning);
    let (w, fit_residual) = if domain.rank() == 0 || y.nrows() == 0 {
        (CMat::zeros(y.nrows(), domain.rank()), y.norm())
    } else {
        let (wh, _) = lstsq(&x.adjoint(), &y.adjoint(), tol);
        let w = wh.adjoint();
        let fit = (&w * &x - &y).norm() / (1.0 + y.norm());
        (w, fit)
    };
    let codomain = (1..=chain.k())
        .rev()
        .map(|l| data.defects[l - 1].range.clone())
        .collect();
    Ok(StackedZ {
        w,
        domain,
        codomain,
        isometry_residual: iso,
        fit_residual,
    })
}

/// Build the stacked defect map of a chain on the spanning set of interior
/// grades. Errors when the isometry identity fails, which indicates a
/// truncation too small for the chain.
pub fn stacked_z(chain: &FactorizationChain, tol: &Tolerance) -> Result<StackedZ> {
    let data = chain_data(chain, tol)?;
    stacked_z_impl(chain, &data, tol)
}

/// Outcome of the k-regularity decision.
#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub isometry_residual: f64,
    pub rank_w: usize,
    pub sum_rank_di: usize,
    pub regular: bool,
    /// 2-regularity of the split (Θ_j⋯Θ_1, Θ_k⋯Θ_{j+1}) for j = 1..k−1.
    pub per_pair: Vec<bool>,
    /// Set when some rank decision had a singular value within a factor of 10
    /// of the cutoff; verdicts are then fragile at this truncation.
    pub indeterminate: bool,
}

fn borderline_at(sv: &[f64], cut: f64) -> bool {
    sv.iter().any(|&s| s > cut / 10.0 && s < cut * 10.0)
}

fn borderline_rel(sv: &[f64], tol: &Tolerance) -> bool {
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    if sigma_max <= SIGMA_FLOOR {
        return false;
    }
    borderline_at(sv, tol.sigma_cutoff(sigma_max))
}

struct RankVerdict {
    sz: StackedZ,
    rank_w: usize,
    sum_rank_di: usize,
    regular: bool,
    indeterminate: bool,
}

fn rank_verdict(chain: &FactorizationChain, tol: &Tolerance) -> Result<RankVerdict> {
    let data = chain_data(chain, tol)?;
    let sz = stacked_z_impl(chain, &data, tol)?;
    let rank_w = if sz.w.nrows() == 0 || sz.w.ncols() == 0 {
        0
    } else {
        rank(&sz.w, tol)
    };
    let sum_rank_di = sz.sum_codomain_rank();

    let g = chain.interior_grade();
    let m0 = data.product_op.domain_dim_up_to_grade(g);
    let defect_cut = tol.defect_sigma_cutoff();
    let mut fragile = borderline_at(
        &singular_values(&data.product_defect.delta.columns(0, m0).into_owned()),
        defect_cut,
    );
    for (op, d) in data.ops.iter().zip(&data.defects) {
        let keep = op.interior_domain_dim();
        let interior = d.delta.columns(0, keep).into_owned();
        fragile = fragile || borderline_at(&singular_values(&interior), defect_cut);
    }
    if sz.w.nrows() > 0 && sz.w.ncols() > 0 {
        fragile = fragile || borderline_rel(&singular_values(&sz.w), tol);
    }

    Ok(RankVerdict {
        regular: rank_w == sum_rank_di,
        sz,
        rank_w,
        sum_rank_di,
        indeterminate: fragile,
    })
}

/// Decide k-regularity: the stacked isometry is onto iff its rank equals the
/// summed defect ranks. `per_pair` records the split criterion at every j.
pub fn is_k_regular(chain: &FactorizationChain, tol: &Tolerance) -> Result<RegularityReport> {
    let v = rank_verdict(chain, tol)?;
    let mut per_pair = Vec::with_capacity(chain.k().saturating_sub(1));
    for j in 1..chain.k() {
        let head = chain.segment_product(1, j)?;
        let tail = chain.segment_product(j + 1, chain.k())?;
        let pair = FactorizationChain::new(vec![head, tail], chain.cap)?;
        per_pair.push(rank_verdict(&pair, tol)?.regular);
    }
    Ok(RegularityReport {
        isometry_residual: v.sz.isometry_residual,
        rank_w: v.rank_w,
        sum_rank_di: v.sum_rank_di,
        regular: v.regular,
        per_pair,
        indeterminate: v.indeterminate,
    })
}

/// Max over i of ‖Φ_i*Φ_i + Λ_i*Λ_i − I‖ on interior grades of Γ⊗E_{i-1},
/// where Φ_i = Θ_k⋯Θ_i and Λ_i stacks Δ_lΘ_{l-1}⋯Θ_i for l = k..i. The
/// defect squares enter in Gram form, so the identity is exact matrix algebra
/// at truncation and the residual measures only rounding.
pub fn verify_isometry_identity(chain: &FactorizationChain) -> Result<f64> {
    let k = chain.k();
    let cap = chain.cap;
    let ops: Vec<AssembledOperator> = chain
        .factors()
        .iter()
        .map(|f| f.assemble(cap))
        .collect::<Result<_>>()?;
    let mut tail_deg: Vec<usize> = vec![0; k + 2];
    for i in (1..=k).rev() {
        tail_deg[i] = tail_deg[i + 1] + chain.factor(i).degree();
    }
    let mut worst = 0.0f64;
    for i in 1..=k {
        let dim = ops[i - 1].matrix.ncols();
        // Φ_i = M_k⋯M_i and the Λ_i Gram, accumulated over one sweep.
        let mut phi = CMat::identity(dim, dim);
        let mut lam_gram = CMat::zeros(dim, dim);
        for l in i..=k {
            let m = &ops[l - 1].matrix;
            let gram = CMat::identity(m.ncols(), m.ncols()) - m.adjoint() * m;
            lam_gram += phi.adjoint() * gram * &phi;
            phi = m * phi;
        }
        let total = phi.adjoint() * &phi + lam_gram - CMat::identity(dim, dim);
        let lead = ops[i - 1].domain_dim_up_to_grade(cap - tail_deg[i]);
        let restricted = total.view((0, 0), (lead, lead)).into_owned();
        worst = worst.max(op_norm(&restricted));
    }
    Ok(worst)
}

/// A partition of 1..k into consecutive groups, given by the right endpoints
/// j_1 < … < j_r = k.
#[derive(Debug, Clone)]
pub struct PartitionSpec {
    breakpoints: Vec<usize>,
}

impl PartitionSpec {
    pub fn new(breakpoints: Vec<usize>, k: usize) -> Result<Self> {
        if breakpoints.is_empty() || *breakpoints.last().unwrap() != k {
            return Err(Error::Invalid("partition must end at k".into()));
        }
        if breakpoints[0] < 1 || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("breakpoints must strictly increase".into()));
        }
        Ok(PartitionSpec { breakpoints })
    }

    /// The partition into singletons {1}, …, {k}.
    pub fn singleton(k: usize) -> Self {
        PartitionSpec {
            breakpoints: (1..=k).collect(),
        }
    }

    /// The trivial partition with one group.
    pub fn whole(k: usize) -> Self {
        PartitionSpec {
            breakpoints: vec![k],
        }
    }

    pub fn r(&self) -> usize {
        self.breakpoints.len()
    }

    /// Consecutive 1-based inclusive segments (a_i, b_i).
    pub fn parts(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.r());
        let mut start = 1;
        for &b in &self.breakpoints {
            out.push((start, b));
            start = b + 1;
        }
        out
    }

    /// Every partition of 1..k into consecutive groups (2^{k−1} of them).
    pub fn all_for(k: usize) -> Vec<PartitionSpec> {
        let mut out = Vec::new();
        for mask in 0..(1u32 << (k - 1)) {
            let mut breakpoints: Vec<usize> =
                (1..k).filter(|&j| mask & (1 << (j - 1)) != 0).collect();
            breakpoints.push(k);
            out.push(PartitionSpec { breakpoints });
        }
        out
    }
}

/// Replace the chain by the r products over the partition's groups. The
/// composed product is unchanged.
pub fn aggregate(chain: &FactorizationChain, p: &PartitionSpec) -> Result<FactorizationChain> {
    if *p.breakpoints.last().unwrap() != chain.k() {
        return Err(Error::Invalid("partition does not match chain length".into()));
    }
    let factors = p
        .parts()
        .iter()
        .map(|&(a, b)| chain.segment_product(a, b))
        .collect::<Result<Vec<_>>>()?;
    FactorizationChain::new(factors, chain.cap)
}

/// Check that the three partition verdicts agree: full k-regularity, versus
/// r-regularity of the aggregated chain together with regularity of every
/// sub-chain. Returns true when the verdicts are consistent.
pub fn check_partition_equivalence(
    chain: &FactorizationChain,
    p: &PartitionSpec,
    tol: &Tolerance,
) -> Result<bool> {
    let full = rank_verdict(chain, tol)?.regular;
    let agg = rank_verdict(&aggregate(chain, p)?, tol)?.regular;
    let mut parts_ok = true;
    for &(a, b) in &p.parts() {
        parts_ok = parts_ok && rank_verdict(&chain.sub_chain(a, b)?, tol)?.regular;
    }
    Ok(full == (agg && parts_ok))
}

/// Verify the decomposition of the full stacked map through a partition: on
/// every spanning vector, applying the aggregate stacked map and then the
/// per-group stacked maps reproduces the full stack. Returns the largest
/// deviation.
pub fn z_decomposition_check(
    chain: &FactorizationChain,
    p: &PartitionSpec,
    tol: &Tolerance,
) -> Result<f64> {
    if *p.breakpoints.last().unwrap() != chain.k() {
        return Err(Error::Invalid("partition does not match chain length".into()));
    }
    let data = chain_data(chain, tol)?;
    let g = chain.interior_grade();
    let m0 = data.product_op.domain_dim_up_to_grade(g);

    // Full-chain stack of every spanning vector, last factor on top.
    let mut full_blocks: Vec<CMat> = Vec::with_capacity(chain.k());
    for l in (1..=chain.k()).rev() {
        let moved = &data.defects[l - 1].delta * data.heads[l - 1].columns(0, m0);
        full_blocks.push(data.defects[l - 1].range.coords(&moved));
    }
    let y_full = vstack(&full_blocks, m0);

    // Aggregate action followed by the per-group stacked maps, groups in
    // reverse order so the blocks line up with the full stack.
    let mut part_blocks: Vec<CMat> = Vec::new();
    for &(a, b) in p.parts().iter().rev() {
        let sub = chain.sub_chain(a, b)?;
        let sub_data = ChainData {
            ops: data.ops[a - 1..b].to_vec(),
            defects: data.defects[a - 1..b].to_vec(),
            heads: {
                let dim = data.ops[a - 1].matrix.ncols();
                let mut heads = vec![CMat::identity(dim, dim)];
                for op in &data.ops[a - 1..b] {
                    let next = &op.matrix * heads.last().expect("nonempty");
                    heads.push(next);
                }
                heads
            },
            product_op: sub.product.assemble(chain.cap)?,
            product_defect: defect_of_assembled(&sub.product.assemble(chain.cap)?, tol)?,
        };
        let sz = stacked_z_impl(&sub, &sub_data, tol)?;
        // Aggregate block for this group: Δ_{Θ_{J}} applied after the head
        // partial product, expressed in the group's own domain coordinates.
        let moved = &sub_data.product_defect.delta * data.heads[a - 1].columns(0, m0);
        let z = sz.domain.coords(&moved);
        part_blocks.push(&sz.w * z);
    }
    let y_parts = vstack(&part_blocks, m0);

    if y_parts.nrows() != y_full.nrows() {
        return Err(Error::Decomposition(
            "stacked block dimensions disagree between partition and chain".into(),
        ));
    }
    let diff = y_parts - y_full;
    let mut worst = 0.0f64;
    for j in 0..m0 {
        worst = worst.max(diff.column(j).norm());
    }
    Ok(worst)
}

/// Residual of the intertwining relation between the stacked map and the
/// defect row isometries: stacking after the product's row shift agrees with
/// the factor row shifts applied blockwise. Max over letters and spanning
/// vectors of one grade below the interior.
pub fn intertwine_check(chain: &FactorizationChain, tol: &Tolerance) -> Result<f64> {
    let data = chain_data(chain, tol)?;
    let g = chain.interior_grade();
    if g == 0 {
        return Ok(0.0);
    }
    let m1 = data.product_op.domain_dim_up_to_grade(g - 1);
    let e0 = chain.space_dim(0);
    let idx = &data.product_op.idx;

    struct BlockData {
        coords: CMat,
        shifted_raw: CMat,
        c: Vec<CMat>,
        basis: SubspaceBasis,
    }
    let mut per_factor: Vec<BlockData> = Vec::with_capacity(chain.k());
    for l in (1..=chain.k()).rev() {
        let ri = row_isometry_of_defect(&data.ops[l - 1], &data.defects[l - 1], tol)?;
        let dh = &data.defects[l - 1].delta * &data.heads[l - 1];
        per_factor.push(BlockData {
            coords: data.defects[l - 1].range.coords(&dh.columns(0, m1).into_owned()),
            shifted_raw: dh,
            c: ri.c,
            basis: data.defects[l - 1].range.clone(),
        });
    }

    let mut worst = 0.0f64;
    for j in 1..=chain.n() {
        let s = creation_matrix(j, idx)?;
        let s_dom = ampliate(&s, e0);
        let shift_cols = s_dom.columns(0, m1).into_owned();
        let mut diffs: Vec<CMat> = Vec::with_capacity(chain.k());
        for b in &per_factor {
            let lhs = b.basis.coords(&(&b.shifted_raw * &shift_cols));
            let rhs = &b.c[j - 1] * &b.coords;
            diffs.push(lhs - rhs);
        }
        let stacked = vstack(&diffs, m1);
        for u in 0..m1 {
            worst = worst.max(stacked.column(u).norm());
        }
    }
    Ok(worst)
}

/// Result of attempting to factor Θ'_1 = Ω Θ_1.
#[derive(Debug, Clone)]
pub struct DivisorReport {
    /// The minimum-norm solution, when it defines a contractive symbol.
    pub omega: Option<MultiAnalyticSymbol>,
    /// Largest per-coefficient deviation of ΩΘ_1 from Θ'_1, relative to the
    /// coefficient scale of Θ'_1.
    pub residual: f64,
    /// Dimension of the solution's degrees of freedom; nonzero means Ω is not
    /// unique at this truncation.
    pub nullspace_dim: usize,
    /// True when the residual is below tolerance and the solution is
    /// contractive.
    pub divides: bool,
}

/// Solve Θ'_1 = Ω Θ_1 for Ω by least squares on the coefficient convolution
/// system over all words of length ≤ cap. A residual above tolerance is the
/// no-divisor verdict, not an error.
pub fn divisor_extract(
    theta1: &MultiAnalyticSymbol,
    theta1p: &MultiAnalyticSymbol,
    cap: usize,
    tol: &Tolerance,
) -> Result<DivisorReport> {
    if theta1.n() != theta1p.n() {
        return Err(Error::Shape("alphabet sizes differ".into()));
    }
    if theta1.dim_e() != theta1p.dim_e() {
        return Err(Error::Shape("candidate divisor pair must share the domain space".into()));
    }
    let n = theta1.n();
    let e1 = theta1.dim_estar();
    let e1p = theta1p.dim_estar();
    let e0 = theta1.dim_e();
    let min_deg = theta1
        .support()
        .map(|(w, _)| w.len())
        .min()
        .ok_or_else(|| Error::Invalid("cannot divide by the zero symbol".into()))?;
    if min_deg > cap {
        return Err(Error::Truncation(
            "divisor base has no support within the truncation".into(),
        ));
    }
    let widx = FockIndex::new(n, cap - min_deg)?;
    let gidx = FockIndex::new(n, cap)?;
    let unknown_block = e1p * e1;
    let eq_block = e1p * e0;
    let mut a = CMat::zeros(gidx.len() * eq_block, widx.len() * unknown_block);
    let eye = CMat::identity(e1p, e1p);
    for (alpha, t) in theta1.support() {
        let factor = t.transpose().kronecker(&eye);
        for beta in widx.words() {
            if alpha.len() + beta.len() > cap {
                continue;
            }
            let gamma = alpha.concat(beta);
            let row = gidx.position(&gamma).expect("within cap") * eq_block;
            let col = widx.position(beta).expect("within bound") * unknown_block;
            let mut view = a.view_mut((row, col), (eq_block, unknown_block));
            view += &factor;
        }
    }
    let mut b = CMat::zeros(gidx.len() * eq_block, 1);
    for (gamma, m) in theta1p.support() {
        if gamma.len() > cap {
            continue;
        }
        let row = gidx.position(gamma).expect("within cap") * eq_block;
        for (pos, val) in m.iter().enumerate() {
            b[(row + pos, 0)] = *val;
        }
    }
    let (x, nullspace_dim) = lstsq(&a, &b, tol);

    let scale = theta1p
        .support()
        .map(|(_, m)| m.norm())
        .fold(0.0f64, f64::max);
    let fitted = &a * &x;
    let mut residual = 0.0f64;
    for row in 0..gidx.len() {
        let seg_fit = fitted.view((row * eq_block, 0), (eq_block, 1));
        let seg_want = b.view((row * eq_block, 0), (eq_block, 1));
        residual = residual.max((seg_fit - seg_want).norm());
    }
    residual /= 1.0 + scale;

    let drop_below = 1e-13 * x.norm().max(1.0);
    let mut coeffs: BTreeMap<Word, CMat> = BTreeMap::new();
    for (pos, beta) in widx.words().iter().enumerate() {
        let seg = x.view((pos * unknown_block, 0), (unknown_block, 1));
        let block = CMat::from_iterator(e1p, e1, seg.iter().cloned());
        if block.norm() > drop_below {
            coeffs.insert(beta.clone(), block);
        }
    }
    let omega = match MultiAnalyticSymbol::new(n, e1, e1p, coeffs) {
        Ok(sym) => Some(sym),
        Err(Error::NotContractive { .. }) => None,
        Err(e) => return Err(e),
    };
    let divides = residual <= tol.residual_abs && omega.is_some();
    Ok(DivisorReport {
        omega,
        residual,
        nullspace_dim,
        divides,
    })
}

/// Per-coefficient residual of the companion relation Θ_2 = Θ'_2 Ω, relative
/// to the coefficient scale of Θ_2.
pub fn divisor_cross_check(
    theta2: &MultiAnalyticSymbol,
    theta2p: &MultiAnalyticSymbol,
    omega: &MultiAnalyticSymbol,
    cap: usize,
) -> Result<f64> {
    let composed = multiply_capped(theta2p, omega, cap)?;
    let mut words: Vec<Word> = composed.support().map(|(w, _)| w.clone()).collect();
    words.extend(theta2.support().map(|(w, _)| w.clone()));
    words.sort();
    words.dedup();
    let scale = theta2
        .support()
        .map(|(_, m)| m.norm())
        .fold(0.0f64, f64::max);
    let mut worst = 0.0f64;
    for w in &words {
        if w.len() > cap {
            continue;
        }
        worst = worst.max((composed.coeff(w) - theta2.coeff(w)).norm());
    }
    Ok(worst / (1.0 + scale))
}

/// 2-regularity of the factorization ΩΘ_1 produced by divisor extraction.
pub fn divisor_regularity_check(
    theta1: &MultiAnalyticSymbol,
    omega: &MultiAnalyticSymbol,
    cap: usize,
    tol: &Tolerance,
) -> Result<bool> {
    let chain = FactorizationChain::new(vec![theta1.clone(), omega.clone()], cap)?;
    Ok(rank_verdict(&chain, tol)?.regular)
}

/// Brute-force matrix-level regularity oracle for constant chains A_k⋯A_1:
/// stack D_{A_i}A_{i-1}⋯A_1 and compare the stack's rank with Σ rank D_{A_i}.
/// Returns (regular, stacked rank, summed rank).
pub fn constant_chain_rank_oracle(mats: &[CMat], tol: &Tolerance) -> Result<(bool, usize, usize)> {
    if mats.is_empty() {
        return Err(Error::Invalid("empty constant chain".into()));
    }
    let d0 = mats[0].ncols();
    let mut partial = CMat::identity(d0, d0);
    let mut blocks = Vec::with_capacity(mats.len());
    let mut sum = 0usize;
    for a in mats {
        let dim = a.ncols();
        if partial.nrows() != dim {
            return Err(Error::Shape("constant chain dims do not compose".into()));
        }
        let gram = CMat::identity(dim, dim) - a.adjoint() * a;
        let defect = psd_sqrt(&gram, 1e-7)?;
        sum += rank(&defect, tol);
        blocks.push(&defect * &partial);
        partial = a * partial;
    }
    blocks.reverse();
    let stacked = vstack(&blocks, d0);
    let r = rank(&stacked, tol);
    Ok((r == sum, r, sum))
}

fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

/// Random symbol supported on all words of length ≤ degree, rescaled so a
/// rigorous norm bound (the sum over grades of the stacked-coefficient norms)
/// is at most 1 − margin. The bound is truncation-independent, so the symbol
/// is contractive at every cap.
pub fn random_symbol(
    n: usize,
    dim_e: usize,
    dim_estar: usize,
    degree: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MultiAnalyticSymbol> {
    assert!(margin > 0.0 && margin < 1.0);
    let widx = FockIndex::new(n, degree)?;
    let mut coeffs: BTreeMap<Word, CMat> = BTreeMap::new();
    for w in widx.words() {
        coeffs.insert(w.clone(), random_cmat(dim_estar, dim_e, rng));
    }
    let mut bound = 0.0f64;
    for g in 0..=degree {
        let grade: Vec<CMat> = widx
            .words()
            .iter()
            .filter(|w| w.len() == g)
            .map(|w| coeffs[w].clone())
            .collect();
        bound += op_norm(&vstack(&grade, dim_e));
    }
    let scale = (1.0 - margin) / bound.max(1e-300);
    if scale < 1.0 {
        for m in coeffs.values_mut() {
            *m = m.scale(scale);
        }
    }
    MultiAnalyticSymbol::new(n, dim_e, dim_estar, coeffs)
}

/// Random chain with prescribed intermediate dimensions dims = [e_0..e_k] and
/// per-factor degrees.
pub fn random_chain(
    n: usize,
    dims: &[usize],
    degrees: &[usize],
    cap: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FactorizationChain> {
    if dims.len() != degrees.len() + 1 || degrees.is_empty() {
        return Err(Error::Sizing("need k+1 dims for k degrees".into()));
    }
    let factors = degrees
        .iter()
        .enumerate()
        .map(|(i, &deg)| random_symbol(n, dims[i], dims[i + 1], deg, margin, rng))
        .collect::<Result<Vec<_>>>()?;
    FactorizationChain::new(factors, cap)
}

/// Random chain of strict constant factors; for square dims and k ≥ 2 these
/// are never regular (every defect has full rank but the product defect rank
/// cannot exceed the space dimension).
pub fn random_constant_chain(
    n: usize,
    dims: &[usize],
    cap: usize,
    margin: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FactorizationChain> {
    let degrees = vec![0usize; dims.len() - 1];
    random_chain(n, dims, &degrees, cap, margin, rng)
}

/// An engineered regular constant 3-chain: a coisometric projection, then a
/// strict rotation-like contraction, then an isometric embedding. The defect
/// ranks add up exactly, so the chain is 3-regular.
pub fn regular_constant_chain(
    n: usize,
    d_small: usize,
    d_big: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FactorizationChain> {
    assert!(d_small < d_big);
    let mut a1 = CMat::zeros(d_small, d_big);
    for i in 0..d_small {
        a1[(i, i)] = Complex64::new(1.0, 0.0);
    }
    let u = crate::numsub::polar_unitary(&random_cmat(d_small, d_small, rng));
    let a2 = u.scale(0.6);
    let mut a3 = CMat::zeros(d_big, d_small);
    for i in 0..d_small {
        a3[(i, i)] = Complex64::new(1.0, 0.0);
    }
    let factors = vec![
        MultiAnalyticSymbol::constant(n, a1)?,
        MultiAnalyticSymbol::constant(n, a2)?,
        MultiAnalyticSymbol::constant(n, a3)?,
    ];
    // Truncation cap 2 suffices for constant chains in tests; callers needing
    // a different cap can rebuild from the factors.
    FactorizationChain::new(factors, 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numsub::polar_unitary;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn tol() -> Tolerance {
        Tolerance::default()
    }

    fn unitary_constant(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> MultiAnalyticSymbol {
        let u = polar_unitary(&random_cmat(dim, dim, rng));
        MultiAnalyticSymbol::constant(n, u).expect("unitary constant")
    }

    #[test]
    fn single_factor_chain_is_the_identity_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let sym = random_symbol(2, 2, 2, 1, 0.2, &mut rng).unwrap();
        let chain = FactorizationChain::new(vec![sym], 4).unwrap();
        let sz = stacked_z(&chain, &tol()).unwrap();
        assert_eq!(sz.codomain.len(), 1);
        assert_eq!(sz.w.nrows(), sz.w.ncols());
        let eye = CMat::identity(sz.w.nrows(), sz.w.ncols());
        assert!((&sz.w - eye).norm() < 1e-9, "W should be the identity map");
        let rep = is_k_regular(&chain, &tol()).unwrap();
        assert!(rep.regular);
        assert!(rep.per_pair.is_empty());
    }

    #[test]
    fn all_inner_chain_has_empty_stack_and_is_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chain = FactorizationChain::new(
            vec![
                unitary_constant(2, 3, &mut rng),
                unitary_constant(2, 3, &mut rng),
                unitary_constant(2, 3, &mut rng),
            ],
            3,
        )
        .unwrap();
        let sz = stacked_z(&chain, &tol()).unwrap();
        assert_eq!(sz.domain.rank(), 0);
        assert_eq!(sz.sum_codomain_rank(), 0);
        assert_eq!(sz.w.nrows(), 0);
        assert!(sz.isometry_residual < 1e-12);
        let rep = is_k_regular(&chain, &tol()).unwrap();
        assert!(rep.regular);
        assert!(rep.per_pair.iter().all(|&b| b));
    }

    #[test]
    fn constant_chain_stack_matches_matrix_kron_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a1 = random_cmat(3, 3, &mut rng).scale(0.3);
        let a2 = random_cmat(3, 3, &mut rng).scale(0.25);
        let chain = FactorizationChain::new(
            vec![
                MultiAnalyticSymbol::constant(2, a1.clone()).unwrap(),
                MultiAnalyticSymbol::constant(2, a2.clone()).unwrap(),
            ],
            2,
        )
        .unwrap();
        let data = chain_data(&chain, &tol()).unwrap();
        let gram = CMat::identity(3, 3) - a1.adjoint() * &a1;
        let d1 = psd_sqrt(&gram, 1e-10).unwrap();
        let wc = data.product_op.idx.len();
        let expected = CMat::identity(wc, wc).kronecker(&d1);
        assert!(
            (&data.defects[0].delta - expected).norm() < 1e-10,
            "constant defect must be an ampliated matrix defect"
        );
        let moved = &data.defects[1].delta * &data.heads[1];
        let gram2 = CMat::identity(3, 3) - a2.adjoint() * &a2;
        let d2 = psd_sqrt(&gram2, 1e-10).unwrap();
        let expected2 = CMat::identity(wc, wc).kronecker(&(&d2 * &a1));
        assert!((moved - expected2).norm() < 1e-10);
    }

    #[test]
    fn strict_constant_chains_agree_with_matrix_oracle_and_are_not_regular() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for trial in 0..6 {
            let d = 2 + (trial % 3);
            let a1 = random_cmat(d, d, &mut rng).scale(0.3);
            let a2 = random_cmat(d, d, &mut rng).scale(0.3);
            let chain = FactorizationChain::new(
                vec![
                    MultiAnalyticSymbol::constant(2, a1.clone()).unwrap(),
                    MultiAnalyticSymbol::constant(2, a2.clone()).unwrap(),
                ],
                2,
            )
            .unwrap();
            let rep = is_k_regular(&chain, &tol()).unwrap();
            let (oracle, _, _) =
                constant_chain_rank_oracle(&[a1, a2], &tol()).unwrap();
            assert_eq!(rep.regular, oracle, "trial {trial}");
            assert!(!rep.regular, "two strict square factors are never regular");
            assert_eq!(rep.per_pair, vec![false]);
        }
    }

    #[test]
    fn engineered_chain_is_regular_and_oracle_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let chain = regular_constant_chain(2, 2, 4, &mut rng).unwrap();
        let rep = is_k_regular(&chain, &tol()).unwrap();
        assert!(rep.regular, "coisometry/strict/isometry pattern is regular");
        assert_eq!(rep.rank_w, rep.sum_rank_di);
        assert!(rep.per_pair.iter().all(|&b| b));
        let mats: Vec<CMat> = chain
            .factors()
            .iter()
            .map(|f| f.coeff(&Word::empty()))
            .collect();
        let (oracle, _, _) = constant_chain_rank_oracle(&mats, &tol()).unwrap();
        assert!(oracle);
    }

    #[test]
    fn isometry_identity_is_exact_for_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let chain = random_chain(2, &[2, 3, 2], &[1, 0], 4, 0.2, &mut rng).unwrap();
        assert!(verify_isometry_identity(&chain).unwrap() < 1e-12);
        let constants = random_constant_chain(2, &[3, 3, 3], 3, 0.5, &mut rng).unwrap();
        assert!(verify_isometry_identity(&constants).unwrap() < 1e-12);
    }

    #[test]
    fn mixed_chain_stack_is_isometric_with_tight_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for seed_shift in 0..3 {
            let chain = random_chain(
                2,
                &[2, 2, 3, 2],
                &[1, 0, 1],
                5,
                0.15 + 0.05 * seed_shift as f64,
                &mut rng,
            )
            .unwrap();
            let sz = stacked_z(&chain, &tol()).unwrap();
            assert!(sz.isometry_residual < 1e-10, "{}", sz.isometry_residual);
            assert!(sz.fit_residual < 1e-9, "{}", sz.fit_residual);
        }
    }

    #[test]
    fn partition_verdicts_agree_and_decomposition_composes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let regular = regular_constant_chain(2, 2, 4, &mut rng).unwrap();
        let strict = random_constant_chain(2, &[3, 3, 3], 2, 0.5, &mut rng).unwrap();
        for chain in [&regular, &strict] {
            for p in PartitionSpec::all_for(chain.k()) {
                assert!(check_partition_equivalence(chain, &p, &tol()).unwrap());
                let res = z_decomposition_check(chain, &p, &tol()).unwrap();
                assert!(res < 1e-9, "partition {:?}: residual {res}", p.parts());
            }
        }
    }

    #[test]
    fn unitary_insertion_preserves_the_verdict() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let base = regular_constant_chain(2, 2, 4, &mut rng).unwrap();
        let mut factors = base.factors().to_vec();
        factors.insert(1, unitary_constant(2, factors[0].dim_estar(), &mut rng));
        let extended = FactorizationChain::new(factors, base.cap()).unwrap();
        assert!(is_k_regular(&extended, &tol()).unwrap().regular);

        let strict = random_constant_chain(2, &[3, 3, 3], 2, 0.5, &mut rng).unwrap();
        let mut factors = strict.factors().to_vec();
        factors.insert(1, unitary_constant(2, 3, &mut rng));
        let extended = FactorizationChain::new(factors, strict.cap()).unwrap();
        assert!(!is_k_regular(&extended, &tol()).unwrap().regular);
    }

    #[test]
    fn intertwining_residual_is_small_on_mixed_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let chain = random_chain(2, &[2, 2, 2], &[1, 1], 5, 0.2, &mut rng).unwrap();
        let res = intertwine_check(&chain, &tol()).unwrap();
        assert!(res < 1e-8, "intertwining residual {res}");
        let constants = random_constant_chain(2, &[2, 2], 3, 0.4, &mut rng).unwrap();
        let res = intertwine_check(&constants, &tol()).unwrap();
        assert!(res < 1e-8, "constant intertwining residual {res}");
    }

    #[test]
    fn divisor_of_itself_is_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        // An invertible constant part makes the divisor unique.
        let mut coeffs = BTreeMap::new();
        coeffs.insert(Word::empty(), CMat::identity(2, 2).scale(0.5));
        coeffs.insert(
            Word::new(&[1], 2).unwrap(),
            random_cmat(2, 2, &mut rng).scale(0.1),
        );
        coeffs.insert(
            Word::new(&[2], 2).unwrap(),
            random_cmat(2, 2, &mut rng).scale(0.1),
        );
        let theta1 = MultiAnalyticSymbol::new(2, 2, 2, coeffs).unwrap();
        let rep = divisor_extract(&theta1, &theta1, 3, &tol()).unwrap();
        assert!(rep.divides, "residual {}", rep.residual);
        assert_eq!(rep.nullspace_dim, 0);
        let omega = rep.omega.unwrap();
        assert!((omega.coeff(&Word::empty()) - CMat::identity(2, 2)).norm() < 1e-9);
        assert!(omega.degree() == 0 || omega.pruned(1e-9).degree() == 0);

        let u = polar_unitary(&random_cmat(2, 2, &mut rng));
        let rotated = theta1.conjugated(&CMat::identity(2, 2), &u).unwrap();
        let rep = divisor_extract(&theta1, &rotated, 3, &tol()).unwrap();
        assert!(rep.divides);
        let omega = rep.omega.unwrap();
        assert!((omega.coeff(&Word::empty()) - u).norm() < 1e-9);
    }

    #[test]
    fn divisor_recovers_the_grouped_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chain = regular_constant_chain(2, 2, 4, &mut rng).unwrap();
        let theta1 = chain.factor(1).clone();
        let theta2 = chain.segment_product(2, 3).unwrap();
        let theta1p = chain.segment_product(1, 2).unwrap();
        let theta2p = chain.factor(3).clone();
        let cap = chain.cap();

        let rep = divisor_extract(&theta1, &theta1p, cap, &tol()).unwrap();
        assert!(rep.divides, "residual {}", rep.residual);
        let omega = rep.omega.unwrap();
        let expected = chain.factor(2).coeff(&Word::empty());
        assert!(
            (omega.coeff(&Word::empty()) - expected).norm() < 1e-8,
            "recovered divisor should match the grouped factor"
        );
        assert!(divisor_cross_check(&theta2, &theta2p, &omega, cap).unwrap() < 1e-9);
        assert!(divisor_regularity_check(&theta1, &omega, cap, &tol()).unwrap());
    }

    #[test]
    fn divisor_refuses_an_unrelated_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let chain = regular_constant_chain(2, 2, 4, &mut rng).unwrap();
        let theta1 = chain.factor(1).clone();
        // A generic strict constant on the same domain does not factor
        // through the coisometry: anything of the form Ω[I 0] kills the
        // complement of the first coordinates.
        let mut target = random_cmat(4, 4, &mut rng);
        target[(3, 3)] += Complex64::new(2.0, 0.0);
        let target = target.scale(0.9 / op_norm(&target));
        let theta1p = MultiAnalyticSymbol::constant(2, target).unwrap();
        let rep = divisor_extract(&theta1, &theta1p, chain.cap(), &tol()).unwrap();
        assert!(!rep.divides, "residual {}", rep.residual);
        assert!(rep.residual > 1e-3);
    }

    #[test]
    fn borderline_defect_raises_the_indeterminate_flag() {
        // First diagonal entry has defect singular value 2e-4, inside the
        // gray zone around the absolute defect cutoff of 1e-4.
        let near_one = (1.0f64 - 4e-8).sqrt();
        let a = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
            Complex64::new(near_one, 0.0),
            Complex64::new(0.5, 0.0),
        ]));
        let chain =
            FactorizationChain::new(vec![MultiAnalyticSymbol::constant(2, a).unwrap()], 2)
                .unwrap();
        let rep = is_k_regular(&chain, &tol()).unwrap();
        assert!(rep.indeterminate, "singular value near the cutoff must be flagged");

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let clean = random_constant_chain(2, &[2, 2], 2, 0.4, &mut rng).unwrap();
        assert!(!is_k_regular(&clean, &tol()).unwrap().indeterminate);
    }

    #[test]
    fn aggregate_keeps_the_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let chain = random_chain(2, &[2, 2, 2, 2], &[1, 0, 1], 5, 0.2, &mut rng).unwrap();
        for p in PartitionSpec::all_for(3) {
            let agg = aggregate(&chain, &p).unwrap();
            assert_eq!(agg.k(), p.r());
            let mut words: Vec<Word> =
                chain.product().support().map(|(w, _)| w.clone()).collect();
            words.extend(agg.product().support().map(|(w, _)| w.clone()));
            words.sort();
            words.dedup();
            for w in &words {
                assert!(
                    (chain.product().coeff(w) - agg.product().coeff(w)).norm() < 1e-12,
                    "aggregation must not change the product"
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn stacked_domain_rank_bounded_by_sum(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let chain = random_constant_chain(2, &[2, 3, 2], 2, 0.4, &mut rng).unwrap();
            let sz = stacked_z(&chain, &tol()).unwrap();
            prop_assert!(sz.domain.rank() <= sz.sum_codomain_rank());
            let rep = is_k_regular(&chain, &tol()).unwrap();
            prop_assert_eq!(rep.regular, rep.rank_w == rep.sum_rank_di);
        }
    }
}
