//! Primal reference solver for tiny instances with finite feature maps.
//!
//! Minimizes `∥A∥_* + c Σ ℓ(⟨Bₜ, A⟩)` directly, where each margin operator
//! `Bₜ` is `yᵢΦ(xᵢ)` for binary problems and `Φ′_{yᵢ}(xᵢ) − Φ′_k(xᵢ)` (the
//! feature matrix placed in column block `yᵢ` minus the one in block `k`)
//! for multiclass ones. Used to certify that the dual solver reaches the
//! primal optimum and that recovery reproduces the primal factors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::kernels::{lambda_max, KernelBank, KernelSpec};
use crate::losses::{LossKind, LossSpec, SignConvention};
use crate::patches::PatchMatrix;
use crate::recovery::{recover_linear_weight, training_conv_output, LinearWeight};
use crate::solver::{DualSolution, Labels};

/// Singular values at or below this count as zero when taking ranks.
pub const RANK_CUT: f64 = 1e-6;

/// Recovery cutoff for audits of converged duals. Eigenvalues of an
/// optimal quadratic form that belong to the primal subspace sit at 1 up to
/// solver precision; the looser training default admits others.
pub const AUDIT_THRESHOLD: f64 = 0.999;

const MAX_SAMPLES: usize = 64;
const MAX_FEATURES: usize = 64;
const MAX_COLUMNS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMapKind {
    /// `φ(z) = z`, matching the linear kernel.
    Identity,
    /// Weighted monomials matching `(uᵀv + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitFeatureMap {
    pub kind: FeatureMapKind,
    /// Patch dimension `d₁`.
    pub input_dim: usize,
    /// Feature dimension `d₂`.
    pub dim: usize,
    /// Polynomial exponents and weights, one per output feature.
    monomials: Vec<(Vec<u32>, f64)>,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// All exponent vectors of length `d` with entries summing to at most `degree`.
fn exponents(d: usize, degree: u32) -> Vec<Vec<u32>> {
    fn fill(pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for k in 0..=left {
            cur[pos] = k;
            fill(pos + 1, left - k, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    fill(0, degree, &mut vec![0; d], &mut out);
    out
}

impl ExplicitFeatureMap {
    pub fn identity(input_dim: usize) -> Self {
        ExplicitFeatureMap {
            kind: FeatureMapKind::Identity,
            input_dim,
            dim: input_dim,
            monomials: Vec::new(),
        }
    }

    /// Needs `offset ≥ 0` so every weight is real.
    pub fn polynomial(input_dim: usize, degree: u32, offset: f64) -> Result<Self> {
        if degree == 0 || !(offset >= 0.0) || !offset.is_finite() {
            return Err(Error::invalid(format!(
                "explicit polynomial map needs degree ≥ 1 and offset ≥ 0, got {degree}, {offset}"
            )));
        }
        let monomials: Vec<(Vec<u32>, f64)> = exponents(input_dim, degree)
            .into_iter()
            .map(|ks| {
                let used: u32 = ks.iter().sum();
                let k0 = degree - used;
                let multinomial =
                    factorial(degree) / (factorial(k0) * ks.iter().map(|&k| factorial(k)).product::<f64>());
                (ks, (multinomial * offset.powi(k0 as i32)).sqrt())
            })
            .collect();
        debug_assert_eq!(
            monomials.len() as u64,
            binomial(input_dim as u64 + u64::from(degree), u64::from(degree))
        );
        Ok(ExplicitFeatureMap {
            kind: FeatureMapKind::Polynomial { degree, offset },
            input_dim,
            dim: monomials.len(),
            monomials,
        })
    }

    /// Map for a kernel with a finite feature space.
    pub fn for_kernel(spec: &KernelSpec, input_dim: usize) -> Result<Self> {
        match *spec {
            KernelSpec::Linear => Ok(Self::identity(input_dim)),
            KernelSpec::Polynomial { degree, offset } => Self::polynomial(input_dim, degree, offset),
            KernelSpec::GaussianRbf { .. } => Err(Error::invalid("the gaussian kernel has no finite feature map")),
        }
    }

    pub fn kernel(&self) -> KernelSpec {
        match self.kind {
            FeatureMapKind::Identity => KernelSpec::Linear,
            FeatureMapKind::Polynomial { degree, offset } => KernelSpec::Polynomial { degree, offset },
        }
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "expected {} inputs, got {}",
                self.input_dim,
                z.len()
            )));
        }
        Ok(match self.kind {
            FeatureMapKind::Identity => z.to_vec(),
            FeatureMapKind::Polynomial { .. } => self
                .monomials
                .iter()
                .map(|(ks, w)| w * ks.iter().zip(z).map(|(&k, &v)| v.powi(k as i32)).product::<f64>())
                .collect(),
        })
    }

    /// `Φ(x) = [φ(z₁) … φ(z_p)]`, `d₂ × p`.
    pub fn features(&self, z: &PatchMatrix) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.dim, z.count());
        for (b, col) in z.entries().column_iter().enumerate() {
            let f = self.apply(col.as_slice())?;
            out.column_mut(b).copy_from_slice(&f);
        }
        Ok(out)
    }
}

/// Penalty on the multiclass parameter `A = [A₁, …, A_m]`. Both coincide
/// for binary problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularizer {
    /// `Σₖ ∥Aₖ∥_*`, whose dual constraint is `maxₖ ∥Mₖ∥₂ ≤ 1`: exactly the
    /// block-diagonal eigenvalue constraint the solver enforces.
    #[default]
    PerClass,
    /// `∥A∥_*` of the stacked matrix. Its dual constraint also involves the
    /// cross-class blocks `MₖᵀMₗ`, so the block-diagonal dual can exceed
    /// this primal.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalOptions {
    pub regularizer: Regularizer,
    pub max_iters: usize,
    /// Stop once the certified gap falls below `gap_tol·(1 + |objective|)`.
    pub gap_tol: f64,
    /// Iterations between gap evaluations.
    pub check_every: usize,
}

impl Default for PrimalOptions {
    fn default() -> Self {
        PrimalOptions {
            regularizer: Regularizer::default(),
            max_iters: 200_000,
            gap_tol: 1e-9,
            check_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalSolution {
    /// `d₂ × p` (binary) or `d₂ × mp` (multiclass).
    pub a_hat: DMatrix<f64>,
    pub objective: f64,
    /// Best dual value seen; a certified lower bound on the optimum.
    pub dual_bound: f64,
    pub iterations: usize,
    pub converged: bool,
    pub c: f64,
    pub loss: LossSpec,
    pub labels: Labels,
    pub regularizer: Regularizer,
}

impl PrimalSolution {
    pub fn certified_gap(&self) -> f64 {
        self.objective - self.dual_bound
    }
}

pub fn nuclear_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().svd(false, false).singular_values.sum()
}

/// Proximal map of `τ∥·∥_*`: soft-thresholds the singular values.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut svd = m.clone().svd(true, true);
    svd.singular_values.iter_mut().for_each(|s| *s = (*s - tau).max(0.0));
    svd.recompose().expect("both factors were computed")
}

/// Column groups the regularizer acts on separately.
fn groups(cols: usize, labels: &Labels, reg: Regularizer) -> usize {
    match reg {
        Regularizer::PerClass => labels.blocks(),
        Regularizer::Joint => 1,
    }
    .min(cols)
}

fn reg_value(a: &DMatrix<f64>, groups: usize) -> f64 {
    let w = a.ncols() / groups;
    (0..groups)
        .map(|g| nuclear_norm(&a.columns(g * w, w).into_owned()))
        .sum()
}

fn reg_prox(m: &DMatrix<f64>, tau: f64, groups: usize) -> DMatrix<f64> {
    let w = m.ncols() / groups;
    let mut out = m.clone();
    for g in 0..groups {
        out.columns_mut(g * w, w)
            .copy_from(&svt(&m.columns(g * w, w).into_owned(), tau));
    }
    out
}

/// Dual norm of the regularizer: the largest per-group spectral norm.
fn reg_dual_norm(m: &DMatrix<f64>, groups: usize) -> f64 {
    let w = m.ncols() / groups;
    (0..groups)
        .map(|g| m.columns(g * w, w).into_owned().svd(false, false).singular_values.max())
        .fold(0.0, f64::max)
}

/// Margin operators `Bₜ`, one per loss term.
fn margin_operators(features: &[DMatrix<f64>], labels: &Labels) -> Vec<DMatrix<f64>> {
    match labels {
        Labels::Binary(y) => features.iter().zip(y).map(|(f, &yi)| f * yi).collect(),
        Labels::Multiclass { labels, classes } => {
            let (d2, p) = features[0].shape();
            let mut out = Vec::new();
            for (f, &yi) in features.iter().zip(labels) {
                for k in (0..*classes).filter(|&k| k != yi) {
                    let mut b = DMatrix::zeros(d2, p * classes);
                    b.columns_mut(yi * p, p).copy_from(f);
                    b.columns_mut(k * p, p).copy_from(&(-f));
                    out.push(b);
                }
            }
            out
        }
    }
}

/// `R(A) + c Σ ℓ(⟨Bₜ, A⟩)`.
fn objective(a: &DMatrix<f64>, ops: &[DMatrix<f64>], loss: &LossSpec, c: f64, groups: usize) -> f64 {
    reg_value(a, groups) + c * ops.iter().map(|b| loss.loss(b.dot(a))).sum::<f64>()
}

/// Minimizer of `(c/σ)ℓ(z) + ½(z − u)²`.
fn loss_prox(loss: &LossSpec, u: f64, weight: f64) -> f64 {
    let g = |z: f64| weight * loss.derivative(z) + z - u;
    let (mut lo, mut hi) = (u - 1.0, u + 1.0);
    let mut step = 1.0;
    while g(lo) > 0.0 {
        step *= 2.0;
        lo = u - step;
    }
    step = 1.0;
    while g(hi) < 0.0 {
        step *= 2.0;
        hi = u + step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Proximal map of `σF*` with `F(z) = cΣℓ(zₜ)`, coordinatewise.
fn dual_prox(loss: &LossSpec, v: f64, sigma: f64, c: f64) -> f64 {
    match (loss.kind, loss.convention) {
        // F*(w) = Σw on [−c, 0]
        (LossKind::Hinge, SignConvention::Margin) => (v - sigma).clamp(-c, 0.0),
        // Moreau: prox_{σF*}(v) = v − σ·prox_{F/σ}(v/σ)
        _ => v - sigma * loss_prox(loss, v / sigma, c / sigma),
    }
}

/// `−F*(w) = −cΣℓ*(wₜ/c)`, or `None` outside the conjugate's domain.
fn dual_value(w: &[f64], loss: &LossSpec, c: f64) -> Option<f64> {
    w.iter().try_fold(0.0, |acc, &v| loss.dual_term(-v, c).map(|t| acc + t))
}

/// Primal-dual hybrid gradient on the saddle problem
/// `min_A max_w ⟨w, 𝒦A⟩ + R(A) − F*(w)` with `(𝒦A)ₜ = ⟨Bₜ, A⟩` and `R`
/// chosen by `opts.regularizer`. The dual iterate, scaled into the unit
/// ball of `R`'s dual norm, certifies the gap.
pub fn primal_solve(
    patches: &[PatchMatrix],
    labels: &Labels,
    fmap: &ExplicitFeatureMap,
    loss: LossSpec,
    c: f64,
    opts: &PrimalOptions,
) -> Result<PrimalSolution> {
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if patches.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} samples for {} labels",
            patches.len(),
            labels.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    let cols = patches[0].count() * labels.blocks();
    if patches.len() > MAX_SAMPLES || fmap.dim > MAX_FEATURES || cols > MAX_COLUMNS {
        return Err(Error::invalid(format!(
            "oracle instance too large: n = {}, d₂ = {}, columns = {cols}",
            patches.len(),
            fmap.dim
        )));
    }
    let features = patches.iter().map(|z| fmap.features(z)).collect::<Result<Vec<_>>>()?;
    let ops = margin_operators(&features, labels);
    let terms = ops.len();
    let gram = DMatrix::from_fn(terms, terms, |s, t| ops[s].dot(&ops[t]));
    let norm = lambda_max(&gram)?.max(0.0).sqrt();
    let shape = ops[0].shape();
    let groups = groups(shape.1, labels, opts.regularizer);
    if norm == 0.0 {
        // every margin is identically zero; A = 0 is optimal
        let a = DMatrix::zeros(shape.0, shape.1);
        let value = objective(&a, &ops, &loss, c, groups);
        return Ok(PrimalSolution {
            a_hat: a,
            objective: value,
            dual_bound: value,
            iterations: 0,
            converged: true,
            c,
            loss,
            labels: labels.clone(),
            regularizer: opts.regularizer,
        });
    }
    let step = 0.95 / norm;
    let (tau, sigma) = (step, step);

    let mut a = DMatrix::zeros(shape.0, shape.1);
    let mut a_bar = a.clone();
    let mut w = vec![0.0; terms];
    let mut best_a = a.clone();
    let mut best = objective(&a, &ops, &loss, c, groups);
    let mut bound = f64::NEG_INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iters {
        iterations += 1;
        for (wt, b) in w.iter_mut().zip(&ops) {
            *wt = dual_prox(&loss, *wt + sigma * b.dot(&a_bar), sigma, c);
        }
        let mut adj = DMatrix::zeros(shape.0, shape.1);
        for (wt, b) in w.iter().zip(&ops) {
            adj += b * *wt;
        }
        let next = reg_prox(&(&a - adj * tau), tau, groups);
        a_bar = &next * 2.0 - &a;
        a = next;

        if iterations % opts.check_every == 0 || iterations == opts.max_iters {
            let value = objective(&a, &ops, &loss, c, groups);
            if value < best {
                best = value;
                best_a = a.clone();
            }
            let mut adj = DMatrix::zeros(shape.0, shape.1);
            for (wt, b) in w.iter().zip(&ops) {
                adj += b * *wt;
            }
            let scale = reg_dual_norm(&adj, groups).max(1.0);
            let scaled: Vec<f64> = w.iter().map(|v| v / scale).collect();
            if let Some(d) = dual_value(&scaled, &loss, c) {
                bound = bound.max(d);
            }
            if best - bound <= opts.gap_tol * (1.0 + best.abs()) {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!(
            "primal oracle stopped after {iterations} iterations, gap {}",
            best - bound
        );
    }
    Ok(PrimalSolution {
        a_hat: best_a,
        objective: best,
        dual_bound: bound,
        iterations,
        converged,
        c,
        loss,
        labels: labels.clone(),
        regularizer: opts.regularizer,
    })
}

/// `primal.objective − dual.objective`.
pub fn duality_gap(primal: &PrimalSolution, dual: &DualSolution) -> Result<f64> {
    if primal.c != dual.c || primal.loss != dual.loss || primal.labels != dual.labels {
        return Err(Error::invalid("primal and dual solutions describe different instances"));
    }
    Ok(primal.objective - dual.objective)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryComparison {
    pub primal_rank: usize,
    pub recovered_rank: usize,
    /// Radians, ascending; empty when either side has rank 0.
    pub principal_angles: Vec<f64>,
    /// Largest angle, `π/2` when the ranks differ.
    pub max_angle: f64,
    /// `max |OᵢOⱼᵀ − ΦᵢᵀÛ₁Û₁ᵀΦⱼ|` over all training pairs.
    pub product_deviation: f64,
    /// Both sides found nothing to recover.
    pub degenerate_agreed: bool,
}

/// Left singular vectors above the rank cut for each column group, and
/// the right singular vectors embedded at their group's rows.
fn leading_subspaces(a: &DMatrix<f64>, groups: usize) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let w = a.ncols() / groups;
    let mut us = Vec::with_capacity(groups);
    let mut vs: Vec<DMatrix<f64>> = Vec::new();
    for g in 0..groups {
        let svd = a.columns(g * w, w).into_owned().svd(true, true);
        let u = svd.u.expect("computed");
        let vt = svd.v_t.expect("computed");
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > RANK_CUT)
            .collect();
        let mut u1 = DMatrix::zeros(u.nrows(), keep.len());
        let mut v1 = DMatrix::zeros(a.ncols(), keep.len());
        for (col, &k) in keep.iter().enumerate() {
            u1.set_column(col, &u.column(k));
            v1.view_mut((g * w, col), (w, 1)).copy_from(&vt.row(k).transpose());
        }
        us.push(u1);
        vs.push(v1);
    }
    let rank: usize = vs.iter().map(|v| v.ncols()).sum();
    let mut v1 = DMatrix::zeros(a.ncols(), rank);
    let mut at = 0;
    for v in vs {
        v1.columns_mut(at, v.ncols()).copy_from(&v);
        at += v.ncols();
    }
    (us, v1)
}

/// Compares the dual recovery with the SVD of the primal solution.
///
/// `features` are the explicit `Φ(xᵢ)` and `conv_outputs` the recovered
/// `Φ(xᵢ)ᵀÛ₁`, both for the training samples in order. Pass `None` for
/// `recovered` when the dual side returned no filters.
pub fn compare_recovery(
    primal: &PrimalSolution,
    recovered: Option<&LinearWeight>,
    features: &[DMatrix<f64>],
    conv_outputs: &[DMatrix<f64>],
) -> Result<RecoveryComparison> {
    let groups = groups(primal.a_hat.ncols(), &primal.labels, primal.regularizer);
    let (u1, v1) = leading_subspaces(&primal.a_hat, groups);
    let primal_rank = v1.ncols();
    let Some(weight) = recovered else {
        return Ok(RecoveryComparison {
            primal_rank,
            recovered_rank: 0,
            principal_angles: Vec::new(),
            max_angle: if primal_rank == 0 {
                0.0
            } else {
                std::f64::consts::FRAC_PI_2
            },
            product_deviation: if primal_rank == 0 { 0.0 } else { f64::INFINITY },
            degenerate_agreed: primal_rank == 0,
        });
    };
    if weight.columns.nrows() != v1.nrows() {
        return Err(Error::invalid(format!(
            "weight has {} rows, primal solution {}",
            weight.columns.nrows(),
            v1.nrows()
        )));
    }
    if features.len() != conv_outputs.len() {
        return Err(Error::invalid("need one conv output per feature matrix"));
    }
    let recovered_rank = weight.rank();
    let principal_angles: Vec<f64> = if primal_rank == 0 || recovered_rank == 0 {
        Vec::new()
    } else {
        let cosines = (v1.transpose() * &weight.columns).svd(false, false).singular_values;
        let mut angles: Vec<f64> = cosines.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect();
        angles.sort_by(f64::total_cmp);
        angles
    };
    let max_angle = if primal_rank != recovered_rank {
        std::f64::consts::FRAC_PI_2
    } else {
        principal_angles.iter().copied().fold(0.0, f64::max)
    };
    // Φ(xᵢ)ᵀU₁ per group, side by side
    let oracle: Vec<DMatrix<f64>> = features
        .iter()
        .map(|f| {
            let parts: Vec<DMatrix<f64>> = u1.iter().map(|u| f.transpose() * u).collect();
            let mut out = DMatrix::zeros(f.ncols(), primal_rank);
            let mut at = 0;
            for part in parts {
                out.columns_mut(at, part.ncols()).copy_from(&part);
                at += part.ncols();
            }
            out
        })
        .collect();
    let mut deviation = 0.0f64;
    for (i, oi) in conv_outputs.iter().enumerate() {
        for (j, oj) in conv_outputs.iter().enumerate() {
            let dual_side = oi * oj.transpose();
            let primal_side = &oracle[i] * oracle[j].transpose();
            if dual_side.shape() != primal_side.shape() {
                return Err(Error::invalid("conv outputs and features disagree in patch count"));
            }
            deviation = deviation.max((dual_side - primal_side).amax());
        }
    }
    Ok(RecoveryComparison {
        primal_rank,
        recovered_rank,
        principal_angles,
        max_angle,
        product_deviation: deviation,
        degenerate_agreed: false,
    })
}

/// Duality gap and recovery agreement of one dual solution against the
/// primal oracle.
#[derive(Debug, Clone)]
pub struct InstanceAudit {
    pub primal: PrimalSolution,
    pub gap: f64,
    /// `|gap| / (1 + |P|)`.
    pub relative_gap: f64,
    pub comparison: RecoveryComparison,
}

impl InstanceAudit {
    pub fn passes(&self, gap_tol: f64, angle_tol: f64, product_tol: f64) -> bool {
        self.relative_gap <= gap_tol
            && (self.comparison.degenerate_agreed
                || (self.comparison.max_angle <= angle_tol && self.comparison.product_deviation <= product_tol))
    }
}

/// Solves the primal with the feature map matching `bank`'s kernel and
/// compares it with `dual`, recovering filters at `threshold`.
pub fn audit_dual(
    dual: &DualSolution,
    bank: &KernelBank,
    threshold: f64,
    opts: &PrimalOptions,
) -> Result<InstanceAudit> {
    let patches = bank.patches();
    let dim = patches.first().ok_or(Error::EmptyDataset)?.dim();
    let fmap = ExplicitFeatureMap::for_kernel(bank.spec(), dim)?;
    let primal = primal_solve(patches, &dual.labels, &fmap, dual.loss, dual.c, opts)?;
    let gap = duality_gap(&primal, dual)?;
    let weight = match recover_linear_weight(dual, bank, threshold) {
        Ok(w) => Some(w),
        Err(Error::NoFiltersRecovered { .. }) => None,
        Err(e) => return Err(e),
    };
    let features = patches.iter().map(|z| fmap.features(z)).collect::<Result<Vec<_>>>()?;
    let outputs = match &weight {
        Some(w) => (0..patches.len())
            .map(|i| training_conv_output(dual, bank, w, i).map(|o| o.values))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let comparison = compare_recovery(&primal, weight.as_ref(), &features, &outputs)?;
    Ok(InstanceAudit {
        relative_gap: gap.abs() / (1.0 + primal.objective.abs()),
        gap,
        primal,
        comparison,
    })
}

/// Singular values from the eigenvalues of `AᵀA`, descending.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(a.transpose() * a);
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
