//! Coordinate ascent on the dual program
//!
//! ```text
//! maximize    −c Σᵢ ℓ*(−αᵢ/c)
//! subject to  λ_max( Σᵢⱼ αᵢαⱼyᵢyⱼ K(xᵢ,xⱼ) ) ≤ 1,   αᵢ ≥ 0
//! ```
//!
//! and its multiclass counterpart, where the quadratic form becomes block
//! diagonal with one `p × p` block per class and folded multipliers
//! `α′_{k,i} = [k = yᵢ]·Σₛ α_{s,i} − α_{k,i}`.
//!
//! Both programs are handled by one engine. Every block `b` carries a
//! coefficient `β_{b,i}` per sample (`yᵢαᵢ` for binary problems, `α′_{b,i}`
//! for multiclass ones) and the accumulation `S_b = Σᵢⱼ β_{b,i}β_{b,j}K(xᵢ,xⱼ)`.
//! Moving one coordinate of sample `i` changes `S_b` along the quadratic
//! curve `base + β²K(xᵢ,xᵢ) + βT` with `T = Σ_{j≠i} β_{b,j}(K(xᵢ,xⱼ) + K(xⱼ,xᵢ))`.

mod refine;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{lambda_max, symmetrize, BlockDiagonal, KernelBank, DEFAULT_CACHE_BUDGET};
use crate::losses::{dual_objective, LossSpec};

pub use refine::RefineOptions;

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Values in `{−1, +1}`.
    Binary(Vec<f64>),
    /// Zero-based class indices below `classes`.
    Multiclass { labels: Vec<usize>, classes: usize },
}

impl Labels {
    pub fn binary(labels: Vec<f64>) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&y| y != 1.0 && y != -1.0) {
            return Err(Error::invalid(format!("binary labels must be ±1, found {bad}")));
        }
        Ok(Labels::Binary(labels))
    }

    pub fn multiclass(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("multiclass problems need at least two classes"));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Labels::Multiclass { labels, classes })
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(y) => y.len(),
            Labels::Multiclass { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of blocks in the quadratic form: 1 for binary, `m` otherwise.
    pub fn blocks(&self) -> usize {
        match self {
            Labels::Binary(_) => 1,
            Labels::Multiclass { classes, .. } => *classes,
        }
    }
}

/// Dual multipliers.
#[derive(Debug, Clone, PartialEq)]
pub enum DualCoefficients {
    Binary(Vec<f64>),
    /// `n × m`, entry `(i, k)` is `α_{k,i}`; `α_{yᵢ,i} = 0`.
    Multiclass(DMatrix<f64>),
}

impl DualCoefficients {
    pub fn zeros(labels: &Labels) -> Self {
        match labels {
            Labels::Binary(y) => DualCoefficients::Binary(vec![0.0; y.len()]),
            Labels::Multiclass { labels, classes } => {
                DualCoefficients::Multiclass(DMatrix::zeros(labels.len(), *classes))
            }
        }
    }

    /// All multipliers as a flat list (row-major for multiclass).
    pub fn values(&self) -> Vec<f64> {
        match self {
            DualCoefficients::Binary(a) => a.clone(),
            DualCoefficients::Multiclass(a) => a.transpose().as_slice().to_vec(),
        }
    }

    /// Samples with at least one nonzero multiplier.
    pub fn support(&self) -> Vec<usize> {
        match self {
            DualCoefficients::Binary(a) => (0..a.len()).filter(|&i| a[i] != 0.0).collect(),
            DualCoefficients::Multiclass(a) => (0..a.nrows()).filter(|&i| a.row(i).iter().any(|&v| v != 0.0)).collect(),
        }
    }
}

/// Per-block, per-sample coefficients of the quadratic form: `yᵢαᵢ` for a
/// binary problem, `α′_{k,i}` for a multiclass one. Indexed `[block][sample]`.
pub fn folded_coefficients(alpha: &DualCoefficients, labels: &Labels) -> Result<Vec<Vec<f64>>> {
    match (alpha, labels) {
        (DualCoefficients::Binary(a), Labels::Binary(y)) if a.len() == y.len() => {
            Ok(vec![a.iter().zip(y).map(|(a, y)| a * y).collect()])
        }
        (DualCoefficients::Multiclass(a), Labels::Multiclass { labels, classes })
            if a.nrows() == labels.len() && a.ncols() == *classes =>
        {
            let mut beta = vec![vec![0.0; labels.len()]; *classes];
            for (i, &yi) in labels.iter().enumerate() {
                let total: f64 = a.row(i).sum();
                for (k, block) in beta.iter_mut().enumerate() {
                    let own = if k == yi { total } else { 0.0 };
                    block[i] = own - a[(i, k)];
                }
            }
            Ok(beta)
        }
        _ => Err(Error::invalid("dual coefficients do not match the labels")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinateOrder {
    /// Ascending `λ_max(K(xᵢ,xᵢ))`, ties by index.
    #[default]
    AscendingLambda,
    Index,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Bisection stops once the bracket is narrower than this fraction of
    /// the coordinate's search range.
    pub binary_search_tol: f64,
    /// Slack allowed on `λ_max ≤ 1` in reports and checks.
    pub feasibility_tol: f64,
    pub max_bisect_iters: usize,
    /// Greedy passes over the coordinates. Passes after the first remove a
    /// coordinate's contribution before re-optimizing it, and stop early
    /// once a pass no longer changes the objective.
    pub sweeps: usize,
    pub coordinate_order: CoordinateOrder,
    pub kernel_cache_budget: usize,
    /// Optional barrier-method polish after the greedy passes.
    pub refine: Option<RefineOptions>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            binary_search_tol: 1e-6,
            feasibility_tol: 1e-8,
            max_bisect_iters: 60,
            sweeps: 1,
            coordinate_order: CoordinateOrder::AscendingLambda,
            kernel_cache_budget: DEFAULT_CACHE_BUDGET,
            refine: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.binary_search_tol > 0.0) || !(self.feasibility_tol > 0.0) {
            return Err(Error::invalid("solver tolerances must be positive"));
        }
        if self.max_bisect_iters == 0 || self.sweeps == 0 {
            return Err(Error::invalid("bisection iterations and sweeps must be at least 1"));
        }
        if let Some(r) = &self.refine {
            r.validate()?;
        }
        Ok(())
    }
}

/// One coordinate update, reported to the progress callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub sweep: usize,
    /// Running count of coordinate updates.
    pub step: usize,
    pub sample: usize,
    pub class: Option<usize>,
    pub alpha: f64,
    pub objective: f64,
    pub lambda_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: DualCoefficients,
    pub labels: Labels,
    pub c: f64,
    pub loss: LossSpec,
    pub final_lambda_max: f64,
    pub objective: f64,
    pub sweep_count: usize,
    /// Whether the barrier polish ran.
    pub refined: bool,
    /// The solver's incrementally maintained quadratic form; empty for
    /// solutions read back from a model file.
    pub accumulation: BlockDiagonal,
}

impl DualSolution {
    pub fn folded(&self) -> Result<Vec<Vec<f64>>> {
        folded_coefficients(&self.alpha, &self.labels)
    }
}

/// `Σᵢⱼ β_{b,i}β_{b,j}K(xᵢ,xⱼ)` per block, symmetrized, skipping samples
/// whose coefficients are all zero.
pub fn accumulate_quadratic(bank: &KernelBank, alpha: &DualCoefficients, labels: &Labels) -> Result<BlockDiagonal> {
    if labels.len() != bank.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} samples",
            labels.len(),
            bank.len()
        )));
    }
    let beta = folded_coefficients(alpha, labels)?;
    accumulate_folded(bank, &beta)
}

pub(crate) fn accumulate_folded(bank: &KernelBank, beta: &[Vec<f64>]) -> Result<BlockDiagonal> {
    let p = bank.patch_count();
    let support: Vec<usize> = (0..bank.len()).filter(|&i| beta.iter().any(|b| b[i] != 0.0)).collect();
    // each row i contributes β_iβ_iK_ii + Σ_{j>i} β_iβ_j(K_ij + K_ji)
    let partials: Vec<Vec<DMatrix<f64>>> = support
        .par_iter()
        .enumerate()
        .map(|(pos, &i)| {
            let mut local = vec![DMatrix::zeros(p, p); beta.len()];
            let kii = bank.pair(i, i);
            for (b, coef) in beta.iter().enumerate() {
                local[b] += &*kii * (coef[i] * coef[i]);
            }
            for &j in &support[pos + 1..] {
                let kij = bank.pair(i, j);
                let both = &*kij + kij.transpose();
                for (b, coef) in beta.iter().enumerate() {
                    let w = coef[i] * coef[j];
                    if w != 0.0 {
                        local[b] += &both * w;
                    }
                }
            }
            local
        })
        .collect();
    let mut blocks = vec![DMatrix::zeros(p, p); beta.len()];
    for local in partials {
        for (acc, part) in blocks.iter_mut().zip(local) {
            *acc += part;
        }
    }
    for b in &mut blocks {
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite quadratic accumulation".into()));
        }
        *b = symmetrize(b);
    }
    Ok(BlockDiagonal { blocks })
}

fn check_problem(bank: &KernelBank, labels: &Labels, c: f64, opts: &SolverOptions) -> Result<()> {
    if bank.is_empty() || labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if labels.len() != bank.len() {
        return Err(Error::invalid(format!(
            "{} labels for {} samples",
            labels.len(),
            bank.len()
        )));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive, got {c}")));
    }
    opts.validate()
}

/// Binary dual solve.
pub fn solve_dual(
    bank: &KernelBank,
    labels: &[f64],
    loss: LossSpec,
    c: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let labels = Labels::binary(labels.to_vec())?;
    solve_dual_with_progress(bank, &labels, loss, c, opts, |_| {})
}

/// Multiclass dual solve; `labels` are zero-based class indices.
pub fn solve_dual_multiclass(
    bank: &KernelBank,
    labels: &[usize],
    classes: usize,
    loss: LossSpec,
    c: f64,
    opts: &SolverOptions,
) -> Result<DualSolution> {
    let labels = Labels::multiclass(labels.to_vec(), classes)?;
    solve_dual_with_progress(bank, &labels, loss, c, opts, |_| {})
}

/// Solves either dual, reporting every coordinate update.
pub fn solve_dual_with_progress<F: FnMut(&Progress)>(
    bank: &KernelBank,
    labels: &Labels,
    loss: LossSpec,
    c: f64,
    opts: &SolverOptions,
    mut progress: F,
) -> Result<DualSolution> {
    check_problem(bank, labels, c, opts)?;
    let mut engine = Engine::new(bank, labels, loss, c, opts)?;
    let order = engine.sample_order()?;
    let mut sweep_count = 0;
    let mut step = 0;
    for sweep in 0..opts.sweeps {
        let before = engine.objective;
        let changed = engine.sweep(&order, sweep, &mut step, &mut progress)?;
        sweep_count += 1;
        let gain = engine.objective - before;
        if sweep > 0 && (!changed || gain <= 1e-15 * (1.0 + engine.objective.abs())) {
            break;
        }
    }
    let mut refined = false;
    if let Some(ropts) = &opts.refine {
        refined = refine::polish(&mut engine, ropts)?;
    }
    engine.finish(sweep_count, refined)
}

/// Recomputed feasibility certificate of a dual solution.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `λ_max` of the quadratic form rebuilt from scratch.
    pub lambda_max: f64,
    /// Per-block `λ_max` (one entry for binary problems).
    pub block_lambda_max: Vec<f64>,
    /// `1 − λ_max`.
    pub slack: f64,
    /// `(index, value)` of multipliers outside their box. Multiclass indices
    /// are `i·m + k`.
    pub box_violations: Vec<(usize, f64)>,
}

impl FeasibilityReport {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.slack >= -tol && self.box_violations.is_empty()
    }
}

pub fn verify_feasibility(sol: &DualSolution, bank: &KernelBank) -> Result<FeasibilityReport> {
    let acc = accumulate_quadratic(bank, &sol.alpha, &sol.labels)?;
    let block_lambda_max = acc.blocks.iter().map(lambda_max).collect::<Result<Vec<_>>>()?;
    let top = block_lambda_max.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let interval = sol.loss.feasible_interval(sol.c);
    let mut box_violations = Vec::new();
    match (&sol.alpha, &sol.labels) {
        (DualCoefficients::Binary(a), _) => {
            for (i, &v) in a.iter().enumerate() {
                if !interval.contains(v) {
                    box_violations.push((i, v));
                }
            }
        }
        (DualCoefficients::Multiclass(a), Labels::Multiclass { labels, classes }) => {
            for (i, &yi) in labels.iter().enumerate() {
                for k in 0..*classes {
                    let v = a[(i, k)];
                    let ok = if k == yi { v == 0.0 } else { interval.contains(v) };
                    if !ok {
                        box_violations.push((i * classes + k, v));
                    }
                }
            }
        }
        _ => return Err(Error::invalid("dual coefficients do not match the labels")),
    }
    Ok(FeasibilityReport {
        lambda_max: top,
        block_lambda_max,
        slack: 1.0 - top,
        box_violations,
    })
}

/// A single coordinate: sample `i`, and for multiclass problems the class
/// `k ≠ yᵢ` whose multiplier `α_{k,i}` moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Coordinate {
    pub sample: usize,
    pub class: Option<usize>,
}

/// How a coordinate value `u` enters block `block`: `β = slope·u + intercept`.
#[derive(Debug, Clone, Copy)]
struct Lever {
    block: usize,
    slope: f64,
    intercept: f64,
}

pub(crate) struct Engine<'a> {
    pub(crate) bank: &'a KernelBank,
    pub(crate) labels: &'a Labels,
    pub(crate) loss: LossSpec,
    pub(crate) c: f64,
    opts: &'a SolverOptions,
    pub(crate) alpha: DualCoefficients,
    /// `[block][sample]`.
    pub(crate) beta: Vec<Vec<f64>>,
    pub(crate) blocks: Vec<DMatrix<f64>>,
    block_lambda: Vec<f64>,
    pub(crate) objective: f64,
}

impl<'a> Engine<'a> {
    fn new(bank: &'a KernelBank, labels: &'a Labels, loss: LossSpec, c: f64, opts: &'a SolverOptions) -> Result<Self> {
        let p = bank.patch_count();
        let alpha = DualCoefficients::zeros(labels);
        let beta = vec![vec![0.0; labels.len()]; labels.blocks()];
        let objective = dual_objective(&loss, &alpha.values(), c)?;
        let engine = Engine {
            bank,
            labels,
            loss,
            c,
            opts,
            alpha,
            beta,
            blocks: vec![DMatrix::zeros(p, p); labels.blocks()],
            block_lambda: vec![0.0; labels.blocks()],
            objective,
        };
        // α = 0 is feasible since λ_max(0) = 0
        let start = engine.block_lambda.iter().copied().fold(0.0, f64::max);
        if start > 1.0 {
            return Err(Error::InfeasibleStart { lambda_max: start });
        }
        Ok(engine)
    }

    fn sample_order(&self) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.bank.len()).collect();
        if self.opts.coordinate_order == CoordinateOrder::AscendingLambda {
            let lam = self.bank.diagonal_lambda_max()?;
            // stable sort keeps index order on ties
            order.sort_by(|&a, &b| lam[a].total_cmp(&lam[b]));
        }
        Ok(order)
    }

    pub(crate) fn coordinates_of(&self, sample: usize) -> Vec<Coordinate> {
        match self.labels {
            Labels::Binary(_) => vec![Coordinate { sample, class: None }],
            Labels::Multiclass { labels, classes } => (0..*classes)
                .filter(|&k| k != labels[sample])
                .map(|k| Coordinate { sample, class: Some(k) })
                .collect(),
        }
    }

    pub(crate) fn value(&self, coord: Coordinate) -> f64 {
        match (&self.alpha, coord.class) {
            (DualCoefficients::Binary(a), _) => a[coord.sample],
            (DualCoefficients::Multiclass(a), Some(k)) => a[(coord.sample, k)],
            (DualCoefficients::Multiclass(_), None) => unreachable!("multiclass coordinate without class"),
        }
    }

    pub(crate) fn set_value(&mut self, coord: Coordinate, u: f64) {
        let old = self.value(coord);
        match (&mut self.alpha, coord.class) {
            (DualCoefficients::Binary(a), _) => a[coord.sample] = u,
            (DualCoefficients::Multiclass(a), Some(k)) => a[(coord.sample, k)] = u,
            (DualCoefficients::Multiclass(_), None) => unreachable!(),
        }
        for lever in self.levers(coord) {
            self.beta[lever.block][coord.sample] += lever.slope * (u - old);
        }
    }

    /// Affine maps from the coordinate value to the `β` entries it moves.
    fn levers(&self, coord: Coordinate) -> Vec<Lever> {
        let i = coord.sample;
        match (self.labels, coord.class) {
            (Labels::Binary(y), _) => vec![Lever {
                block: 0,
                slope: y[i],
                intercept: 0.0,
            }],
            (Labels::Multiclass { labels, .. }, Some(k)) => {
                let u = self.value(coord);
                let own = self.beta[labels[i]][i];
                vec![
                    Lever {
                        block: k,
                        slope: -1.0,
                        intercept: 0.0,
                    },
                    Lever {
                        block: labels[i],
                        slope: 1.0,
                        intercept: own - u,
                    },
                ]
            }
            (Labels::Multiclass { .. }, None) => unreachable!(),
        }
    }

    /// `T_b = Σ_{j≠i} β_{b,j}(K(xᵢ,xⱼ) + K(xⱼ,xᵢ))` for every block.
    fn cross_terms(&self, i: usize) -> Vec<DMatrix<f64>> {
        let p = self.bank.patch_count();
        let others: Vec<usize> = (0..self.bank.len())
            .filter(|&j| j != i && self.beta.iter().any(|b| b[j] != 0.0))
            .collect();
        let row = self.bank.row(i, &others);
        self.beta
            .iter()
            .map(|coef| {
                let mut m = DMatrix::zeros(p, p);
                for (&j, kij) in others.iter().zip(&row) {
                    if coef[j] != 0.0 {
                        m += &**kij * coef[j];
                    }
                }
                &m + m.transpose()
            })
            .collect()
    }

    fn sweep<F: FnMut(&Progress)>(
        &mut self,
        order: &[usize],
        sweep: usize,
        step: &mut usize,
        progress: &mut F,
    ) -> Result<bool> {
        let mut changed = false;
        for &i in order {
            let kii = self.bank.pair(i, i);
            let cross = self.cross_terms(i);
            for coord in self.coordinates_of(i) {
                let before = self.value(coord);
                let after = self.update_coordinate(coord, &kii, &cross)?;
                changed |= after != before;
                *step += 1;
                progress(&Progress {
                    sweep,
                    step: *step,
                    sample: i,
                    class: coord.class,
                    alpha: after,
                    objective: self.objective,
                    lambda_max: self.block_lambda.iter().copied().fold(0.0, f64::max),
                });
            }
        }
        Ok(changed)
    }

    fn update_coordinate(&mut self, coord: Coordinate, kii: &DMatrix<f64>, cross: &[DMatrix<f64>]) -> Result<f64> {
        let i = coord.sample;
        let current = self.value(coord);
        let levers = self.levers(coord);
        // strip sample i's contribution from every block the coordinate moves
        let bases: Vec<DMatrix<f64>> = levers
            .iter()
            .map(|l| {
                let b = self.beta[l.block][i];
                &self.blocks[l.block] - kii * (b * b) - &cross[l.block] * b
            })
            .collect();
        let curve = Curve {
            levers: &levers,
            bases: &bases,
            kii,
            cross,
        };
        let interval = self.loss.feasible_interval(self.c);
        let cap = self.loss.search_cap(self.c);
        let scale = if cap > 0.0 { cap } else { 1.0 };
        let tol = self.opts.binary_search_tol * scale;

        let current_lams: Vec<f64> = levers.iter().map(|l| self.block_lambda[l.block]).collect();
        let (hi, hi_lams) = if current >= cap {
            (current, current_lams.clone())
        } else {
            let at_cap = curve.lambdas(cap)?;
            if max_of(&at_cap) <= 1.0 {
                (cap, at_cap)
            } else {
                self.largest_feasible(&curve, current, cap, current_lams.clone(), tol)?
            }
        };

        let (chosen, lams) = if self.loss.is_monotone_dual_term() {
            (hi, hi_lams)
        } else {
            let lo = if current <= interval.lo {
                current
            } else {
                let at_lo = curve.lambdas(interval.lo)?;
                if max_of(&at_lo) <= 1.0 {
                    interval.lo
                } else {
                    self.smallest_feasible(&curve, interval.lo, current, tol)?
                }
            };
            let u = self.maximize_term(lo, hi, tol);
            let lams = if u == hi { hi_lams } else { curve.lambdas(u)? };
            (u, lams)
        };

        if chosen != current {
            let old_term = self.loss.dual_term(current, self.c).unwrap_or(0.0);
            let new_term = self.loss.dual_term(chosen, self.c).ok_or(Error::InfeasibleDual {
                index: i,
                value: chosen,
            })?;
            for (lever, base) in levers.iter().zip(bases) {
                let b = lever.slope * chosen + lever.intercept;
                self.blocks[lever.block] = base + kii * (b * b) + &cross[lever.block] * b;
            }
            for (lever, lam) in levers.iter().zip(&lams) {
                self.block_lambda[lever.block] = *lam;
            }
            self.set_value(coord, chosen);
            self.objective += new_term - old_term;
        }
        Ok(chosen)
    }

    /// Largest `u ∈ [lo, hi]` with every block feasible; `lo` is feasible
    /// and `hi` is not. Feasible values of one coordinate form an interval
    /// (a line through a convex set), so bisection applies.
    fn largest_feasible(
        &self,
        curve: &Curve<'_>,
        lo: f64,
        hi: f64,
        lo_lams: Vec<f64>,
        tol: f64,
    ) -> Result<(f64, Vec<f64>)> {
        let (mut lo, mut hi, mut lo_lams) = (lo, hi, lo_lams);
        for _ in 0..self.opts.max_bisect_iters {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let lams = curve.lambdas(mid)?;
            if max_of(&lams) <= 1.0 {
                lo = mid;
                lo_lams = lams;
            } else {
                hi = mid;
            }
        }
        if cfg!(debug_assertions) && lo + tol < hi {
            // bracket check: one step past the answer must be infeasible
            let probe = curve.lambdas(lo + tol)?;
            if max_of(&probe) <= 1.0 {
                return self.grid_scan(curve, lo, hi);
            }
        }
        Ok((lo, lo_lams))
    }

    /// Fallback when the bisection bracket turns out non-monotone.
    fn grid_scan(&self, curve: &Curve<'_>, lo: f64, hi: f64) -> Result<(f64, Vec<f64>)> {
        log::warn!("non-monotone feasibility bracket [{lo}, {hi}], scanning grid");
        let mut best = (lo, curve.lambdas(lo)?);
        for k in 1..=128 {
            let u = lo + (hi - lo) * k as f64 / 128.0;
            let lams = curve.lambdas(u)?;
            if max_of(&lams) <= 1.0 {
                best = (u, lams);
            }
        }
        Ok(best)
    }

    /// Smallest feasible `u ∈ [lo, hi]`; `lo` is infeasible, `hi` feasible.
    fn smallest_feasible(&self, curve: &Curve<'_>, lo: f64, hi: f64, tol: f64) -> Result<f64> {
        let (mut lo, mut hi) = (lo, hi);
        for _ in 0..self.opts.max_bisect_iters {
            if hi - lo <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if max_of(&curve.lambdas(mid)?) <= 1.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    }

    /// Maximizes the concave dual term over `[lo, hi]` by golden-section search.
    fn maximize_term(&self, lo: f64, hi: f64, tol: f64) -> f64 {
        let term = |u: f64| self.loss.dual_term(u, self.c).unwrap_or(f64::NEG_INFINITY);
        if hi <= lo {
            return lo;
        }
        let (d_hi, _) = self.loss.dual_term_derivatives(hi, self.c);
        if d_hi >= 0.0 {
            return hi;
        }
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let (mut f1, mut f2) = (term(x1), term(x2));
        for _ in 0..200 {
            if b - a <= tol {
                break;
            }
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = term(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = term(x1);
            }
        }
        let candidates = [lo, 0.5 * (a + b), hi];
        candidates
            .into_iter()
            .max_by(|x, y| term(*x).total_cmp(&term(*y)))
            .unwrap_or(lo)
    }

    pub(crate) fn rebuild_blocks(&mut self) -> Result<()> {
        let acc = accumulate_folded(self.bank, &self.beta)?;
        self.block_lambda = acc.blocks.iter().map(lambda_max).collect::<Result<_>>()?;
        self.blocks = acc.blocks;
        self.objective = dual_objective(&self.loss, &self.alpha.values(), self.c)?;
        Ok(())
    }

    fn finish(self, sweep_count: usize, refined: bool) -> Result<DualSolution> {
        let objective = dual_objective(&self.loss, &self.alpha.values(), self.c)?;
        let blocks: Vec<DMatrix<f64>> = self.blocks.iter().map(symmetrize).collect();
        let final_lambda_max = blocks
            .iter()
            .map(lambda_max)
            .try_fold(0.0f64, |acc, l| Ok::<_, Error>(acc.max(l?)))?;
        Ok(DualSolution {
            alpha: self.alpha,
            labels: self.labels.clone(),
            c: self.c,
            loss: self.loss,
            final_lambda_max,
            objective,
            sweep_count,
            refined,
            accumulation: BlockDiagonal { blocks },
        })
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// The blocks touched by one coordinate as functions of its value.
struct Curve<'c> {
    levers: &'c [Lever],
    bases: &'c [DMatrix<f64>],
    kii: &'c DMatrix<f64>,
    cross: &'c [DMatrix<f64>],
}

impl Curve<'_> {
    fn lambdas(&self, u: f64) -> Result<Vec<f64>> {
        self.levers
            .iter()
            .zip(self.bases)
            .map(|(lever, base)| {
                let b = lever.slope * u + lever.intercept;
                lambda_max(&(base + self.kii * (b * b) + &self.cross[lever.block] * b))
            })
            .collect()
    }
}
