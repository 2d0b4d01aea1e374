//! Reading the network off a dual solution.
//!
//! The linear weight is spanned by the eigenvectors of the dual quadratic
//! form whose eigenvalue reaches 1; the convolution outputs are kernel
//! expansions `Σⱼ βⱼ K(x, xⱼ) V̂₁`, so no explicit filter is ever formed.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{symmetrize, BlockDiagonal, KernelBank};
use crate::patches::{PatchMatrix, PoolingMatrix};
use crate::solver::{accumulate_quadratic, DualSolution};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Width of the band below the threshold whose eigenvalues get logged.
const NEAR_MISS_BAND: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeight {
    /// `bp × r` with orthonormal columns, `b` being the number of blocks
    /// (1 for binary problems, `m` for multiclass ones).
    pub columns: DMatrix<f64>,
    /// Descending.
    pub eigenvalues_used: Vec<f64>,
    pub threshold_used: f64,
    pub blocks: usize,
}

impl LinearWeight {
    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn patch_count(&self) -> usize {
        self.columns.nrows() / self.blocks
    }

    /// Rows of block `k`, `p × r`.
    pub fn block(&self, k: usize) -> DMatrix<f64> {
        let p = self.patch_count();
        self.columns.rows(k * p, p).into_owned()
    }

    /// `∥V̂₁ᵀV̂₁ − I∥_max`.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        (self.columns.transpose() * &self.columns - DMatrix::identity(r, r)).amax()
    }
}

/// Eigenvectors of the block accumulation with eigenvalue at or above
/// `threshold`, embedded into `bp` rows and sorted by descending eigenvalue.
pub fn linear_weight_from_blocks(acc: &BlockDiagonal, threshold: f64) -> Result<LinearWeight> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1], got {threshold}")));
    }
    let blocks = acc.blocks.len();
    let p = acc.blocks.first().map_or(0, DMatrix::nrows);
    if blocks == 0 || p == 0 {
        return Err(Error::invalid("empty quadratic form"));
    }
    let mut picked: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    let mut largest = f64::NEG_INFINITY;
    for (b, s) in acc.blocks.iter().enumerate() {
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite quadratic form".into()));
        }
        let eig = SymmetricEigen::new(symmetrize(s));
        for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
            largest = largest.max(lam);
            if lam >= threshold {
                picked.push((lam, b, oriented(eig.eigenvectors.column(idx).iter().copied().collect())));
            } else if lam >= threshold - NEAR_MISS_BAND {
                log::info!("eigenvalue {lam:.6} in block {b} just below threshold {threshold}");
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::NoFiltersRecovered { largest, threshold });
    }
    // stable: equal eigenvalues keep block then solver order
    picked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut columns = DMatrix::zeros(blocks * p, picked.len());
    for (col, (_, b, v)) in picked.iter().enumerate() {
        for (row, &x) in v.iter().enumerate() {
            columns[(b * p + row, col)] = x;
        }
    }
    if let Some(top) = picked.first().map(|t| t.0).filter(|&t| t > 1.0 + 1e-6) {
        log::warn!("recovered eigenvalue {top} exceeds 1; the dual solution may be infeasible");
    }
    Ok(LinearWeight {
        columns,
        eigenvalues_used: picked.iter().map(|t| t.0).collect(),
        threshold_used: threshold,
        blocks,
    })
}

/// Flips an eigenvector so its largest-magnitude entry is positive.
fn oriented(mut v: Vec<f64>) -> Vec<f64> {
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

pub fn recover_linear_weight(sol: &DualSolution, bank: &KernelBank, threshold: f64) -> Result<LinearWeight> {
    let acc = accumulate_quadratic(bank, &sol.alpha, &sol.labels)?;
    linear_weight_from_blocks(&acc, threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvOutput {
    /// `p × r`, or `q × r` after pooling.
    pub values: DMatrix<f64>,
    pub sample: Option<usize>,
}

const CHUNK: usize = 16;

/// `Σ_b (Σⱼ β_{b,j} K(x,xⱼ)) V̂₁[b]` with kernels supplied by `kernel(j)`.
fn expand<F>(sol: &DualSolution, weight: &LinearWeight, p: usize, kernel: F) -> Result<DMatrix<f64>>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    let beta = sol.folded()?;
    if beta.len() != weight.blocks || weight.patch_count() != p {
        return Err(Error::invalid(format!(
            "weight has {} blocks of {} rows, solution needs {} blocks of {p}",
            weight.blocks,
            weight.patch_count(),
            beta.len()
        )));
    }
    let support: Vec<usize> = (0..beta[0].len())
        .filter(|&j| beta.iter().any(|b| b[j] != 0.0))
        .collect();
    // fixed chunks summed in order keep the result independent of scheduling
    let partials: Vec<Vec<DMatrix<f64>>> = support
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut local = vec![DMatrix::zeros(p, p); beta.len()];
            for &j in chunk {
                let k = kernel(j)?;
                for (b, coef) in beta.iter().enumerate() {
                    if coef[j] != 0.0 {
                        local[b] += &k * coef[j];
                    }
                }
            }
            Ok(local)
        })
        .collect::<Result<_>>()?;
    let mut sums = vec![DMatrix::zeros(p, p); beta.len()];
    for local in partials {
        for (acc, part) in sums.iter_mut().zip(local) {
            *acc += part;
        }
    }
    let mut out = DMatrix::zeros(p, weight.rank());
    for (b, m) in sums.iter().enumerate() {
        out += m * weight.block(b);
    }
    Ok(out)
}

/// Convolution output of an arbitrary input with the training geometry.
pub fn recover_conv_output(
    sol: &DualSolution,
    bank: &KernelBank,
    weight: &LinearWeight,
    x: &PatchMatrix,
) -> Result<ConvOutput> {
    let values = expand(sol, weight, bank.patch_count(), |j| bank.against(x, j))?;
    Ok(ConvOutput { values, sample: None })
}

/// Convolution output of training sample `i`, reusing cached kernels.
pub fn training_conv_output(
    sol: &DualSolution,
    bank: &KernelBank,
    weight: &LinearWeight,
    i: usize,
) -> Result<ConvOutput> {
    if i >= bank.len() {
        return Err(Error::invalid(format!("sample {i} out of range")));
    }
    let values = expand(sol, weight, bank.patch_count(), |j| Ok((*bank.pair(i, j)).clone()))?;
    Ok(ConvOutput {
        values,
        sample: Some(i),
    })
}

pub fn apply_pooling(out: &ConvOutput, g: &PoolingMatrix) -> Result<ConvOutput> {
    Ok(ConvOutput {
        values: g.apply(&out.values)?,
        sample: out.sample,
    })
}
