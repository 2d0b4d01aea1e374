//! Patch kernels and kernel generating matrices.
//!
//! A kernel generating matrix `K(xᵢ, xⱼ)` is the `p × p` matrix of kernel
//! values between every patch of `xᵢ` and every patch of `xⱼ`. The feature
//! map behind the kernel is never formed here.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patches::PatchMatrix;

/// Default number of generating matrices kept by a [`KernelBank`].
pub const DEFAULT_CACHE_BUDGET: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(−γ‖u − v‖²)`; expects unit-norm patches.
    GaussianRbf { gamma: f64 },
    /// `uᵀv`. Verification kernel with an explicit identity feature map.
    Linear,
    /// `(uᵀv + offset)^degree`. Verification kernel with a finite feature map.
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::GaussianRbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(Error::invalid(format!("gaussian gamma must be positive, got {gamma}")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => Err(Error::invalid("polynomial degree must be at least 1")),
            KernelSpec::Polynomial { offset, .. } if !offset.is_finite() => {
                Err(Error::invalid("polynomial offset must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Whether patches should be unit-normalized before this kernel is applied.
    pub fn wants_unit_patches(&self) -> bool {
        matches!(self, KernelSpec::GaussianRbf { .. })
    }

    fn eval_inner(&self, inner: f64, sq_u: f64, sq_v: f64) -> f64 {
        match *self {
            KernelSpec::GaussianRbf { gamma } => {
                let dist = (sq_u + sq_v - 2.0 * inner).max(0.0);
                (-gamma * dist).exp()
            }
            KernelSpec::Linear => inner,
            KernelSpec::Polynomial { degree, offset } => (inner + offset).powi(degree as i32),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "kernel arguments differ in length ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    Ok(match *spec {
        KernelSpec::GaussianRbf { gamma } => {
            let dist: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            (-gamma * dist).exp()
        }
        KernelSpec::Linear => u.iter().zip(v).map(|(a, b)| a * b).sum(),
        KernelSpec::Polynomial { degree, offset } => {
            let inner: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
            (inner + offset).powi(degree as i32)
        }
    })
}

fn column_sq_norms(z: &DMatrix<f64>) -> Vec<f64> {
    z.column_iter().map(|c| c.norm_squared()).collect()
}

fn generating_matrix_with_norms(
    spec: &KernelSpec,
    zi: &DMatrix<f64>,
    zj: &DMatrix<f64>,
    sq_i: &[f64],
    sq_j: &[f64],
) -> DMatrix<f64> {
    let mut inner = zi.tr_mul(zj);
    if !matches!(spec, KernelSpec::Linear) {
        for b in 0..inner.ncols() {
            for a in 0..inner.nrows() {
                let v = inner[(a, b)];
                inner[(a, b)] = spec.eval_inner(v, sq_i[a], sq_j[b]);
            }
        }
    }
    inner
}

/// Builds `K(xᵢ, xⱼ)`: entry `(a, b)` is the kernel between patch `a` of
/// `zi` and patch `b` of `zj`.
pub fn kernel_generating_matrix(spec: &KernelSpec, zi: &PatchMatrix, zj: &PatchMatrix) -> Result<DMatrix<f64>> {
    if zi.dim() != zj.dim() || zi.count() != zj.count() {
        return Err(Error::invalid(format!(
            "patch matrices disagree: {}x{} vs {}x{}",
            zi.dim(),
            zi.count(),
            zj.dim(),
            zj.count()
        )));
    }
    let (ei, ej) = (zi.entries(), zj.entries());
    Ok(generating_matrix_with_norms(
        spec,
        ei,
        ej,
        &column_sq_norms(ei),
        &column_sq_norms(ej),
    ))
}

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetrized matrix.
pub fn lambda_max(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "lambda_max needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let eigs = symmetrize(m).symmetric_eigenvalues();
    let top = eigs.max();
    if !top.is_finite() {
        return Err(Error::Numerical("eigen-solver returned a non-finite value".into()));
    }
    Ok(top)
}

/// `K′_k`: a generating matrix placed at diagonal block `class` of an
/// `m·p × m·p` block-diagonal matrix. Only the inner block is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernel {
    pub class: usize,
    pub classes: usize,
    pub inner: DMatrix<f64>,
}

/// `class` is zero-based.
pub fn block_kernel(class: usize, inner: DMatrix<f64>, classes: usize) -> Result<BlockKernel> {
    if classes == 0 || class >= classes {
        return Err(Error::invalid(format!(
            "class index {class} out of range for {classes} classes"
        )));
    }
    if !inner.is_square() {
        return Err(Error::invalid("block kernel inner matrix must be square"));
    }
    Ok(BlockKernel { class, classes, inner })
}

impl BlockKernel {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.inner.nrows();
        let mut dense = DMatrix::zeros(p * self.classes, p * self.classes);
        dense
            .view_mut((self.class * p, self.class * p), (p, p))
            .copy_from(&self.inner);
        dense
    }
}

/// Sum of block kernels, stored as one `p × p` matrix per class.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn zeros(classes: usize, p: usize) -> Self {
        BlockDiagonal {
            blocks: vec![DMatrix::zeros(p, p); classes],
        }
    }

    pub fn add_scaled(&mut self, kernel: &BlockKernel, weight: f64) -> Result<()> {
        let block = self
            .blocks
            .get_mut(kernel.class)
            .filter(|b| b.shape() == kernel.inner.shape())
            .ok_or_else(|| Error::invalid("block kernel does not fit this accumulation"))?;
        *block += &kernel.inner * weight;
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.blocks {
            *b *= factor;
        }
    }

    /// Largest eigenvalue of the logical block-diagonal matrix.
    pub fn lambda_max(&self) -> Result<f64> {
        self.blocks
            .iter()
            .map(lambda_max)
            .try_fold(f64::NEG_INFINITY, |acc, l| Ok(acc.max(l?)))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.blocks.first().map_or(0, |b| b.nrows());
        let m = self.blocks.len();
        let mut dense = DMatrix::zeros(m * p, m * p);
        for (k, b) in self.blocks.iter().enumerate() {
            dense.view_mut((k * p, k * p), (p, p)).copy_from(b);
        }
        dense
    }
}

/// Median heuristic: `γ = 1 / median ‖zₐ − z_b‖²` over random pairs of
/// patches drawn from the given patch matrices.
pub fn median_heuristic_gamma(patches: &[PatchMatrix], pairs: usize, seed: u64) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dists: Vec<f64> = (0..pairs.max(1))
        .map(|_| {
            let (zi, zj) = (
                &patches[rng.random_range(0..patches.len())],
                &patches[rng.random_range(0..patches.len())],
            );
            let a = rng.random_range(0..zi.count());
            let b = rng.random_range(0..zj.count());
            (zi.entries().column(a) - zj.entries().column(b)).norm_squared()
        })
        .filter(|d| *d > 1e-12)
        .collect();
    if dists.is_empty() {
        return Ok(1.0);
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len().is_multiple_of(2) {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    Ok(1.0 / median)
}

/// Generating matrices for a fixed set of samples, computed on demand.
///
/// Recently used matrices are kept in a bounded cache keyed by the ordered
/// pair `(i, j)` with `i ≤ j`; `K(xⱼ, xᵢ)` is served as the transpose.
type PairCache = LruCache<(usize, usize), Arc<DMatrix<f64>>>;

pub struct KernelBank {
    spec: KernelSpec,
    patches: Vec<PatchMatrix>,
    sq_norms: Vec<Vec<f64>>,
    cache: Option<Mutex<PairCache>>,
}

impl KernelBank {
    pub fn new(spec: KernelSpec, patches: Vec<PatchMatrix>, cache_budget: usize) -> Result<Self> {
        spec.validate()?;
        if let Some(first) = patches.first() {
            if patches
                .iter()
                .any(|z| z.dim() != first.dim() || z.count() != first.count())
            {
                return Err(Error::invalid("all samples must share one patch geometry"));
            }
        }
        let sq_norms = patches.iter().map(|z| column_sq_norms(z.entries())).collect();
        let cache = NonZeroUsize::new(cache_budget).map(|cap| Mutex::new(LruCache::new(cap)));
        Ok(KernelBank {
            spec,
            patches,
            sq_norms,
            cache,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patches(&self) -> &[PatchMatrix] {
        &self.patches
    }

    /// Patch count `p` shared by all samples.
    pub fn patch_count(&self) -> usize {
        self.patches.first().map_or(0, PatchMatrix::count)
    }

    fn compute(&self, i: usize, j: usize) -> DMatrix<f64> {
        generating_matrix_with_norms(
            &self.spec,
            self.patches[i].entries(),
            self.patches[j].entries(),
            &self.sq_norms[i],
            &self.sq_norms[j],
        )
    }

    /// `K(xᵢ, xⱼ)`.
    pub fn pair(&self, i: usize, j: usize) -> Arc<DMatrix<f64>> {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        let canonical = match &self.cache {
            Some(cache) => {
                let hit = cache.lock().expect("kernel cache poisoned").get(&(lo, hi)).cloned();
                match hit {
                    Some(m) => m,
                    None => {
                        let m = Arc::new(self.compute(lo, hi));
                        cache
                            .lock()
                            .expect("kernel cache poisoned")
                            .put((lo, hi), Arc::clone(&m));
                        m
                    }
                }
            }
            None => Arc::new(self.compute(lo, hi)),
        };
        if i <= j {
            canonical
        } else {
            Arc::new(canonical.transpose())
        }
    }

    /// `K(xᵢ, xⱼ)` for every `j` in `others`, computed in parallel.
    pub fn row(&self, i: usize, others: &[usize]) -> Vec<Arc<DMatrix<f64>>> {
        others.par_iter().map(|&j| self.pair(i, j)).collect()
    }

    /// `K(x, xⱼ)` for an outside sample `x` with the same geometry.
    pub fn against(&self, x: &PatchMatrix, j: usize) -> Result<DMatrix<f64>> {
        let zj = &self.patches[j];
        if x.dim() != zj.dim() || x.count() != zj.count() {
            return Err(Error::invalid(format!(
                "sample patches are {}x{}, training patches {}x{}",
                x.dim(),
                x.count(),
                zj.dim(),
                zj.count()
            )));
        }
        Ok(generating_matrix_with_norms(
            &self.spec,
            x.entries(),
            zj.entries(),
            &column_sq_norms(x.entries()),
            &self.sq_norms[j],
        ))
    }

    /// `λ_max(K(xᵢ, xᵢ))` for every sample.
    pub fn diagonal_lambda_max(&self) -> Result<Vec<f64>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| lambda_max(&self.compute(i, i)))
            .collect()
    }
}

/// Smallest eigenvalue, used for positive-semidefiniteness checks.
pub fn lambda_min(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in symmetric matrix".into()));
    }
    let eigs: DVector<f64> = symmetrize(m).symmetric_eigenvalues();
    Ok(eigs.min())
}
