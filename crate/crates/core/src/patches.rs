//! Patch extraction, patch normalization and average pooling.
//!
//! Inputs are flat vectors laid out channel-major: channel `c` occupies
//! `x[c*H*W .. (c+1)*H*W]`, each plane row-major. Patches are enumerated
//! row-major over output positions. Inside a patch the filter window is
//! row-major and channels are stacked one after another, so entry
//! `c*f*f + dy*f + dx` of a patch holds pixel `(dy, dx)` of channel `c`.
//! Pixels that fall into the padding are zero.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Norm below which a patch counts as all-zero when normalizing.
pub const DEFAULT_NORM_EPS: f64 = 1e-12;

/// Square-filter convolution geometry over a `height × width × channels` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub input_height: usize,
    pub input_width: usize,
    pub channels: usize,
    pub filter_width: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PatchGeometry {
    pub fn new(
        input_height: usize,
        input_width: usize,
        channels: usize,
        filter_width: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let geom = PatchGeometry {
            input_height,
            input_width,
            channels,
            filter_width,
            stride,
            padding,
        };
        geom.validate()?;
        Ok(geom)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_height == 0 || self.input_width == 0 || self.channels == 0 {
            return Err(Error::invalid(format!(
                "input dimensions must be positive, got {}x{}x{}",
                self.input_height, self.input_width, self.channels
            )));
        }
        if self.filter_width == 0 || self.stride == 0 {
            return Err(Error::invalid("filter width and stride must be positive"));
        }
        let padded_h = self.input_height + 2 * self.padding;
        let padded_w = self.input_width + 2 * self.padding;
        if self.filter_width > padded_h || self.filter_width > padded_w {
            return Err(Error::invalid(format!(
                "filter width {} exceeds padded input {}x{}",
                self.filter_width, padded_h, padded_w
            )));
        }
        Ok(())
    }

    pub fn output_height(&self) -> usize {
        (self.input_height + 2 * self.padding - self.filter_width) / self.stride + 1
    }

    pub fn output_width(&self) -> usize {
        (self.input_width + 2 * self.padding - self.filter_width) / self.stride + 1
    }

    /// Number of patches `p`.
    pub fn patch_count(&self) -> usize {
        self.output_height() * self.output_width()
    }

    /// Length `d₁` of one patch.
    pub fn patch_dim(&self) -> usize {
        self.filter_width * self.filter_width * self.channels
    }

    /// Length `d₀` of a flat input vector.
    pub fn input_len(&self) -> usize {
        self.input_height * self.input_width * self.channels
    }
}

/// A `d₁ × p` matrix whose column `j` is the `j`-th patch of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    entries: DMatrix<f64>,
}

impl PatchMatrix {
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::invalid("patch matrix must be non-empty"));
        }
        Ok(PatchMatrix { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.entries
    }

    /// Patch dimension `d₁`.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Patch count `p`.
    pub fn count(&self) -> usize {
        self.entries.ncols()
    }
}

/// Output of [`normalize_patches`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPatches {
    pub patches: PatchMatrix,
    /// Indices of columns that were (numerically) zero and replaced by `e₁`.
    pub degenerate: Vec<usize>,
}

pub fn extract_patches(x: &[f64], geom: &PatchGeometry) -> Result<PatchMatrix> {
    geom.validate()?;
    if x.len() != geom.input_len() {
        return Err(Error::invalid(format!(
            "input has length {}, geometry {}x{}x{} expects {}",
            x.len(),
            geom.input_height,
            geom.input_width,
            geom.channels,
            geom.input_len()
        )));
    }
    let (h, w, f) = (geom.input_height, geom.input_width, geom.filter_width);
    let (out_h, out_w) = (geom.output_height(), geom.output_width());
    let plane = h * w;
    let pad = geom.padding as isize;
    let mut entries = DMatrix::zeros(geom.patch_dim(), out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let col = oy * out_w + ox;
            let top = (oy * geom.stride) as isize - pad;
            let left = (ox * geom.stride) as isize - pad;
            for c in 0..geom.channels {
                for dy in 0..f {
                    let row = top + dy as isize;
                    if row < 0 || row >= h as isize {
                        continue;
                    }
                    for dx in 0..f {
                        let colx = left + dx as isize;
                        if colx < 0 || colx >= w as isize {
                            continue;
                        }
                        entries[(c * f * f + dy * f + dx, col)] = x[c * plane + row as usize * w + colx as usize];
                    }
                }
            }
        }
    }
    Ok(PatchMatrix { entries })
}

/// Scales every column to unit norm. Columns whose norm is at most `eps`
/// are replaced by the first canonical basis vector and reported.
pub fn normalize_patches(z: &PatchMatrix, eps: f64) -> NormalizedPatches {
    let mut entries = z.entries.clone();
    let mut degenerate = Vec::new();
    for (j, mut column) in entries.column_iter_mut().enumerate() {
        let norm = column.norm();
        if norm > eps {
            column /= norm;
        } else {
            column.fill(0.0);
            column[0] = 1.0;
            degenerate.push(j);
        }
    }
    NormalizedPatches {
        patches: PatchMatrix { entries },
        degenerate,
    }
}

/// Average pooling operator `G ∈ ℝ^{q×p}` over a `map_height × map_width`
/// feature map (positions row-major), square windows of `pool_width`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingMatrix {
    entries: DMatrix<f64>,
    pub map_height: usize,
    pub map_width: usize,
    pub pool_width: usize,
    pub pool_stride: usize,
}

impl PoolingMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Entries per window, `b`.
    pub fn window_size(&self) -> usize {
        self.pool_width * self.pool_width
    }

    pub fn pooled_height(&self) -> usize {
        (self.map_height - self.pool_width) / self.pool_stride + 1
    }

    pub fn pooled_width(&self) -> usize {
        (self.map_width - self.pool_width) / self.pool_stride + 1
    }

    /// Number of pooling positions, `q`.
    pub fn pooled_count(&self) -> usize {
        self.pooled_height() * self.pooled_width()
    }

    pub fn apply(&self, values: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if values.nrows() != self.entries.ncols() {
            return Err(Error::invalid(format!(
                "pooling expects {} rows, got {}",
                self.entries.ncols(),
                values.nrows()
            )));
        }
        Ok(&self.entries * values)
    }
}

/// Builds the average pooling matrix. Windows must tile the map exactly.
pub fn pooling_matrix(
    map_height: usize,
    map_width: usize,
    pool_width: usize,
    pool_stride: usize,
) -> Result<PoolingMatrix> {
    if pool_width == 0 || pool_stride == 0 {
        return Err(Error::invalid("pool width and stride must be positive"));
    }
    if pool_width > map_height || pool_width > map_width {
        return Err(Error::invalid(format!(
            "pool width {pool_width} exceeds feature map {map_height}x{map_width}"
        )));
    }
    if !(map_height - pool_width).is_multiple_of(pool_stride) || !(map_width - pool_width).is_multiple_of(pool_stride) {
        return Err(Error::invalid(format!(
            "pool {pool_width}/stride {pool_stride} leaves a partial window on a {map_height}x{map_width} map"
        )));
    }
    let qh = (map_height - pool_width) / pool_stride + 1;
    let qw = (map_width - pool_width) / pool_stride + 1;
    let weight = 1.0 / (pool_width * pool_width) as f64;
    let mut entries = DMatrix::zeros(qh * qw, map_height * map_width);
    for sy in 0..qh {
        for sx in 0..qw {
            let s = sy * qw + sx;
            for dy in 0..pool_width {
                for dx in 0..pool_width {
                    let t = (sy * pool_stride + dy) * map_width + sx * pool_stride + dx;
                    entries[(s, t)] = weight;
                }
            }
        }
    }
    Ok(PoolingMatrix {
        entries,
        map_height,
        map_width,
        pool_width,
        pool_stride,
    })
}

/// Column-major flattening of a `rows × cols` matrix, so each column
/// (feature map) is contiguous.
pub fn vectorize(values: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(values.as_slice())
}
