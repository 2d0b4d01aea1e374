//! Layerwise training and prediction for multi-layer networks.
//!
//! Each layer solves its own dual on the current layer inputs, recovers
//! the linear weight, and hands the (optionally pooled) convolution output
//! of every sample to the next layer, flattened filter-major so that the
//! `r` recovered filters become the next layer's channels.

mod format;

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{median_heuristic_gamma, KernelBank, KernelSpec, DEFAULT_CACHE_BUDGET};
use crate::losses::LossSpec;
use crate::patches::{
    extract_patches, normalize_patches, pooling_matrix, vectorize, PatchGeometry, PatchMatrix, PoolingMatrix,
    DEFAULT_NORM_EPS,
};
use crate::recovery::{
    recover_conv_output, recover_linear_weight, training_conv_output, LinearWeight, DEFAULT_THRESHOLD,
};
use crate::solver::{solve_dual_with_progress, DualSolution, Labels, SolverOptions};

pub use format::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Binary,
    Multiclass(usize),
}

/// How a layer picks its kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelChoice {
    Fixed(KernelSpec),
    /// Gaussian kernel with `γ` from the median heuristic on the layer's
    /// own (normalized) patches.
    GaussianMedian {
        pairs: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub kernel: KernelChoice,
    pub filter_width: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(pool_width, pool_stride)`; not allowed on the last layer.
    pub pooling: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub layers: Vec<LayerConfig>,
    pub loss: LossSpec,
    pub c: f64,
    pub threshold: f64,
    pub solver: SolverOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: Vec::new(),
            loss: LossSpec::hinge(),
            c: 1.0,
            threshold: DEFAULT_THRESHOLD,
            solver: SolverOptions::default(),
        }
    }
}

/// `height × width × channels`, stored channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One trained layer, including the inputs it was trained on; every
/// prediction evaluates the kernel against them.
pub struct LayerModel {
    pub kernel: KernelSpec,
    pub geometry: PatchGeometry,
    pub pooling: Option<PoolingMatrix>,
    pub dual: DualSolution,
    pub linear_weight: LinearWeight,
    pub training_inputs: Vec<Vec<f64>>,
    bank: KernelBank,
}

impl std::fmt::Debug for LayerModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LayerModel")
            .field("kernel", &self.kernel)
            .field("geometry", &self.geometry)
            .field("pooling", &self.pooling.as_ref().map(|g| (g.pool_width, g.pool_stride)))
            .field("n", &self.training_inputs.len())
            .field("rank", &self.linear_weight.rank())
            .finish()
    }
}

fn layer_patches(kernel: &KernelSpec, geometry: &PatchGeometry, x: &[f64]) -> Result<PatchMatrix> {
    let z = extract_patches(x, geometry)?;
    Ok(if kernel.wants_unit_patches() {
        normalize_patches(&z, DEFAULT_NORM_EPS).patches
    } else {
        z
    })
}

impl LayerModel {
    /// Assembles a layer and checks that its parts agree.
    pub fn from_parts(
        kernel: KernelSpec,
        geometry: PatchGeometry,
        pooling: Option<PoolingMatrix>,
        dual: DualSolution,
        linear_weight: LinearWeight,
        training_inputs: Vec<Vec<f64>>,
    ) -> Result<Self> {
        geometry.validate()?;
        let n = training_inputs.len();
        if dual.labels.len() != n {
            return Err(Error::invalid(format!(
                "{} training inputs for {} dual coefficients",
                n,
                dual.labels.len()
            )));
        }
        let p = geometry.patch_count();
        if linear_weight.blocks != dual.labels.blocks() || linear_weight.columns.nrows() != p * linear_weight.blocks {
            return Err(Error::invalid(format!(
                "linear weight has {} rows, geometry needs {}",
                linear_weight.columns.nrows(),
                p * dual.labels.blocks()
            )));
        }
        if let Some(g) = &pooling {
            if g.entries().ncols() != p {
                return Err(Error::invalid(format!(
                    "pooling covers {} positions, layer has {p}",
                    g.entries().ncols()
                )));
            }
        }
        let patches = training_inputs
            .iter()
            .map(|x| layer_patches(&kernel, &geometry, x))
            .collect::<Result<Vec<_>>>()?;
        let bank = KernelBank::new(kernel, patches, DEFAULT_CACHE_BUDGET)?;
        Ok(LayerModel {
            kernel,
            geometry,
            pooling,
            dual,
            linear_weight,
            training_inputs,
            bank,
        })
    }

    pub fn bank(&self) -> &KernelBank {
        &self.bank
    }

    /// Length of the vector this layer hands to the next one.
    pub fn output_len(&self) -> usize {
        let positions = self
            .pooling
            .as_ref()
            .map_or(self.geometry.patch_count(), PoolingMatrix::pooled_count);
        positions * self.linear_weight.rank()
    }

    /// Unpooled convolution output `Σⱼ βⱼ K(x, xⱼ) V̂₁`, `p × r`.
    pub fn conv_output(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let z = layer_patches(&self.kernel, &self.geometry, x)?;
        Ok(recover_conv_output(&self.dual, &self.bank, &self.linear_weight, &z)?.values)
    }

    fn forward(&self, out: DMatrix<f64>) -> Result<Vec<f64>> {
        let pooled = match &self.pooling {
            Some(g) => g.apply(&out)?,
            None => out,
        };
        Ok(vectorize(&pooled).as_slice().to_vec())
    }

    /// Pooled and flattened output, the next layer's input.
    pub fn propagate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(self.conv_output(x)?)
    }

    /// Class scores from the unpooled output: one score for binary layers,
    /// `⟨O, L̂ₖ⟩` per class for multiclass ones.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.conv_output(x)?;
        Ok((0..self.linear_weight.blocks)
            .map(|k| out.dot(&self.linear_weight.block(k)))
            .collect())
    }
}

#[derive(Debug)]
pub struct Model {
    pub layers: Vec<LayerModel>,
    pub task: Task,
    pub format_version: u32,
}

fn next_geometry(shape: InputShape, cfg: &LayerConfig) -> Result<PatchGeometry> {
    PatchGeometry::new(
        shape.height,
        shape.width,
        shape.channels,
        cfg.filter_width,
        cfg.stride,
        cfg.padding,
    )
}

/// Trains one layer per entry of `config.layers`.
pub fn train_layerwise(inputs: &[Vec<f64>], shape: InputShape, labels: &Labels, config: &TrainConfig) -> Result<Model> {
    if config.layers.is_empty() {
        return Err(Error::invalid("at least one layer is required"));
    }
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if inputs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} inputs for {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    if config.layers.last().is_some_and(|l| l.pooling.is_some()) {
        return Err(Error::invalid(
            "the last layer scores unpooled outputs; pooling there has no effect",
        ));
    }
    let task = match labels {
        Labels::Binary(_) => Task::Binary,
        Labels::Multiclass { classes, .. } => Task::Multiclass(*classes),
    };
    let mut current: Vec<Vec<f64>> = inputs.to_vec();
    let mut shape = shape;
    let mut layers = Vec::with_capacity(config.layers.len());
    for (idx, cfg) in config.layers.iter().enumerate() {
        let number = idx + 1;
        let (layer, outputs, next_shape) =
            train_layer(&current, shape, labels, cfg, config).map_err(|e| e.in_layer(number))?;
        log::info!(
            "layer {number}: rank {}, top eigenvalue {:.6}, dual objective {:.6}",
            layer.linear_weight.rank(),
            layer.linear_weight.eigenvalues_used[0],
            layer.dual.objective
        );
        layers.push(layer);
        current = outputs;
        shape = next_shape;
    }
    Ok(Model {
        layers,
        task,
        format_version: FORMAT_VERSION,
    })
}

fn train_layer(
    inputs: &[Vec<f64>],
    shape: InputShape,
    labels: &Labels,
    cfg: &LayerConfig,
    config: &TrainConfig,
) -> Result<(LayerModel, Vec<Vec<f64>>, InputShape)> {
    let geometry = next_geometry(shape, cfg)?;
    if let Some(bad) = inputs.iter().find(|x| x.len() != geometry.input_len()) {
        return Err(Error::invalid(format!(
            "input length {} does not match geometry {}",
            bad.len(),
            geometry.input_len()
        )));
    }
    let pooling = cfg
        .pooling
        .map(|(w, s)| pooling_matrix(geometry.output_height(), geometry.output_width(), w, s))
        .transpose()?;
    let kernel = match &cfg.kernel {
        KernelChoice::Fixed(spec) => *spec,
        KernelChoice::GaussianMedian { pairs, seed } => {
            let probe = KernelSpec::GaussianRbf { gamma: 1.0 };
            let patches = inputs
                .iter()
                .map(|x| layer_patches(&probe, &geometry, x))
                .collect::<Result<Vec<_>>>()?;
            let gamma = median_heuristic_gamma(&patches, *pairs, *seed)?;
            log::info!("median heuristic gamma {gamma:.6}");
            KernelSpec::GaussianRbf { gamma }
        }
    };
    let patches = inputs
        .iter()
        .map(|x| layer_patches(&kernel, &geometry, x))
        .collect::<Result<Vec<_>>>()?;
    let bank = KernelBank::new(kernel, patches, config.solver.kernel_cache_budget)?;
    let mut last_report = 0;
    let dual = solve_dual_with_progress(&bank, labels, config.loss, config.c, &config.solver, |p| {
        if p.step >= last_report + 1000 {
            last_report = p.step;
            log::debug!(
                "step {}: objective {:.6}, lambda_max {:.6}",
                p.step,
                p.objective,
                p.lambda_max
            );
        }
    })?;
    let weight = recover_linear_weight(&dual, &bank, config.threshold)?;
    let outputs = (0..inputs.len())
        .map(|i| {
            let out = training_conv_output(&dual, &bank, &weight, i)?.values;
            let pooled = match &pooling {
                Some(g) => g.apply(&out)?,
                None => out,
            };
            Ok(vectorize(&pooled).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>>>()?;
    let next_shape = match &pooling {
        Some(g) => InputShape {
            height: g.pooled_height(),
            width: g.pooled_width(),
            channels: weight.rank(),
        },
        None => InputShape {
            height: geometry.output_height(),
            width: geometry.output_width(),
            channels: weight.rank(),
        },
    };
    let layer = LayerModel {
        kernel,
        geometry,
        pooling,
        dual,
        linear_weight: weight,
        training_inputs: inputs.to_vec(),
        bank,
    };
    Ok((layer, outputs, next_shape))
}

impl Model {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].geometry.input_len()
    }

    /// Final-layer scores for one input.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::invalid(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.input_len()
            )));
        }
        let (last, hidden) = self.layers.split_last().expect("model has layers");
        let mut current = x.to_vec();
        for layer in hidden {
            current = layer.propagate(&current)?;
        }
        last.scores(&current)
    }

    /// `sign(score)` with `sign(0) = +1`.
    pub fn predict_binary(&self, x: &[f64]) -> Result<f64> {
        if self.task != Task::Binary {
            return Err(Error::invalid("predict_binary called on a multiclass model"));
        }
        let s = self.scores(x)?[0];
        Ok(if s >= 0.0 { 1.0 } else { -1.0 })
    }

    /// Zero-based argmax of the class scores; ties go to the smallest index.
    pub fn predict_multiclass(&self, x: &[f64]) -> Result<usize> {
        if !matches!(self.task, Task::Multiclass(_)) {
            return Err(Error::invalid("predict_multiclass called on a binary model"));
        }
        Ok(argmax(&self.scores(x)?))
    }

    /// Predictions for many inputs, binary labels mapped to `±1.0` and
    /// classes to their index.
    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter()
            .map(|x| match self.task {
                Task::Binary => self.predict_binary(x),
                Task::Multiclass(_) => self.predict_multiclass(x).map(|k| k as f64),
            })
            .collect()
    }

    pub fn serialize(&self) -> Vec<u8> {
        format::write_model(self)
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self> {
        format::read_model(bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.serialize())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::deserialize(&std::fs::read(path)?)
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests;
