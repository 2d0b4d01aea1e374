//! Binary model format, little-endian throughout.
//!
//! ```text
//! "DCNN" | version u32 | task u32 (0 binary, 1 multiclass) | classes u32 | layers u32
//! per layer:
//!   kernel tag u32 (0 gaussian: gamma f64 | 1 linear | 2 polynomial: degree u32, offset f64)
//!   input_height, input_width, channels, filter_width, stride, padding: u32 ×6
//!   pooling flag u32, map_height, map_width, pool_width, pool_stride: u32 ×4
//!   n u32
//!   labels: f64 ×n (binary) or u32 ×n (multiclass)
//!   loss tag u32 | c f64
//!   alpha: f64 ×n (binary) or f64 ×(n·m), sample-major (multiclass)
//!   objective f64 | final_lambda_max f64 | sweep_count u32 | refined u32
//!   input_len u32 | training inputs f64 ×(n·input_len), one row per sample
//!   rows u32 | r u32 | weight f64 ×(rows·r), column-major | eigenvalues f64 ×r | threshold f64
//! ```

use nalgebra::DMatrix;

use super::{LayerModel, Model, Task};
use crate::error::{Error, Result};
use crate::kernels::{BlockDiagonal, KernelSpec};
use crate::losses::LossSpec;
use crate::patches::{pooling_matrix, PatchGeometry};
use crate::recovery::LinearWeight;
use crate::solver::{DualCoefficients, DualSolution, Labels};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"DCNN";

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

pub(super) fn write_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(model.format_version as usize);
    match model.task {
        Task::Binary => {
            w.u32(0);
            w.u32(2);
        }
        Task::Multiclass(m) => {
            w.u32(1);
            w.u32(m);
        }
    }
    w.u32(model.layers.len());
    for layer in &model.layers {
        write_layer(&mut w, layer);
    }
    w.0
}

fn write_layer(w: &mut Writer, layer: &LayerModel) {
    match &layer.kernel {
        KernelSpec::GaussianRbf { gamma } => {
            w.u32(0);
            w.f64(*gamma);
        }
        KernelSpec::Linear => w.u32(1),
        KernelSpec::Polynomial { degree, offset } => {
            w.u32(2);
            w.u32(*degree as usize);
            w.f64(*offset);
        }
    }
    let g = &layer.geometry;
    for v in [
        g.input_height,
        g.input_width,
        g.channels,
        g.filter_width,
        g.stride,
        g.padding,
    ] {
        w.u32(v);
    }
    match &layer.pooling {
        Some(p) => {
            w.u32(1);
            for v in [p.map_height, p.map_width, p.pool_width, p.pool_stride] {
                w.u32(v);
            }
        }
        None => (0..5).for_each(|_| w.u32(0)),
    }
    let dual = &layer.dual;
    w.u32(dual.labels.len());
    match &dual.labels {
        Labels::Binary(y) => y.iter().for_each(|&v| w.f64(v)),
        Labels::Multiclass { labels, .. } => labels.iter().for_each(|&v| w.u32(v)),
    }
    w.u32(dual.loss.tag() as usize);
    w.f64(dual.c);
    dual.alpha.values().into_iter().for_each(|v| w.f64(v));
    w.f64(dual.objective);
    w.f64(dual.final_lambda_max);
    w.u32(dual.sweep_count);
    w.u32(dual.refined as usize);
    w.u32(layer.geometry.input_len());
    for x in &layer.training_inputs {
        x.iter().for_each(|&v| w.f64(v));
    }
    let lw = &layer.linear_weight;
    w.u32(lw.columns.nrows());
    w.u32(lw.rank());
    lw.columns.iter().for_each(|&v| w.f64(v));
    lw.eigenvalues_used.iter().for_each(|&v| w.f64(v));
    w.f64(lw.threshold_used);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::CorruptStream {
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(self.corrupt(format!("stream ends inside {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = count
            .checked_mul(8)
            .ok_or_else(|| self.corrupt(format!("{what} length overflows")))?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Attaches the current offset to a validation failure.
    fn check<T>(&self, r: Result<T>) -> Result<T> {
        r.map_err(|e| self.corrupt(e.to_string()))
    }
}

pub(super) fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.corrupt("missing DCNN magic"));
    }
    let version = r.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let task_tag = r.u32("task")?;
    let classes = r.u32("class count")?;
    let task = match task_tag {
        0 => Task::Binary,
        1 if classes >= 2 => Task::Multiclass(classes),
        _ => return Err(r.corrupt(format!("bad task tag {task_tag} with {classes} classes"))),
    };
    let count = r.u32("layer count")?;
    if count == 0 {
        return Err(r.corrupt("model has no layers"));
    }
    let mut layers: Vec<LayerModel> = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let layer = read_layer(&mut r, task)?;
        if let Some(prev) = layers.last() {
            if prev.output_len() != layer.geometry.input_len() {
                return Err(r.corrupt(format!(
                    "layer input length {} does not follow previous output {}",
                    layer.geometry.input_len(),
                    prev.output_len()
                )));
            }
        }
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Model {
        layers,
        task,
        format_version: version,
    })
}

fn read_layer(r: &mut Reader<'_>, task: Task) -> Result<LayerModel> {
    let kernel = match r.u32("kernel tag")? {
        0 => KernelSpec::GaussianRbf { gamma: r.f64("gamma")? },
        1 => KernelSpec::Linear,
        2 => {
            let degree = r.u32("degree")? as u32;
            KernelSpec::Polynomial {
                degree,
                offset: r.f64("offset")?,
            }
        }
        t => return Err(r.corrupt(format!("unknown kernel tag {t}"))),
    };
    r.check(kernel.validate())?;
    let mut g = [0usize; 6];
    for v in &mut g {
        *v = r.u32("geometry")?;
    }
    let geometry = r.check(PatchGeometry::new(g[0], g[1], g[2], g[3], g[4], g[5]))?;
    let flag = r.u32("pooling flag")?;
    let mut pd = [0usize; 4];
    for v in &mut pd {
        *v = r.u32("pooling")?;
    }
    let pooling = match flag {
        0 => None,
        1 => {
            if pd[0] != geometry.output_height() || pd[1] != geometry.output_width() {
                return Err(r.corrupt("pooling map does not match the layer output"));
            }
            Some(r.check(pooling_matrix(pd[0], pd[1], pd[2], pd[3]))?)
        }
        f => return Err(r.corrupt(format!("bad pooling flag {f}"))),
    };
    let n = r.u32("sample count")?;
    if n == 0 {
        return Err(r.corrupt("layer has no training samples"));
    }
    // cheap bound before allocating
    if n > r.bytes.len() {
        return Err(r.corrupt(format!("sample count {n} exceeds stream size")));
    }
    let labels = match task {
        Task::Binary => {
            let y = r.f64s(n, "labels")?;
            r.check(Labels::binary(y))?
        }
        Task::Multiclass(m) => {
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                y.push(r.u32("labels")?);
            }
            r.check(Labels::multiclass(y, m))?
        }
    };
    let loss_tag = r.u32("loss tag")? as u32;
    let loss = LossSpec::from_tag(loss_tag).ok_or_else(|| r.corrupt(format!("unknown loss tag {loss_tag}")))?;
    let c = r.f64("c")?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(r.corrupt(format!("c must be positive, got {c}")));
    }
    let alpha = match &labels {
        Labels::Binary(_) => DualCoefficients::Binary(r.f64s(n, "alpha")?),
        Labels::Multiclass { classes, .. } => {
            let values = r.f64s(n * classes, "alpha")?;
            DualCoefficients::Multiclass(DMatrix::from_row_slice(n, *classes, &values))
        }
    };
    if alpha.values().iter().any(|v| !v.is_finite()) {
        return Err(r.corrupt("non-finite dual coefficient"));
    }
    let objective = r.f64("objective")?;
    let final_lambda_max = r.f64("lambda_max")?;
    let sweep_count = r.u32("sweep count")?;
    let refined = r.u32("refined flag")? != 0;
    let input_len = r.u32("input length")?;
    if input_len != geometry.input_len() {
        return Err(r.corrupt(format!(
            "input length {input_len} does not match geometry {}",
            geometry.input_len()
        )));
    }
    let flat = r.f64s(n * input_len, "training inputs")?;
    let training_inputs: Vec<Vec<f64>> = flat.chunks_exact(input_len).map(<[f64]>::to_vec).collect();
    let rows = r.u32("weight rows")?;
    let rank = r.u32("rank")?;
    if rank == 0 || rows != geometry.patch_count() * labels.blocks() {
        return Err(r.corrupt(format!("weight shape {rows}x{rank} does not fit the layer")));
    }
    let columns = DMatrix::from_column_slice(rows, rank, &r.f64s(rows * rank, "linear weight")?);
    let eigenvalues_used = r.f64s(rank, "eigenvalues")?;
    let threshold_used = r.f64("threshold")?;
    let dual = DualSolution {
        alpha,
        labels: labels.clone(),
        c,
        loss,
        final_lambda_max,
        objective,
        sweep_count,
        refined,
        accumulation: BlockDiagonal { blocks: Vec::new() },
    };
    let weight = LinearWeight {
        columns,
        eigenvalues_used,
        threshold_used,
        blocks: labels.blocks(),
    };
    let offset = r.pos;
    LayerModel::from_parts(kernel, geometry, pooling, dual, weight, training_inputs).map_err(|e| Error::CorruptStream {
        offset,
        reason: e.to_string(),
    })
}
