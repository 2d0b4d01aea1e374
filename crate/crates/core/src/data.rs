//! Dataset ingestion and synthetic instances.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::InputShape;
use crate::patches::{normalize_patches, PatchMatrix, DEFAULT_NORM_EPS};
use crate::solver::Labels;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Labeled images with pixels in `[0, 1]`, each stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<u32>,
    pub shape: InputShape,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn count_of(&self, class: u32) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::TruncatedFile {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses IDX image and label files held in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = be_u32(images, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(labels, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: LABELS_MAGIC,
            found: magic,
        });
    }
    let n = be_u32(images, 4)? as usize;
    let height = be_u32(images, 8)? as usize;
    let width = be_u32(images, 12)? as usize;
    let n_labels = be_u32(labels, 4)? as usize;
    if n != n_labels {
        return Err(Error::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let pixels = height * width;
    let expected = 16 + n * pixels;
    if images.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: images.len(),
        });
    }
    if labels.len() < 8 + n {
        return Err(Error::TruncatedFile {
            expected: 8 + n,
            found: labels.len(),
        });
    }
    let inputs = images[16..expected]
        .chunks_exact(pixels.max(1))
        .take(n)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok(Dataset {
        inputs,
        labels: labels[8..8 + n].iter().map(|&b| u32::from(b)).collect(),
        shape: InputShape {
            height,
            width,
            channels: 1,
        },
    })
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

/// Encodes a single-channel dataset as IDX image and label bytes.
pub fn write_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if ds.shape.channels != 1 {
        return Err(Error::invalid("IDX holds single-channel images only"));
    }
    if let Some(&l) = ds.labels.iter().find(|&&l| l > 255) {
        return Err(Error::invalid(format!("label {l} does not fit in a byte")));
    }
    let mut images = Vec::with_capacity(16 + ds.len() * ds.shape.len());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [ds.len(), ds.shape.height, ds.shape.width] {
        images.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for x in &ds.inputs {
        images.extend(x.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Parses `label,f1,f2,…` rows; a first row whose label is not an integer
/// is taken as a header. Features must lie in `[0, 1]`. Without an explicit
/// shape, `d` features become a square single-channel image when `d` is a
/// perfect square and a `1 × d` strip otherwise.
pub fn parse_csv(text: &str, shape: Option<InputShape>) -> Result<Dataset> {
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',').map(str::trim);
        let first = fields.next().unwrap_or("");
        let label: u32 = match first.parse() {
            Ok(l) => l,
            Err(_) if line == 1 => continue,
            Err(_) => {
                return Err(Error::Csv {
                    line,
                    reason: format!("label {first:?} is not a non-negative integer"),
                })
            }
        };
        let features = fields
            .map(|f| {
                let v: f64 = f.parse().map_err(|_| Error::Csv {
                    line,
                    reason: format!("feature {f:?} is not a number"),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Csv {
                        line,
                        reason: format!("feature {v} outside [0, 1]"),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(prev) = inputs.first().map(Vec::len) {
            if features.len() != prev {
                return Err(Error::Csv {
                    line,
                    reason: format!("{} features, earlier rows have {prev}", features.len()),
                });
            }
        }
        inputs.push(features);
        labels.push(label);
    }
    let d = inputs.first().map_or(0, Vec::len);
    let shape = match shape {
        Some(s) => {
            if !inputs.is_empty() && s.len() != d {
                return Err(Error::invalid(format!(
                    "shape {}x{}x{} does not hold {d} features",
                    s.height, s.width, s.channels
                )));
            }
            s
        }
        None => {
            let side = (d as f64).sqrt().round() as usize;
            if side * side == d {
                InputShape {
                    height: side,
                    width: side,
                    channels: 1,
                }
            } else {
                InputShape {
                    height: 1,
                    width: d,
                    channels: 1,
                }
            }
        }
    };
    Ok(Dataset { inputs, labels, shape })
}

pub fn load_csv(path: &Path, shape: Option<InputShape>) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?, shape)
}

/// Averages each 2×2 block of every channel.
pub fn downsample_2x2(ds: &Dataset) -> Result<Dataset> {
    let s = ds.shape;
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::invalid(format!("cannot halve a {}x{} image", s.height, s.width)));
    }
    let (h, w) = (s.height / 2, s.width / 2);
    let inputs = ds
        .inputs
        .iter()
        .map(|x| {
            let mut out = Vec::with_capacity(h * w * s.channels);
            for c in 0..s.channels {
                let plane = &x[c * s.height * s.width..(c + 1) * s.height * s.width];
                for r in 0..h {
                    for col in 0..w {
                        let at = |dr: usize, dc: usize| plane[(2 * r + dr) * s.width + 2 * col + dc];
                        out.push((at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0);
                    }
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        inputs,
        labels: ds.labels.clone(),
        shape: InputShape {
            height: h,
            width: w,
            channels: s.channels,
        },
    })
}

/// A labeled subset ready for training.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Labels,
    pub shape: InputShape,
}

impl Split {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `(sample index, class position)` pairs.
type Picks = Vec<(usize, usize)>;

/// Seeded shuffled indices per class, split into disjoint train and test
/// picks of the requested sizes.
fn pick(
    ds: &Dataset,
    classes: &[u32],
    train: &[usize],
    test: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Picks, Picks)> {
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for (k, &class) in classes.iter().enumerate() {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        let requested = train[k] + test[k];
        if idx.len() < requested {
            return Err(Error::InsufficientSamples {
                class,
                requested,
                available: idx.len(),
            });
        }
        idx.shuffle(rng);
        tr.extend(idx[..train[k]].iter().map(|&i| (i, k)));
        te.extend(idx[train[k]..requested].iter().map(|&i| (i, k)));
    }
    tr.shuffle(rng);
    te.shuffle(rng);
    Ok((tr, te))
}

/// Splits `n` as evenly as possible over `parts`, earlier parts first.
fn shares(n: usize, parts: usize) -> Vec<usize> {
    (0..parts).map(|k| n / parts + usize::from(k < n % parts)).collect()
}

/// Two-class subset: `class_a → +1`, `class_b → −1`, balanced between the
/// classes, deterministic in `seed`.
pub fn filter_binary(
    ds: &Dataset,
    class_a: u32,
    class_b: u32,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Split, Split)> {
    if class_a == class_b {
        return Err(Error::invalid("the two classes must differ"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (tr, te) = pick(
        ds,
        &[class_a, class_b],
        &shares(n_train, 2),
        &shares(n_test, 2),
        &mut rng,
    )?;
    let build = |picks: Vec<(usize, usize)>| Split {
        inputs: picks.iter().map(|&(i, _)| ds.inputs[i].clone()).collect(),
        labels: Labels::Binary(picks.iter().map(|&(_, k)| if k == 0 { 1.0 } else { -1.0 }).collect()),
        shape: ds.shape,
    };
    Ok((build(tr), build(te)))
}

/// Multiclass subset with labels renumbered to positions in `classes`.
pub fn filter_classes(
    ds: &Dataset,
    classes: &[u32],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Split, Split)> {
    if classes.len() < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = classes.len();
    let (tr, te) = pick(ds, classes, &shares(n_train, m), &shares(n_test, m), &mut rng)?;
    let build = |picks: Vec<(usize, usize)>| Split {
        inputs: picks.iter().map(|&(i, _)| ds.inputs[i].clone()).collect(),
        labels: Labels::Multiclass {
            labels: picks.iter().map(|&(_, k)| k).collect(),
            classes: m,
        },
        shape: ds.shape,
    };
    Ok((build(tr), build(te)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TinyTask {
    Binary,
    Multiclass(usize),
}

/// Random patch matrices with hyperplane labels, for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyInstance {
    pub seed: u64,
    pub patches: Vec<PatchMatrix>,
    pub labels: Labels,
}

pub const TINY_MAX_N: usize = 16;
pub const TINY_MAX_D1: usize = 8;
pub const TINY_MAX_P: usize = 4;

/// Scores of each sample's mean patch under `k` random hyperplanes.
fn hyperplane_scores(rng: &mut ChaCha8Rng, means: &[DVector<f64>], k: usize) -> Vec<Vec<f64>> {
    let d = means[0].len();
    let planes: Vec<DVector<f64>> = (0..k)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    means
        .iter()
        .map(|m| planes.iter().map(|w| w.dot(m)).collect())
        .collect()
}

pub fn make_tiny_instance(seed: u64, n: usize, d1: usize, p: usize, task: TinyTask) -> Result<TinyInstance> {
    if n == 0 || d1 == 0 || p == 0 || n > TINY_MAX_N || d1 > TINY_MAX_D1 || p > TINY_MAX_P {
        return Err(Error::invalid(format!(
            "tiny instances need 1 ≤ n ≤ {TINY_MAX_N}, 1 ≤ d₁ ≤ {TINY_MAX_D1}, 1 ≤ p ≤ {TINY_MAX_P}"
        )));
    }
    let classes = match task {
        TinyTask::Binary => 2,
        TinyTask::Multiclass(m) if m >= 2 => m,
        TinyTask::Multiclass(_) => return Err(Error::invalid("need at least two classes")),
    };
    if n < 2 {
        return Err(Error::invalid("tiny instances need two samples to hold both classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patches: Vec<PatchMatrix> = (0..n)
        .map(|_| {
            let m = DMatrix::from_fn(d1, p, |_, _| rng.random_range(-1.0..1.0));
            normalize_patches(&PatchMatrix::from_matrix(m).expect("finite entries"), DEFAULT_NORM_EPS).patches
        })
        .collect();
    let means: Vec<DVector<f64>> = patches.iter().map(|z| z.entries().column_mean()).collect();
    let needed = classes.min(n);
    let mut assigned: Vec<usize> = Vec::new();
    for _ in 0..100 {
        let scores = match task {
            TinyTask::Binary => hyperplane_scores(&mut rng, &means, 1)
                .into_iter()
                .map(|s| vec![s[0], -s[0]])
                .collect(),
            TinyTask::Multiclass(m) => hyperplane_scores(&mut rng, &means, m),
        };
        assigned = scores
            .iter()
            .map(|s| (0..s.len()).fold(0, |best, k| if s[k] > s[best] { k } else { best }))
            .collect();
        let mut seen = vec![false; classes];
        assigned.iter().for_each(|&k| seen[k] = true);
        if seen.iter().filter(|&&b| b).count() >= needed {
            break;
        }
    }
    let mut seen = vec![false; classes];
    assigned.iter().for_each(|&k| seen[k] = true);
    if seen.iter().filter(|&&b| b).count() < needed {
        // force the leading samples onto the first classes
        for (i, slot) in assigned.iter_mut().take(needed).enumerate() {
            *slot = i;
        }
    }
    let labels = match task {
        TinyTask::Binary => Labels::Binary(assigned.iter().map(|&k| if k == 0 { 1.0 } else { -1.0 }).collect()),
        TinyTask::Multiclass(m) => Labels::Multiclass {
            labels: assigned,
            classes: m,
        },
    };
    Ok(TinyInstance { seed, patches, labels })
}
