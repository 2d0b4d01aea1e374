use super::*;
use crate::solver::DualCoefficients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPE: InputShape = InputShape {
    height: 6,
    width: 6,
    channels: 1,
};

fn images(seed: u64, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..SHAPE.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Labels from the sign of the mean of the left half of the image.
fn binary_labels(xs: &[Vec<f64>]) -> Vec<f64> {
    xs.iter()
        .map(|x| {
            let s: f64 = (0..6).flat_map(|r| (0..3).map(move |c| r * 6 + c)).map(|i| x[i]).sum();
            if s >= 0.0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

fn layer(kernel: KernelChoice, pooling: Option<(usize, usize)>) -> LayerConfig {
    LayerConfig {
        kernel,
        filter_width: 3,
        stride: 1,
        padding: 1,
        pooling,
    }
}

fn rbf() -> KernelChoice {
    KernelChoice::Fixed(KernelSpec::GaussianRbf { gamma: 0.5 })
}

fn config(layers: Vec<LayerConfig>) -> TrainConfig {
    TrainConfig {
        layers,
        c: 5.0,
        threshold: 0.5,
        ..TrainConfig::default()
    }
}

fn one_layer(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>, Model) {
    let xs = images(seed, n);
    let y = binary_labels(&xs);
    let labels = Labels::binary(y.clone()).unwrap();
    let model = train_layerwise(&xs, SHAPE, &labels, &config(vec![layer(rbf(), None)])).unwrap();
    (xs, y, model)
}

#[test]
fn single_layer_predicts() {
    let (xs, _, model) = one_layer(1, 10);
    assert_eq!(model.depth(), 1);
    assert_eq!(model.task, Task::Binary);
    let preds = model.predict_batch(&xs).unwrap();
    assert!(preds.iter().all(|&p| p == 1.0 || p == -1.0));
    assert!(matches!(model.predict_binary(&[0.0; 5]), Err(Error::InvalidInput(_))));
    assert!(model.predict_multiclass(&xs[0]).is_err());
}

#[test]
fn two_layer_dimension_chain() {
    let xs = images(2, 8);
    let labels = Labels::binary(binary_labels(&xs)).unwrap();
    let cfg = config(vec![layer(rbf(), Some((2, 2))), layer(rbf(), None)]);
    let model = train_layerwise(&xs, SHAPE, &labels, &cfg).unwrap();
    let first = &model.layers[0];
    let second = &model.layers[1];
    assert_eq!(first.output_len(), 9 * first.linear_weight.rank());
    assert_eq!(second.geometry.input_len(), first.output_len());
    assert_eq!(second.geometry.channels, first.linear_weight.rank());
    assert_eq!((second.geometry.input_height, second.geometry.input_width), (3, 3));
    assert_eq!(second.training_inputs[0], first.propagate(&xs[0]).unwrap());
    model.predict_binary(&xs[0]).unwrap();
}

#[test]
fn unpooled_second_layer_uses_full_map() {
    let xs = images(3, 6);
    let labels = Labels::binary(binary_labels(&xs)).unwrap();
    let cfg = config(vec![layer(rbf(), None), layer(rbf(), None)]);
    let model = train_layerwise(&xs, SHAPE, &labels, &cfg).unwrap();
    assert_eq!(
        model.layers[1].geometry.input_len(),
        36 * model.layers[0].linear_weight.rank()
    );
}

#[test]
fn config_errors() {
    let xs = images(4, 4);
    let labels = Labels::binary(binary_labels(&xs)).unwrap();
    assert!(train_layerwise(&xs, SHAPE, &labels, &config(vec![])).is_err());
    let pooled_last = config(vec![layer(rbf(), Some((2, 2)))]);
    assert!(train_layerwise(&xs, SHAPE, &labels, &pooled_last).is_err());
    let bad_pool = config(vec![layer(rbf(), Some((4, 3))), layer(rbf(), None)]);
    match train_layerwise(&xs, SHAPE, &labels, &bad_pool) {
        Err(Error::Layer { layer, .. }) => assert_eq!(layer, 1),
        other => panic!("{other:?}"),
    }
    let strict = TrainConfig {
        threshold: 1.0,
        c: 1e-3,
        ..config(vec![layer(rbf(), None)])
    };
    match train_layerwise(&xs, SHAPE, &labels, &strict) {
        Err(Error::Layer { layer: 1, source }) => {
            assert!(matches!(*source, Error::NoFiltersRecovered { .. }))
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn retraining_is_byte_identical() {
    let (_, _, a) = one_layer(5, 9);
    let (_, _, b) = one_layer(5, 9);
    assert_eq!(a.serialize(), b.serialize());
}

#[test]
fn round_trip_predictions() {
    let xs = images(6, 8);
    let labels = Labels::binary(binary_labels(&xs)).unwrap();
    let cfg = config(vec![
        layer(KernelChoice::GaussianMedian { pairs: 200, seed: 3 }, Some((2, 2))),
        layer(
            KernelChoice::Fixed(KernelSpec::Polynomial { degree: 2, offset: 1.0 }),
            None,
        ),
    ]);
    let model = train_layerwise(&xs, SHAPE, &labels, &cfg).unwrap();
    let bytes = model.serialize();
    let back = Model::deserialize(&bytes).unwrap();
    assert_eq!(back.serialize(), bytes);
    for x in images(60, 20) {
        assert_eq!(model.scores(&x).unwrap(), back.scores(&x).unwrap());
    }
}

#[test]
fn damaged_streams_rejected() {
    let (_, _, model) = one_layer(7, 5);
    let bytes = model.serialize();
    for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Model::deserialize(&bytes[..cut]), Err(Error::CorruptStream { .. })),
            "cut at {cut}"
        );
    }
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(Model::deserialize(&bumped), Err(Error::UnsupportedVersion(7))));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(
        Model::deserialize(&magic),
        Err(Error::CorruptStream { offset: 0, .. })
    ));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(
        Model::deserialize(&trailing),
        Err(Error::CorruptStream { .. })
    ));
    let mut bad_kernel = bytes;
    bad_kernel[20..24].copy_from_slice(&9u32.to_le_bytes());
    match Model::deserialize(&bad_kernel) {
        Err(Error::CorruptStream { offset, .. }) => assert_eq!(offset, 24),
        other => panic!("{other:?}"),
    }
}

#[test]
fn zero_alpha_scores_positive() {
    let (xs, _, mut model) = one_layer(8, 6);
    let layer = &mut model.layers[0];
    layer.dual.alpha = DualCoefficients::Binary(vec![0.0; 6]);
    assert_eq!(model.scores(&xs[0]).unwrap(), vec![0.0]);
    assert_eq!(model.predict_binary(&xs[0]).unwrap(), 1.0);
}

#[test]
fn argmax_ties_take_smallest() {
    assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
    assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
}

#[test]
fn rotating_the_weight_keeps_scores() {
    let (xs, _, mut model) = one_layer(9, 10);
    let before: Vec<Vec<f64>> = xs.iter().map(|x| model.scores(x).unwrap()).collect();
    let r = model.layers[0].linear_weight.rank();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let w = &mut model.layers[0].linear_weight;
    w.columns = &w.columns * q;
    for (x, b) in xs.iter().zip(&before) {
        let s = model.scores(x).unwrap();
        assert!((s[0] - b[0]).abs() <= 1e-10 * (1.0 + b[0].abs()));
        assert_eq!(s[0] >= 0.0, b[0] >= 0.0);
    }
}

#[test]
fn negated_labels_flip_scores() {
    let (xs, y, model) = one_layer(10, 10);
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    let flipped = train_layerwise(
        &xs,
        SHAPE,
        &Labels::binary(neg).unwrap(),
        &config(vec![layer(rbf(), None)]),
    )
    .unwrap();
    for x in images(11, 10) {
        let a = model.scores(&x).unwrap()[0];
        let b = flipped.scores(&x).unwrap()[0];
        assert!((a + b).abs() <= 1e-9 * (1.0 + a.abs()));
        if a != 0.0 {
            assert_ne!(model.predict_binary(&x).unwrap(), flipped.predict_binary(&x).unwrap());
        }
    }
}

#[test]
fn multiclass_permutation_follows_labels() {
    let xs = images(12, 9);
    let classes: Vec<usize> = (0..9).map(|i| i % 3).collect();
    let cfg = config(vec![layer(rbf(), None)]);
    let model = train_layerwise(&xs, SHAPE, &Labels::multiclass(classes.clone(), 3).unwrap(), &cfg).unwrap();
    let bytes = model.serialize();
    assert_eq!(Model::deserialize(&bytes).unwrap().serialize(), bytes);

    // class k of the original model becomes class perm[k]
    let perm = [2usize, 0, 1];
    let l = &model.layers[0];
    let DualCoefficients::Multiclass(a) = &l.dual.alpha else {
        panic!()
    };
    let mut pa = DMatrix::zeros(9, 3);
    for i in 0..9 {
        for k in 0..3 {
            pa[(i, perm[k])] = a[(i, k)];
        }
    }
    let p = l.geometry.patch_count();
    let w = &l.linear_weight;
    let mut pw = w.clone();
    for (k, &to) in perm.iter().enumerate() {
        pw.columns.rows_mut(to * p, p).copy_from(&w.block(k));
    }
    let dual = DualSolution {
        alpha: DualCoefficients::Multiclass(pa),
        labels: Labels::multiclass(classes.iter().map(|&k| perm[k]).collect(), 3).unwrap(),
        ..l.dual.clone()
    };
    let permuted = Model {
        layers: vec![LayerModel::from_parts(l.kernel, l.geometry, None, dual, pw, l.training_inputs.clone()).unwrap()],
        task: model.task,
        format_version: FORMAT_VERSION,
    };
    for x in images(13, 30) {
        let s = model.scores(&x).unwrap();
        let t = permuted.scores(&x).unwrap();
        for k in 0..3 {
            assert!((s[k] - t[perm[k]]).abs() <= 1e-10 * (1.0 + s[k].abs()));
        }
        assert_eq!(
            perm[model.predict_multiclass(&x).unwrap()],
            permuted.predict_multiclass(&x).unwrap()
        );
    }
}

#[test]
fn layer_parts_are_checked() {
    let (_, _, model) = one_layer(14, 5);
    let l = &model.layers[0];
    let short = l.training_inputs[..4].to_vec();
    assert!(LayerModel::from_parts(
        l.kernel,
        l.geometry,
        None,
        l.dual.clone(),
        l.linear_weight.clone(),
        short
    )
    .is_err());
}
