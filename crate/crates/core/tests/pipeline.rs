use std::path::Path;

use dccnn::data::{
    downsample_2x2, filter_binary, filter_classes, load_idx, make_tiny_instance, parse_idx, write_idx, TinyTask,
};
use dccnn::kernels::{KernelBank, KernelSpec};
use dccnn::losses::LossSpec;
use dccnn::model::{train_layerwise, KernelChoice, LayerConfig, Model, TrainConfig};
use dccnn::oracle::{audit_dual, PrimalOptions, Regularizer, AUDIT_THRESHOLD};
use dccnn::solver::{solve_dual_with_progress, Labels, RefineOptions, SolverOptions};

fn mnist() -> dccnn::data::Dataset {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    load_idx(&root.join("images-idx3-ubyte"), &root.join("labels-idx1-ubyte")).unwrap()
}

fn converged() -> SolverOptions {
    SolverOptions {
        sweeps: 100,
        refine: Some(RefineOptions::default()),
        ..SolverOptions::default()
    }
}

fn audit_on(
    seed: u64,
    task: TinyTask,
    kernel: KernelSpec,
    loss: LossSpec,
    c: f64,
    reg: Regularizer,
) -> dccnn::oracle::InstanceAudit {
    let inst = make_tiny_instance(seed, 6, 3, 2, task).unwrap();
    let bank = KernelBank::new(kernel, inst.patches, 64).unwrap();
    let dual = solve_dual_with_progress(&bank, &inst.labels, loss, c, &converged(), |_| {}).unwrap();
    let opts = PrimalOptions {
        regularizer: reg,
        ..PrimalOptions::default()
    };
    let audit = audit_dual(&dual, &bank, AUDIT_THRESHOLD, &opts).unwrap();
    assert!(audit.primal.converged, "primal oracle did not converge on seed {seed}");
    audit
}

fn gap_on(seed: u64, task: TinyTask, kernel: KernelSpec, loss: LossSpec, c: f64) -> f64 {
    audit_on(seed, task, kernel, loss, c, Regularizer::PerClass).relative_gap
}

#[test]
fn multiclass_dual_meets_per_class_primal() {
    for seed in 0..4 {
        let audit = audit_on(
            seed,
            TinyTask::Multiclass(3),
            KernelSpec::Linear,
            LossSpec::hinge(),
            1.0,
            Regularizer::PerClass,
        );
        assert!(
            audit.passes(1e-3, 1e-2, 1e-3),
            "seed {seed}: {:?} gap {}",
            audit.comparison,
            audit.relative_gap
        );
    }
}

#[test]
fn block_dual_exceeds_joint_nuclear_primal() {
    // the block-diagonal constraint ignores cross-class blocks, so it
    // admits points the stacked-matrix dual rejects
    let mut exceeded = 0;
    for seed in 0..4 {
        let audit = audit_on(
            seed,
            TinyTask::Multiclass(3),
            KernelSpec::Linear,
            LossSpec::hinge(),
            1.0,
            Regularizer::Joint,
        );
        assert!(
            audit.gap <= 1e-6 * (1.0 + audit.primal.objective.abs()),
            "seed {seed}: gap {}",
            audit.gap
        );
        exceeded += usize::from(audit.gap < -1e-3);
    }
    assert!(exceeded > 0);
}

#[test]
fn polynomial_kernel_dual_meets_primal() {
    let kernel = KernelSpec::Polynomial { degree: 2, offset: 1.0 };
    for seed in 0..4 {
        let gap = gap_on(seed, TinyTask::Binary, kernel, LossSpec::hinge(), 0.5);
        assert!(gap <= 1e-3, "seed {seed}: relative gap {gap}");
    }
}

#[test]
fn smooth_losses_meet_primal() {
    for loss in [LossSpec::squared_hinge(), LossSpec::logistic(), LossSpec::exponential()] {
        let gap = gap_on(3, TinyTask::Binary, KernelSpec::Linear, loss, 1.0);
        assert!(gap <= 1e-3, "{loss}: relative gap {gap}");
    }
}

#[test]
fn idx_bytes_reproduce_the_real_file() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let images = std::fs::read(root.join("images-idx3-ubyte")).unwrap();
    let labels = std::fs::read(root.join("labels-idx1-ubyte")).unwrap();
    let ds = parse_idx(&images, &labels).unwrap();
    assert_eq!((ds.shape.height, ds.shape.width), (28, 28));
    assert!(ds.inputs.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let (img, lab) = write_idx(&ds).unwrap();
    assert_eq!(img, images);
    assert_eq!(lab, labels);
}

#[test]
fn two_layer_mnist_model_survives_disk() {
    let ds = downsample_2x2(&mnist()).unwrap();
    let (train, test) = filter_binary(&ds, 3, 8, 30, 20, 4).unwrap();
    let layer = |pooling| LayerConfig {
        kernel: KernelChoice::GaussianMedian { pairs: 500, seed: 2 },
        filter_width: 3,
        stride: 1,
        padding: 1,
        pooling,
    };
    let cfg = TrainConfig {
        layers: vec![layer(Some((2, 2))), layer(None)],
        ..TrainConfig::default()
    };
    let model = train_layerwise(&train.inputs, train.shape, &train.labels, &cfg).unwrap();
    assert_eq!(model.depth(), 2);
    assert_eq!(model.layers[1].geometry.input_height, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.dcnn");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(
        model.predict_batch(&test.inputs).unwrap(),
        back.predict_batch(&test.inputs).unwrap()
    );
}

#[test]
fn multiclass_mnist_beats_chance() {
    let ds = downsample_2x2(&mnist()).unwrap();
    let (train, test) = filter_classes(&ds, &[0, 1, 7], 45, 45, 1).unwrap();
    let cfg = TrainConfig {
        layers: vec![LayerConfig {
            kernel: KernelChoice::GaussianMedian { pairs: 500, seed: 0 },
            filter_width: 5,
            stride: 1,
            padding: 2,
            pooling: None,
        }],
        c: 5.0,
        ..TrainConfig::default()
    };
    let model = train_layerwise(&train.inputs, train.shape, &train.labels, &cfg).unwrap();
    let Labels::Multiclass { labels, .. } = &test.labels else {
        unreachable!()
    };
    let preds = model.predict_batch(&test.inputs).unwrap();
    let correct = preds.iter().zip(labels).filter(|(p, &k)| **p as usize == k).count();
    assert!(correct as f64 / labels.len() as f64 > 0.6, "{correct}/{}", labels.len());
}
