//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dccnn::data::{downsample_2x2, filter_binary, load_idx, make_tiny_instance, TinyTask};
use dccnn::kernels::{kernel_generating_matrix, KernelBank, KernelSpec};
use dccnn::losses::{dual_objective, LossSpec};
use dccnn::model::{train_layerwise, InputShape, KernelChoice, LayerConfig, Model, TrainConfig};
use dccnn::oracle::{audit_dual, PrimalOptions, AUDIT_THRESHOLD};
use dccnn::patches::{normalize_patches, pooling_matrix, PatchMatrix};
use dccnn::recovery::recover_linear_weight;
use dccnn::solver::{
    accumulate_quadratic, folded_coefficients, solve_dual, solve_dual_with_progress, verify_feasibility,
    DualCoefficients, Labels, RefineOptions, SolverOptions,
};
use dccnn::Error;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

/// Largest `|VᵀV − I|` entry seen across every recovered weight.
#[derive(Default)]
struct OrthoLog {
    worst: f64,
    count: usize,
}

impl OrthoLog {
    fn record_model(&mut self, model: &Model) {
        for l in &model.layers {
            self.record(l.linear_weight.orthonormality_error());
        }
    }

    fn record(&mut self, err: f64) {
        self.worst = self.worst.max(err);
        self.count += 1;
    }
}

fn random_patches(rng: &mut ChaCha8Rng, n: usize, d: usize, p: usize) -> Vec<PatchMatrix> {
    (0..n)
        .map(|_| {
            let m = DMatrix::from_fn(d, p, |_, _| rng.random_range(-1.0..1.0));
            normalize_patches(&PatchMatrix::from_matrix(m).unwrap(), 1e-12).patches
        })
        .collect()
}

fn duality_and_recovery(ortho: &mut OrthoLog) -> dccnn::Result<(Outcome, Outcome)> {
    let c_values = [0.5, 1.0, 5.0];
    let mut worst_gap = 0.0f64;
    let mut gap_fail = Vec::new();
    let mut worst_angle = 0.0f64;
    let mut worst_product = 0.0f64;
    let mut rec_fail = Vec::new();
    let mut checked = 0;
    for seed in 0..20u64 {
        let n = 2 + (seed % 7) as usize;
        let d1 = 2 + (seed % 3) as usize;
        let p = 1 + (seed % 3) as usize;
        let c = c_values[(seed % 3) as usize];
        let inst = make_tiny_instance(seed, n, d1, p, TinyTask::Binary)?;
        let Labels::Binary(y) = &inst.labels else {
            unreachable!()
        };
        let bank = KernelBank::new(KernelSpec::Linear, inst.patches.clone(), 64)?;
        let opts = SolverOptions {
            sweeps: 100,
            refine: Some(RefineOptions::default()),
            ..SolverOptions::default()
        };
        let dual = solve_dual(&bank, y, LossSpec::hinge(), c, &opts)?;
        let audit = audit_dual(&dual, &bank, AUDIT_THRESHOLD, &PrimalOptions::default())?;
        worst_gap = worst_gap.max(audit.relative_gap);
        if audit.relative_gap > 1e-3 {
            gap_fail.push(seed);
        }
        if let Ok(w) = recover_linear_weight(&dual, &bank, AUDIT_THRESHOLD) {
            ortho.record(w.orthonormality_error());
        }
        let cmp = &audit.comparison;
        if audit.primal.converged && cmp.primal_rank >= 1 {
            checked += 1;
            worst_angle = worst_angle.max(cmp.max_angle);
            worst_product = worst_product.max(cmp.product_deviation);
            if cmp.max_angle > 1e-2 || cmp.product_deviation > 1e-3 {
                rec_fail.push(seed);
            }
        }
    }
    let gap = outcome(
        gap_fail.is_empty(),
        format!("20 instances, worst |gap|/(1+|P|) = {worst_gap:.2e} (tol 1e-3), failing seeds {gap_fail:?}"),
    );
    let rec = outcome(
        rec_fail.is_empty() && checked > 0,
        format!(
            "{checked} rank ≥ 1 instances, worst angle {worst_angle:.2e} rad (tol 1e-2), worst product deviation {worst_product:.2e} (tol 1e-3), failing seeds {rec_fail:?}"
        ),
    );
    Ok((gap, rec))
}

fn feasibility_and_monotonicity() -> dccnn::Result<Outcome> {
    let mut worst_lambda = 0.0f64;
    let mut box_violations = 0;
    let mut drops = 0;
    let mut worst_drop = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(2..=32);
        let p = rng.random_range(1..=4);
        let zs = random_patches(&mut rng, n, 5, p);
        let y: Vec<f64> = (0..n)
            .map(|i| {
                if (i + seed as usize).is_multiple_of(2) {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let gamma = rng.random_range(0.2..2.0);
        let c = [0.5, 1.0, 5.0][(seed % 3) as usize];
        let bank = KernelBank::new(KernelSpec::GaussianRbf { gamma }, zs, 64)?;
        let opts = SolverOptions {
            sweeps: 1 + (seed % 3) as usize,
            ..SolverOptions::default()
        };
        let mut last = 0.0f64;
        let sol = solve_dual_with_progress(&bank, &Labels::binary(y)?, LossSpec::hinge(), c, &opts, |p| {
            if p.objective < last {
                drops += 1;
                worst_drop = worst_drop.max(last - p.objective);
            }
            last = p.objective;
        })?;
        let report = verify_feasibility(&sol, &bank)?;
        worst_lambda = worst_lambda.max(report.lambda_max);
        let DualCoefficients::Binary(a) = &sol.alpha else {
            unreachable!()
        };
        box_violations += a.iter().filter(|&&v| !(0.0..=c).contains(&v)).count();
    }
    Ok(outcome(
        worst_lambda <= 1.0 + 1e-8 && box_violations == 0 && drops == 0,
        format!(
            "50 gaussian instances, max recomputed λ_max = {worst_lambda:.12} (tol 1 + 1e-8), {box_violations} box violations, {drops} objective decreases"
        ),
    ))
}

/// Random 6×6 images labeled by the sign of their left-half mean.
fn images(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..36).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let y = xs
        .iter()
        .map(|x| {
            let left: f64 = (0..6).flat_map(|r| (0..3).map(move |c| r * 6 + c)).map(|i| x[i]).sum();
            let right: f64 = (0..6).flat_map(|r| (3..6).map(move |c| r * 6 + c)).map(|i| x[i]).sum();
            if left >= right {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    (xs, y)
}

const SMALL: InputShape = InputShape {
    height: 6,
    width: 6,
    channels: 1,
};

fn small_config(gamma: f64) -> TrainConfig {
    TrainConfig {
        layers: vec![LayerConfig {
            kernel: KernelChoice::Fixed(KernelSpec::GaussianRbf { gamma }),
            filter_width: 3,
            stride: 1,
            padding: 1,
            pooling: None,
        }],
        c: 5.0,
        threshold: 0.5,
        solver: SolverOptions {
            sweeps: 3,
            ..SolverOptions::default()
        },
        ..TrainConfig::default()
    }
}

/// `λ_max` of the dense `mp × mp` quadratic form, assembled entry by entry.
fn dense_lambda(bank_spec: &KernelSpec, zs: &[PatchMatrix], beta: &[Vec<f64>]) -> f64 {
    let p = zs[0].count();
    let m = beta.len();
    let mut dense = DMatrix::zeros(m * p, m * p);
    for i in 0..zs.len() {
        for j in 0..zs.len() {
            let k = kernel_generating_matrix(bank_spec, &zs[i], &zs[j]).unwrap();
            for (b, coeffs) in beta.iter().enumerate() {
                let w = coeffs[i] * coeffs[j];
                if w != 0.0 {
                    let mut view = dense.view_mut((b * p, b * p), (p, p));
                    view += &k * w;
                }
            }
        }
    }
    let sym = (&dense + dense.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

fn multiclass_consistency(ortho: &mut OrthoLog) -> dccnn::Result<Outcome> {
    let mut agree = 0;
    let mut total = 0;
    for seed in 0..5u64 {
        let (xs, y) = images(50 + seed, 24);
        let cfg = small_config(0.5);
        let binary = train_layerwise(&xs, SMALL, &Labels::binary(y.clone())?, &cfg)?;
        let classes: Vec<usize> = y.iter().map(|&v| usize::from(v < 0.0)).collect();
        let multi = train_layerwise(&xs, SMALL, &Labels::multiclass(classes, 2)?, &cfg)?;
        ortho.record_model(&binary);
        ortho.record_model(&multi);
        let (test, _) = images(500 + seed, 20);
        for x in &test {
            let b = binary.predict_binary(x)?;
            let k = multi.predict_multiclass(x)?;
            total += 1;
            agree += usize::from((b > 0.0) == (k == 0));
        }
    }
    let rate = agree as f64 / total as f64;

    let mut worst = 0.0f64;
    for seed in 0..12u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let m = 2 + (seed % 2) as usize;
        let p = 1 + (seed % 3) as usize;
        let n = 6;
        let zs = random_patches(&mut rng, n, 3, p);
        let labels = Labels::multiclass((0..n).map(|i| (i + seed as usize) % m).collect(), m)?;
        let mut alpha = DMatrix::from_fn(n, m, |_, _| rng.random_range(0.0..1.0));
        if let Labels::Multiclass { labels: ys, .. } = &labels {
            for (i, &k) in ys.iter().enumerate() {
                alpha[(i, k)] = 0.0;
            }
        }
        let alpha = DualCoefficients::Multiclass(alpha);
        let spec = KernelSpec::GaussianRbf { gamma: 0.7 };
        let bank = KernelBank::new(spec, zs.clone(), 64)?;
        let block = accumulate_quadratic(&bank, &alpha, &labels)?.lambda_max()?;
        let beta = folded_coefficients(&alpha, &labels)?;
        let dense = dense_lambda(&spec, &zs, &beta);
        worst = worst.max((block - dense).abs());
    }
    Ok(outcome(
        rate >= 0.95 && worst <= 1e-10,
        format!("m = 2 vs binary agreement {agree}/{total} = {rate:.3} (need ≥ 0.95), block vs dense λ_max max difference {worst:.2e} (tol 1e-10)"),
    ))
}

fn conjugate_suite() -> Outcome {
    let losses = [
        LossSpec::hinge(),
        LossSpec::squared_hinge(),
        LossSpec::logistic(),
        LossSpec::exponential(),
    ];
    let reference = |l: &LossSpec, x: f64| -> f64 {
        match l.to_string().as_str() {
            "hinge" => (1.0 - x).max(0.0),
            "squared-hinge" => (1.0 - x).max(0.0).powi(2),
            "logistic" => (-x).exp().ln_1p(),
            _ => (-x).exp(),
        }
    };
    // in-domain samples for the conjugate argument, away from the ends where the sup runs off the grid
    let xstar_range = |l: &LossSpec| -> (f64, f64) {
        match l.to_string().as_str() {
            "hinge" => (-1.0, 0.0),
            "squared-hinge" => (-4.0, 0.0),
            "logistic" => (-0.99, -0.01),
            _ => (-5.0, -0.01),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut fy_fail = 0;
    let mut worst_grid = 0.0f64;
    let grid: Vec<f64> = (0..=80_000).map(|k| -40.0 + k as f64 * 1e-3).collect();
    for l in &losses {
        let (lo, hi) = xstar_range(l);
        for _ in 0..200 {
            let x = rng.random_range(-10.0..10.0);
            let s = rng.random_range(lo..=hi);
            let conj = l.conjugate(s).finite().expect("in domain");
            if l.loss(x) + conj < x * s - 1e-10 {
                fy_fail += 1;
            }
            if (l.loss(x) - reference(l, x)).abs() > 1e-12 * (1.0 + reference(l, x).abs()) {
                fy_fail += 1;
            }
        }
        for k in 0..25 {
            let s = lo + (hi - lo) * (k as f64 + 0.5) / 25.0;
            let sup = grid
                .iter()
                .map(|&x| x * s - reference(l, x))
                .fold(f64::NEG_INFINITY, f64::max);
            worst_grid = worst_grid.max((sup - l.conjugate(s).finite().unwrap()).abs());
        }
    }
    let mut hinge_exact = true;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.random_range(0.1..10.0);
        let alpha: Vec<f64> = (0..rng.random_range(1..40))
            .map(|_| rng.random_range(0.0..=c))
            .collect();
        let obj = dual_objective(&LossSpec::hinge(), &alpha, c).unwrap();
        hinge_exact &= obj == alpha.iter().sum::<f64>();
    }
    outcome(
        fy_fail == 0 && worst_grid <= 1e-4 && hinge_exact,
        format!(
            "Fenchel–Young violations {fy_fail} (slack 1e-10), worst grid reconstruction error {worst_grid:.2e} (tol 1e-4), hinge objective equals Σα exactly: {hinge_exact}"
        ),
    )
}

fn mnist(ortho: &mut OrthoLog) -> dccnn::Result<Outcome> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let ds = load_idx(&root.join("images-idx3-ubyte"), &root.join("labels-idx1-ubyte"))?;
    let ds = downsample_2x2(&ds)?;
    let (train, test) = filter_binary(&ds, 0, 1, 200, 200, 0)?;
    let cfg = TrainConfig {
        layers: vec![LayerConfig {
            kernel: KernelChoice::GaussianMedian { pairs: 1000, seed: 0 },
            filter_width: 5,
            stride: 1,
            padding: 2,
            pooling: None,
        }],
        loss: LossSpec::hinge(),
        c: 1.0,
        threshold: 0.9,
        solver: SolverOptions::default(),
    };
    let start = Instant::now();
    let model = train_layerwise(&train.inputs, train.shape, &train.labels, &cfg)?;
    ortho.record_model(&model);
    let Labels::Binary(y) = &test.labels else {
        unreachable!()
    };
    let preds = model.predict_batch(&test.inputs)?;
    let correct = preds.iter().zip(y).filter(|(p, t)| p == t).count();
    let acc = correct as f64 / y.len() as f64;
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        acc >= 0.90,
        format!(
            "0 vs 1 at 14×14, 200/200, p = {}, rank {}, accuracy {acc:.3} (need ≥ 0.90) in {secs:.1} s",
            model.layers[0].geometry.patch_count(),
            model.layers[0].linear_weight.rank()
        ),
    ))
}

fn pooling() -> dccnn::Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    let shapes = [(4, 4, 2, 2), (6, 6, 3, 3), (5, 5, 3, 1), (6, 4, 2, 2), (8, 8, 4, 2)];
    for t in 0..10 {
        let (h, w, pw, ps) = shapes[t % shapes.len()];
        let r = 1 + t % 3;
        let maps = DMatrix::from_fn(h * w, r, |_, _| rng.random_range(-3.0..3.0));
        let g = pooling_matrix(h, w, pw, ps)?;
        let pooled = g.apply(&maps)?;
        let qh = (h - pw) / ps + 1;
        let qw = (w - pw) / ps + 1;
        for ch in 0..r {
            for sy in 0..qh {
                for sx in 0..qw {
                    let mut sum = 0.0;
                    for dy in 0..pw {
                        for dx in 0..pw {
                            sum += maps[((sy * ps + dy) * w + sx * ps + dx, ch)];
                        }
                    }
                    let mean = sum / (pw * pw) as f64;
                    worst = worst.max((pooled[(sy * qw + sx, ch)] - mean).abs());
                }
            }
        }
    }
    Ok(outcome(
        worst <= 1e-12,
        format!("10 feature maps, max deviation from brute-force means {worst:.2e} (tol 1e-12)"),
    ))
}

fn serialization(ortho: &mut OrthoLog) -> dccnn::Result<Outcome> {
    let (xs, y) = images(90, 16);
    let mut cfg = small_config(0.5);
    cfg.layers[0].pooling = Some((2, 2));
    cfg.layers.push(LayerConfig {
        kernel: KernelChoice::GaussianMedian { pairs: 200, seed: 1 },
        filter_width: 2,
        stride: 1,
        padding: 0,
        pooling: None,
    });
    let model = train_layerwise(&xs, SMALL, &Labels::binary(y)?, &cfg)?;
    ortho.record_model(&model);
    let bytes = model.serialize();
    let back = Model::deserialize(&bytes)?;
    let (inputs, _) = images(91, 20);
    let mut identical = 0;
    for x in &inputs {
        let a = model.scores(x)?;
        let b = back.scores(x)?;
        identical += usize::from(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
    let truncated_rejected = [4, 17, bytes.len() / 3, bytes.len() - 1]
        .iter()
        .all(|&cut| matches!(Model::deserialize(&bytes[..cut]), Err(Error::CorruptStream { .. })));
    let mut bad_magic = bytes.clone();
    bad_magic[1] ^= 0xff;
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    let mut bad_tag = bytes.clone();
    bad_tag[20] = 7;
    let corrupt_rejected = matches!(
        Model::deserialize(&bad_magic),
        Err(Error::CorruptStream { offset: 0, .. })
    ) && matches!(Model::deserialize(&bad_version), Err(Error::UnsupportedVersion(99)))
        && matches!(Model::deserialize(&bad_tag), Err(Error::CorruptStream { .. }));
    Ok(outcome(
        identical == 20 && truncated_rejected && corrupt_rejected,
        format!(
            "{identical}/20 bitwise-identical score vectors, truncated streams rejected: {truncated_rejected}, corrupted header/tag rejected: {corrupt_rejected}"
        ),
    ))
}

fn timed(f: impl FnOnce() -> dccnn::Result<Outcome>) -> (Outcome, f64) {
    let start = Instant::now();
    let o = f().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
    (o, start.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let mut ortho = OrthoLog::default();
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();

    let start = Instant::now();
    let (gap, rec) = duality_and_recovery(&mut ortho).unwrap_or_else(|e| {
        (
            outcome(false, format!("error: {e}")),
            outcome(false, format!("error: {e}")),
        )
    });
    let secs = start.elapsed().as_secs_f64();
    results.push((1, "strong duality", gap, secs));
    results.push((2, "recovery", rec, secs));
    let (o, t) = timed(feasibility_and_monotonicity);
    results.push((3, "feasibility and monotonicity", o, t));
    let (o, t) = timed(|| multiclass_consistency(&mut ortho));
    results.push((5, "multiclass consistency", o, t));
    let (o, t) = timed(|| Ok(conjugate_suite()));
    results.push((6, "conjugates", o, t));
    let (o, t) = timed(|| mnist(&mut ortho));
    results.push((7, "MNIST desk scale", o, t));
    let (o, t) = timed(pooling);
    results.push((8, "pooling", o, t));
    let (o, t) = timed(|| serialization(&mut ortho));
    results.push((9, "serialization", o, t));
    let ortho_outcome = outcome(
        ortho.count > 0 && ortho.worst <= 1e-8,
        format!(
            "{} recovered weights, worst |VᵀV − I| = {:.2e} (tol 1e-8)",
            ortho.count, ortho.worst
        ),
    );
    results.push((4, "orthonormality", ortho_outcome, 0.0));
    results.sort_by_key(|r| r.0);

    let mut all = true;
    for (id, name, o, secs) in &results {
        all &= o.passed;
        println!(
            "criterion {id} [{}] {name}: {} ({secs:.1} s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: FAILED");
        ExitCode::FAILURE
    }
}
