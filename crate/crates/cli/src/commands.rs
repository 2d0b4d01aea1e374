use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use dccnn::data::{self, make_tiny_instance, Split, TinyTask};
use dccnn::kernels::{KernelBank, KernelSpec};
use dccnn::losses::{dual_objective, LossSpec};
use dccnn::model::{train_layerwise, Model, Task, TrainConfig};
use dccnn::oracle::{audit_dual, PrimalOptions, AUDIT_THRESHOLD};
use dccnn::solver::{solve_dual, DualCoefficients, RefineOptions, SolverOptions};
use dccnn::Error;

use crate::args::{check_data, is_csv, DataArgs, EvalArgs, PredictArgs, TrainArgs, VerifyArgs};

pub const CSV_HEADER: &str = "dataset,layers,kernel,gamma,c,threshold,rank,accuracy,wall_ms";

/// Verification tolerances, relative gap then angle then product deviation.
pub const VERIFY_TOLERANCES: (f64, f64, f64) = (1e-3, 1e-2, 1e-3);
const VERIFY_C: [f64; 3] = [0.5, 1.0, 5.0];

fn load_dataset(d: &DataArgs) -> Result<data::Dataset> {
    let ds = if is_csv(&d.data) {
        data::load_csv(&d.data, None)
    } else {
        let labels = d.labels.as_deref().expect("checked by check_data");
        data::load_idx(&d.data, labels)
    }
    .with_context(|| format!("reading {}", d.data.display()))?;
    Ok(if d.downsample { data::downsample_2x2(&ds)? } else { ds })
}

fn load_splits(d: &DataArgs) -> Result<(Split, Split)> {
    let ds = load_dataset(d)?;
    Ok(if d.classes.len() == 2 {
        data::filter_binary(&ds, d.classes[0], d.classes[1], d.n_train, d.n_test, d.seed)?
    } else {
        data::filter_classes(&ds, &d.classes, d.n_train, d.n_test, d.seed)?
    })
}

fn kernel_name(spec: &KernelSpec) -> String {
    match spec {
        KernelSpec::GaussianRbf { .. } => "gaussian".into(),
        KernelSpec::Linear => "linear".into(),
        KernelSpec::Polynomial { degree, offset } => format!("poly{degree}+{offset}"),
    }
}

fn gamma_of(spec: &KernelSpec) -> Option<f64> {
    match spec {
        KernelSpec::GaussianRbf { gamma } => Some(*gamma),
        _ => None,
    }
}

#[derive(Debug, Serialize)]
struct LayerReport {
    layer: usize,
    kernel: String,
    gamma: Option<f64>,
    rank: usize,
    eigenvalues: Vec<f64>,
    lambda_max: f64,
    dual_objective: f64,
    sweeps: usize,
    refined: bool,
    output_len: usize,
}

#[derive(Debug, Serialize)]
struct TrainReport {
    data: String,
    classes: Vec<u32>,
    n_train: usize,
    seed: u64,
    loss: String,
    c: f64,
    threshold: f64,
    sweeps: usize,
    refine: bool,
    layers: Vec<LayerReport>,
    train_accuracy: f64,
    wall_ms: u128,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let run = args.validate()?;
    let (split, _) = load_splits(&DataArgs {
        n_test: 0,
        ..args.data.clone()
    })?;
    let config = TrainConfig {
        layers: run.layers,
        loss: run.loss,
        c: run.c,
        threshold: run.threshold,
        solver: SolverOptions {
            sweeps: run.sweeps,
            refine: run.refine.then(RefineOptions::default),
            ..SolverOptions::default()
        },
    };
    let start = Instant::now();
    let model = train_layerwise(&split.inputs, split.shape, &split.labels, &config)?;
    let wall_ms = start.elapsed().as_millis();
    model
        .save(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    let train_accuracy = accuracy(&model, &split)?.0;

    let layers: Vec<LayerReport> = model
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerReport {
            layer: i + 1,
            kernel: kernel_name(&l.kernel),
            gamma: gamma_of(&l.kernel),
            rank: l.linear_weight.rank(),
            eigenvalues: l.linear_weight.eigenvalues_used.clone(),
            lambda_max: l.dual.final_lambda_max,
            dual_objective: l.dual.objective,
            sweeps: l.dual.sweep_count,
            refined: l.dual.refined,
            output_len: l.output_len(),
        })
        .collect();
    for l in &layers {
        println!(
            "layer {}: kernel {}{} rank {} lambda_max {:.10} dual objective {:.6}",
            l.layer,
            l.kernel,
            l.gamma.map(|g| format!(" gamma {g:.6}")).unwrap_or_default(),
            l.rank,
            l.lambda_max,
            l.dual_objective
        );
    }
    println!(
        "loss {} c {} threshold {} sweeps {}",
        config.loss, config.c, config.threshold, run.sweeps
    );
    println!(
        "trained on {} samples in {wall_ms} ms, training accuracy {:.4}",
        split.len(),
        train_accuracy
    );
    println!("model written to {}", args.out.display());

    let report = TrainReport {
        data: args.data.data.display().to_string(),
        classes: args.data.classes.clone(),
        n_train: split.len(),
        seed: args.data.seed,
        loss: config.loss.to_string(),
        c: config.c,
        threshold: config.threshold,
        sweeps: run.sweeps,
        refine: run.refine,
        layers,
        train_accuracy,
        wall_ms,
    };
    let path = args.report.clone().unwrap_or_else(|| args.out.with_extension("json"));
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", path.display()))?;
    println!("report written to {}", path.display());
    Ok(())
}

/// Accuracy and the confusion matrix, rows actual and columns predicted.
/// Binary classes are ordered `+1` then `−1`.
fn accuracy(model: &Model, split: &Split) -> Result<(f64, Vec<Vec<usize>>)> {
    if split.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let classes = match (model.task, &split.labels) {
        (Task::Binary, dccnn::solver::Labels::Binary(_)) => 2,
        (Task::Multiclass(m), dccnn::solver::Labels::Multiclass { classes, .. }) if m == *classes => m,
        (task, labels) => bail!(
            "model task {task:?} does not match {} data classes",
            labels.blocks().max(2)
        ),
    };
    let first = &model.layers[0].geometry;
    if split.shape.len() != model.input_len() {
        bail!(
            "model expects {}x{}x{} inputs, data has {}x{}x{}",
            first.input_height,
            first.input_width,
            first.channels,
            split.shape.height,
            split.shape.width,
            split.shape.channels
        );
    }
    let preds = model.predict_batch(&split.inputs)?;
    let index = |v: f64| -> usize {
        match model.task {
            Task::Binary => usize::from(v < 0.0),
            Task::Multiclass(_) => v as usize,
        }
    };
    let actual: Vec<usize> = match &split.labels {
        dccnn::solver::Labels::Binary(y) => y.iter().map(|&v| index(v)).collect(),
        dccnn::solver::Labels::Multiclass { labels, .. } => labels.clone(),
    };
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&a, &p) in actual.iter().zip(&preds) {
        confusion[a][index(p)] += 1;
    }
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    Ok((correct as f64 / split.len() as f64, confusion))
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    check_data(&args.data)?;
    let model = Model::load(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let (_, test) = load_splits(&args.data)?;
    let start = Instant::now();
    let (acc, confusion) = accuracy(&model, &test)?;
    let wall_ms = start.elapsed().as_millis();
    println!("accuracy {acc:.4} on {} samples", test.len());
    println!(
        "confusion (rows actual, columns predicted; classes {:?}):",
        args.data.classes
    );
    for row in &confusion {
        println!("  {}", row.iter().map(usize::to_string).collect::<Vec<_>>().join(" "));
    }
    if let Some(path) = &args.report {
        let first = &model.layers[0].kernel;
        let dataset = args.dataset.clone().unwrap_or_else(|| {
            args.data
                .data
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        let ranks: Vec<String> = model
            .layers
            .iter()
            .map(|l| l.linear_weight.rank().to_string())
            .collect();
        let dual = &model.layers[0].dual;
        let row = format!(
            "{dataset},{},{},{},{},{},{},{acc},{wall_ms}",
            model.depth(),
            kernel_name(first),
            gamma_of(first).map(|g| g.to_string()).unwrap_or_default(),
            dual.c,
            model.layers[0].linear_weight.threshold_used,
            ranks.join("/"),
        );
        append_row(path, &row)?;
    }
    Ok(())
}

fn append_row(path: &Path, row: &str) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{CSV_HEADER}")?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let model = Model::load(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("{} line {}", args.input.display(), i + 1))
        })
        .collect::<Result<_>>()?;
    for (i, row) in rows.iter().enumerate() {
        if row.len() != model.input_len() {
            bail!(
                "row {} has {} values, the model expects {}",
                i + 1,
                row.len(),
                model.input_len()
            );
        }
    }
    for p in model.predict_batch(&rows)? {
        match model.task {
            Task::Binary => println!("{}", if p > 0.0 { "+1" } else { "-1" }),
            Task::Multiclass(_) => println!("{p}"),
        }
    }
    Ok(())
}

/// Metrics for one seeded tiny instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub n: usize,
    pub c: f64,
    pub relative_gap: f64,
    pub max_angle: f64,
    pub product_deviation: f64,
    pub primal_converged: bool,
    pub passed: bool,
}

/// Instance shape for a seed: `n` cycles through `2..=max_n`.
pub fn verify_seed(seed: u64, max_n: usize, corrupt: bool) -> dccnn::Result<SeedOutcome> {
    let n = 2 + (seed as usize) % (max_n - 1);
    let d1 = 2 + (seed % 3) as usize;
    let c = VERIFY_C[(seed % 3) as usize];
    let inst = make_tiny_instance(seed, n, d1, 2, TinyTask::Binary)?;
    let dccnn::solver::Labels::Binary(y) = &inst.labels else {
        unreachable!("binary task")
    };
    let bank = KernelBank::new(KernelSpec::Linear, inst.patches.clone(), 64)?;
    let opts = SolverOptions {
        sweeps: 50,
        refine: Some(RefineOptions::default()),
        ..SolverOptions::default()
    };
    let loss = LossSpec::hinge();
    let mut dual = solve_dual(&bank, y, loss, c, &opts)?;
    if corrupt {
        let alpha = vec![c; n];
        dual.objective = dual_objective(&loss, &alpha, c)?;
        dual.alpha = DualCoefficients::Binary(alpha);
    }
    let audit = audit_dual(&dual, &bank, AUDIT_THRESHOLD, &PrimalOptions::default())?;
    let (gap_tol, angle_tol, product_tol) = VERIFY_TOLERANCES;
    Ok(SeedOutcome {
        seed,
        n,
        c,
        relative_gap: audit.relative_gap,
        max_angle: audit.comparison.max_angle,
        product_deviation: audit.comparison.product_deviation,
        primal_converged: audit.primal.converged,
        passed: audit.passes(gap_tol, angle_tol, product_tol),
    })
}

/// Returns whether every seed passed.
pub fn verify(args: &VerifyArgs) -> Result<bool> {
    if !(2..=data::TINY_MAX_N).contains(&args.max_n) {
        return Err(crate::args::FlagError {
            flag: "max-n",
            reason: format!("must be in 2..={}", data::TINY_MAX_N),
        }
        .into());
    }
    let seeds: Vec<u64> = match args.seed {
        Some(s) => vec![s],
        None => (0..args.seeds).collect(),
    };
    let outcomes = seeds
        .par_iter()
        .map(|&s| verify_seed(s, args.max_n, args.corrupt_alpha))
        .collect::<dccnn::Result<Vec<_>>>()?;
    println!("seed n c relative_gap max_angle product_deviation status");
    for o in &outcomes {
        println!(
            "{} {} {} {:.3e} {:.3e} {:.3e} {}{}",
            o.seed,
            o.n,
            o.c,
            o.relative_gap,
            o.max_angle,
            o.product_deviation,
            if o.passed { "PASS" } else { "FAIL" },
            if o.primal_converged {
                ""
            } else {
                " (primal not converged)"
            }
        );
    }
    let failed: Vec<u64> = outcomes.iter().filter(|o| !o.passed).map(|o| o.seed).collect();
    if failed.is_empty() {
        println!("all {} seeds passed", outcomes.len());
        Ok(true)
    } else {
        eprintln!("verification failed for seeds {failed:?}");
        Ok(false)
    }
}
